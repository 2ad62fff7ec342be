"""Transit-resolved Kerr non-linearity of hot alkali vapors.

Simulation (three-level optical Bloch equations, Monte-Carlo transit through a
Gaussian beam) and measurement analysis (off-axis Fourier filtering, bucket
detector cosine fits) of the saturated non-linear refractive index.
"""

from hotvapor.atomvapor import (
    AtomicSystem,
    VaporCell,
    VelocityClass,
    load_system,
    sample_velocity_classes,
    transit_rate,
    vapor_density,
)
from hotvapor.fitting import ExpGrowthFit, KerrFit, PowerLawFit

__version__ = "0.1.0"

__all__ = [
    "AtomicSystem",
    "VaporCell",
    "VelocityClass",
    "load_system",
    "sample_velocity_classes",
    "transit_rate",
    "vapor_density",
    "KerrFit",
    "PowerLawFit",
    "ExpGrowthFit",
    "__version__",
]
