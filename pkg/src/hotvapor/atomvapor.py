"""Atomic constants, vapor density and thermal velocity statistics.

All rates are stored as angular frequencies (rad/s). User-facing detunings
elsewhere in the package are given in Hz or GHz and converted on entry.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import constants as sc
from scipy.special import roots_hermitenorm

from hotvapor.errors import DomainError

KB = sc.k
HBAR = sc.hbar
EPS0 = sc.epsilon_0
C = sc.c
AMU = sc.atomic_mass

ENV_PREFIX = "HOTVAPOR_"

_DEFAULTS = {
    "gamma_mhz": 6.07,
    "delta_hf_ghz": 6.834682611,
    "nu0_thz": 380.284,
    "mu13": 2.0689e-29,
    "mu23": 2.0689e-29,
    "g1": 0.375,
    "g2": 0.625,
    "mass_amu": 86.909180527,
}


def read_constants(path: str | Path | None = None) -> dict[str, float]:
    """Parse a ``key = value`` constants file.

    Blank lines and ``#`` comments are ignored. Missing keys fall back to the
    compiled-in Rb-87 defaults. Environment variables ``HOTVAPOR_<KEY>``
    (e.g. ``HOTVAPOR_GAMMA_MHZ``) override both.
    """
    values = dict(_DEFAULTS)
    if path is None:
        text = resources.files("hotvapor.data").joinpath("rb87.conf").read_text()
    else:
        text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"constants line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _DEFAULTS:
            raise DomainError(f"constants line {lineno}: unknown key {key!r}")
        values[key] = float(value)
    for key in _DEFAULTS:
        env = os.environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = float(env)
    return values


@dataclass(frozen=True)
class AtomicSystem:
    """Three-level reduction of an alkali D2 line.

    Parameters
    ----------
    gamma : float
        Excited-state decay rate, rad/s.
    delta_hf : float
        Ground-state hyperfine splitting, rad/s.
    nu0 : float
        Optical transition frequency, Hz.
    mu13, mu23 : float
        Transition dipole moments, C m.
    g1, g2 : float
        Ground-state degeneracy fractions; must sum to one.
    mass : float
        Atomic mass, kg.
    """

    gamma: float
    delta_hf: float
    nu0: float
    mu13: float
    mu23: float
    g1: float
    g2: float
    mass: float

    def __post_init__(self):
        for name in ("gamma", "delta_hf", "nu0", "mu13", "mu23", "mass"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")
        if self.g1 < 0 or self.g2 < 0 or abs(self.g1 + self.g2 - 1.0) > 1e-15:
            raise DomainError("g1 and g2 must be non-negative and sum to 1")

    @property
    def wavelength(self) -> float:
        return C / self.nu0

    @property
    def wavevector(self) -> float:
        """Optical wavevector k = 2 pi / lambda, rad/m."""
        return 2 * math.pi * self.nu0 / C

    @classmethod
    def from_constants(cls, values: dict[str, float]) -> "AtomicSystem":
        g1 = values["g1"]
        g2 = values["g2"]
        # 0.375 + 0.625 is exact in binary; guard against decimal rounding of other inputs
        if abs(g1 + g2 - 1.0) < 1e-12:
            g2 = 1.0 - g1
        return cls(
            gamma=2 * math.pi * values["gamma_mhz"] * 1e6,
            delta_hf=2 * math.pi * values["delta_hf_ghz"] * 1e9,
            nu0=values["nu0_thz"] * 1e12,
            mu13=values["mu13"],
            mu23=values["mu23"],
            g1=g1,
            g2=g2,
            mass=values["mass_amu"] * AMU,
        )


def load_system(path: str | Path | None = None) -> AtomicSystem:
    """Build the default (or file-configured) :class:`AtomicSystem`."""
    return AtomicSystem.from_constants(read_constants(path))


# Rb saturated vapor pressure, log10(P / Torr) = A - B / T, solid and liquid
# branches (Alcock, Itkin & Horrigan 1984). Melting point 312.46 K.
_RB_MELT = 312.46
_RB_SOLID = (2.881 + 4.857, 4215.0)
_RB_LIQUID = (2.881 + 4.312, 4040.0)
_TORR = 101325.0 / 760.0

T_MIN, T_MAX = 300.0, 500.0


def vapor_pressure(temperature: float) -> float:
    """Saturated Rb vapor pressure in Pa."""
    a, b = _RB_SOLID if temperature < _RB_MELT else _RB_LIQUID
    return 10 ** (a - b / temperature) * _TORR


def vapor_density(temperature: float) -> float:
    """Atomic number density N(T) of a saturated Rb vapor, atoms/m^3.

    Valid on [300, 500] K. Uses the ideal-gas law on top of
    :func:`vapor_pressure`; the liquid branch is marginally above the solid
    one at the melting point so the result is strictly increasing.
    """
    if not (T_MIN <= temperature <= T_MAX) or not math.isfinite(temperature):
        raise DomainError(f"temperature {temperature} K outside [{T_MIN}, {T_MAX}] K")
    return vapor_pressure(temperature) / (KB * temperature)


@dataclass(frozen=True)
class VaporCell:
    """Heated vapor cell.

    ``density`` defaults to the saturated value at ``temperature``. ``alpha``
    is the linear intensity absorption coefficient (1/m), zero meaning an
    optically thin slice.
    """

    temperature: float
    length: float = 10e-3
    density: float | None = None
    alpha: float = 0.0
    mass: float = 86.909180527 * AMU
    min_temperature: float = field(default=273.0, repr=False)

    def __post_init__(self):
        if not self.temperature > self.min_temperature:
            raise DomainError(
                f"temperature {self.temperature} K not above {self.min_temperature} K"
            )
        if self.density is None:
            object.__setattr__(self, "density", vapor_density(self.temperature))
        if not self.density > 0:
            raise DomainError("density must be positive")
        if self.length <= 0 or self.alpha < 0:
            raise DomainError("length must be positive and alpha non-negative")

    @property
    def most_probable_speed(self) -> float:
        """u = sqrt(2 k_B T / m), m/s."""
        return math.sqrt(2 * KB * self.temperature / self.mass)

    @property
    def sigma_v(self) -> float:
        """Per-axis thermal velocity spread sqrt(k_B T / m)."""
        return math.sqrt(KB * self.temperature / self.mass)

    def effective_intensity(self, intensity):
        """Length-averaged intensity I (1 - exp(-alpha L)) / (alpha L)."""
        al = self.alpha * self.length
        if al == 0:
            return intensity
        return intensity * -math.expm1(-al) / al


@dataclass(frozen=True)
class VelocityClass:
    """One node of the discretized thermal distribution.

    ``v`` is ``(v_perp, v_z)``: transverse speed driving transit through the
    beam, and longitudinal velocity entering only through the Doppler shift.
    """

    v: tuple[float, float]
    weight: float

    @property
    def speed(self) -> float:
        return self.v[0]

    @property
    def v_z(self) -> float:
        return self.v[1]


def _speed_cdf(v, sigma):
    return -np.expm1(-(v * v) / (2 * sigma * sigma))


def sample_velocity_classes(
    cell: VaporCell, n_classes: int, n_doppler: int = 1
) -> list[VelocityClass]:
    """Discretize the thermal velocity distribution.

    Transverse speeds follow the 2D Maxwell-Boltzmann law
    p(v) = v / s^2 exp(-v^2 / 2 s^2), s^2 = k_B T / m. Nodes sit at the
    equal-probability quantile midpoints; each weight is the exact
    probability of the node's Voronoi interval, so weights telescope to one.

    With ``n_doppler > 1`` every transverse node is paired with the nodes of a
    Gauss-Hermite rule for the longitudinal velocity; the total class count
    is then ``n_classes * n_doppler``.
    """
    if n_classes < 2:
        raise DomainError("n_classes must be >= 2")
    if n_doppler < 1:
        raise DomainError("n_doppler must be >= 1")
    s = cell.sigma_v
    q = (np.arange(n_classes) + 0.5) / n_classes
    nodes = s * np.sqrt(-2 * np.log1p(-q))
    edges = np.concatenate(([0.0], 0.5 * (nodes[1:] + nodes[:-1]), [np.inf]))
    cdf = _speed_cdf(edges, s)
    cdf[-1] = 1.0
    weights = np.diff(cdf)

    if n_doppler == 1:
        vz, wz = np.array([0.0]), np.array([1.0])
    else:
        x, w = roots_hermitenorm(n_doppler)
        vz, wz = s * x, w / w.sum()

    classes = []
    for v, w in zip(nodes, weights):
        for z, pz in zip(vz, wz):
            classes.append(VelocityClass(v=(float(v), float(z)), weight=float(w * pz)))
    return classes


def transit_rate(cell: VaporCell, waist: float) -> float:
    """Phenomenological transit rate (2 / sqrt(pi)) u / w0, 1/s."""
    if not waist > 0:
        raise DomainError("waist must be positive")
    return 2 / math.sqrt(math.pi) * cell.most_probable_speed / waist


def rabi_from_intensity(mu: float, intensity):
    """Rabi frequency mu E / hbar for intensity in W/m^2, with I = eps0 c E^2 / 2."""
    return mu * np.sqrt(2 * np.asarray(intensity) / (EPS0 * C)) / HBAR


def field_from_intensity(intensity):
    """Field amplitude (V/m) for intensity in W/m^2."""
    return np.sqrt(2 * np.asarray(intensity) / (EPS0 * C))
