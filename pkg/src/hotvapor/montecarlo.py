"""Monte-Carlo transit simulation of the Kerr response of a hot vapor.

Atoms cross a square computation box on straight 2D chords, starting in the
thermal ground state far from the beam. The Bloch equations are integrated
along each chord with no phenomenological transit rate; the instantaneous
optical coherences are deposited on an ``n x n`` grid and averaged per cell.
Velocity classes are simulated independently and combined with their
Maxwell-Boltzmann weights.

Chunks of trajectories are the unit of work. Random streams are keyed by
``(seed, class index, chunk index)`` and partial grids are reduced in chunk
order, so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
import multiprocessing as mp
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from hotvapor import _kernels as K
from hotvapor.atomvapor import (
    EPS0,
    AtomicSystem,
    VaporCell,
    VelocityClass,
    field_from_intensity,
    rabi_from_intensity,
    sample_velocity_classes,
    transit_rate,
)
from hotvapor.bloch import (
    DensityState,
    analytic_chi23,
    assemble,
    complex_to_real,
    real_to_complex,
    response_timescale,
    to_real_form,
)
from hotvapor.errors import DomainError, SimulationError
from hotvapor.fitting import (
    ExpGrowthFit,
    KerrFit,
    PowerLawFit,
    fit_exp_growth,
    fit_power_law,
    fit_saturated,
)

CHUNK_SIZE = 256
MAX_FAILURE_FRACTION = 1e-3
LOW_INTENSITY_RATIO = 1e-3
MC_RTOL = 1e-3
MC_ATOL = 1e-5
MC_MAX_STEP = 1e-7
SWITCH_ON_RISE = 30e-9
PHYS_TOL = 1e-6


# ---------------------------------------------------------------- beam


@dataclass(frozen=True)
class BeamField:
    """Gaussian beam, I(r) = I0 exp(-2 r^2 / w0^2).

    Parameters
    ----------
    waist : float
        1/e^2 intensity radius w0, m.
    peak_intensity : float
        I0, W/cm^2.
    wavevector : float
        Optical wavevector, rad/m (only used for the Doppler shift).
    """

    waist: float
    peak_intensity: float
    wavevector: float = 2 * math.pi / 780.241e-9

    def __post_init__(self):
        if not self.waist > 0:
            raise DomainError("waist must be positive")
        if not self.peak_intensity >= 0:
            raise DomainError("peak intensity must be non-negative")

    @classmethod
    def from_power(cls, waist: float, power: float, **kw) -> "BeamField":
        """Beam of total power ``power`` (W)."""
        i0 = 2 * power / (math.pi * waist**2) * 1e-4
        return cls(waist=waist, peak_intensity=i0, **kw)

    @property
    def power(self) -> float:
        """Total power pi w0^2 I0 / 2, W."""
        return math.pi * self.waist**2 * self.peak_intensity * 1e4 / 2

    def intensity(self, r):
        """Local intensity at radius ``r`` (m), W/cm^2."""
        r = np.asarray(r, dtype=float)
        return self.peak_intensity * np.exp(-2 * r * r / self.waist**2)

    def field(self, r):
        """Local field amplitude, V/m."""
        return field_from_intensity(self.intensity(r) * 1e4)

    def with_intensity(self, peak_intensity: float) -> "BeamField":
        return replace(self, peak_intensity=peak_intensity)


# ---------------------------------------------------------- trajectories


@dataclass(frozen=True)
class Trajectory:
    """One straight chord across the box."""

    start: tuple[float, float]
    velocity: tuple[float, float]
    duration: float

    @property
    def end(self) -> tuple[float, float]:
        return (
            self.start[0] + self.velocity[0] * self.duration,
            self.start[1] + self.velocity[1] * self.duration,
        )


@dataclass(frozen=True)
class TrajectoryBatch:
    """Chords of one velocity class, stored as arrays.

    ``starts`` and ``directions`` are ``(n, 2)``; ``durations`` in seconds.
    Chords ``[k * chunk_size, (k + 1) * chunk_size)`` come from random stream
    ``(seed, class_index, k)``.
    """

    starts: np.ndarray
    directions: np.ndarray
    durations: np.ndarray
    speed: float
    box: float
    seed: int
    class_index: int = 0

    def __len__(self):
        return len(self.durations)

    def __getitem__(self, i) -> Trajectory:
        d = self.directions[i]
        return Trajectory(
            start=(float(self.starts[i, 0]), float(self.starts[i, 1])),
            velocity=(float(d[0] * self.speed), float(d[1] * self.speed)),
            duration=float(self.durations[i]),
        )

    @property
    def chord_lengths(self) -> np.ndarray:
        return self.durations * self.speed


def _stream(seed: int, class_index: int, chunk: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, class_index, chunk]))


def _exit_distance(starts, dirs, half):
    # distance along dir to the box boundary from an entry point on it
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dirs[:, 0] > 0, (half - starts[:, 0]) / dirs[:, 0],
                      np.where(dirs[:, 0] < 0, (-half - starts[:, 0]) / dirs[:, 0], np.inf))
        ty = np.where(dirs[:, 1] > 0, (half - starts[:, 1]) / dirs[:, 1],
                      np.where(dirs[:, 1] < 0, (-half - starts[:, 1]) / dirs[:, 1], np.inf))
    return np.minimum(tx, ty)


def _chords(rng: np.random.Generator, n: int, box: float):
    half = box / 2
    side = rng.integers(0, 4, n)
    s = (rng.random(n) - 0.5) * box
    # angle from the inward normal, density cos(theta) / 2
    theta = np.arcsin(2 * rng.random(n) - 1)
    normal_angle = np.array([0.0, math.pi / 2, math.pi, -math.pi / 2])[side]
    ang = normal_angle + theta
    dirs = np.column_stack((np.cos(ang), np.sin(ang)))
    starts = np.empty((n, 2))
    # side 0: x = -half (inward normal +x), 1: y = -half, 2: x = +half, 3: y = +half
    starts[:, 0] = np.select([side == 0, side == 2], [-half, half], s)
    starts[:, 1] = np.select([side == 1, side == 3], [-half, half], s)
    length = _exit_distance(starts, dirs, half)
    # a chord grazing a corner can come out with zero length; redraw-free fix
    length = np.maximum(length, 0.0)
    return starts, dirs, length


def sample_trajectories(
    beam: BeamField,
    box: float,
    n_traj: int,
    speed: float,
    seed: int,
    class_index: int = 0,
    chunk_size: int = CHUNK_SIZE,
) -> TrajectoryBatch:
    """Draw isotropic random chords of a ``box x box`` square centered on the beam.

    Entry points are uniform on the perimeter and directions follow the
    inbound flux law (cosine about the inward normal), which makes the chords
    uniformly distributed lines in the plane.
    """
    if n_traj < 1:
        raise DomainError("n_traj must be >= 1")
    if box < 4 * beam.waist * (1 - 1e-12):
        raise DomainError("box must be at least 4 waists wide")
    if not speed > 0:
        raise DomainError("speed must be positive")
    parts = []
    for c, lo in enumerate(range(0, n_traj, chunk_size)):
        n = min(chunk_size, n_traj - lo)
        parts.append(_chords(_stream(seed, class_index, c), n, box))
    starts = np.concatenate([p[0] for p in parts])
    dirs = np.concatenate([p[1] for p in parts])
    lengths = np.concatenate([p[2] for p in parts])
    return TrajectoryBatch(starts, dirs, lengths / speed, float(speed), float(box),
                           int(seed), int(class_index))


# ------------------------------------------------------------- grids


@dataclass
class CoherenceGrid:
    """Accumulated coherences on an ``n x n`` grid covering the box.

    Index order is ``[iy, ix]``; cell ``(iy, ix)`` spans
    ``x in [-box/2 + ix c, -box/2 + (ix+1) c)`` with ``c = box / n``.
    """

    sum13: np.ndarray
    sum23: np.ndarray
    counts: np.ndarray
    box_size: float
    n_failed: int = 0
    n_violations: int = 0
    n_traj: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def visited(self) -> np.ndarray:
        return self.counts > 0

    def _mean(self, s):
        out = np.full(s.shape, np.nan + 0j)
        v = self.visited
        out[v] = s[v] / self.counts[v]
        return out

    @property
    def rho13(self) -> np.ndarray:
        """Cell-averaged rho13; NaN where no atom passed."""
        return self._mean(self.sum13)

    @property
    def rho23(self) -> np.ndarray:
        return self._mean(self.sum23)

    def cell_centers(self) -> np.ndarray:
        c = self.box_size / self.n
        return -self.box_size / 2 + (np.arange(self.n) + 0.5) * c

    def radius(self) -> np.ndarray:
        x = self.cell_centers()
        return np.hypot(x[None, :], x[:, None])


def _real_system(system: AtomicSystem, beam: BeamField, detuning: float, transit: float = 0.0):
    o13 = rabi_from_intensity(system.mu13, beam.peak_intensity * 1e4)
    o23 = rabi_from_intensity(system.mu23, beam.peak_intensity * 1e4)
    full = assemble(system, o13, o23, detuning, transit)
    zero = assemble(system, 0.0, 0.0, detuning, transit)
    R1, q1 = to_real_form(full.a_matrix, full.b_vector)
    R0, q0 = to_real_form(zero.a_matrix, zero.b_vector)
    x0 = complex_to_real(DensityState.ground(system).components)
    return R0, R1 - R0, q0, q1 - q0, np.ascontiguousarray(x0)


@dataclass(frozen=True)
class SolverSettings:
    rtol: float = MC_RTOL
    atol: float = MC_ATOL
    max_step: float = MC_MAX_STEP
    max_steps: int = 20_000_000


def _chunk_job(args):
    (R0, R1, q0, q1, w0, starts, dirs, durs, speed, dt, n, box, st, x0) = args
    return K.accumulate_chunk(R0, R1, q0, q1, w0, starts, dirs, durs, speed, dt, n, box,
                              st.max_step, st.rtol, st.atol, x0, st.max_steps, PHYS_TOL)


def _pool(workers: int):
    return ProcessPoolExecutor(max_workers=workers, mp_context=mp.get_context("fork"))


def _map(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with _pool(min(workers, len(jobs))) as ex:
        return list(ex.map(fn, jobs))


def accumulate_class(
    system: AtomicSystem,
    beam: BeamField,
    trajectories: TrajectoryBatch,
    detuning: float,
    grid_n: int = 64,
    sample_fraction: float = 0.5,
    solver: SolverSettings = SolverSettings(),
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> CoherenceGrid:
    """Integrate every chord of one velocity class and accumulate coherences.

    The transit rate is zero inside each trajectory. Samples are taken every
    ``sample_fraction`` cell of path length. ``detuning`` (rad/s) already
    includes any Doppler shift of the class.

    Raises
    ------
    SimulationError
        If more than 0.1% of the trajectories fail to integrate.
    """
    if grid_n < 2:
        raise DomainError("grid_n must be >= 2")
    if not 0 < sample_fraction <= 0.5:
        raise DomainError("sample_fraction must lie in (0, 0.5]")
    box = trajectories.box
    R0, R1, q0, q1, x0 = _real_system(system, beam, detuning)
    speed = trajectories.speed
    dt = sample_fraction * (box / grid_n) / speed
    jobs = []
    for lo in range(0, len(trajectories), chunk_size):
        sl = slice(lo, lo + chunk_size)
        jobs.append((R0, R1, q0, q1, beam.waist, trajectories.starts[sl],
                     trajectories.directions[sl], trajectories.durations[sl], speed, dt,
                     grid_n, box, solver, x0))
    results = _map(_chunk_job, jobs, workers)
    sum13 = np.zeros((grid_n, grid_n), np.complex128)
    sum23 = np.zeros((grid_n, grid_n), np.complex128)
    counts = np.zeros((grid_n, grid_n), np.int64)
    failed = 0
    violations = 0
    # fixed-order reduction
    for s13, s23, cnt, status, viol in results:
        sum13 += s13
        sum23 += s23
        counts += cnt
        failed += int(np.count_nonzero(status))
        violations += int(viol)
    n = len(trajectories)
    if failed > MAX_FAILURE_FRACTION * n:
        raise SimulationError(f"{failed} of {n} trajectories failed to integrate")
    return CoherenceGrid(
        sum13, sum23, counts, box, failed, violations, n,
        metadata={
            "waist": beam.waist,
            "intensity": beam.peak_intensity,
            "detuning": detuning,
            "speed": speed,
            "seed": trajectories.seed,
            "class_index": trajectories.class_index,
        },
    )


# ------------------------------------------------------- susceptibility


@dataclass
class SusceptibilityMap:
    """Complex susceptibility on the grid; ``mask`` marks usable cells."""

    chi: np.ndarray
    mask: np.ndarray
    box_size: float
    metadata: dict = field(default_factory=dict)
    n_floor_masked: int = 0

    @property
    def index(self) -> np.ndarray:
        """Refractive index sqrt(1 + Re chi) (NaN on masked cells)."""
        out = np.sqrt(1 + self.chi.real)
        return np.where(self.mask, out, np.nan)

    def center_chi(self) -> complex:
        """Mean of chi over the cells adjacent to the box center."""
        n = self.chi.shape[0]
        lo, hi = (n - 1) // 2, n // 2 + 1
        block = self.chi[lo:hi, lo:hi]
        m = self.mask[lo:hi, lo:hi]
        if not m.all():
            raise SimulationError("no atom sampled the beam center")
        return complex(block.mean())

    def same_geometry(self, other: "SusceptibilityMap") -> bool:
        return self.chi.shape == other.chi.shape and self.box_size == other.box_size


def susceptibility_map(
    grid: CoherenceGrid,
    beam: BeamField,
    cell: VaporCell,
    system: AtomicSystem,
    field_floor: float = 1e-6,
) -> SusceptibilityMap:
    """chi(r) = 2 N / (eps0 E(r)) (mu23 rho32 + mu13 rho31) per cell.

    The optical coherences enter through rho31 = conj(rho13) and
    rho32 = conj(rho23), the components oscillating as exp(-i w t) with the
    field; this yields Im chi > 0 for an absorbing medium. Cells where
    E(r) < ``field_floor`` E0 are masked and counted.
    """
    r = grid.radius()
    e = beam.field(r)
    e0 = float(beam.field(0.0))
    floor = e < field_floor * e0 if e0 > 0 else np.ones_like(e, bool)
    mask = grid.visited & ~floor
    coh = system.mu23 * np.conj(grid.rho23) + system.mu13 * np.conj(grid.rho13)
    chi = np.zeros_like(coh)
    chi[mask] = 2 * cell.density * coh[mask] / (EPS0 * e[mask])
    n_floor = int(np.count_nonzero(grid.visited & floor))
    md = dict(grid.metadata)
    md.update(temperature=cell.temperature, density=cell.density)
    return SusceptibilityMap(chi, mask, grid.box_size, md, n_floor)


def velocity_average(maps: Sequence[tuple[SusceptibilityMap, VelocityClass]]) -> SusceptibilityMap:
    """Weighted sum of per-class maps, chi = sum_k w_k chi_k."""
    if not maps:
        raise DomainError("need at least one map")
    ref = maps[0][0]
    chi = np.zeros_like(ref.chi)
    mask = np.ones_like(ref.mask)
    for m, vc in maps:
        if not ref.same_geometry(m):
            raise DomainError("maps have different grids")
        chi = chi + vc.weight * np.where(m.mask, m.chi, 0)
        mask &= m.mask
    md = {k: v for k, v in ref.metadata.items() if k not in ("speed", "class_index")}
    return SusceptibilityMap(chi, mask, ref.box_size, md, max(m.n_floor_masked for m, _ in maps))


def delta_n(high: SusceptibilityMap, low: SusceptibilityMap, full_map: bool = False):
    """Index change n(high) - n(low) at the beam center (or on the whole grid)."""
    if not high.same_geometry(low):
        raise DomainError("high and low runs have different geometry")
    if full_map:
        return high.index - low.index
    nh = math.sqrt(1 + high.center_chi().real)
    nl = math.sqrt(1 + low.center_chi().real)
    return nh - nl


# ---------------------------------------------------------- pipelines


@dataclass(frozen=True)
class RunConfig:
    """Physics and sampling parameters of a Monte-Carlo run.

    ``detuning`` is in Hz (laser minus the 2-3 transition), ``intensity`` in
    W/cm^2, ``waist`` and ``box_factor`` define the box as
    ``box_factor * waist``.
    """

    temperature: float = 423.15
    detuning: float = -2.2e9
    intensity: float = 17.8
    waist: float = 1e-3
    n_traj: int = 10_000
    n_classes: int = 8
    n_doppler: int = 1
    doppler: bool = False
    grid_n: int = 64
    box_factor: float = 4.0
    seed: int = 0
    workers: int = 1
    solver: SolverSettings = SolverSettings()
    low_ratio: float = LOW_INTENSITY_RATIO
    length: float = 10e-3
    alpha: float = 0.0

    def cell(self) -> VaporCell:
        return VaporCell(self.temperature, length=self.length, alpha=self.alpha)

    def classes(self) -> list[VelocityClass]:
        nd = self.n_doppler if self.doppler else 1
        return sample_velocity_classes(self.cell(), self.n_classes, nd)


def _class_detuning(system: AtomicSystem, cfg: RunConfig, vc: VelocityClass) -> float:
    d = 2 * math.pi * cfg.detuning
    if cfg.doppler:
        d -= system.wavevector * vc.v_z
    return d


@dataclass
class DeltaNResult:
    delta_n: float
    chi_high: SusceptibilityMap
    chi_low: SusceptibilityMap
    grids: list = field(default_factory=list, repr=False)


def run_delta_n(
    system: AtomicSystem,
    cfg: RunConfig,
    intensity: float | None = None,
    keep_grids: bool = False,
) -> DeltaNResult:
    """Velocity-averaged high and low runs at one waist and intensity.

    The low run reuses the trajectories of the high run (common random
    numbers), so sampling noise largely cancels in the difference.
    """
    i_high = cfg.intensity if intensity is None else intensity
    cell = cfg.cell()
    box = cfg.box_factor * cfg.waist
    high_maps, low_maps, grids = [], [], []
    beam_h = BeamField(cfg.waist, i_high, system.wavevector)
    beam_l = beam_h.with_intensity(i_high * cfg.low_ratio)
    for k, vc in enumerate(cfg.classes()):
        traj = sample_trajectories(beam_h, box, cfg.n_traj, vc.speed, cfg.seed, k)
        det = _class_detuning(system, cfg, vc)
        gh = accumulate_class(system, beam_h, traj, det, cfg.grid_n, solver=cfg.solver,
                              workers=cfg.workers)
        gl = accumulate_class(system, beam_l, traj, det, cfg.grid_n, solver=cfg.solver,
                              workers=cfg.workers)
        high_maps.append((susceptibility_map(gh, beam_h, cell, system), vc))
        low_maps.append((susceptibility_map(gl, beam_l, cell, system), vc))
        if keep_grids:
            grids.append((gh, gl))
    hi = velocity_average(high_maps)
    lo = velocity_average(low_maps)
    return DeltaNResult(delta_n(hi, lo), hi, lo, grids)


def analytic_delta_n(system: AtomicSystem, cfg: RunConfig, intensity: float | None = None) -> float:
    """Same observable with the phenomenological-transit closed form."""
    i_high = cfg.intensity if intensity is None else intensity
    cell = cfg.cell()
    gt = transit_rate(cell, cfg.waist)
    det = 2 * math.pi * cfg.detuning
    e_h = float(field_from_intensity(i_high * 1e4))
    e_l = float(field_from_intensity(i_high * cfg.low_ratio * 1e4))
    ch = analytic_chi23(system, cell, e_h, det, gt)
    cl = analytic_chi23(system, cell, e_l, det, gt)
    return math.sqrt(1 + complex(ch).real) - math.sqrt(1 + complex(cl).real)


def absorption_sliced_delta_n(
    delta_n_at: Callable[[float], float],
    base_intensity: float,
    cell: VaporCell,
    n_slices: int,
) -> float:
    """Length-averaged index change over slices with I_k = I0 exp(-alpha z_k).

    ``delta_n_at`` maps an intensity (W/cm^2) to the thin-slice index change.
    """
    if n_slices < 1:
        raise DomainError("n_slices must be >= 1")
    if cell.alpha == 0:
        return float(delta_n_at(base_intensity))
    dz = cell.length / n_slices
    z = (np.arange(n_slices) + 0.5) * dz
    return float(np.mean([delta_n_at(base_intensity * math.exp(-cell.alpha * zk)) for zk in z]))


@dataclass
class WaistSweep:
    waists: np.ndarray
    delta_n: np.ndarray
    fit: PowerLawFit
    runs: list = field(default_factory=list, repr=False)


def waist_sweep(
    waists: Sequence[float],
    cfg: RunConfig,
    system: AtomicSystem,
    backend: str = "montecarlo",
    progress: Callable[[str], None] | None = None,
    keep_runs: bool = False,
) -> WaistSweep:
    """Index change versus waist with a log-log power-law fit of |dn|.

    With ``keep_runs`` the per-waist :class:`DeltaNResult` objects (including
    the per-class coherence grids) are returned in ``runs``.
    """
    if len(waists) < 4:
        raise DomainError("need at least 4 waists")
    dn, runs = [], []
    for w in waists:
        c = replace(cfg, waist=float(w))
        if backend == "montecarlo":
            r = run_delta_n(system, c, keep_grids=keep_runs)
            v = r.delta_n
            if keep_runs:
                runs.append(r)
        elif backend == "analytic":
            v = analytic_delta_n(system, c)
        else:
            raise DomainError(f"unknown backend {backend!r}")
        dn.append(v)
        if progress:
            progress(f"waist {w * 1e3:.3f} mm: dn = {v:.4e}")
    dn = np.array(dn)
    fit = fit_power_law(np.asarray(waists, float), np.abs(dn))
    return WaistSweep(np.asarray(waists, float), dn, fit, runs)


@dataclass
class RampSweep:
    waists: np.ndarray
    intensities: np.ndarray
    delta_n: np.ndarray  # (n_waists, n_intensities)
    kerr: list
    n2_fit: PowerLawFit
    isat_fit: PowerLawFit


def ramp_sweep(
    intensities: Sequence[float],
    waists: Sequence[float],
    cfg: RunConfig,
    system: AtomicSystem,
    backend: str = "montecarlo",
    progress: Callable[[str], None] | None = None,
) -> RampSweep:
    """Saturated-Kerr fits of dn(I) per waist and power laws of n2, I_S versus waist.

    Needs >= 6 intensities and >= 3 waists. n2 is fitted on |dn| (the sign is that of the
    detuning) so that the power law of its magnitude is defined.
    """
    if len(intensities) < 6:
        raise DomainError("need at least 6 intensities")
    if len(waists) < 3:
        raise DomainError("need at least 3 waists")
    inten = np.asarray(intensities, float)
    table = np.empty((len(waists), len(inten)))
    fits: list[KerrFit] = []
    for i, w in enumerate(waists):
        c = replace(cfg, waist=float(w))
        for j, I in enumerate(inten):
            if backend == "montecarlo":
                table[i, j] = run_delta_n(system, c, intensity=float(I)).delta_n
            else:
                table[i, j] = analytic_delta_n(system, c, intensity=float(I))
            if progress:
                progress(f"waist {w * 1e3:.3f} mm, I {I:.1f} W/cm2: dn = {table[i, j]:.4e}")
        fits.append(fit_saturated(inten, table[i]))
    w = np.asarray(waists, float)
    n2 = np.array([abs(f.n2) for f in fits])
    isat = np.array([f.i_sat for f in fits])
    k = min(4, len(w))
    return RampSweep(w, inten, table, fits, fit_power_law(w, n2, min_points=k),
                     fit_power_law(w, isat, min_points=k))


# ------------------------------------------------------- pulsed response


def _center_chords(rng, n, box):
    # chords through the box center with isotropic directions
    ang = rng.random(n) * 2 * math.pi
    dirs = np.column_stack((np.cos(ang), np.sin(ang)))
    back = _exit_distance(np.zeros((n, 2)), -dirs, box / 2)
    starts = -dirs * back[:, None]
    return starts, dirs, back


@dataclass
class PulsedResponse:
    """dn(t) at the beam center after switch-on.

    ``fit`` includes a prompt step (the two-level part of the response
    settles within the switch-on ramp); ``fit_single`` is the one-term
    ``A (1 - exp(-t / tau))`` fit of the same data.
    """

    delays: np.ndarray
    delta_n: np.ndarray
    fit: ExpGrowthFit
    fit_single: ExpGrowthFit
    bound: float


def center_delta_n_at(
    system: AtomicSystem,
    cfg: RunConfig,
    delays: Sequence[float],
    n_atoms: int = 1000,
    t_rise: float = SWITCH_ON_RISE,
) -> np.ndarray:
    """Index change at the beam center a time ``t`` after the beam switches on.

    Atoms found at the center at time ``t`` arrive there on isotropic chords;
    each is integrated from the box edge in its ground state, with the beam
    switched on ``t`` before its arrival (a sin^2 ramp of length ``t_rise``).
    The switch-on lights up the whole beam at once.
    """
    cell = cfg.cell()
    box = cfg.box_factor * cfg.waist
    beam = BeamField(cfg.waist, cfg.intensity, system.wavevector)
    low = beam.with_intensity(cfg.intensity * cfg.low_ratio)
    e_h = float(beam.field(0.0))
    e_l = float(low.field(0.0))
    classes = cfg.classes()
    st = cfg.solver
    out = []
    for t in delays:
        if not t >= 0:
            raise DomainError("delays must be non-negative")
        chi_h = 0j
        chi_l = 0j
        for k, vc in enumerate(classes):
            rng = _stream(cfg.seed, k, 1_000_000)
            starts, dirs, back = _center_chords(rng, n_atoms, box)
            det = _class_detuning(system, cfg, vc)
            t_end = back / vc.speed
            vals = []
            for b_ in (beam, low):
                R0, R1, q0, q1, x0 = _real_system(system, b_, det)
                res = np.empty(n_atoms, np.complex128)
                for j in range(n_atoms):
                    r, status, viol = K.final_states(
                        R0, R1, q0, q1, cfg.waist, float(t_end[j] - t), t_rise,
                        starts[j:j + 1], dirs[j:j + 1], vc.speed, float(t_end[j]),
                        st.max_step, st.rtol, st.atol, x0, st.max_steps, PHYS_TOL)
                    if status[0] != K.STATUS_OK:
                        raise SimulationError("pulsed trajectory failed to integrate")
                    z = real_to_complex(r[0])
                    # rho31, rho32
                    res[j] = system.mu23 * z[6] + system.mu13 * z[4]
                vals.append(res.mean())
            chi_h += vc.weight * 2 * cell.density * vals[0] / (EPS0 * e_h)
            chi_l += vc.weight * 2 * cell.density * vals[1] / (EPS0 * e_l)
        out.append(math.sqrt(1 + chi_h.real) - math.sqrt(1 + chi_l.real))
    return np.array(out)


def pulsed_response(
    delays: Sequence[float],
    cfg: RunConfig,
    system: AtomicSystem,
    n_atoms: int = 1000,
    t_rise: float = SWITCH_ON_RISE,
) -> PulsedResponse:
    """dn(t) after switch-on, exponential-growth fits and the eigenvalue bound.

    The bound is :func:`response_timescale` of the phenomenological-transit
    Bloch matrix at the peak intensity.
    """
    d = np.asarray(delays, float)
    if np.any(d <= 0):
        raise DomainError("delays must be positive")
    dn = center_delta_n_at(system, cfg, d, n_atoms, t_rise)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fit = fit_exp_growth(d, dn, step=True)
        single = fit_exp_growth(d, dn)
    gt = transit_rate(cfg.cell(), cfg.waist)
    om = rabi_from_intensity(system.mu23, cfg.intensity * 1e4)
    op = assemble(system, rabi_from_intensity(system.mu13, cfg.intensity * 1e4), om,
                  2 * math.pi * cfg.detuning, gt)
    return PulsedResponse(d, dn, fit, single, response_timescale(op))
