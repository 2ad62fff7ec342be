"""Desk-scale acceptance checks with measured values and pass/fail status.

Each ``check_*`` function returns a :class:`CriterionResult`. The Bloch
oracle also compares the loaded atomic constants against reference values
held here, so a tampered constant (for example ``HOTVAPOR_GAMMA_MHZ``) is
reported as a failure rather than silently propagating into both sides of
the comparison.
"""

from __future__ import annotations

import math
import tempfile
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from hotvapor.atomvapor import (
    HBAR,
    VaporCell,
    load_system,
    rabi_from_intensity,
    transit_rate,
)
from hotvapor.bloch import DensityState, assemble, integrate, steady_state

# Reference Rb-87 three-level constants, independent of the constants file.
REFERENCE = {
    "gamma": 2 * math.pi * 6.07e6,
    "delta_hf": 2 * math.pi * 6.834682611e9,
    "mu13": 2.0689e-29,
    "mu23": 2.0689e-29,
    "g1": 3 / 8,
    "g2": 5 / 8,
}

# acceptance thresholds
ORACLE_TOL = 1e-6
FIXED_POINT_TOL = 1e-10
WAIST_EXPONENT_BAND = (0.65, 0.90)
ANALYTIC_EXPONENT = (0.67, 0.05)
N2_EXPONENT_BAND = (0.9, 1.3)
ISAT_EXPONENT_BAND = (-1.3, -0.8)
ISAT_RANGE = (10.0, 500.0)
RETRIEVAL_RMS = 0.02
CROSS_RMS = 0.02
TAU_BAND_US = (0.5, 2.0)

# integration tolerances for the oracle comparison; the GHz oscillation of the
# initial transient makes the library default (rtol 1e-8) far too slow for 100
# draws, and the residual error is set by exp(-20) at the end time, not the step
ORACLE_RTOL = 1e-4
ORACLE_ATOL = 1e-7


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    target: str = ""
    seconds: float = 0.0
    note: str = ""

    def __post_init__(self):
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return asdict(self)


def reference_operator(rabi13: complex, rabi23: complex, detuning: float, transit: float,
                       const: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bloch matrix and inhomogeneity written out row by row from reference constants."""
    c = REFERENCE if const is None else const
    G, d, gt = c["gamma"], c["delta_hf"], transit
    g32 = G - 1j * detuning
    g31 = G - 1j * (detuning - d)
    g21 = gt + 1j * d
    o1, o2 = complex(rabi13), complex(rabi23)
    o1c, o2c = o1.conjugate(), o2.conjugate()
    i = 1j
    A = np.array([
        [-gt - G / 2, -G / 2, 0, 0, i * o1c / 2, -i * o1 / 2, 0, 0],
        [-G / 2, -gt - G / 2, 0, 0, 0, 0, i * o2c / 2, -i * o2 / 2],
        [0, 0, -g21, 0, i * o2c / 2, 0, 0, -i * o1 / 2],
        [0, 0, 0, -g21.conjugate(), 0, -i * o2 / 2, i * o1c / 2, 0],
        [i * o1, i * o1 / 2, i * o2 / 2, 0, -g31, 0, 0, 0],
        [-i * o1c, -i * o1c / 2, 0, -i * o2c / 2, 0, -g31.conjugate(), 0, 0],
        [i * o2 / 2, i * o2, 0, i * o1 / 2, 0, 0, -g32, 0],
        [-i * o2c / 2, -i * o2c, -i * o1c / 2, 0, 0, 0, 0, -g32.conjugate()],
    ], dtype=complex)
    b = np.array([G / 2 + c["g1"] * gt, G / 2 + c["g2"] * gt, 0, 0,
                  -i * o1 / 2, i * o1c / 2, -i * o2 / 2, i * o2c / 2], dtype=complex)
    return A, b


def _draws(rng, n):
    for _ in range(n):
        yield (2 * math.pi * rng.uniform(-10e9, -1e9), 10 ** rng.uniform(-1, 2),
               rng.uniform(0.0, 2 * math.pi * 200e3))


def check_bloch_oracle(n_draws: int = 100, seed: int = 20261018,
                       rtol: float = ORACLE_RTOL, atol: float = ORACLE_ATOL) -> CriterionResult:
    """Long-time integration versus linear solve, plus a reference-constant anchor."""
    t0 = time.perf_counter()
    system = load_system()
    rng = np.random.default_rng(seed)
    worst = 0.0
    anchor = 0.0
    for det, inten, gt in _draws(rng, n_draws):
        o13 = rabi_from_intensity(system.mu13, inten * 1e4)
        o23 = rabi_from_intensity(system.mu23, inten * 1e4)
        op = assemble(system, o13, o23, det, gt)
        ss = steady_state(op).components
        t_end = 20.0 / float(np.min(np.abs(np.linalg.eigvals(op.a_matrix).real)))
        traj = integrate(op, DensityState.ground(system), (0.0, t_end), rtol=rtol, atol=atol)
        worst = max(worst, float(np.max(np.abs(traj.final.components - ss))))
        # the same physical point from reference constants
        r13 = REFERENCE["mu13"] * math.sqrt(2 * inten * 1e4 / (8.8541878128e-12 * 299792458.0)) / HBAR
        r23 = REFERENCE["mu23"] * math.sqrt(2 * inten * 1e4 / (8.8541878128e-12 * 299792458.0)) / HBAR
        A, b = reference_operator(r13, r23, det, gt)
        ref = np.linalg.solve(A, -b)
        anchor = max(anchor, float(np.max(np.abs(ss - ref))))
    ok = worst <= ORACLE_TOL and anchor <= ORACLE_TOL
    return CriterionResult(
        1, "Bloch oracle equivalence", ok,
        {"max_component_error": worst, "reference_anchor_error": anchor, "draws": n_draws},
        f"integration vs steady state <= {ORACLE_TOL}; steady state vs reference constants "
        f"<= {ORACLE_TOL}", time.perf_counter() - t0)


def check_zero_field(temperature: float = 423.15, waist: float = 1e-3) -> CriterionResult:
    t0 = time.perf_counter()
    system = load_system()
    gt = transit_rate(VaporCell(temperature), waist)
    rho = steady_state(assemble(system, 0.0, 0.0, 0.0, gt)).components
    err = max(abs(rho[0] - 3 / 8), abs(rho[1] - 5 / 8), float(np.max(np.abs(rho[2:]))))
    return CriterionResult(2, "zero-field fixed point", err <= FIXED_POINT_TOL,
                           {"max_error": float(err), "rho11": rho[0].real, "rho22": rho[1].real},
                           f"(3/8, 5/8, 0...) within {FIXED_POINT_TOL}", time.perf_counter() - t0)


def fig5_config(n_traj: int = 10_000, n_classes: int = 8, workers: int = 1):
    from hotvapor.montecarlo import RunConfig

    return RunConfig(temperature=423.15, detuning=-2.2e9, intensity=17.8, n_traj=n_traj,
                     n_classes=n_classes, workers=workers, seed=5)


FIG5_WAISTS = tuple(np.linspace(0.3e-3, 1.8e-3, 5))


def check_waist_sweep(n_traj: int = 10_000, n_classes: int = 8, workers: int = 1,
                      log: Callable[[str], None] | None = None):
    """Monte-Carlo waist sweep; also returns the table for the analytic comparison."""
    from hotvapor.montecarlo import waist_sweep

    t0 = time.perf_counter()
    res = waist_sweep(list(FIG5_WAISTS), fig5_config(n_traj, n_classes, workers), load_system(),
                      progress=log)
    mono = bool(np.all(np.diff(np.abs(res.delta_n)) > 0))
    lo, hi = WAIST_EXPONENT_BAND
    ok = lo <= res.fit.exponent <= hi and mono
    return CriterionResult(
        3, "Monte-Carlo waist power law", ok,
        {"exponent": res.fit.exponent, "sigma_exponent": res.fit.sigma_exponent,
         "delta_n": res.delta_n.tolist(), "waists_mm": (res.waists * 1e3).tolist(),
         "monotone": mono, "n_traj": n_traj, "n_classes": n_classes},
        f"exponent in [{lo}, {hi}], |dn| increasing (reference 0.77 +- 0.03)",
        time.perf_counter() - t0), res


def check_analytic_sweep(mc_delta_n=None) -> CriterionResult:
    from hotvapor.montecarlo import waist_sweep

    t0 = time.perf_counter()
    res = waist_sweep(list(FIG5_WAISTS), fig5_config(), load_system(), backend="analytic")
    c, tol = ANALYTIC_EXPONENT
    exp_ok = abs(res.fit.exponent - c) <= tol
    measured = {"exponent": res.fit.exponent, "sigma_exponent": res.fit.sigma_exponent,
                "delta_n": res.delta_n.tolist()}
    note = ""
    if mc_delta_n is not None:
        over = bool(np.all(np.abs(res.delta_n) > np.abs(np.asarray(mc_delta_n))))
        measured["overestimates_mc"] = over
        ok = exp_ok and over
    else:
        ok = exp_ok
        note = "Monte-Carlo comparison not run (quick mode)"
    return CriterionResult(4, "analytic-model waist sweep", ok, measured,
                           f"exponent {c} +- {tol}; |dn| above Monte-Carlo at every waist",
                           time.perf_counter() - t0, note)


FIG6_WAISTS = (0.5e-3, 1.0e-3, 1.8e-3)
FIG6_INTENSITIES = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


def check_ramp_sweep(n_traj: int = 4000, n_classes: int = 8, workers: int = 1,
                     log: Callable[[str], None] | None = None) -> CriterionResult:
    from hotvapor.montecarlo import ramp_sweep

    t0 = time.perf_counter()
    res = ramp_sweep(list(FIG6_INTENSITIES), list(FIG6_WAISTS),
                     fig5_config(n_traj, n_classes, workers), load_system(), progress=log)
    isat = [f.i_sat for f in res.kerr]
    in_range = all(ISAT_RANGE[0] <= v <= ISAT_RANGE[1] for v in isat)
    ok = (N2_EXPONENT_BAND[0] <= res.n2_fit.exponent <= N2_EXPONENT_BAND[1]
          and ISAT_EXPONENT_BAND[0] <= res.isat_fit.exponent <= ISAT_EXPONENT_BAND[1]
          and in_range)
    return CriterionResult(
        5, "ramp sweep n2 and I_S power laws", ok,
        {"n2_exponent": res.n2_fit.exponent, "sigma_n2_exponent": res.n2_fit.sigma_exponent,
         "i_sat_exponent": res.isat_fit.exponent,
         "sigma_i_sat_exponent": res.isat_fit.sigma_exponent,
         "i_sat_w_cm2": isat, "n2": [f.n2 for f in res.kerr], "n_traj": n_traj},
        f"n2 exponent in {list(N2_EXPONENT_BAND)}, I_S exponent in {list(ISAT_EXPONENT_BAND)}, "
        f"I_S in {list(ISAT_RANGE)} W/cm^2", time.perf_counter() - t0)


def fig3_scene(snr_db: float | None = 30.0, peak_phase: float = -30.0, **kw):
    """Frame geometry modelled on a 1.85 mm waist, 560 mW signal beam."""
    from hotvapor.synthetic import KerrScene

    i0 = 2 * 0.56 / (math.pi * 0.185**2)
    return KerrScene.with_peak_phase(peak_phase, peak_intensity=i0, i_sat=20.0,
                                     snr_db=snr_db, **kw)


def check_retrieval(seed: int = 11) -> CriterionResult:
    from hotvapor.interferometry import retrieve

    t0 = time.perf_counter()
    sc = fig3_scene()
    r = retrieve(sc.frame(1.0, seed=seed), sc.intensity(1.0))
    m = r.phi_nl.mask
    truth = sc.phase(1.0)
    rel = float(np.sqrt(np.mean((r.phi_nl.phase[m] - truth[m]) ** 2)) / np.abs(truth).max())
    z_n2 = (r.fit.n2 - sc.n2) / r.fit.sigma["n2"]
    z_is = (r.fit.i_sat - sc.i_sat) / r.fit.sigma["i_sat"]
    ok = rel < RETRIEVAL_RMS and abs(z_n2) <= 1 and abs(z_is) <= 1
    return CriterionResult(
        6, "Fourier retrieval round trip", ok,
        {"relative_rms": rel, "n2": r.fit.n2, "n2_true": sc.n2, "z_n2": z_n2,
         "i_sat": r.fit.i_sat, "i_sat_true": sc.i_sat, "z_i_sat": z_is},
        f"relative RMS < {RETRIEVAL_RMS}; n2 and I_S within 1 sigma", time.perf_counter() - t0)


def check_cross_validation(n_frames: int = 100, seed: int = 7) -> CriterionResult:
    from hotvapor.bucket import compare_curves, fit_cosine
    from hotvapor.interferometry import retrieve

    t0 = time.perf_counter()
    sc = fig3_scene()
    trace = sc.bucket_trace(n_frames, roi_size=1, seed=seed)
    bf = fit_cosine(trace)
    r = retrieve(sc.frame(1.0, seed=seed), sc.intensity(1.0))
    grid = np.linspace(0.0, sc.peak_intensity, 200)
    rms = compare_curves(bf, r.fit, grid)
    return CriterionResult(
        7, "bucket versus Fourier cross-validation", rms < CROSS_RMS,
        {"relative_rms": rms, "bucket_n2": bf.kerr.n2, "bucket_i_sat": bf.kerr.i_sat,
         "fourier_n2": r.fit.n2, "fourier_i_sat": r.fit.i_sat},
        f"Phi_NL(I) curves differ by < {CROSS_RMS} RMS", time.perf_counter() - t0)


FIG4_DETUNINGS_GHZ = (-5.5, -7.5, -9.5)
FIG4_DELAYS_US = (0.03, 0.06, 0.1, 0.15, 0.2, 0.3, 0.4, 0.6, 0.8, 1.0, 1.3, 1.6, 2.0, 2.5,
                  3.0, 4.0, 5.0, 6.5, 8.0)


def fig4_config(detuning_ghz: float, workers: int = 1):
    from hotvapor.montecarlo import RunConfig

    waist = 660e-6
    i0 = 2 * 0.4 / (math.pi * (waist * 100) ** 2)
    return RunConfig(temperature=413.15, detuning=detuning_ghz * 1e9, intensity=i0,
                     waist=waist, n_classes=8, workers=workers, seed=4)


def check_pulsed(n_atoms: int = 1000, log: Callable[[str], None] | None = None) -> CriterionResult:
    from hotvapor.montecarlo import pulsed_response

    t0 = time.perf_counter()
    system = load_system()
    delays = np.asarray(FIG4_DELAYS_US) * 1e-6
    taus, bounds, singles = [], [], []
    for dg in FIG4_DETUNINGS_GHZ:
        pr = pulsed_response(delays, fig4_config(dg), system, n_atoms=n_atoms)
        taus.append(pr.fit.tau * 1e6)
        bounds.append(pr.bound * 1e6)
        singles.append(pr.fit_single.tau * 1e6)
        if log:
            log(f"detuning {dg} GHz: tau {taus[-1]:.3f} us, bound {bounds[-1]:.3f} us")
    mono = bool(np.all(np.diff(taus) > 0))
    below = all(t <= b for t, b in zip(taus, bounds))
    order = TAU_BAND_US[0] <= taus[0] <= TAU_BAND_US[1]
    return CriterionResult(
        8, "pulsed response time constants", mono and below and order,
        {"detunings_ghz": list(FIG4_DETUNINGS_GHZ), "tau_us": taus, "bound_us": bounds,
         "tau_single_term_us": singles, "monotone": mono, "below_bound": below},
        f"tau increasing with |detuning|, tau <= bound, tau(-5.5 GHz) in {list(TAU_BAND_US)} us",
        time.perf_counter() - t0)


DETERMINISM_TOML = """\
mode = "grid"
seed = 9
[physics]
temperature_k = 423.15
detuning_ghz = -2.2
intensity_w_cm2 = 17.8
waist_mm = 0.3
[sampling]
n_traj = 2048
n_classes = 2
grid_n = 16
"""


def check_determinism(worker_counts=(1, 4, 8), toml: str = DETERMINISM_TOML) -> CriterionResult:
    from hotvapor import cli, storage

    t0 = time.perf_counter()
    hashes = {}
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "determinism.toml"
        cfg.write_text(toml)
        for w in worker_counts:
            out = Path(tmp) / f"w{w}"
            code = cli.main(["simulate", "--config", str(cfg), "--workers", str(w),
                             "--out", str(out)])
            if code != 0:
                return CriterionResult(9, "determinism across worker counts", False,
                                       {"exit_code": code}, "byte-identical grid files",
                                       time.perf_counter() - t0)
            hashes[w] = {p.name: storage.sha256_file(p) for p in sorted(out.glob("grid_*.f64"))}
    ref = hashes[worker_counts[0]]
    same = bool(ref) and all(h == ref for h in hashes.values())
    return CriterionResult(9, "determinism across worker counts", same,
                           {"workers": list(worker_counts), "files": sorted(ref),
                            "sha256": ref}, "byte-identical grid files",
                           time.perf_counter() - t0)


def check_invariants(n_cases: int = 500, seed: int = 3) -> CriterionResult:
    """Randomized DensityState, PhaseMap and fitting invariants."""
    from hotvapor.fitting import fit_power_law, fit_saturated
    from hotvapor.interferometry import unwrap

    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    system = load_system()
    fails = {"density_state": 0, "phase_map": 0, "fitting": 0}
    for _ in range(n_cases):
        det = 2 * math.pi * rng.uniform(-10e9, -1e9)
        inten = 10 ** rng.uniform(-1, 2)
        gt = rng.uniform(1e3, 2 * math.pi * 200e3)
        op = assemble(system, rabi_from_intensity(system.mu13, inten * 1e4),
                      rabi_from_intensity(system.mu23, inten * 1e4), det, gt)
        tr = integrate(op, DensityState.ground(system), (0.0, 2e-7), rtol=1e-5, atol=1e-8,
                       t_eval=np.linspace(0, 2e-7, 5))
        if not all(DensityState(s).is_physical() for s in tr.states):
            fails["density_state"] += 1
    y, x = np.mgrid[:48, :48]
    border = np.zeros((48, 48), bool)
    border[0], border[-1], border[:, 0], border[:, -1] = True, True, True, True
    for _ in range(n_cases):
        # domes with gradients below pi/2 per pixel
        amp = rng.uniform(-20, 20)
        w = rng.uniform(12, 16)
        phase = amp * np.exp(-((x - rng.uniform(20, 28)) ** 2 + (y - rng.uniform(20, 28)) ** 2) / w**2)
        pm = unwrap(np.angle(np.exp(1j * phase)), np.ones_like(border))
        expected = phase - phase[border].mean()
        if not pm.is_continuous or float(np.max(np.abs(pm.phase - expected))) > 1e-6:
            fails["phase_map"] += 1
    for _ in range(n_cases):
        xs = np.sort(rng.uniform(0.1, 10, 6))
        ys = rng.uniform(0.5, 2) * xs ** rng.uniform(-2, 2) * np.exp(rng.normal(0, 0.05, 6))
        a, b = 10 ** rng.uniform(-3, 3), 10 ** rng.uniform(-3, 3)
        f1 = fit_power_law(xs, ys)
        f2 = fit_power_law(a * xs, b * ys)
        if abs(f1.exponent - f2.exponent) > 1e-9 * max(1, abs(f1.exponent)):
            fails["fitting"] += 1
        i = np.linspace(1, 50, 12)
        yv = rng.uniform(-2, 2) * i / (1 + i / rng.uniform(5, 500)) + rng.uniform(-1, 1)
        k1 = fit_saturated(i, yv)
        k2 = fit_saturated(i, yv)
        if k1 != k2 or not (k1.i_sat > 0) or any(
                not (v >= 0) for v in k1.sigma.values()):
            fails["fitting"] += 1
    ok = not any(fails.values())
    return CriterionResult(10, "invariant suite", ok, {"cases_each": n_cases, "failures": fails},
                           "no invariant violations", time.perf_counter() - t0)


QUICK = (1, 2, 4, 6, 7, 9, 10)


def run(quick: bool = False, workers: int = 1,
        log: Callable[[str], None] | None = None) -> list[CriterionResult]:
    """Run the checks; ``quick`` keeps only the sub-minute ones."""
    results = []

    def note(r):
        results.append(r)
        if log:
            log(_line(r))

    note(check_bloch_oracle())
    note(check_zero_field())
    mc = None
    if not quick:
        r3, sweep = check_waist_sweep(workers=workers, log=log)
        note(r3)
        mc = sweep.delta_n
    note(check_analytic_sweep(mc))
    if not quick:
        note(check_ramp_sweep(workers=workers, log=log))
    note(check_retrieval())
    note(check_cross_validation())
    if not quick:
        note(check_pulsed(log=log))
    note(check_determinism())
    note(check_invariants())
    return sorted(results, key=lambda r: r.number)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, list):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    if isinstance(v, dict):
        return "{" + ", ".join(f"{k}: {_fmt(x)}" for k, x in v.items()) + "}"
    return str(v)


def _line(r: CriterionResult) -> str:
    keys = [k for k in r.measured if k not in ("sha256", "files")]
    vals = ", ".join(f"{k}={_fmt(r.measured[k])}" for k in keys)
    status = "PASS" if r.passed else "FAIL"
    s = f"[{status}] {r.number:2d} {r.name} ({r.seconds:.1f} s): {vals}"
    if r.note:
        s += f" ({r.note})"
    return s


def format_report(results: list[CriterionResult]) -> str:
    lines = [_line(r) + f"\n      target: {r.target}" for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} criteria passed")
    return "\n".join(lines)
