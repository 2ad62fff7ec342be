"""Regression helpers: saturated Kerr law, exponential rise, log-log power law.

Non-linear fits use a damped Gauss-Newton (Levenberg-Marquardt) loop with
analytic Jacobians. Reported uncertainties are 1-sigma values from the
Jacobian covariance at the optimum, scaled by the residual variance.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from hotvapor.errors import DomainError, FitError

# Fitted saturation intensities above this (W/cm^2) mean "no measurable saturation".
I_SAT_SENTINEL = 1e12


@dataclass
class LMResult:
    params: np.ndarray
    cost: float
    jacobian: np.ndarray
    residuals: np.ndarray
    converged: bool
    n_iter: int


def levenberg_marquardt(
    fun: Callable[[np.ndarray], np.ndarray],
    jac: Callable[[np.ndarray], np.ndarray],
    p0,
    lower=None,
    upper=None,
    max_iter: int = 500,
    xtol: float = 1e-13,
    ftol: float = 1e-15,
) -> LMResult:
    """Minimize ``0.5 * ||fun(p)||^2`` with box-projected LM steps."""
    p = np.array(p0, dtype=float)
    npar = p.size
    lo = np.full(npar, -np.inf) if lower is None else np.asarray(lower, float)
    hi = np.full(npar, np.inf) if upper is None else np.asarray(upper, float)
    p = np.clip(p, lo, hi)
    r = fun(p)
    cost = 0.5 * float(r @ r)
    J = jac(p)
    lam = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = J.T @ r
        H = J.T @ J
        d = np.diag(H).copy()
        d[d <= 0] = 1.0
        if lam is None:
            lam = 1e-3
        improved = False
        for _ in range(60):
            try:
                step = np.linalg.solve(H + lam * np.diag(d), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            p_new = np.clip(p + step, lo, hi)
            r_new = fun(p_new)
            if not np.all(np.isfinite(r_new)):
                lam *= 10
                continue
            cost_new = 0.5 * float(r_new @ r_new)
            if cost_new <= cost:
                improved = True
                break
            lam *= 10
        if not improved:
            converged = True  # no descent direction left at working precision
            break
        dp = p_new - p
        dcost = cost - cost_new
        p, r, cost = p_new, r_new, cost_new
        J = jac(p)
        lam = max(lam / 10, 1e-15)
        if np.all(np.abs(dp) <= xtol * (np.abs(p) + xtol)) or dcost <= ftol * max(cost, 1e-300):
            converged = True
            break
        if cost == 0.0:
            converged = True
            break
    return LMResult(p, cost, J, r, converged, it)


def _covariance(J: np.ndarray, residuals: np.ndarray, n_params: int) -> np.ndarray:
    dof = max(residuals.size - n_params, 1)
    s2 = float(residuals @ residuals) / dof
    try:
        cov = np.linalg.inv(J.T @ J) * s2
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(J.T @ J) * s2
    return cov


def _sig(cov, i):
    v = cov[i, i]
    return math.sqrt(v) if v >= 0 and math.isfinite(v) else math.inf


# --------------------------------------------------------------------- Kerr


@dataclass
class KerrFit:
    """Saturated Kerr law ``y = n2 I / (1 + I / i_sat) + offset``.

    Intensities are in W/cm^2, so ``n2`` is in y-units per W/cm^2 (for an
    index change, ``n2_si`` converts to m^2/W). ``i_sat`` is ``inf`` when the
    data show no saturation.
    """

    n2: float
    i_sat: float
    offset: float
    sigma: dict = field(default_factory=dict)
    residual_rms: float = 0.0
    converged: bool = True
    n_points: int = 0

    def __post_init__(self):
        if not self.i_sat > 0:
            raise DomainError("i_sat must be positive")

    def phase(self, intensity):
        """Non-linear part ``n2 I / (1 + I / i_sat)`` (no offset)."""
        i = np.asarray(intensity, dtype=float)
        return self.n2 * i / (1 + i / self.i_sat)

    def __call__(self, intensity):
        return self.phase(intensity) + self.offset

    @property
    def n2_si(self) -> float:
        return self.n2 * 1e-4

    def to_dict(self) -> dict:
        d = asdict(self)
        d["n2_units"] = "y per W/cm^2"
        d["i_sat_units"] = "W/cm^2"
        d["sigma_kind"] = "1-sigma fit error"
        return d


def _saturated_guess(i, y):
    order = np.argsort(i, kind="stable")
    i, y = i[order], y[order]
    n = i.size
    m = max(2, n // 4)
    il, yl = i[:m], y[:m]
    if np.ptp(il) > 0:
        slope, icpt = np.polyfit(il, yl, 1)
    else:
        slope, icpt = (y[-1] - y[0]) / max(i[-1] - i[0], 1e-300), y[0]
    # local slopes of binned data locate the half-slope intensity
    nb = min(8, n // 2)
    i_sat0 = 10 * i[-1]
    if nb >= 3 and slope != 0:
        bins = np.array_split(np.arange(n), nb)
        ib = np.array([i[b].mean() for b in bins])
        yb = np.array([y[b].mean() for b in bins])
        loc = np.diff(yb) / np.maximum(np.diff(ib), 1e-300)
        mid = 0.5 * (ib[1:] + ib[:-1])
        below = np.nonzero(loc / slope < 0.5)[0]
        if below.size:
            i_sat0 = mid[below[0]] / (math.sqrt(2) - 1)
    # the secant underestimates n2 when the lowest points already saturate
    n2_0 = slope * (1 + il.mean() / i_sat0)
    return np.array([n2_0, 1.0 / i_sat0, icpt])


def fit_saturated(intensity, y, sigma=None, max_restarts: int = 5) -> KerrFit:
    """Fit ``y = n2 I / (1 + I / I_S) + b`` by weighted non-linear least squares.

    Internally fits ``u = 1 / I_S`` with ``u >= 0`` so the unsaturated
    (linear) limit is an interior-reachable bound rather than a divergence.

    Parameters
    ----------
    intensity : array_like
        Intensities (W/cm^2), at least 4, spanning a factor >= 5.
    y : array_like
        Phase (rad) or index change.
    sigma : array_like, optional
        Per-point standard deviations for weighting.
    """
    i = np.asarray(intensity, dtype=float).ravel()
    yv = np.asarray(y, dtype=float).ravel()
    if i.size != yv.size:
        raise DomainError("intensity and y must have equal length")
    if i.size < 4:
        raise DomainError("need at least 4 points")
    if np.any(i < 0) or not np.all(np.isfinite(i)) or not np.all(np.isfinite(yv)):
        raise DomainError("intensities must be finite and non-negative")
    ipos = i[i > 0]
    if ipos.size == 0 or (i.min() > 0 and i.max() / i.min() < 5):
        raise DomainError("intensities must span at least a factor 5")
    w = np.ones_like(i) if sigma is None else 1.0 / np.asarray(sigma, dtype=float).ravel()

    # normalize so LM sees O(1) numbers
    iscale = float(i.max())
    yscale = float(np.max(np.abs(yv))) or 1.0
    x = i / iscale
    yy = yv / yscale

    def fun(p):
        return w * (p[0] * x / (1 + p[1] * x) + p[2] - yy)

    def jac(p):
        den = 1 + p[1] * x
        return np.column_stack((w * x / den, -w * p[0] * x * x / den**2, w))

    g = _saturated_guess(i, yv)
    p0 = np.array([g[0] * iscale / yscale, g[1] * iscale, g[2] / yscale])
    lower = [-np.inf, 0.0, -np.inf]
    best = None
    # restarts perturb the saturation guess; the last one starts at I_S = max(I)
    u_starts = [p0[1], 3 * p0[1], p0[1] / 3, 10 * p0[1], p0[1] / 10, 1.0]
    for u0 in u_starts[: max_restarts + 1]:
        start = p0.copy()
        start[1] = u0
        res = levenberg_marquardt(fun, jac, start, lower=lower)
        if best is None or res.cost < best.cost:
            best = res
        if res.converged:
            break
    if best is None or not best.converged:
        raise FitError("saturated fit did not converge", None if best is None else best.residuals)

    n2s, us, bs = best.params
    cov = _covariance(best.jacobian, best.residuals, 3)
    n2 = n2s * yscale / iscale
    u = us / iscale
    off = bs * yscale
    sn2 = _sig(cov, 0) * yscale / iscale
    su = _sig(cov, 1) / iscale
    sb = _sig(cov, 2) * yscale
    if u * i.max() < 1e-12:
        i_sat, si = math.inf, math.inf
    else:
        i_sat = 1.0 / u
        si = su / u**2
    resid = yv - (n2 * i / (1 + u * i) + off)
    return KerrFit(
        n2=float(n2),
        i_sat=float(i_sat),
        offset=float(off),
        sigma={"n2": sn2, "i_sat": si, "offset": sb},
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        converged=True,
        n_points=int(i.size),
    )


# ---------------------------------------------------------------- power law


@dataclass
class PowerLawFit:
    """``y = prefactor * x ** exponent`` from a log-log linear regression."""

    exponent: float
    prefactor: float
    sigma_exponent: float
    sigma_log_prefactor: float = 0.0
    n_points: int = 0

    def __call__(self, x):
        return self.prefactor * np.asarray(x, dtype=float) ** self.exponent

    def to_dict(self) -> dict:
        return asdict(self)


def fit_power_law(x, y, min_points: int = 4) -> PowerLawFit:
    """Ordinary least squares of log y against log x.

    At least ``min_points`` (default 4, never fewer than 3) strictly positive
    pairs are required; with 3 points the exponent error has one degree of
    freedom and should be read accordingly.
    """
    xv = np.asarray(x, dtype=float).ravel()
    yv = np.asarray(y, dtype=float).ravel()
    if xv.size != yv.size:
        raise DomainError("x and y must have equal length")
    if xv.size < max(3, min_points):
        raise DomainError(f"need at least {max(3, min_points)} points")
    if np.any(xv <= 0) or np.any(yv <= 0) or not np.all(np.isfinite(xv * yv)):
        raise DomainError("power-law fit needs strictly positive finite values")
    lx, ly = np.log(xv), np.log(yv)
    mx, my = lx.mean(), ly.mean()
    dx = lx - mx
    sxx = float(dx @ dx)
    if sxx == 0:
        raise DomainError("x values must not all be equal")
    slope = float(dx @ (ly - my)) / sxx
    icpt = my - slope * mx
    res = ly - (icpt + slope * lx)
    n = xv.size
    s2 = float(res @ res) / (n - 2)
    return PowerLawFit(
        exponent=slope,
        prefactor=float(np.exp(icpt)),
        sigma_exponent=math.sqrt(s2 / sxx),
        sigma_log_prefactor=math.sqrt(s2 * (1 / n + mx * mx / sxx)),
        n_points=n,
    )


# ------------------------------------------------------------- exponential


@dataclass
class ExpGrowthFit:
    """``y = amplitude * (1 - exp(-t / tau)) + step``.

    ``step`` is zero unless the fit was asked for a prompt component.
    """

    tau: float
    amplitude: float
    sigma_tau: float
    sigma_amplitude: float
    residual_rms: float
    plateau_detected: bool = True
    tau_well_determined: bool = True
    step: float = 0.0
    sigma_step: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError("tau must be positive")

    def __call__(self, t):
        return self.amplitude * -np.expm1(-np.asarray(t, dtype=float) / self.tau) + self.step

    def to_dict(self) -> dict:
        return asdict(self)


def fit_exp_growth(t, y, sigma=None, step: bool = False) -> ExpGrowthFit:
    """Fit an exponential rise; tau starts at the 63 % crossing of the plateau.

    With ``step=True`` a constant term is fitted as well, absorbing a prompt
    response that completes before the first sample.
    """
    tv = np.asarray(t, dtype=float).ravel()
    yv = np.asarray(y, dtype=float).ravel()
    if tv.size != yv.size or tv.size < 4:
        raise DomainError("need at least 4 (t, y) points of equal length")
    if np.any(tv < 0) or not np.all(np.isfinite(tv)) or not np.all(np.isfinite(yv)):
        raise DomainError("times must be finite and non-negative")
    order = np.argsort(tv, kind="stable")
    tv, yv = tv[order], yv[order]
    w = np.ones_like(tv) if sigma is None else 1.0 / np.asarray(sigma, float).ravel()[order]

    tscale = float(tv.max()) or 1.0
    yscale = float(np.max(np.abs(yv)))
    if yscale == 0.0:
        return ExpGrowthFit(tau=tscale, amplitude=0.0, sigma_tau=math.inf,
                            sigma_amplitude=0.0, residual_rms=0.0,
                            plateau_detected=False, tau_well_determined=False)
    s = tv / tscale
    yy = yv / yscale

    tail = max(2, tv.size // 5)
    plateau = float(yy[-tail:].mean())
    target = (1 - math.exp(-1)) * plateau
    cross = np.nonzero(np.abs(yy) >= abs(target))[0]
    if cross.size and cross[0] > 0:
        k = cross[0]
        f = (abs(target) - abs(yy[k - 1])) / max(abs(yy[k]) - abs(yy[k - 1]), 1e-300)
        tau0 = s[k - 1] + f * (s[k] - s[k - 1])
    elif cross.size:
        tau0 = max(s[0], 1e-3)
    else:
        tau0 = 0.3
    tau0 = max(tau0, 1e-6)

    npar = 3 if step else 2

    def fun(p):
        r = p[0] * -np.expm1(-s / p[1]) - yy
        if step:
            r = r + p[2]
        return w * r

    def jac(p):
        e = np.exp(-s / p[1])
        cols = [w * (1 - e), -w * p[0] * e * s / p[1] ** 2]
        if step:
            cols.append(w)
        return np.column_stack(cols)

    if step:
        c0 = float(yy[0])
        start = [plateau - c0, tau0, c0]
        lower = [-np.inf, 1e-9, -np.inf]
    else:
        start = [plateau, tau0]
        lower = [-np.inf, 1e-9]
    best = None
    for scale in (1.0, 0.5, 2.0, 0.2, 5.0, 0.1):
        p0 = list(start)
        p0[1] = tau0 * scale
        res = levenberg_marquardt(fun, jac, p0, lower=lower)
        if best is None or res.cost < best.cost:
            best = res
        if res.converged:
            break
    if not best.converged:
        raise FitError("exponential fit did not converge", best.residuals)
    amp, tau = best.params[:2]
    cov = _covariance(best.jacobian, best.residuals, npar)
    amp_u = amp * yscale
    tau_u = tau * tscale
    samp = _sig(cov, 0) * yscale
    stau = _sig(cov, 1) * tscale
    c_u = best.params[2] * yscale if step else 0.0
    sc = _sig(cov, 2) * yscale if step else 0.0
    resid = yv - amp_u * -np.expm1(-tv / tau_u) - c_u

    # plateau: the model should have essentially settled by the last sample
    plateau_ok = bool(math.exp(-tv[-1] / tau_u) < 0.1)
    if not plateau_ok:
        warnings.warn("no plateau detected in exponential-growth data", RuntimeWarning)
    well = bool(abs(amp_u) > 3 * samp and stau < tau_u)
    return ExpGrowthFit(
        tau=float(tau_u),
        amplitude=float(amp_u),
        sigma_tau=float(stau),
        sigma_amplitude=float(samp),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
        plateau_detected=plateau_ok,
        tau_well_determined=well,
        step=float(c_u),
        sigma_step=float(sc),
    )
