"""Bucket-detector retrieval: fringe tracking in a small region during a ramp.

While the signal intensity is ramped, the mean pixel value of a small region
of interest at the beam center oscillates as ``A cos(phi_NL(I) + phi0) + C``.
Fitting the saturated law inside the cosine argument recovers ``n2`` and
``I_S`` directly, without counting fringes by hand; the count of mid-level crossings only
seeds the initial guess and guards against a one-fringe miscount.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from hotvapor.atomvapor import VaporCell
from hotvapor.errors import DomainError, FitError, PeriodAmbiguityError
from hotvapor.fitting import KerrFit, _covariance, _sig, fit_saturated, levenberg_marquardt
from hotvapor.interferometry import Interferogram


@dataclass
class RampTrace:
    """Bucket signal sampled along a monotone intensity ramp.

    Attributes
    ----------
    times : ndarray
        Sample times (s).
    intensities : ndarray
        Signal-beam intensity at each sample (W/cm^2), non-decreasing.
    bucket_signal : ndarray
        Detector reading per sample (arbitrary units).
    roi : tuple or str
        ``(center_y, center_x, size)`` in pixels, or ``"photodiode"``.
    normalized : bool
        True when the signal has been mapped to the pure fringe term
        ``cos(phi_NL + phi0)`` (see :func:`normalize`).
    """

    times: np.ndarray
    intensities: np.ndarray
    bucket_signal: np.ndarray
    roi: tuple | str = "photodiode"
    normalized: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.intensities = np.asarray(self.intensities, dtype=float)
        self.bucket_signal = np.asarray(self.bucket_signal, dtype=float)
        n = self.times.size
        if self.intensities.size != n or self.bucket_signal.size != n:
            raise DomainError("times, intensities and bucket_signal must have equal length")
        if np.any(np.diff(self.intensities) < 0):
            raise DomainError("intensities must be non-decreasing along the ramp")

    def __len__(self):
        return self.times.size


def _roi_slices(shape, roi):
    cy, cx, size = roi
    size = int(size)
    if size < 1:
        raise DomainError("ROI size must be at least one pixel")
    y0 = int(round(cy - (size - 1) / 2))
    x0 = int(round(cx - (size - 1) / 2))
    if y0 < 0 or x0 < 0 or y0 + size > shape[0] or x0 + size > shape[1]:
        raise DomainError("ROI is not fully inside the frame")
    return slice(y0, y0 + size), slice(x0, x0 + size)


def extract_trace(
    frames: Sequence[Interferogram | np.ndarray],
    roi,
    intensities,
    times=None,
) -> RampTrace:
    """Mean pixel value inside ``roi`` for every frame of a ramp.

    ``roi`` is ``(center_y, center_x, size)`` or ``"photodiode"`` (whole frame).
    """
    pixels = [f.pixels if isinstance(f, Interferogram) else np.asarray(f, float) for f in frames]
    if not pixels:
        raise DomainError("no frames")
    sig = np.empty(len(pixels))
    for k, p in enumerate(pixels):
        if isinstance(roi, str):
            if roi != "photodiode":
                raise DomainError(f"unknown ROI {roi!r}")
            sig[k] = p.mean()
        else:
            sy, sx = _roi_slices(p.shape, roi)
            sig[k] = p[sy, sx].mean()
    inten = np.asarray(intensities, float)
    t = np.arange(len(pixels), dtype=float) if times is None else times
    return RampTrace(t, inten, sig, roi if isinstance(roi, str) else tuple(roi))


def normalize(trace: RampTrace, reference_level, signal_level) -> RampTrace:
    """Map the bucket signal onto ``cos(phi_NL + phi0)``.

    ``reference_level`` and ``signal_level`` are the detector readings with
    only the reference or only the signal beam present (scalars or per-sample
    arrays); the fringe term is ``(b - I_r - I_s) / (2 sqrt(I_r I_s))``.
    """
    ir = np.broadcast_to(np.asarray(reference_level, float), trace.bucket_signal.shape)
    i_s = np.broadcast_to(np.asarray(signal_level, float), trace.bucket_signal.shape)
    den = 2 * np.sqrt(ir * i_s)
    if np.any(den <= 0):
        raise DomainError("reference and signal levels must be positive")
    out = (trace.bucket_signal - ir - i_s) / den
    return RampTrace(trace.times, trace.intensities, out, trace.roi, normalized=True)


@dataclass
class BucketFit:
    """Cosine fit ``A cos(n2 I / (1 + I / I_S) + phi0) + C`` of a ramp trace.

    ``kerr.offset`` holds ``phi0``; ``kerr.phase(I)`` is the reconstructed
    non-linear phase curve.
    """

    kerr: KerrFit
    amplitude: float
    baseline: float
    phi0: float
    sigma: dict = field(default_factory=dict)
    n_crossings: int = 0
    weak_phase: bool = False

    def phi_nl(self, intensity) -> np.ndarray:
        return self.kerr.phase(intensity)

    def model(self, intensity) -> np.ndarray:
        return self.amplitude * np.cos(self.phi_nl(intensity) + self.phi0) + self.baseline

    def to_dict(self) -> dict:
        return {
            "kerr": self.kerr.to_dict(),
            "amplitude": self.amplitude,
            "baseline": self.baseline,
            "phi0": self.phi0,
            "sigma": self.sigma,
            "n_crossings": self.n_crossings,
            "weak_phase": self.weak_phase,
        }


def _crossings(y: np.ndarray, hysteresis: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Mid-level crossings of an oscillation with hysteresis against noise.

    Returns the sample indices of the crossings and their directions
    (+1 rising, -1 falling). Successive crossings are half a fringe apart.
    """
    span = float(np.ptp(y))
    if span == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    mid = 0.5 * (float(y.max()) + float(y.min()))
    z = (y - mid) / (0.5 * span)
    idx, dirs = [], []
    state = 0
    last_mid = 0
    for k, v in enumerate(z):
        if v > hysteresis:
            if state == -1:
                idx.append(last_mid)
                dirs.append(1)
            state = 1
        elif v < -hysteresis:
            if state == 1:
                idx.append(last_mid)
                dirs.append(-1)
            state = -1
        if k > 0 and (z[k - 1] <= 0 < v or z[k - 1] > 0 >= v):
            last_mid = k
    return np.asarray(idx, dtype=int), np.asarray(dirs, dtype=int)


def _phase_guess(x, y, sign):
    """Seed (n2, u, phi0) from the mid-level crossings (x is scaled intensity)."""
    idx, dirs = _crossings(y)
    mid = 0.5 * (y.max() + y.min())
    if idx.size:
        # total argument at the first crossing: cos = 0, slope sign from direction
        theta0 = sign * math.pi / 2 if dirs[0] < 0 else -sign * math.pi / 2
    else:
        c0 = float(np.clip((y[0] - mid) / max(0.5 * np.ptp(y), 1e-300), -1, 1))
        return sign * math.pi / max(float(x.max()), 1e-300), 0.0, math.acos(c0)
    k = np.arange(idx.size, dtype=float)
    if idx.size >= 4:
        try:
            kf = fit_saturated(x[idx], sign * math.pi * k)
            u = 0.0 if math.isinf(kf.i_sat) else 1.0 / kf.i_sat
            return kf.n2, u, theta0 + kf.offset
        except (DomainError, FitError):
            pass
    n2 = sign * math.pi * max(idx.size, 1) / max(float(x.max()), 1e-300)
    return n2, 0.0, theta0 - n2 * x[idx[0]]


def fit_cosine(
    trace: RampTrace,
    sign: int = -1,
    cell: VaporCell | None = None,
    weak_phase: bool = False,
    phi0: float | None = None,
) -> BucketFit:
    """Fit ``A cos(n2 I~ / (1 + I~ / I_S) + phi0) + C`` to a ramp trace.

    Parameters
    ----------
    trace : RampTrace
        Bucket trace; if ``trace.normalized`` the amplitude and baseline start
        at 1 and 0 (and stay fixed in weak-phase mode).
    sign : {-1, +1}
        Sign of the non-linear phase. A cosine cannot distinguish ``+phi``
        from ``-phi``, so the sign comes from the detuning (negative for a
        self-defocusing, red-detuned vapor).
    cell : VaporCell, optional
        If given and ``cell.alpha > 0``, the absorption-averaged intensity
        ``I~`` replaces the raw intensity.
    weak_phase : bool
        Allow traces shorter than one fringe; requires ``phi0``.
    phi0 : float, optional
        Known reference phase; fixed during a weak-phase fit.

    Raises
    ------
    DomainError
        Trace shorter than one fringe period without ``weak_phase``.
    PeriodAmbiguityError
        Fitted phase excursion disagrees with the fringe count by a period.
    FitError
        Non-convergence.
    """
    if sign not in (-1, 1):
        raise DomainError("sign must be -1 or +1")
    if len(trace) < 5:
        raise DomainError("need at least 5 samples")
    inten = trace.intensities
    if cell is not None:
        inten = np.asarray(cell.effective_intensity(inten), float)
    if weak_phase and phi0 is None:
        raise DomainError("weak-phase fits need a phi0 prior")
    y = trace.bucket_signal
    iscale = float(inten.max())
    if iscale <= 0:
        raise DomainError("ramp intensities must be positive")
    x = inten / iscale
    n_ext = int(_crossings(y)[0].size)
    if not weak_phase and n_ext < 2:
        raise DomainError("trace spans less than one fringe period; use weak_phase")

    if trace.normalized:
        a0, c0 = 1.0, 0.0
    else:
        a0, c0 = 0.5 * float(np.ptp(y)), 0.5 * float(y.max() + y.min())
    ascale = a0 if a0 > 0 else 1.0
    yy = (y - c0) / ascale

    if weak_phase:
        # linearize around phi0: y ~ A cos(phi0) - A sin(phi0) phi + C
        g_u, g_phi0 = 0.0, float(phi0)
        sp = math.sin(g_phi0)
        g_n2 = sign * 0.5
        if abs(sp) > 0.1:
            slope = float(np.polyfit(x, yy, 1)[0])
            g_n2 = -slope / sp if slope != 0 else g_n2
    else:
        g_n2, g_u, g_phi0 = _phase_guess(x, y, sign)
        if phi0 is not None:
            g_phi0 = float(phi0)

    # parameters: A, n2, u, phi0, C (scaled units); some may be fixed
    free = np.array([True, True, True, True, True])
    if weak_phase:
        free[3] = False
        if trace.normalized:
            free[0] = free[4] = False
    p_all = np.array([1.0, g_n2, g_u, g_phi0, 0.0])

    def expand(q):
        p = p_all.copy()
        p[free] = q
        return p

    def fun(q):
        a, n2, u, ph, cc = expand(q)
        return a * np.cos(n2 * x / (1 + u * x) + ph) + cc - yy

    def jac(q):
        a, n2, u, ph, cc = expand(q)
        den = 1 + u * x
        arg = n2 * x / den + ph
        s = -a * np.sin(arg)
        cols = np.column_stack((np.cos(arg), s * x / den, -s * n2 * x * x / den**2,
                                s, np.ones_like(x)))
        return cols[:, free]

    lower = np.array([0.0, -np.inf, 0.0, -np.inf, -np.inf])[free]
    best = None
    for u_start in (g_u, 0.3, 1.0, 3.0, 0.0, 10.0):
        p_all[2] = u_start
        res = levenberg_marquardt(fun, jac, p_all[free], lower=lower)
        if best is None or res.cost < best.cost:
            best = res
    p_all[2] = g_u
    if best is None or not best.converged:
        raise FitError("cosine fit did not converge", None if best is None else best.residuals)
    a, n2, u, ph, cc = expand(best.params)
    if not weak_phase and n2 * sign < 0:
        # cos is even: (n2, phi0) and (-n2, -phi0) give the same trace
        n2, ph = -n2, -ph
    cov_free = _covariance(best.jacobian, best.residuals, int(free.sum()))
    cov = np.zeros((5, 5))
    cov[np.ix_(free, free)] = cov_free

    n2_u = n2 / iscale
    u_u = u / iscale
    if u_u * iscale < 1e-12:
        i_sat, s_isat = math.inf, math.inf
    else:
        i_sat = 1.0 / u_u
        s_isat = _sig(cov, 2) / iscale / u_u**2
    sigma = {
        "n2": _sig(cov, 1) / iscale,
        "i_sat": s_isat,
        "phi0": _sig(cov, 3),
        "amplitude": _sig(cov, 0) * ascale,
        "baseline": _sig(cov, 4) * ascale,
    }
    phi0_w = float(math.remainder(ph, 2 * math.pi))
    resid = best.residuals * ascale
    kerr = KerrFit(n2=float(n2_u), i_sat=float(i_sat), offset=phi0_w,
                   sigma={"n2": sigma["n2"], "i_sat": s_isat, "offset": sigma["phi0"]},
                   residual_rms=float(np.sqrt(np.mean(resid**2))), n_points=len(trace))

    if not weak_phase:
        excursion = abs(n2 * x.max() / (1 + u * x.max()) - n2 * x.min() / (1 + u * x.min()))
        lo, hi = (n_ext - 1) * math.pi, (n_ext + 1) * math.pi
        if excursion < lo - 0.5 * math.pi or excursion > hi + 0.5 * math.pi:
            raise PeriodAmbiguityError(
                f"fitted phase excursion {excursion:.2f} rad inconsistent with "
                f"{n_ext} mid-level crossings", best.residuals)
    return BucketFit(kerr=kerr, amplitude=float(a * ascale), baseline=float(c0 + cc * ascale),
                     phi0=phi0_w, sigma=sigma, n_crossings=n_ext, weak_phase=weak_phase)


def compare_curves(bucket: BucketFit, fourier: KerrFit, intensities) -> float:
    """RMS difference of two Phi_NL(I) curves relative to the larger peak phase."""
    i = np.asarray(intensities, float)
    a = bucket.phi_nl(i)
    b = fourier.phase(i)
    peak = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    if peak == 0:
        return 0.0
    return float(np.sqrt(np.mean((a - b) ** 2)) / peak)
