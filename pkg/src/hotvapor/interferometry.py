"""Off-axis interferogram synthesis and Fourier-filtering phase retrieval.

Conventions: frames are indexed ``[y, x]`` in pixels; fringe wavevectors are
in rad/pixel. The reference is tilted so that the satellite at ``+k_perp``
carries ``+phi``; Fourier planes handled here are ``fftshift``-ed, with the
zero frequency at ``(ny // 2, nx // 2)``.
"""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.measure import label
from skimage.morphology import remove_small_holes, remove_small_objects

from hotvapor.errors import (
    DemodulationError,
    DetectionError,
    DomainError,
    UnwrapQualityError,
)
from hotvapor.fitting import KerrFit, fit_saturated

DC_RADIUS = 5
LOG_THRESHOLD = 0.6
MIN_AREA_1024 = 50
MASK_DILATION = 2
BORDER_WARN_FRACTION = 1e-3


# ------------------------------------------------------------------ types


@dataclass
class Interferogram:
    """Camera frame: finite, non-negative intensities."""

    pixels: np.ndarray
    pixel_pitch: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=float)
        if p.ndim != 2:
            raise DomainError("interferogram must be 2D")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise DomainError("pixels must be finite and non-negative")
        self.pixels = p

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class PhaseMap:
    """Unwrapped phase (rad) on a valid region."""

    phase: np.ndarray
    mask: np.ndarray
    k_perp: tuple[float, float] = (0.0, 0.0)

    def max_gradient(self) -> float:
        """Largest nearest-neighbour phase step between valid pixels."""
        p, m = self.phase, self.mask
        gx = np.abs(np.diff(p, axis=1))[m[:, 1:] & m[:, :-1]]
        gy = np.abs(np.diff(p, axis=0))[m[1:, :] & m[:-1, :]]
        parts = [g for g in (gx, gy) if g.size]
        return float(max(g.max() for g in parts)) if parts else 0.0

    def is_continuous(self) -> bool:
        return self.max_gradient() < math.pi


@dataclass
class PeakDetection:
    """Selected satellite in a centered Fourier plane.

    ``centroid`` is ``(cy, cx)`` in pixels relative to the zero frequency.
    """

    centroid: tuple[float, float]
    mask: np.ndarray
    area: int

    def k_perp(self, shape) -> tuple[float, float]:
        """Fringe wavevector ``(ky, kx)`` in rad/pixel."""
        ny, nx = shape
        return (2 * math.pi * self.centroid[0] / ny, 2 * math.pi * self.centroid[1] / nx)


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise at a signal-to-noise ratio (dB, relative to the
    mean frame level) and optional shot noise for ``photons`` counts at the mean."""

    snr_db: float | None = None
    photons: float | None = None
    seed: int = 0

    def apply(self, frame: np.ndarray) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        out = frame.copy()
        mean = float(frame.mean())
        if self.photons:
            scale = self.photons / mean
            out = rng.poisson(out * scale).astype(float) / scale
        if self.snr_db is not None:
            out = out + rng.normal(0.0, mean * 10 ** (-self.snr_db / 20), out.shape)
        return np.clip(out, 0.0, None)


# ------------------------------------------------------------ synthesis


def gaussian_amplitude(shape, waist_px: float, center=None, peak: float = 1.0) -> np.ndarray:
    """Real Gaussian field amplitude with 1/e^2 intensity radius ``waist_px``."""
    ny, nx = shape
    cy, cx = ((ny - 1) / 2, (nx - 1) / 2) if center is None else center
    y, x = np.ogrid[:ny, :nx]
    r2 = (x - cx) ** 2 + (y - cy) ** 2
    return peak * np.exp(-r2 / waist_px**2)


def synthesize(
    signal_amplitude: np.ndarray,
    reference_amplitude: np.ndarray,
    k_perp: tuple[float, float],
    phi_nl: np.ndarray | PhaseMap | None = None,
    noise: NoiseModel | None = None,
) -> Interferogram:
    """Camera intensity |E_s exp(i phi) + E_r exp(-i k_perp . r)|^2.

    ``k_perp = (ky, kx)`` in rad/pixel. Warns if the signal is not negligible
    at the frame border (the border serves as the zero-phase reference).
    """
    es = np.asarray(signal_amplitude, dtype=complex)
    er = np.asarray(reference_amplitude, dtype=complex)
    if es.shape != er.shape or es.ndim != 2:
        raise DomainError("signal and reference must be 2D arrays of equal shape")
    phi = 0.0
    if phi_nl is not None:
        phi = phi_nl.phase if isinstance(phi_nl, PhaseMap) else np.asarray(phi_nl, float)
    ny, nx = es.shape
    y, x = np.ogrid[:ny, :nx]
    carrier = np.exp(-1j * (k_perp[0] * y + k_perp[1] * x))
    frame = np.abs(es * np.exp(1j * phi) + er * carrier) ** 2
    i_s = np.abs(es) ** 2
    if i_s.max() > 0:
        border = np.concatenate((i_s[0], i_s[-1], i_s[:, 0], i_s[:, -1]))
        if border.max() > BORDER_WARN_FRACTION * i_s.max():
            warnings.warn("signal beam reaches the frame border", RuntimeWarning)
    if noise is not None:
        frame = noise.apply(frame)
    return Interferogram(frame)


# ------------------------------------------------------------ detection


def fourier_magnitude(frame: Interferogram | np.ndarray) -> np.ndarray:
    """Centered |FFT| of a frame."""
    p = frame.pixels if isinstance(frame, Interferogram) else np.asarray(frame, float)
    return np.abs(np.fft.fftshift(np.fft.fft2(p)))


def _dc_disk(shape, radius: float) -> np.ndarray:
    ny, nx = shape
    y, x = np.ogrid[:ny, :nx]
    return (y - ny // 2) ** 2 + (x - nx // 2) ** 2 <= radius**2


def _min_area(shape) -> int:
    return max(1, int(round(MIN_AREA_1024 * shape[0] * shape[1] / 1024**2)))


def detect_satellite(
    fourier_mag: np.ndarray,
    dc_radius: float = DC_RADIUS,
    threshold: float = LOG_THRESHOLD,
) -> PeakDetection:
    """Locate one satellite peak in a centered Fourier magnitude.

    Steps: fill the DC disk with the mean, take log(|d/dkx| + |d/dky|),
    zero everything below ``threshold`` of the (min-shifted) maximum, Otsu
    binarization, removal of small objects and holes, labeling, selection of
    the largest component clear of the DC disk whose centroid is not at
    zero frequency (ties go to positive kx), and that centroid weighted by
    the spectral intensity ``|F|^2``. The centroid pixel is added to the
    returned mask.

    Raises
    ------
    DetectionError
        If no component survives.
    """
    mag = np.array(fourier_mag, dtype=float)
    if mag.ndim != 2:
        raise DomainError("Fourier magnitude must be 2D")
    dc = _dc_disk(mag.shape, dc_radius)
    mag[dc] = mag.mean()
    gy, gx = np.gradient(mag)
    g = np.abs(gx) + np.abs(gy)
    pos = g[g > 0]
    if pos.size == 0:
        raise DetectionError("flat Fourier plane")
    ilog = np.log(np.maximum(g, pos.min()))
    ilog -= ilog.min()
    top = ilog.max()
    if top <= 0:
        raise DetectionError("flat Fourier plane")
    ilog[ilog < threshold * top] = 0.0
    vals = ilog[ilog > 0]
    if vals.size < 2 or np.ptp(vals) == 0:
        binary = ilog > 0
    else:
        binary = ilog > threshold_otsu(vals)
    area = _min_area(mag.shape)
    binary = remove_small_objects(binary, min_size=area)
    binary = remove_small_holes(binary, area_threshold=area)
    labels = label(binary, connectivity=2)
    n = labels.max()
    if n == 0:
        raise DetectionError("no satellite component found (fringe contrast too low?)")
    ny, nx = mag.shape
    power = np.asarray(fourier_mag, float) ** 2
    best = None
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    for lab in range(1, n + 1):
        comp = labels == lab
        if np.any(comp & dc):
            continue
        # spectral intensity |F|^2 as weight
        yy, xx = np.nonzero(comp)
        w = power[yy, xx]
        if not w.sum() > 0:
            continue
        cy = float((yy - ny // 2) @ w / w.sum())
        cx = float((xx - nx // 2) @ w / w.sum())
        # a ring of DC leakage around the disk is centered on zero frequency
        if cy * cy + cx * cx <= dc_radius**2:
            continue
        key = (int(areas[lab]), cx > 0)
        if best is None or key > best[0]:
            best = (key, comp, cy, cx)
    if best is None:
        raise DetectionError("only the DC region was detected")
    _, comp, cy, cx = best
    # the gradient vanishes on a sharp apex, which can leave the peak pixel
    # itself out of the component
    comp = comp.copy()
    comp[int(round(cy)) + ny // 2, int(round(cx)) + nx // 2] = True
    return PeakDetection((cy, cx), comp, int(comp.sum()))


def conjugate(det: PeakDetection) -> PeakDetection:
    """The mirror satellite at -k_perp."""
    m = det.mask[::-1, ::-1]
    ny, nx = m.shape
    # point reflection about the zero frequency (ny//2, nx//2) of a centered plane
    m = np.roll(m, (1 - ny % 2, 1 - nx % 2), axis=(0, 1))
    return PeakDetection((-det.centroid[0], -det.centroid[1]), m, det.area)


# ---------------------------------------------------------- demodulation


def demodulate(
    frame: Interferogram,
    detection: PeakDetection,
    dilation: int = MASK_DILATION,
    dc_radius: float = DC_RADIUS,
    integer_shift: bool = False,
) -> np.ndarray:
    """Isolate the satellite and move it to zero frequency.

    Returns the complex field ``E_s E_r* exp(i phi)`` (half of the modulated
    term). The sub-pixel carrier is removed with a phase ramp, which is the
    shift theorem applied to the Fourier-plane translation; with
    ``integer_shift`` the spectrum is rolled by the rounded centroid instead.
    """
    p = frame.pixels
    if detection.mask.shape != p.shape:
        raise DomainError("detection mask does not match the frame")
    mask = detection.mask
    if dilation > 0:
        mask = ndimage.binary_dilation(mask, iterations=dilation)
    if np.any(mask & _dc_disk(p.shape, dc_radius)):
        raise DemodulationError("satellite mask overlaps the DC region")
    spec = np.fft.fftshift(np.fft.fft2(p)) * mask
    cy, cx = detection.centroid
    if integer_shift:
        spec = np.roll(spec, (-int(round(cy)), -int(round(cx))), axis=(0, 1))
        return np.fft.ifft2(np.fft.ifftshift(spec))
    field_ = np.fft.ifft2(np.fft.ifftshift(spec))
    ny, nx = p.shape
    y, x = np.ogrid[:ny, :nx]
    ramp = np.exp(-2j * math.pi * (cy * y / ny + cx * x / nx))
    return field_ * ramp


# -------------------------------------------------------------- unwrap


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def residues(wrapped: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Integer residue charge of every 2x2 loop (shape reduced by one)."""
    w = np.asarray(wrapped, float)
    d1 = _wrap(w[:-1, 1:] - w[:-1, :-1])
    d2 = _wrap(w[1:, 1:] - w[:-1, 1:])
    d3 = _wrap(w[1:, :-1] - w[1:, 1:])
    d4 = _wrap(w[:-1, :-1] - w[1:, :-1])
    r = np.rint((d1 + d2 + d3 + d4) / (2 * np.pi)).astype(np.int64)
    if mask is not None:
        m = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
        r = np.where(m, r, 0)
    return r


@njit(cache=True)
def _flood_unwrap(w, quality, mask, sy, sx):
    ny, nx = w.shape
    out = np.zeros_like(w)
    done = np.zeros((ny, nx), np.bool_)
    out[sy, sx] = w[sy, sx]
    done[sy, sx] = True
    heap = [(-quality[sy, sx], sy, sx)]
    heap.pop()
    dy = (-1, 1, 0, 0)
    dx = (0, 0, -1, 1)
    for k in range(4):
        y, x = sy + dy[k], sx + dx[k]
        if 0 <= y < ny and 0 <= x < nx and mask[y, x]:
            heapq.heappush(heap, (-quality[y, x], y, x))
    while len(heap) > 0:
        _, y, x = heapq.heappop(heap)
        if done[y, x]:
            continue
        # unwrap against the best-quality finished neighbour
        bq = -np.inf
        ref = 0.0
        for k in range(4):
            yy, xx = y + dy[k], x + dx[k]
            if 0 <= yy < ny and 0 <= xx < nx and done[yy, xx] and quality[yy, xx] > bq:
                bq = quality[yy, xx]
                ref = out[yy, xx]
        d = w[y, x] - ref
        d -= 2 * np.pi * np.floor((d + np.pi) / (2 * np.pi))
        out[y, x] = ref + d
        done[y, x] = True
        for k in range(4):
            yy, xx = y + dy[k], x + dx[k]
            if 0 <= yy < ny and 0 <= xx < nx and mask[yy, xx] and not done[yy, xx]:
                heapq.heappush(heap, (-quality[yy, xx], yy, xx))
    return out, done


def _phase_quality(w):
    # negative local RMS of wrapped second differences
    gy = _wrap(np.diff(w, axis=0))
    gx = _wrap(np.diff(w, axis=1))
    q = np.zeros_like(w)
    q[1:-1, :] -= np.abs(_wrap(np.diff(gy, axis=0)))
    q[:, 1:-1] -= np.abs(_wrap(np.diff(gx, axis=1)))
    return q


def mask_border(mask: np.ndarray) -> np.ndarray:
    """Valid pixels on the edge of the valid region (or of the frame)."""
    inner = ndimage.binary_erosion(mask, border_value=0)
    return mask & ~inner


def unwrap(
    wrapped: np.ndarray,
    mask: np.ndarray | None = None,
    amplitude: np.ndarray | None = None,
    max_residue_density: float = 1e-3,
    k_perp: tuple[float, float] = (0.0, 0.0),
) -> PhaseMap:
    """Quality-guided flood-fill unwrapping, zero-referenced to the mask border.

    The fill starts at the highest-quality pixel: the amplitude maximum when
    ``amplitude`` is given, otherwise the smoothest point of the wrapped
    phase. Only the connected valid region containing the seed is unwrapped.

    Raises
    ------
    UnwrapQualityError
        If residues inside the mask exceed ``max_residue_density`` per pixel.
    """
    w = np.asarray(wrapped, dtype=float)
    m = np.ones(w.shape, bool) if mask is None else np.asarray(mask, bool)
    if w.shape != m.shape:
        raise DomainError("mask shape mismatch")
    if not m.any():
        raise DomainError("empty mask")
    nres = int(np.abs(residues(w, m)).sum())
    if nres > max_residue_density * m.sum():
        raise UnwrapQualityError(f"{nres} phase residues inside the valid region")
    q = np.asarray(amplitude, float) if amplitude is not None else _phase_quality(w)
    qm = np.where(m, q, -np.inf)
    sy, sx = np.unravel_index(int(np.argmax(qm)), w.shape)
    out, done = _flood_unwrap(w, q.astype(float), m, int(sy), int(sx))
    valid = m & done
    border = mask_border(valid)
    out = out - out[border].mean()
    out[~valid] = 0.0
    return PhaseMap(out, valid, k_perp)


# ------------------------------------------------------ offset removal


def remove_offsets(
    phase: PhaseMap,
    intensity: np.ndarray,
    max_points: int | None = 200_000,
    correlation_area: float = 1.0,
) -> tuple[PhaseMap, KerrFit]:
    """Fit phi(I) = n2 I / (1 + I / I_S) + b over valid pixels and subtract b.

    ``intensity`` is the co-registered signal intensity (W/cm^2). At most
    ``max_points`` pixels, taken on a regular stride, enter the fit.
    ``correlation_area`` is the number of pixels per independent noise
    sample; Fourier filtering with a mask of area A on an N-pixel frame
    correlates noise over about N / A pixels, and the parameter errors are
    inflated by its square root.
    """
    inten = np.asarray(intensity, float)
    if inten.shape != phase.phase.shape:
        raise DomainError("intensity and phase shapes differ")
    idx = np.flatnonzero(phase.mask.ravel())
    if max_points and idx.size > max_points:
        idx = idx[:: int(math.ceil(idx.size / max_points))]
    fit = fit_saturated(inten.ravel()[idx], phase.phase.ravel()[idx])
    if correlation_area > 1:
        f = math.sqrt(correlation_area)
        fit.sigma = {k: v * f for k, v in fit.sigma.items()}
    out = np.where(phase.mask, phase.phase - fit.offset, 0.0)
    return PhaseMap(out, phase.mask.copy(), phase.k_perp), fit


# ------------------------------------------------------------- pipeline


@dataclass
class Retrieval:
    phi_nl: PhaseMap
    fit: KerrFit
    detection: PeakDetection
    field: np.ndarray = field(repr=False)


def retrieve(
    frame: Interferogram,
    intensity: np.ndarray,
    valid_fraction: float = 0.01,
    dc_radius: float = DC_RADIUS,
    use_conjugate: bool = False,
    max_residue_density: float = 1e-3,
) -> Retrieval:
    """Full Fourier pipeline: detect, demodulate, unwrap, remove offsets.

    The valid region is where the signal intensity exceeds ``valid_fraction``
    of its maximum. With ``use_conjugate`` the mirror satellite is used and
    the phase sign is flipped back.
    """
    det = detect_satellite(fourier_magnitude(frame), dc_radius=dc_radius)
    if det.centroid[1] < 0 or (det.centroid[1] == 0 and det.centroid[0] < 0):
        det = conjugate(det)
    if use_conjugate:
        det = conjugate(det)
    f = demodulate(frame, det, dc_radius=dc_radius)
    support = ndimage.binary_dilation(det.mask, iterations=MASK_DILATION).sum()
    sign = -1.0 if use_conjugate else 1.0
    inten = np.asarray(intensity, float)
    mask = inten >= valid_fraction * inten.max()
    pm = unwrap(sign * np.angle(f), mask, amplitude=np.abs(f),
                max_residue_density=max_residue_density,
                k_perp=det.k_perp(frame.shape))
    phi, fit = remove_offsets(pm, inten, correlation_area=frame.pixels.size / support)
    return Retrieval(phi, fit, det, f)
