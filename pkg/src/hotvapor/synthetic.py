"""Synthetic saturated-Kerr scenes: interferograms and intensity ramps with known truth."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hotvapor.bucket import RampTrace, extract_trace, normalize
from hotvapor.errors import DomainError
from hotvapor.interferometry import Interferogram, NoiseModel, gaussian_amplitude, synthesize


@dataclass(frozen=True)
class KerrScene:
    """Gaussian signal beam imprinted with ``phi = n2 I / (1 + I / i_sat)``.

    Attributes
    ----------
    shape : tuple
        Frame shape (pixels).
    waist_px : float
        Signal 1/e^2 intensity radius in pixels.
    peak_intensity : float
        Signal peak intensity at full ramp (W/cm^2).
    n2 : float
        Phase per W/cm^2 at low intensity (rad cm^2/W).
    i_sat : float
        Saturation intensity (W/cm^2).
    k_perp : tuple
        Fringe wavevector ``(ky, kx)`` in rad/pixel.
    ref_waist_px : float
        Reference 1/e^2 radius; much larger than the frame for a flat reference.
    ref_amplitude : float
        Reference field amplitude relative to the signal peak amplitude.
    snr_db : float or None
        Additive noise level relative to the mean frame value.
    """

    shape: tuple = (1024, 1024)
    waist_px: float = 180.0
    peak_intensity: float = 10.0
    n2: float = -2.0
    i_sat: float = 20.0
    k_perp: tuple = (2 * math.pi * 90 / 1024, 2 * math.pi * 160 / 1024)
    ref_waist_px: float = 4000.0
    ref_amplitude: float = 1.0
    snr_db: float | None = 30.0

    @classmethod
    def with_peak_phase(cls, peak_phase: float, **kw) -> "KerrScene":
        """Scene whose n2 gives ``peak_phase`` (rad, signed) at full intensity."""
        base = cls(**kw)
        i0 = base.peak_intensity
        n2 = peak_phase / (i0 / (1 + i0 / base.i_sat))
        return cls(**{**kw, "n2": n2})

    def phase_of(self, intensity):
        i = np.asarray(intensity, float)
        return self.n2 * i / (1 + i / self.i_sat)

    def signal_amplitude(self, scale: float = 1.0) -> np.ndarray:
        """Signal field with peak intensity ``scale * peak_intensity``."""
        return math.sqrt(scale) * gaussian_amplitude(self.shape, self.waist_px)

    def reference_amplitude(self) -> np.ndarray:
        return gaussian_amplitude(self.shape, self.ref_waist_px, peak=self.ref_amplitude)

    def intensity(self, scale: float = 1.0) -> np.ndarray:
        """Signal intensity map in W/cm^2."""
        return scale * self.peak_intensity * gaussian_amplitude(self.shape, self.waist_px) ** 2

    def phase(self, scale: float = 1.0) -> np.ndarray:
        return self.phase_of(self.intensity(scale))

    def frame(self, scale: float = 1.0, seed: int = 0) -> Interferogram:
        if not 0 <= scale:
            raise DomainError("ramp scale must be non-negative")
        noise = None if self.snr_db is None else NoiseModel(snr_db=self.snr_db, seed=seed)
        return synthesize(self.signal_amplitude(scale), self.reference_amplitude(),
                          self.k_perp, self.phase(scale), noise)

    def ramp(self, n_frames: int, seed: int = 0):
        """Frames at linearly increasing signal power; yields (scale, frame)."""
        if n_frames < 2:
            raise DomainError("a ramp needs at least two frames")
        ss = np.random.SeedSequence(seed)
        seeds = ss.generate_state(n_frames)
        for k, s in enumerate(np.linspace(0.0, 1.0, n_frames)):
            yield float(s), self.frame(float(s), int(seeds[k]))

    def center(self) -> tuple[float, float]:
        return ((self.shape[0] - 1) / 2, (self.shape[1] - 1) / 2)

    def bucket_trace(self, n_frames: int, roi_size: int = 1, seed: int = 0) -> RampTrace:
        """Normalized bucket trace over a ramp, read at the beam center.

        The reference-only and signal-only levels used for normalization are
        the noiseless single-beam intensities inside the ROI.
        """
        cy, cx = self.center()
        roi = (cy, cx, roi_size)
        scales, frames = zip(*self.ramp(n_frames, seed))
        scales = np.asarray(scales)
        ref = np.abs(self.reference_amplitude()) ** 2
        sig1 = np.abs(self.signal_amplitude(1.0)) ** 2
        inten_map = self.intensity(1.0)
        ref_level = extract_trace([ref], roi, [0.0]).bucket_signal[0]
        sig_level = extract_trace([sig1], roi, [0.0]).bucket_signal[0]
        i_roi = extract_trace([inten_map], roi, [0.0]).bucket_signal[0]
        trace = extract_trace(frames, roi, scales * i_roi, times=np.arange(n_frames, dtype=float))
        # the first frame has no signal beam and carries no fringe information
        keep = scales > 0
        trace = RampTrace(trace.times[keep], trace.intensities[keep],
                          trace.bucket_signal[keep], trace.roi)
        return normalize(trace, ref_level, scales[keep] * sig_level)
