import math

import numpy as np
import pytest

from hotvapor.atomvapor import VaporCell
from hotvapor.bucket import RampTrace, compare_curves, extract_trace, fit_cosine, normalize
from hotvapor.errors import DomainError, PeriodAmbiguityError
from hotvapor.fitting import KerrFit
from hotvapor.validate import fig3_scene

I = np.linspace(0.5, 100, 120)


def phase(i, n2=-0.5, i_sat=20.0):
    return n2 * i / (1 + i / i_sat)


def trace(signal, normalized=True, intensities=I):
    return RampTrace(np.arange(intensities.size, dtype=float), intensities, signal,
                     normalized=normalized)


def scene(peak_phase=-30.0):
    return fig3_scene(peak_phase=peak_phase, shape=(512, 512), waist_px=90.0,
                      k_perp=(2 * math.pi * 45 / 512, 2 * math.pi * 80 / 512))


def test_ramp_trace_validation():
    with pytest.raises(DomainError):
        RampTrace([0, 1], [1, 2, 3], [0, 0, 0])
    with pytest.raises(DomainError):
        RampTrace([0, 1, 2], [1, 3, 2], [0, 0, 0])
    assert len(RampTrace([0, 1, 2], [1, 1, 2], [0, 0, 0])) == 3


def test_extract_uniform_frames_is_constant():
    frames = [np.full((32, 32), 7.0) for _ in range(5)]
    tr = extract_trace(frames, (16, 16, 5), np.arange(5.0))
    assert np.all(tr.bucket_signal == 7.0)
    assert extract_trace(frames, "photodiode", np.arange(5.0)).roi == "photodiode"


def test_extract_single_pixel_roi():
    rng = np.random.default_rng(0)
    frames = [rng.random((16, 16)) for _ in range(3)]
    tr = extract_trace(frames, (4, 9, 1), [0.0, 1.0, 2.0])
    np.testing.assert_array_equal(tr.bucket_signal, [f[4, 9] for f in frames])
    tr3 = extract_trace(frames, (4, 9, 3), [0.0, 1.0, 2.0])
    np.testing.assert_allclose(tr3.bucket_signal, [f[3:6, 8:11].mean() for f in frames])


@pytest.mark.parametrize("roi", [(0, 0, 3), (15, 15, 3), (8, 8, 0), (8, 8, 40), "camera"])
def test_extract_roi_errors(roi):
    with pytest.raises(DomainError):
        extract_trace([np.zeros((16, 16))], roi, [0.0])


def test_normalize_maps_to_fringe_term():
    ir, i_s = 4.0, np.linspace(0.5, 2.0, I.size)
    truth = np.cos(phase(I) + 0.3)
    raw = ir + i_s + 2 * np.sqrt(ir * i_s) * truth
    out = normalize(trace(raw, normalized=False), ir, i_s)
    assert out.normalized
    np.testing.assert_allclose(out.bucket_signal, truth, atol=1e-12)
    with pytest.raises(DomainError):
        normalize(trace(raw, normalized=False), 0.0, i_s)


def count_extrema(y):
    d = np.sign(np.diff(y))
    d = d[d != 0]
    return int(np.count_nonzero(d[1:] != d[:-1]))


def test_synthetic_ramp_extrema_count():
    sc = fig3_scene(snr_db=None, peak_phase=-12.0, shape=(512, 512), waist_px=90.0,
                    k_perp=(2 * math.pi * 45 / 512, 2 * math.pi * 80 / 512))
    tr = sc.bucket_trace(400, seed=1)
    ky, kx = sc.k_perp
    total = sc.phase_of(tr.intensities) + ky * 256 + kx * 256
    # every multiple of pi crossed by the total phase is one extremum of the cosine
    expected = int(np.floor(total.max() / math.pi) - np.floor(total.min() / math.pi))
    assert expected >= 3
    assert count_extrema(tr.bucket_signal) == expected
    fit = fit_cosine(tr)
    i_top = tr.intensities.max()
    assert fit.phi_nl(i_top) == pytest.approx(sc.phase_of(i_top), rel=0.02)


def test_fit_exact_trace():
    y = 1.3 * np.cos(phase(I) + 0.4) + 0.2
    fit = fit_cosine(trace(y, normalized=False))
    assert fit.kerr.n2 == pytest.approx(-0.5, rel=1e-8)
    assert fit.kerr.i_sat == pytest.approx(20.0, rel=1e-8)
    assert fit.amplitude == pytest.approx(1.3, rel=1e-8)
    assert fit.baseline == pytest.approx(0.2, abs=1e-8)
    assert fit.phi0 == pytest.approx(0.4, abs=1e-8)
    np.testing.assert_allclose(fit.model(I), y, atol=1e-8)
    d = fit.to_dict()
    assert d["kerr"]["n2"] == fit.kerr.n2 and d["n_crossings"] == fit.n_crossings


def test_fit_noisy_within_one_sigma():
    rng = np.random.default_rng(4)
    inside = 0
    trials = 40
    for _ in range(trials):
        y = np.cos(phase(I) + 0.4) + rng.normal(0, 0.01, I.size)
        f = fit_cosine(trace(y))
        z = [(f.kerr.n2 + 0.5) / f.sigma["n2"], (f.kerr.i_sat - 20) / f.kerr.sigma["i_sat"]]
        assert all(abs(v) < 4 for v in z)
        inside += all(abs(v) <= 1 for v in z)
    # joint coverage of two correlated 1-sigma intervals is roughly 0.5
    assert inside / trials > 0.3


@pytest.mark.parametrize("offset", [-2.5, -1.0, 0.7, 2.9])
def test_phase_offset_immunity(offset):
    base = fit_cosine(trace(np.cos(phase(I) + 0.4)))
    moved = fit_cosine(trace(np.cos(phase(I) + 0.4 + offset)))
    np.testing.assert_allclose(moved.phi_nl(I), base.phi_nl(I), atol=1e-6)
    assert math.remainder(moved.phi0 - base.phi0 - offset, 2 * math.pi) == pytest.approx(0, abs=1e-6)


def test_sign_convention():
    y = np.cos(phase(I) + 0.4)
    neg = fit_cosine(trace(y))
    pos = fit_cosine(trace(y), sign=+1)
    assert neg.kerr.n2 < 0 < pos.kerr.n2
    np.testing.assert_allclose(neg.model(I), pos.model(I), atol=1e-6)
    with pytest.raises(DomainError):
        fit_cosine(trace(y), sign=0)


def test_zero_nonlinearity_weak_phase():
    y = np.full(I.size, math.cos(0.4))
    fit = fit_cosine(trace(y), weak_phase=True, phi0=0.4)
    assert abs(fit.phi_nl(I.max())) < 1e-6
    with pytest.raises(DomainError):
        fit_cosine(trace(y))
    with pytest.raises(DomainError):
        fit_cosine(trace(y), weak_phase=True)


def test_weak_phase_one_radian_within_five_percent():
    sc = scene(peak_phase=-1.0)
    ky, kx = sc.k_perp
    phi0 = math.remainder(ky * 256 + kx * 256, 2 * math.pi)
    for seed in range(3):
        tr = sc.bucket_trace(60, seed=seed)
        fit = fit_cosine(tr, weak_phase=True, phi0=phi0)
        peak = sc.phase_of(tr.intensities.max())
        assert fit.phi_nl(tr.intensities.max()) == pytest.approx(peak, rel=0.05)


def test_glitches_raise_period_ambiguity():
    y = np.cos(phase(I) + 0.4)
    y[5:115:10] *= -1
    with pytest.raises(PeriodAmbiguityError):
        fit_cosine(trace(y))


def test_absorption_corrected_intensity():
    cell = VaporCell(423.15, length=0.01, alpha=20.0)
    i_eff = cell.effective_intensity(I)
    y = np.cos(phase(i_eff) + 0.4)
    fit = fit_cosine(trace(y), cell=cell)
    assert fit.kerr.n2 == pytest.approx(-0.5, rel=1e-6)
    assert fit.kerr.i_sat == pytest.approx(20.0, rel=1e-6)


def test_too_short_trace():
    with pytest.raises(DomainError):
        fit_cosine(trace(np.ones(4), intensities=np.arange(4.0)))


def test_compare_curves():
    fit = fit_cosine(trace(np.cos(phase(I) + 0.4)))
    same = KerrFit(n2=-0.5, i_sat=20.0, offset=3.0)
    assert compare_curves(fit, same, I) < 1e-8
    off = KerrFit(n2=-0.5 * 1.1, i_sat=20.0, offset=0.0)
    assert compare_curves(fit, off, I) == pytest.approx(
        np.sqrt(np.mean((0.1 * phase(I)) ** 2)) / np.abs(1.1 * phase(I)).max(), rel=1e-6)
