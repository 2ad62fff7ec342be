import hashlib
import math
from pathlib import Path

import numpy as np
import pytest

from hotvapor.errors import DemodulationError, DetectionError, DomainError, UnwrapQualityError
from hotvapor.interferometry import (
    Interferogram,
    NoiseModel,
    PeakDetection,
    PhaseMap,
    conjugate,
    demodulate,
    detect_satellite,
    fourier_magnitude,
    gaussian_amplitude,
    mask_border,
    remove_offsets,
    retrieve,
    synthesize,
    unwrap,
)
from hotvapor.storage import read_image
from hotvapor.validate import fig3_scene

DATA = Path(__file__).parent / "data"
GOLDEN_SHA256 = "246a33b41bb73a2b687b0f72afcc9fb79df577127107b6f1b57ffb2f610ec5a4"
GOLDEN_SCALE = 16399.478039477053
N = 256
K = (2 * math.pi * 20 / N, 2 * math.pi * 34 / N)


def dome(shape, peak, waist):
    return peak * gaussian_amplitude(shape, waist) ** 2


def wrapped_rms(a, b, mask):
    d = np.angle(np.exp(1j * (a - b)))[mask]
    d = d - d.mean()
    return float(np.sqrt(np.mean(d**2)))


def golden_scene():
    return fig3_scene(snr_db=None, shape=(512, 512), waist_px=90.0,
                      k_perp=(2 * math.pi * 24 / 512, 2 * math.pi * 40 / 512))


def test_no_signal_gives_flat_reference():
    ref = np.ones((N, N))
    f = synthesize(np.zeros((N, N)), ref, K)
    np.testing.assert_allclose(f.pixels, 1.0, atol=1e-15)


def test_plane_waves_give_pure_cosine():
    f = synthesize(np.ones((N, N)), np.ones((N, N)), K)
    y, x = np.ogrid[:N, :N]
    np.testing.assert_allclose(f.pixels, 2 + 2 * np.cos(K[0] * y + K[1] * x), atol=1e-12)
    mag = fourier_magnitude(f)
    mag[N // 2, N // 2] = 0
    peaks = {tuple(np.array(p) - N // 2) for p in zip(*np.nonzero(mag > 0.1 * mag.max()))}
    assert peaks == {(20, 34), (-20, -34)}


def test_golden_frame_is_pinned():
    png = DATA / "golden_kerr_frame.png"
    assert hashlib.sha256(png.read_bytes()).hexdigest() == GOLDEN_SHA256
    stored = read_image(png)
    fresh = np.round(golden_scene().frame(1.0).pixels * GOLDEN_SCALE)
    assert np.abs(stored - fresh).max() <= 1


def test_border_warning():
    sig = gaussian_amplitude((N, N), N / 2)
    with pytest.warns(RuntimeWarning):
        synthesize(sig, np.ones((N, N)), K)


def test_interferogram_validation():
    with pytest.raises(DomainError):
        Interferogram(-np.ones((4, 4)))
    with pytest.raises(DomainError):
        Interferogram(np.full((4, 4), np.nan))
    with pytest.raises(DomainError):
        Interferogram(np.ones(4))
    with pytest.raises(DomainError):
        synthesize(np.ones((4, 4)), np.ones((5, 5)), K)


def test_interferogram_linear_in_beam_fields():
    sig = gaussian_amplitude((N, N), 30)
    ref = gaussian_amplitude((N, N), 2000)
    phi = dome((N, N), 3.0, 30)
    base = synthesize(sig, ref, K, phi).pixels - np.abs(ref) ** 2
    for c in (0.5, 2.0, 3.0):
        scaled = synthesize(c * sig, ref, K, phi).pixels - np.abs(ref) ** 2
        # I_s scales as c^2 and the fringe term as c
        i_s = np.abs(sig) ** 2
        np.testing.assert_allclose(scaled - c**2 * i_s, c * (base - i_s), atol=1e-12)


@pytest.mark.parametrize("cycles", [(20.3, 34.6), (-12.7, 41.2), (30.5, -8.25)])
def test_detect_pure_cosine(cycles):
    k = tuple(2 * math.pi * c / N for c in cycles)
    f = synthesize(np.ones((N, N)), np.ones((N, N)), k, noise=NoiseModel(snr_db=40, seed=1))
    det = detect_satellite(fourier_magnitude(f))
    got = np.array(det.centroid)
    assert min(np.hypot(*(got - cycles)), np.hypot(*(got + cycles))) < 1
    iy, ix = int(round(det.centroid[0])) + N // 2, int(round(det.centroid[1])) + N // 2
    assert det.mask[iy, ix]
    assert det.area == int(det.mask.sum())


def test_detect_single_pixel_spectrum_is_rejected():
    # an exact on-grid carrier without envelope or noise puts each satellite in
    # one Fourier pixel; small-object removal discards it
    f = synthesize(np.ones((N, N)), np.ones((N, N)), K)
    with pytest.raises(DetectionError):
        detect_satellite(fourier_magnitude(f))


def kerr_scene(**kw):
    return fig3_scene(shape=(512, 512), waist_px=90.0,
                      k_perp=(2 * math.pi * 45 / 512, 2 * math.pi * 80 / 512), **kw)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_detect_satellite_at_kerr_geometry(seed):
    det = detect_satellite(fourier_magnitude(kerr_scene().frame(1.0, seed=seed)))
    assert abs(det.centroid[1]) == pytest.approx(80, abs=3)
    assert abs(det.centroid[0]) == pytest.approx(45, abs=3)
    yy, xx = np.nonzero(det.mask)
    assert np.hypot(yy - 256, xx - 256).min() > 5


def test_detect_rotation_gives_conjugate():
    mag = fourier_magnitude(kerr_scene(snr_db=None).frame(1.0))
    a = detect_satellite(mag)
    rotated = np.roll(mag[::-1, ::-1], (1, 1), axis=(0, 1))
    b = detect_satellite(rotated)
    # either the same physical peak mirrored, or the other satellite
    mirrored = (-b.centroid[0], -b.centroid[1])
    ok = [np.allclose(a.centroid, c, atol=0.05) for c in (mirrored, b.centroid)]
    assert any(ok)
    c = conjugate(a)
    assert c.centroid == (-a.centroid[0], -a.centroid[1])
    assert c.area == a.area


@pytest.mark.parametrize("shift", [0.25, 0.5, 1.3])
def test_detect_tracks_subpixel_shifts(shift):
    sig = gaussian_amplitude((N, N), 40)
    ref = gaussian_amplitude((N, N), 2000)
    base = detect_satellite(fourier_magnitude(synthesize(sig, ref, K)))
    k2 = (K[0], K[1] + 2 * math.pi * shift / N)
    moved = detect_satellite(fourier_magnitude(synthesize(sig, ref, k2)))
    sgn = math.copysign(1, base.centroid[1])
    assert moved.centroid[1] - base.centroid[1] == pytest.approx(sgn * shift, abs=0.2)
    assert moved.centroid[0] == pytest.approx(base.centroid[0], abs=0.2)


def test_detect_flat_plane_fails():
    with pytest.raises(DetectionError):
        detect_satellite(np.ones((64, 64)))


def _positive(det):
    return det if det.centroid[1] > 0 else conjugate(det)


def test_demodulate_zero_phase_is_flat():
    sig = gaussian_amplitude((N, N), 40)
    ref = gaussian_amplitude((N, N), 2000)
    f = synthesize(sig, ref, K)
    det = _positive(detect_satellite(fourier_magnitude(f)))
    field = demodulate(f, det)
    mask = np.abs(sig) ** 2 > 0.1
    assert np.std(np.angle(field[mask])) < 1e-3


def test_demodulate_round_trip_smooth_phase():
    sig = gaussian_amplitude((N, N), 40)
    ref = gaussian_amplitude((N, N), 2000)
    phi = dome((N, N), 5.0, 40)
    f = synthesize(sig, ref, K, phi)
    det = _positive(detect_satellite(fourier_magnitude(f)))
    field = demodulate(f, det)
    mask = np.abs(sig) ** 2 > 0.1
    assert wrapped_rms(np.angle(field), phi, mask) < 1e-2
    integer = demodulate(f, det, integer_shift=True)
    assert np.all(np.isfinite(integer))


def test_demodulate_rejects_dc_overlap():
    f = synthesize(np.ones((N, N)), np.ones((N, N)), K)
    mask = np.zeros((N, N), bool)
    mask[N // 2 - 3:N // 2 + 4, N // 2 - 3:N // 2 + 4] = True
    with pytest.raises(DemodulationError):
        demodulate(f, PeakDetection((0.0, 0.0), mask, int(mask.sum())))
    with pytest.raises(DomainError):
        demodulate(f, PeakDetection((0.0, 0.0), np.ones((4, 4), bool), 16))


def test_unwrap_identity_on_smooth_phase():
    y, x = np.mgrid[:64, :64]
    w = 2.5 * np.sin(x / 20.0) * np.cos(y / 25.0)
    pm = unwrap(w)
    border = mask_border(pm.mask)
    np.testing.assert_allclose(pm.phase, w - w[border].mean(), atol=1e-12)
    assert abs(pm.phase[border].mean()) < 1e-6


def test_unwrap_thirty_radian_dome():
    truth = dome((N, N), -30.0, 60)
    pm = unwrap(np.angle(np.exp(1j * truth)))
    border = mask_border(pm.mask)
    expected = truth - truth[border].mean()
    assert np.sqrt(np.mean((pm.phase - expected) ** 2)) < 5e-2
    assert abs(pm.phase[border].mean()) < 1e-6
    assert pm.is_continuous()


def test_unwrap_with_mask_and_amplitude():
    truth = dome((N, N), 20.0, 50)
    amp = gaussian_amplitude((N, N), 50)
    mask = amp**2 > 0.01
    pm = unwrap(np.angle(np.exp(1j * truth)), mask, amplitude=amp)
    assert np.array_equal(pm.mask, mask)
    border = mask_border(mask)
    np.testing.assert_allclose(pm.phase[mask], (truth - truth[border].mean())[mask], atol=1e-9)
    assert np.all(pm.phase[~mask] == 0)


def test_unwrap_rejects_residues():
    rng = np.random.default_rng(0)
    noise = rng.uniform(-np.pi, np.pi, (64, 64))
    with pytest.raises(UnwrapQualityError):
        unwrap(noise)
    with pytest.raises(DomainError):
        unwrap(noise, np.zeros((64, 64), bool))
    with pytest.raises(DomainError):
        unwrap(noise, np.ones((32, 32), bool))


def test_phase_map_gradient():
    p = np.zeros((4, 4))
    p[:, 2:] = 4.0
    assert not PhaseMap(p, np.ones((4, 4), bool)).is_continuous()
    assert PhaseMap(p / 2, np.ones((4, 4), bool)).max_gradient() == pytest.approx(2.0)


def _phase_map(values, mask):
    return PhaseMap(np.where(mask, values, 0.0), mask)


def test_remove_offsets_zero_offset():
    inten = dome((64, 64), 50.0, 20)
    mask = inten > 0.5
    phi = -2.0 * inten / (1 + inten / 20)
    out, fit = remove_offsets(_phase_map(phi, mask), inten)
    assert abs(fit.offset) < 1e-8
    np.testing.assert_allclose(out.phase[mask], phi[mask], atol=1e-8)


def test_remove_offsets_noisy_within_one_sigma():
    rng = np.random.default_rng(21)
    inten = dome((128, 128), 80.0, 40)
    mask = inten > 1.0
    truth = (-0.9, 25.0, 1.7)
    clean = truth[0] * inten / (1 + inten / truth[1]) + truth[2]
    inside = 0
    trials = 30
    for _ in range(trials):
        noisy = clean + rng.normal(0, 0.01 * np.abs(clean[mask]).max(), clean.shape)
        out, fit = remove_offsets(_phase_map(noisy, mask), inten)
        z = [(fit.n2 - truth[0]) / fit.sigma["n2"], (fit.i_sat - truth[1]) / fit.sigma["i_sat"],
             (fit.offset - truth[2]) / fit.sigma["offset"]]
        assert all(abs(v) < 4 for v in z)
        inside += all(abs(v) <= 1 for v in z)
        np.testing.assert_allclose(out.phase[mask], noisy[mask] - fit.offset)
    assert inside / trials > 0.25


def test_remove_offsets_shape_check():
    with pytest.raises(DomainError):
        remove_offsets(_phase_map(np.zeros((4, 4)), np.ones((4, 4), bool)), np.zeros((5, 5)))


def test_full_pipeline_recovers_saturated_curve():
    sc = kerr_scene()
    r = retrieve(sc.frame(1.0, seed=5), sc.intensity(1.0))
    m = r.phi_nl.mask
    truth = sc.phase(1.0)
    rel = np.sqrt(np.mean((r.phi_nl.phase[m] - truth[m]) ** 2)) / np.abs(truth).max()
    assert rel < 0.02
    assert r.fit.n2 == pytest.approx(sc.n2, rel=0.05)
    assert r.fit.i_sat == pytest.approx(sc.i_sat, rel=0.1)
    assert r.fit.residual_rms < 0.02 * np.abs(truth).max()
    assert r.phi_nl.is_continuous()


def test_conjugate_peak_negates_phase():
    sc = fig3_scene(shape=(N, N), waist_px=45.0, k_perp=K, peak_phase=-8.0, snr_db=None)
    frame = sc.frame(1.0)
    det = _positive(detect_satellite(fourier_magnitude(frame)))
    a = np.angle(demodulate(frame, det))
    b = np.angle(demodulate(frame, conjugate(det)))
    mask = sc.intensity(1.0) > 0.1 * sc.intensity(1.0).max()
    assert wrapped_rms(a, -b, mask) < 1e-6
    direct = retrieve(frame, sc.intensity(1.0))
    flipped = retrieve(frame, sc.intensity(1.0), use_conjugate=True)
    np.testing.assert_allclose(direct.phi_nl.phase, flipped.phi_nl.phase, atol=1e-6)


def test_noise_model_levels():
    frame = np.full((200, 200), 4.0)
    noisy = NoiseModel(snr_db=20, seed=1).apply(frame)
    assert np.std(noisy) == pytest.approx(0.4, rel=0.05)
    shot = NoiseModel(photons=1e4, seed=1).apply(frame)
    assert np.std(shot) == pytest.approx(4.0 / 100, rel=0.1)
    again = NoiseModel(snr_db=20, seed=1).apply(frame)
    assert np.array_equal(noisy, again)
