"""Randomized invariants; each runs the registered number of hypothesis cases."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hotvapor.atomvapor import VaporCell, rabi_from_intensity, transit_rate
from hotvapor.bloch import DensityState, assemble, integrate, steady_state
from hotvapor.errors import DomainError
from hotvapor.fitting import fit_power_law, fit_saturated
from hotvapor.interferometry import PhaseMap, unwrap

from conftest import PROPERTY_CASES

finite = dict(allow_nan=False, allow_infinity=False)
detunings = st.floats(-10e9, -1e9, **finite).map(lambda d: 2 * math.pi * d)
intensities = st.floats(-1, 2, **finite).map(lambda e: 10**e)
transits = st.floats(1e3, 2 * math.pi * 200e3, **finite)


def test_case_budget():
    assert settings().max_examples >= 500 and PROPERTY_CASES >= 500


@given(detunings, intensities, transits)
def test_steady_state_is_physical(system, det, inten, gt):
    o = rabi_from_intensity(system.mu13, inten * 1e4)
    rho = steady_state(assemble(system, o, o, det, gt))
    assert rho.is_physical()
    assert 0 <= rho.rho33 <= 1


@settings(max_examples=PROPERTY_CASES)
@given(detunings, intensities, transits)
def test_short_evolution_stays_physical(system, det, inten, gt):
    o = rabi_from_intensity(system.mu13, inten * 1e4)
    tr = integrate(assemble(system, o, o, det, gt), DensityState.ground(system), (0.0, 5e-8),
                   rtol=1e-5, atol=1e-8, t_eval=np.linspace(0, 5e-8, 4))
    assert all(DensityState(s).is_physical() for s in tr.states)


@given(st.floats(-0.5, 1.5, **finite), st.floats(-0.5, 1.5, **finite),
       st.complex_numbers(max_magnitude=1, **finite), st.complex_numbers(max_magnitude=1e-3, **finite))
def test_density_state_checks(p1, p2, coh, skew):
    c = np.array([p1, p2, coh, np.conj(coh) + skew, 0, 0, 0, 0])
    s = DensityState(c)
    assert s.rho21 == c[2] and s.rho12 == c[3]
    assert s.rho33 == pytest.approx(1 - p1 - p2, abs=1e-12)
    populations_ok = p1 >= 0 and p2 >= 0 and p1 + p2 <= 1
    hermitian = abs(skew) <= 1e-9
    if populations_ok and hermitian:
        assert s.is_physical(tol=0.0)
    if not populations_ok and abs(p1) > 1e-9 and abs(p2) > 1e-9 and abs(1 - p1 - p2) > 1e-9:
        assert not s.is_physical(tol=0.0)
    if abs(skew) > 1e-8:
        assert not s.is_physical()
    with pytest.raises(DomainError):
        DensityState(c[:7])


@given(st.floats(-20, 20, **finite), st.floats(12, 16, **finite),
       st.floats(20, 28, **finite), st.floats(20, 28, **finite), st.integers(-3, 3))
def test_unwrap_recovers_smooth_dome(amp, w, cy, cx, k):
    y, x = np.mgrid[:48, :48]
    phase = amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / w**2)
    pm = unwrap(np.angle(np.exp(1j * (phase + 2 * math.pi * k))))
    border = np.zeros((48, 48), bool)
    border[[0, -1]] = True
    border[:, [0, -1]] = True
    assert pm.is_continuous()
    np.testing.assert_allclose(pm.phase, phase - phase[border].mean(), atol=1e-9)


@given(st.floats(-1e3, 1e3, **finite), st.integers(0, 2**32 - 1))
def test_phase_map_gradient_offset_invariant(c, seed):
    rng = np.random.default_rng(seed)
    p = rng.normal(size=(9, 11))
    m = rng.random((9, 11)) > 0.3
    g = PhaseMap(p, m).max_gradient()
    assert PhaseMap(p + c, m).max_gradient() == pytest.approx(g, abs=1e-9 * (1 + abs(c)))
    assert g >= 0


@given(st.integers(0, 2**32 - 1), st.floats(-3, 3, **finite), st.floats(-3, 3, **finite))
def test_power_law_scale_equivariance(seed, la, lb):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0.1, 10, 6))
    y = rng.uniform(0.5, 2) * x ** rng.uniform(-2, 2) * np.exp(rng.normal(0, 0.05, 6))
    a, b = 10**la, 10**lb
    f1, f2 = fit_power_law(x, y), fit_power_law(a * x, b * y)
    assert f2.exponent == pytest.approx(f1.exponent, abs=1e-9)
    assert f2.sigma_exponent == pytest.approx(f1.sigma_exponent, rel=1e-6, abs=1e-12)
    assert f2.prefactor == pytest.approx(b * f1.prefactor / a**f1.exponent, rel=1e-8)


@given(st.floats(-2, 2, **finite).filter(lambda v: abs(v) > 1e-3),
       st.floats(5, 500, **finite), st.floats(-1, 1, **finite), st.integers(0, 2**32 - 1))
def test_saturated_fit_deterministic_and_odd(n2, isat, off, seed):
    rng = np.random.default_rng(seed)
    i = np.linspace(1, 50, 12)
    y = n2 * i / (1 + i / isat) + off + rng.normal(0, 1e-3, i.size)
    k1, k2 = fit_saturated(i, y), fit_saturated(i, y)
    assert k1 == k2
    assert k1.i_sat > 0 and all(v >= 0 for v in k1.sigma.values())
    neg = fit_saturated(i, -y)
    assert neg.n2 == pytest.approx(-k1.n2, rel=1e-5, abs=1e-9)
    assert neg.offset == pytest.approx(-k1.offset, rel=1e-5, abs=1e-7)


@given(st.floats(300, 500, **finite), st.floats(1e-5, 1e-2, **finite),
       st.floats(0.01, 100, **finite))
def test_transit_rate_homogeneous(temp, waist, c):
    cell = VaporCell(temp)
    assert transit_rate(cell, c * waist) == pytest.approx(transit_rate(cell, waist) / c, rel=1e-12)
    assert transit_rate(cell, waist) > 0


@given(st.floats(0, 200, **finite), st.floats(0, 1e3, **finite), st.floats(0, 1e3, **finite))
def test_effective_intensity_linear_and_bounded(alpha, i1, i2):
    cell = VaporCell(423.15, length=0.01, alpha=alpha)
    e = cell.effective_intensity
    assert e(i1 + i2) == pytest.approx(e(i1) + e(i2), rel=1e-12, abs=1e-12)
    assert 0 < e(1.0) <= 1.0
