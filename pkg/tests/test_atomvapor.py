import math

import numpy as np
import pytest

from hotvapor.atomvapor import (
    AtomicSystem,
    VaporCell,
    load_system,
    read_constants,
    sample_velocity_classes,
    transit_rate,
    vapor_density,
)
from hotvapor.errors import DomainError

import oracles


def test_default_system_constants(system):
    assert system.g1 + system.g2 == 1.0
    assert system.g1 == 3 / 8 and system.g2 == 5 / 8
    # linewidth read as a cyclic frequency, stored as an angular rate
    assert system.gamma == pytest.approx(2 * math.pi * 6.07e6, rel=1e-12)
    assert system.delta_hf == pytest.approx(2 * math.pi * 6.834682611e9, rel=1e-12)
    for v in (system.gamma, system.delta_hf, system.nu0, system.mass, system.mu13, system.mu23):
        assert v > 0


def test_constants_file_and_env_override(tmp_path, monkeypatch):
    p = tmp_path / "c.conf"
    p.write_text("# comment\ngamma_mhz = 5.0  # MHz\n\n")
    assert read_constants(p)["gamma_mhz"] == 5.0
    monkeypatch.setenv("HOTVAPOR_GAMMA_MHZ", "3.035")
    assert read_constants(p)["gamma_mhz"] == 3.035
    assert load_system().gamma == pytest.approx(2 * math.pi * 3.035e6)


@pytest.mark.parametrize("text", ["nonsense\n", "bogus_key = 1\n"])
def test_constants_file_errors(tmp_path, text):
    p = tmp_path / "c.conf"
    p.write_text(text)
    with pytest.raises(DomainError):
        read_constants(p)


def test_invalid_degeneracies_rejected():
    vals = read_constants()
    vals["g1"] = 0.5
    with pytest.raises(DomainError):
        AtomicSystem.from_constants(vals)


def test_vapor_density_order_of_magnitude():
    n = vapor_density(423.15)
    assert math.floor(math.log10(n)) in (19, 20)
    # tabulated pressures joined piecewise in ln P versus 1/T; the interpolation
    # itself is only good to about 10% across the melting kink
    assert n == pytest.approx(oracles.rb_density(423.15), rel=0.12)


@pytest.mark.parametrize("t", [300.0, 320.0, 380.0, 450.0, 490.0, 500.0])
def test_vapor_density_matches_tabulated_curve(t):
    assert vapor_density(t) == pytest.approx(oracles.rb_density(t), rel=0.12)


def test_vapor_density_monotone_and_guarded():
    assert vapor_density(430.0) > vapor_density(420.0)
    ts = np.linspace(300, 500, 2001)
    assert np.all(np.diff([vapor_density(t) for t in ts]) > 0)
    for bad in (200.0, 299.9, 500.1, float("nan")):
        with pytest.raises(DomainError):
            vapor_density(bad)


def test_vapor_cell_guards():
    with pytest.raises(DomainError):
        VaporCell(250.0)
    assert VaporCell(260.0, min_temperature=250.0, density=1e15).density == 1e15
    with pytest.raises(DomainError):
        VaporCell(400.0, density=-1.0)
    cell = VaporCell(423.15)
    assert cell.most_probable_speed == pytest.approx(
        math.sqrt(2 * 1.380649e-23 * 423.15 / (86.909180527 * 1.66053906660e-27)), rel=1e-9)


def test_effective_intensity():
    assert VaporCell(400.0).effective_intensity(10.0) == 10.0
    cell = VaporCell(400.0, length=0.01, alpha=20.0)
    al = 0.2
    assert cell.effective_intensity(10.0) == pytest.approx(10 * (1 - math.exp(-al)) / al)


@pytest.mark.parametrize("n", [2, 20])
def test_velocity_class_weights(n):
    classes = sample_velocity_classes(VaporCell(423.15), n)
    assert len(classes) == n
    w = np.array([c.weight for c in classes])
    assert np.all(w > 0)
    assert abs(w.sum() - 1) < 1e-12


def test_velocity_classes_deterministic_and_doppler():
    cell = VaporCell(423.15)
    assert sample_velocity_classes(cell, 8) == sample_velocity_classes(cell, 8)
    cls = sample_velocity_classes(cell, 4, n_doppler=5)
    assert len(cls) == 20
    assert abs(sum(c.weight for c in cls) - 1) < 1e-12
    vz = np.array([c.v_z for c in cls])
    assert vz.min() < 0 < vz.max()


@pytest.mark.parametrize("n", [16, 20, 32])
def test_mean_speed_matches_population(n):
    cell = VaporCell(423.15)
    classes = sample_velocity_classes(cell, n)
    mean = sum(c.weight * c.speed for c in classes)
    assert mean == pytest.approx(oracles.mean_speed_2d(cell.sigma_v), rel=0.02)


def test_velocity_class_errors():
    with pytest.raises(DomainError):
        sample_velocity_classes(VaporCell(400.0), 1)
    with pytest.raises(DomainError):
        sample_velocity_classes(VaporCell(400.0), 4, n_doppler=0)


def test_transit_rate():
    cell = VaporCell(423.15)
    u = math.sqrt(2 * 1.380649e-23 * 423.15 / (86.909180527 * 1.66053906660e-27))
    assert transit_rate(cell, 1e-3) == pytest.approx(2 / math.sqrt(math.pi) * u / 1e-3, rel=1e-9)
    assert transit_rate(cell, 2e-3) == pytest.approx(transit_rate(cell, 1e-3) / 2, rel=1e-15)
    assert transit_rate(cell, 1e-6) > 0
    for bad in (0.0, -1e-3):
        with pytest.raises(DomainError):
            transit_rate(cell, bad)
