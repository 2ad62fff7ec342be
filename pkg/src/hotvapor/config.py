"""TOML run configurations with unit-bearing keys.

A configuration has a top-level ``mode`` and ``seed`` plus tables::

    mode = "waist_sweep"     # grid | waist_sweep | ramp_sweep | pulsed | synth
    seed = 1
    [physics]   temperature_k, detuning_ghz, intensity_w_cm2, waist_mm,
                power_mw, cell_length_mm, alpha_per_m, doppler, n_doppler
    [sampling]  n_traj, n_classes, grid_n, box_factor, low_ratio
    [solver]    rtol, atol, max_step_ns
    [sweep]     waists_mm, intensities_w_cm2, backend
    [pulsed]    detunings_ghz, delays_us, n_atoms, rise_ns
    [scene]     shape_px, waist_px, peak_intensity_w_cm2 | power_mw + waist_mm,
                peak_phase_rad | n2_rad_cm2_per_w, i_sat_w_cm2, fringe_cycles,
                ref_waist_px, ref_amplitude, snr_db
    [ramp]      n_frames, roi_px
    [quick]     same tables again; merged over the above with ``--quick``

``power_mw`` (with ``waist_mm``) sets the peak intensity 2P / (pi w0^2).
"""

from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from hotvapor.errors import ConfigError
from hotvapor.montecarlo import RunConfig, SolverSettings

MODES = ("grid", "waist_sweep", "ramp_sweep", "pulsed", "synth")

_SCHEMA: dict[str, dict[str, type | tuple]] = {
    "physics": {
        "temperature_k": float, "detuning_ghz": float, "intensity_w_cm2": float,
        "waist_mm": float, "power_mw": float, "cell_length_mm": float,
        "alpha_per_m": float, "doppler": bool, "n_doppler": int,
    },
    "sampling": {
        "n_traj": int, "n_classes": int, "grid_n": int, "box_factor": float,
        "low_ratio": float,
    },
    "solver": {"rtol": float, "atol": float, "max_step_ns": float},
    "sweep": {"waists_mm": list, "intensities_w_cm2": list, "backend": str},
    "pulsed": {"detunings_ghz": list, "delays_us": list, "n_atoms": int, "rise_ns": float},
    "scene": {
        "shape_px": list, "waist_px": float, "peak_intensity_w_cm2": float,
        "power_mw": float, "waist_mm": float, "peak_phase_rad": float,
        "n2_rad_cm2_per_w": float, "i_sat_w_cm2": float, "fringe_cycles": list,
        "ref_waist_px": float, "ref_amplitude": float, "snr_db": float,
    },
    "ramp": {"n_frames": int, "roi_px": int},
}


@dataclass
class Config:
    """Validated configuration plus the raw text hash."""

    mode: str
    seed: int
    tables: dict
    digest: str
    path: Path | None = None

    def table(self, name: str) -> dict:
        return self.tables.get(name, {})


def _check_value(table: str, key: str, value, kind):
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"[{table}] {key} must be a number")
        if not math.isfinite(float(value)):
            raise ConfigError(f"[{table}] {key} must be finite")
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"[{table}] {key} must be an integer")
        return value
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"[{table}] {key} must be true or false")
        return value
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"[{table}] {key} must be a string")
        return value
    if kind is list:
        if not isinstance(value, list) or not value:
            raise ConfigError(f"[{table}] {key} must be a non-empty list")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
            raise ConfigError(f"[{table}] {key} must contain numbers")
        return [float(v) for v in value]
    raise AssertionError(kind)


def _validate_tables(raw: dict, where: str) -> dict:
    out = {}
    for name, body in raw.items():
        if name not in _SCHEMA:
            raise ConfigError(f"{where}: unknown table [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{where}: [{name}] must be a table")
        schema = _SCHEMA[name]
        tab = {}
        for key, value in body.items():
            if key not in schema:
                raise ConfigError(f"{where}: unknown key {key!r} in [{name}]")
            tab[key] = _check_value(name, key, value, schema[key])
        out[name] = tab
    return out


def parse(text: str, quick: bool = False, path: Path | None = None) -> Config:
    """Validate TOML ``text``; with ``quick`` the ``[quick]`` tables override."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    if "mode" not in raw:
        raise ConfigError("missing top-level key 'mode'")
    mode = raw.pop("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}")
    seed = raw.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    quick_raw = raw.pop("quick", {})
    if not isinstance(quick_raw, dict):
        raise ConfigError("[quick] must be a table")
    tables = _validate_tables(raw, "config")
    qt = _validate_tables(quick_raw, "[quick]")
    if quick:
        for name, body in qt.items():
            tables.setdefault(name, {}).update(body)
    digest = hashlib.sha256(text.encode() + (b"\nquick" if quick else b"")).hexdigest()
    cfg = Config(mode, seed, tables, digest, path)
    _check_mode(cfg)
    return cfg


def load(path: str | Path, quick: bool = False) -> Config:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse(p.read_text(), quick=quick, path=p)


def _require(cfg: Config, table: str, *keys):
    t = cfg.table(table)
    for k in keys:
        if k not in t:
            raise ConfigError(f"mode {cfg.mode!r} needs [{table}] {k}")


def _check_mode(cfg: Config):
    if cfg.mode == "waist_sweep":
        _require(cfg, "sweep", "waists_mm")
        if len(cfg.table("sweep")["waists_mm"]) < 4:
            raise ConfigError("waist_sweep needs at least 4 waists")
    elif cfg.mode == "ramp_sweep":
        _require(cfg, "sweep", "waists_mm", "intensities_w_cm2")
    elif cfg.mode == "pulsed":
        _require(cfg, "pulsed", "detunings_ghz", "delays_us")
    elif cfg.mode == "synth":
        _require(cfg, "scene", "i_sat_w_cm2")
    backend = cfg.table("sweep").get("backend", "montecarlo")
    if backend not in ("montecarlo", "analytic"):
        raise ConfigError("backend must be 'montecarlo' or 'analytic'")
    for name, tab in cfg.tables.items():
        for key, v in tab.items():
            vals = v if isinstance(v, list) else [v]
            positive = key.endswith(("_mm", "_k", "_px", "n_traj", "n_classes", "grid_n",
                                     "n_atoms", "rtol", "atol", "_ns", "n_frames",
                                     "box_factor", "low_ratio", "_mw", "i_sat_w_cm2",
                                     "intensity_w_cm2", "n_doppler"))
            if positive and any(x <= 0 for x in vals):
                raise ConfigError(f"[{name}] {key} must be positive")


def peak_intensity(table: dict, default: float) -> float:
    """W/cm^2 from ``intensity_w_cm2`` or ``power_mw`` over ``waist_mm``."""
    if "power_mw" in table:
        if "waist_mm" not in table:
            raise ConfigError("power_mw needs waist_mm")
        w_cm = table["waist_mm"] / 10
        return 2 * table["power_mw"] * 1e-3 / (math.pi * w_cm**2)
    return table.get("intensity_w_cm2", table.get("peak_intensity_w_cm2", default))


def run_config(cfg: Config, workers: int = 1, seed: int | None = None) -> RunConfig:
    """Map the physics/sampling/solver tables onto a :class:`RunConfig`."""
    ph, sa, so = cfg.table("physics"), cfg.table("sampling"), cfg.table("solver")
    base = RunConfig()
    solver = SolverSettings()
    solver = replace(
        solver,
        rtol=so.get("rtol", solver.rtol),
        atol=so.get("atol", solver.atol),
        max_step=so.get("max_step_ns", solver.max_step * 1e9) * 1e-9,
    )
    rc = replace(
        base,
        temperature=ph.get("temperature_k", base.temperature),
        detuning=ph.get("detuning_ghz", base.detuning * 1e-9) * 1e9,
        intensity=peak_intensity(ph, base.intensity),
        waist=ph.get("waist_mm", base.waist * 1e3) * 1e-3,
        length=ph.get("cell_length_mm", base.length * 1e3) * 1e-3,
        alpha=ph.get("alpha_per_m", base.alpha),
        doppler=ph.get("doppler", base.doppler),
        n_doppler=ph.get("n_doppler", base.n_doppler),
        n_traj=sa.get("n_traj", base.n_traj),
        n_classes=sa.get("n_classes", base.n_classes),
        grid_n=sa.get("grid_n", base.grid_n),
        box_factor=sa.get("box_factor", base.box_factor),
        low_ratio=sa.get("low_ratio", base.low_ratio),
        seed=cfg.seed if seed is None else seed,
        workers=workers,
        solver=solver,
    )
    if rc.box_factor < 4:
        raise ConfigError("box_factor must be at least 4 (box >= 4 waists)")
    if rc.n_classes < 2:
        raise ConfigError("n_classes must be at least 2")
    return rc


def scene(cfg: Config):
    """Build the synthetic :class:`~hotvapor.synthetic.KerrScene` of a synth config."""
    from hotvapor.synthetic import KerrScene

    sc = cfg.table("scene")
    kw = {}
    if "shape_px" in sc:
        if len(sc["shape_px"]) != 2:
            raise ConfigError("shape_px must be [ny, nx]")
        kw["shape"] = tuple(int(v) for v in sc["shape_px"])
    shape = kw.get("shape", KerrScene().shape)
    for key, name in (("waist_px", "waist_px"), ("ref_waist_px", "ref_waist_px"),
                      ("ref_amplitude", "ref_amplitude"), ("snr_db", "snr_db"),
                      ("i_sat_w_cm2", "i_sat")):
        if key in sc:
            kw[name] = sc[key]
    kw["peak_intensity"] = peak_intensity(sc, KerrScene().peak_intensity)
    if "fringe_cycles" in sc:
        if len(sc["fringe_cycles"]) != 2:
            raise ConfigError("fringe_cycles must be [cycles_y, cycles_x]")
        cy, cx = sc["fringe_cycles"]
        kw["k_perp"] = (2 * math.pi * cy / shape[0], 2 * math.pi * cx / shape[1])
    if "peak_phase_rad" in sc and "n2_rad_cm2_per_w" in sc:
        raise ConfigError("give either peak_phase_rad or n2_rad_cm2_per_w")
    if "peak_phase_rad" in sc:
        return KerrScene.with_peak_phase(sc["peak_phase_rad"], **kw)
    if "n2_rad_cm2_per_w" in sc:
        kw["n2"] = sc["n2_rad_cm2_per_w"]
    return KerrScene(**kw)
