"""Command-line front end: simulate, retrieve, fit, validate.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
physics failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from hotvapor import __version__
from hotvapor import config as cfgmod
from hotvapor import storage
from hotvapor.errors import ConfigError, DomainError, HotVaporError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """Bad command-line input (missing file, inconsistent flags)."""


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _workers(args) -> int:
    return args.workers if args.workers else (os.cpu_count() or 1)


# ------------------------------------------------------------- simulate


def _write_run_grids(out: Path, tag: str, run, classes):
    """Per-class coherence grids and the class-averaged susceptibility maps."""
    sums = []
    counts = []
    for gh, gl in run.grids:
        sums.append(np.stack((gh.sum13, gh.sum23, gl.sum13, gl.sum23)))
        counts.append(np.stack((gh.counts, gl.counts)))
    meta = {
        "axes": "class, (high 13, high 23, low 13, low 23), iy, ix",
        "box_size_m": run.grids[0][0].box_size,
        "class_speeds_m_s": [vc.speed for vc in classes],
        "class_weights": [vc.weight for vc in classes],
    }
    storage.write_array(out / f"grid_sums_{tag}", np.stack(sums), "dimensionless", meta)
    storage.write_array(out / f"grid_counts_{tag}", np.stack(counts).astype(float), "visits",
                        {"axes": "class, (high, low), iy, ix"})
    chi = np.stack((run.chi_high.chi, run.chi_low.chi))
    storage.write_array(out / f"chi_{tag}", chi, "dimensionless",
                        {"axes": "(high, low), iy, ix", **run.chi_high.metadata})


def cmd_simulate(args) -> int:
    from hotvapor import montecarlo as mc
    from hotvapor.atomvapor import load_system

    started = storage.now()
    conf = cfgmod.load(args.config, quick=args.quick)
    seed = conf.seed if args.seed is None else args.seed
    out = _out_dir(args, f"hotvapor-{conf.mode}")
    system = load_system()
    workers = _workers(args)
    summary: dict = {"mode": conf.mode}

    if conf.mode == "synth":
        return _simulate_synth(conf, out, started, seed, args)

    rc = cfgmod.run_config(conf, workers=workers, seed=seed)
    if conf.mode == "grid":
        run = mc.run_delta_n(system, rc, keep_grids=True)
        _write_run_grids(out, "w0", run, rc.classes())
        summary.update(delta_n=run.delta_n, waist_m=rc.waist, intensity_w_cm2=rc.intensity)
    elif conf.mode == "waist_sweep":
        sw = conf.table("sweep")
        waists = [w * 1e-3 for w in sw["waists_mm"]]
        backend = sw.get("backend", "montecarlo")
        res = mc.waist_sweep(waists, rc, system, backend=backend, progress=_log,
                             keep_runs=backend == "montecarlo")
        for k, run in enumerate(res.runs):
            _write_run_grids(out, f"w{k}", run, rc.classes())
        storage.write_csv(out / "waist_sweep.csv", ["waist_mm", "delta_n"],
                          zip(res.waists * 1e3, res.delta_n))
        summary.update(backend=backend, exponent=res.fit.exponent,
                       sigma_exponent=res.fit.sigma_exponent, prefactor=res.fit.prefactor)
        storage.write_json(out / "exponent.json", res.fit.to_dict())
    elif conf.mode == "ramp_sweep":
        sw = conf.table("sweep")
        waists = [w * 1e-3 for w in sw["waists_mm"]]
        res = mc.ramp_sweep(sw["intensities_w_cm2"], waists, rc, system,
                            backend=sw.get("backend", "montecarlo"), progress=_log)
        rows = [(w * 1e3, i, res.delta_n[a, b])
                for a, w in enumerate(res.waists) for b, i in enumerate(res.intensities)]
        storage.write_csv(out / "ramp_sweep.csv", ["waist_mm", "intensity_w_cm2", "delta_n"], rows)
        storage.write_csv(out / "kerr_fits.csv", ["waist_mm", "n2_per_w_cm2", "sigma_n2",
                                                  "i_sat_w_cm2", "sigma_i_sat"],
                          [(w * 1e3, f.n2, f.sigma["n2"], f.i_sat, f.sigma["i_sat"])
                           for w, f in zip(res.waists, res.kerr)])
        summary.update(n2_exponent=res.n2_fit.to_dict(), i_sat_exponent=res.isat_fit.to_dict(),
                       kerr=[f.to_dict() for f in res.kerr])
    elif conf.mode == "pulsed":
        pt = conf.table("pulsed")
        delays = np.asarray(pt["delays_us"]) * 1e-6
        rise = pt.get("rise_ns", mc.SWITCH_ON_RISE * 1e9) * 1e-9
        curves, taus = [], []
        for dg in pt["detunings_ghz"]:
            c = replace(rc, detuning=dg * 1e9)
            pr = mc.pulsed_response(delays, c, system, n_atoms=pt.get("n_atoms", 1000), t_rise=rise)
            _log(f"detuning {dg} GHz: tau = {pr.fit.tau * 1e6:.3f} us "
                 f"(bound {pr.bound * 1e6:.3f} us)")
            curves += [(dg, t * 1e6, v) for t, v in zip(pr.delays, pr.delta_n)]
            taus.append((dg, pr.fit.tau * 1e6, pr.fit.sigma_tau * 1e6,
                         pr.fit_single.tau * 1e6, pr.bound * 1e6))
        storage.write_csv(out / "pulsed_response.csv", ["detuning_ghz", "delay_us", "delta_n"], curves)
        storage.write_csv(out / "tau.csv", ["detuning_ghz", "tau_us", "sigma_tau_us",
                                            "tau_single_us", "bound_us"], taus)
        summary.update(tau=[dict(zip(("detuning_ghz", "tau_us", "sigma_tau_us",
                                      "tau_single_us", "bound_us"), t)) for t in taus])
    storage.write_json(out / "summary.json", summary)
    storage.write_manifest(out, conf.digest, seed, __version__, started,
                           {str(conf.path): storage.sha256_file(conf.path)}, "simulate",
                           {"quick": args.quick})
    _log(f"wrote {out}")
    return EXIT_OK


def _simulate_synth(conf, out, started, seed, args) -> int:
    sc = cfgmod.scene(conf)
    frame = sc.frame(1.0, seed=seed)
    storage.write_array(out / "frame", frame.pixels, "normalized intensity",
                        {"k_perp_rad_per_px": list(sc.k_perp)})
    storage.write_png16(out / "frame.png", frame.pixels)
    storage.write_array(out / "intensity", sc.intensity(1.0), "W/cm^2")
    storage.write_array(out / "phase_truth", sc.phase(1.0), "rad")
    storage.write_json(out / "truth.json", {"n2_rad_cm2_per_w": sc.n2, "i_sat_w_cm2": sc.i_sat,
                                            "peak_intensity_w_cm2": sc.peak_intensity})
    storage.write_manifest(out, conf.digest, seed, __version__, started,
                           {str(conf.path): storage.sha256_file(conf.path)}, "simulate")
    return EXIT_OK


# ------------------------------------------------------------- retrieve


def _phase_curve_rows(intensity, phase, mask, n_bins: int = 100):
    """Binned (I, phi_NL) pairs for plotting."""
    i = intensity[mask]
    p = phase[mask]
    edges = np.linspace(i.min(), i.max(), n_bins + 1)
    idx = np.clip(np.digitize(i, edges) - 1, 0, n_bins - 1)
    rows = []
    for k in range(n_bins):
        sel = idx == k
        if sel.any():
            rows.append((float(i[sel].mean()), float(p[sel].mean()), int(sel.sum())))
    return rows


def cmd_retrieve(args) -> int:
    from hotvapor import bucket, interferometry as fi

    started = storage.now()
    out = _out_dir(args, f"hotvapor-retrieve-{args.method}")
    inputs = {}
    result: dict = {"method": args.method}
    seed = args.seed if args.seed is not None else 0
    scene = None
    if args.synth:
        conf = cfgmod.load(args.synth, quick=args.quick)
        if conf.mode != "synth":
            raise ConfigError("retrieve --synth needs a config with mode = \"synth\"")
        seed = conf.seed if args.seed is None else args.seed
        scene = cfgmod.scene(conf)
        inputs[str(conf.path)] = storage.sha256_file(conf.path)
        ramp = conf.table("ramp")

    if args.method == "fourier":
        if scene is not None:
            frame = scene.frame(1.0, seed=seed)
            inten = scene.intensity(1.0)
        else:
            if not args.frames or not args.intensity:
                raise UsageError("fourier retrieval needs --synth or --frames with --intensity")
            for p in (args.frames, args.intensity):
                if not Path(p).exists():
                    raise UsageError(f"input not found: {p}")
                inputs[str(p)] = storage.sha256_file(p)
            frame = fi.Interferogram(storage.read_image(args.frames))
            inten = storage.read_image(args.intensity) * args.intensity_scale
        r = fi.retrieve(frame, inten)
        storage.write_array(out / "phi_nl", r.phi_nl.phase, "rad",
                            {"k_perp_rad_per_px": list(r.phi_nl.k_perp)})
        storage.write_array(out / "mask", r.phi_nl.mask.astype(float), "boolean")
        storage.write_csv(out / "phi_nl_curve.csv", ["intensity_w_cm2", "phi_nl_rad", "pixels"],
                          _phase_curve_rows(inten, r.phi_nl.phase, r.phi_nl.mask))
        result["kerr"] = r.fit.to_dict()
        result["satellite"] = {"centroid": list(r.detection.centroid), "area": r.detection.area}
        if scene is not None:
            m = r.phi_nl.mask
            truth = scene.phase(1.0)
            rms = float(np.sqrt(np.mean((r.phi_nl.phase[m] - truth[m]) ** 2)))
            result["truth"] = {"n2": scene.n2, "i_sat": scene.i_sat,
                               "relative_rms": rms / float(np.abs(truth).max())}
    else:
        if scene is not None:
            trace = scene.bucket_trace(ramp.get("n_frames", 100), ramp.get("roi_px", 1), seed=seed)
        else:
            if not args.trace:
                raise UsageError("bucket retrieval needs --synth or --trace")
            if not Path(args.trace).exists():
                raise UsageError(f"input not found: {args.trace}")
            inputs[str(args.trace)] = storage.sha256_file(args.trace)
            _, data = storage.read_csv(args.trace)
            if data.ndim != 2 or data.shape[1] < 3:
                raise UsageError("trace CSV needs columns t, I, signal")
            trace = bucket.RampTrace(data[:, 0], data[:, 1], data[:, 2],
                                     normalized=args.normalized)
        bf = bucket.fit_cosine(trace, sign=args.sign)
        storage.write_csv(out / "trace.csv", ["t", "intensity_w_cm2", "signal"],
                          zip(trace.times, trace.intensities, trace.bucket_signal))
        grid = np.linspace(0.0, float(trace.intensities.max()), 200)
        storage.write_csv(out / "phi_nl_curve.csv", ["intensity_w_cm2", "phi_nl_rad"],
                          zip(grid, bf.phi_nl(grid)))
        result["bucket"] = bf.to_dict()
        result["kerr"] = bf.kerr.to_dict()
        if scene is not None:
            r = fi.retrieve(scene.frame(1.0, seed=seed), scene.intensity(1.0))
            result["fourier_kerr"] = r.fit.to_dict()
            result["relative_rms_vs_fourier"] = bucket.compare_curves(bf, r.fit, grid)
            result["truth"] = {"n2": scene.n2, "i_sat": scene.i_sat}
    storage.write_json(out / "fit.json", result)
    storage.write_manifest(out, storage.sha256_bytes(json.dumps(sorted(inputs.items())).encode()),
                           seed, __version__, started, inputs, f"retrieve {args.method}")
    print(storage.dumps(result["kerr"]), end="")
    return EXIT_OK


# ------------------------------------------------------------------ fit


def cmd_fit(args) -> int:
    from hotvapor import fitting

    path = Path(args.input)
    if not path.exists():
        raise UsageError(f"input not found: {path}")
    if path.suffix == ".json":
        req = json.loads(path.read_text())
        model = req.get("model", args.model)
        x = np.asarray(req.get("x", []), float)
        y = np.asarray(req.get("y", []), float)
        sigma = req.get("sigma")
        step = bool(req.get("step", False))
    else:
        _, data = storage.read_csv(path)
        if data.ndim != 2 or data.shape[1] < 2:
            raise UsageError("CSV fit input needs at least two columns (x, y)")
        model, x, y = args.model, data[:, 0], data[:, 1]
        sigma = data[:, 2] if data.shape[1] > 2 else None
        step = args.step
    if model == "saturated":
        fit = fitting.fit_saturated(x, y, sigma)
    elif model == "power_law":
        fit = fitting.fit_power_law(x, y)
    elif model == "exp_growth":
        fit = fitting.fit_exp_growth(x, y, sigma, step=step)
    else:
        raise UsageError(f"unknown model {model!r}")
    text = storage.dumps({"model": model, **fit.to_dict()})
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------- validate


def cmd_validate(args) -> int:
    from hotvapor import validate

    report = validate.run(quick=args.quick, workers=_workers(args), log=_log)
    text = validate.format_report(report)
    print(text)
    if args.out:
        out = _out_dir(args, "hotvapor-validate")
        storage.write_json(out / "report.json", [r.to_dict() for r in report])
        (out / "report.txt").write_text(text + "\n")
    return EXIT_OK if all(r.passed for r in report) else EXIT_NUMERIC


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hotvapor", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: all cores)")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--quick", action="store_true", help="apply the [quick] overrides")

    s = sub.add_parser("simulate", help="Monte-Carlo or analytic simulation runs")
    s.add_argument("--config", required=True, help="TOML run configuration")
    common(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("retrieve", help="phase retrieval from frames or a synthetic scene")
    r.add_argument("--method", choices=("fourier", "bucket"), default="fourier")
    r.add_argument("--synth", default=None, help="synthetic-scene TOML (mode = synth)")
    r.add_argument("--config", dest="synth", help=argparse.SUPPRESS)
    r.add_argument("--frames", default=None, help="interferogram (.png or .f64)")
    r.add_argument("--intensity", default=None, help="signal intensity map (.png or .f64)")
    r.add_argument("--intensity-scale", type=float, default=1.0,
                   help="W/cm^2 per unit of the intensity map")
    r.add_argument("--trace", default=None, help="bucket trace CSV (t, I, signal)")
    r.add_argument("--normalized", action="store_true",
                   help="trace signal is already the normalized fringe term")
    r.add_argument("--sign", type=int, choices=(-1, 1), default=-1,
                   help="sign of the non-linear phase for bucket fits")
    common(r)
    r.set_defaults(func=cmd_retrieve)

    f = sub.add_parser("fit", help="fit a model to JSON or CSV data")
    f.add_argument("--input", required=True, help="JSON request or CSV (x, y[, sigma])")
    f.add_argument("--model", choices=("saturated", "power_law", "exp_growth"),
                   default="saturated")
    f.add_argument("--step", action="store_true", help="exp_growth with a prompt step")
    f.add_argument("--out", default=None, help="write the result JSON here")
    f.set_defaults(func=cmd_fit)

    v = sub.add_parser("validate", help="run the acceptance checks")
    common(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError, DomainError, FileNotFoundError) as exc:
        _log(f"error: {exc}")
        return EXIT_USAGE
    except HotVaporError as exc:
        _log(f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
