"""File formats: raw float64 arrays with JSON sidecars, CSV tables, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from hotvapor.errors import DomainError

RAW_SUFFIX = ".f64"
SIDECAR_SUFFIX = ".json"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    """Deterministic JSON (sorted keys, non-finite floats as strings)."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path: str | Path, obj) -> Path:
    p = Path(path)
    p.write_text(dumps(obj))
    return p


def write_array(path: str | Path, array, units: str = "", metadata: dict | None = None) -> Path:
    """Write ``array`` as little-endian float64 plus a ``.json`` header.

    Complex arrays gain a trailing axis of length 2 (real, imaginary).
    """
    p = Path(path)
    if p.suffix != RAW_SUFFIX:
        p = p.with_suffix(RAW_SUFFIX)
    a = np.asarray(array)
    complex_ = np.iscomplexobj(a)
    if complex_:
        a = np.stack((a.real, a.imag), axis=-1)
    a = np.ascontiguousarray(a, dtype="<f8")
    p.write_bytes(a.tobytes(order="C"))
    header = {
        "shape": list(a.shape),
        "dtype": "<f8",
        "complex": complex_,
        "units": units,
        "metadata": metadata or {},
    }
    p.with_suffix(SIDECAR_SUFFIX).write_text(dumps(header))
    return p


def read_array(path: str | Path) -> tuple[np.ndarray, dict]:
    """Inverse of :func:`write_array`; returns ``(array, header)``."""
    p = Path(path)
    if p.suffix != RAW_SUFFIX:
        p = p.with_suffix(RAW_SUFFIX)
    side = p.with_suffix(SIDECAR_SUFFIX)
    if not p.exists() or not side.exists():
        raise FileNotFoundError(f"{p} or its sidecar is missing")
    header = json.loads(side.read_text())
    a = np.frombuffer(p.read_bytes(), dtype="<f8").reshape(header["shape"])
    if header.get("complex"):
        a = a[..., 0] + 1j * a[..., 1]
    return a.copy(), header


def read_image(path: str | Path) -> np.ndarray:
    """Load a frame: 16-bit (or 8-bit) grayscale PNG, or a raw ``.f64`` array."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    if p.suffix in (RAW_SUFFIX, SIDECAR_SUFFIX):
        return np.asarray(read_array(p)[0], float)
    import imageio.v3 as iio

    img = np.asarray(iio.imread(p))
    if img.ndim == 3:
        raise DomainError("expected a single-channel grayscale image")
    return img.astype(float)


def write_png16(path: str | Path, frame: np.ndarray) -> tuple[Path, float]:
    """Scale a non-negative frame to 16 bits; returns the path and counts per unit."""
    import imageio.v3 as iio

    f = np.asarray(frame, float)
    top = float(f.max()) or 1.0
    scale = 65535.0 / top
    iio.imwrite(Path(path), np.round(f * scale).astype(np.uint16))
    return Path(path), scale


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    p = Path(path)
    with p.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return p


def read_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Numeric CSV with a header row."""
    p = Path(path)
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{p} is empty")
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise DomainError(f"{p}: non-numeric entry ({exc})") from exc
    return rows[0], data


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(
    out_dir: Path,
    config_hash: str,
    seed: int | None,
    version: str,
    started: str,
    inputs: dict[str, str],
    command: str,
    extra: dict | None = None,
) -> Path:
    """List every file under ``out_dir`` with its SHA-256 in ``manifest.json``."""
    outputs = {}
    for f in sorted(out_dir.rglob("*")):
        if f.is_file() and f.name != "manifest.json":
            outputs[f.relative_to(out_dir).as_posix()] = sha256_file(f)
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "tool_version": version,
        "started": started,
        "finished": now(),
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        manifest["extra"] = extra
    return write_json(out_dir / "manifest.json", manifest)
