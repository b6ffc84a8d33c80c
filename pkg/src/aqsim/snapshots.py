"""Canonical run artifacts: trajectory lines, reports, and frame images.

Every writer emits a pure function of its inputs: JSON is serialized with
sorted keys, shortest-roundtrip floats, and no whitespace variation, so a
repeated run with the same seed produces byte-identical files.  NaN and
infinity are rejected rather than smuggled into an unreadable file.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .errors import IoError

__all__ = [
    "canonical_json",
    "complex_pairs",
    "TrajectoryWriter",
    "write_report",
    "write_ppm",
]


def _plain(obj):
    """Recursively coerce numpy scalars/arrays so json can serialize them."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        raise IoError(f"non-finite value {obj!r} in output record")
    return obj


def canonical_json(obj) -> str:
    """One deterministic line of JSON, sorted keys, no trailing newline."""
    try:
        return json.dumps(_plain(obj), sort_keys=True,
                          separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise IoError(f"cannot serialize record: {exc}") from exc


def complex_pairs(vec) -> list[list[float]]:
    """Complex vector as [re, im] rows (json has no complex type)."""
    arr = np.asarray(vec, dtype=np.complex128).reshape(-1)
    return [[float(z.real), float(z.imag)] for z in arr]


class TrajectoryWriter:
    """Append-only JSONL sink for per-tick (or per-trial) records."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="ascii", newline="\n")
        except OSError as exc:
            raise IoError(f"cannot open trajectory file {self.path}: {exc}") from exc

    def write(self, record: dict) -> None:
        self._fh.write(canonical_json(record))
        self._fh.write("\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TrajectoryWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_report(path, report: dict) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(canonical_json(report) + "\n", encoding="ascii")
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


# quanta are tinted by part (real -> warm, imaginary -> cold) and dimmed
# on the minus sign; background stays dark so sparse gases read well
_TINT = {
    (0, 1): (235, 90, 60),
    (0, -1): (120, 50, 35),
    (1, 1): (70, 120, 235),
    (1, -1): (40, 65, 120),
}


def write_ppm(path, gas, radius: float, size: int = 256) -> None:
    """Orthographic xy projection of a gas as a binary P6 image."""
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[:, :, :] = 12
    if len(gas):
        scale = (size - 1) / (2.0 * radius)
        px = np.clip(((gas.pos[:, 0] + radius) * scale), 0, size - 1).astype(np.intp)
        py = np.clip(((radius - gas.pos[:, 1]) * scale), 0, size - 1).astype(np.intp)
        # draw in id order so overlapping pixels resolve deterministically
        for row in range(len(gas)):
            img[py[row], px[row]] = _TINT[(int(gas.part[row]), int(gas.sign[row]))]
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (size, size))
            fh.write(img.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write frame {path}: {exc}") from exc
