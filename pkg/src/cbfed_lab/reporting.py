"""Run reports and on-disk artifacts: JSON reports, CSV series, binary fields.

Snapshot format: header ``magic "CBFD", version u32, d u32, N u32, L f64,
field kind u8`` followed by little-endian f64 coefficients interleaved
(re, im) in row-major wavenumber order.  Field kind 1 marks divergence-free.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .deterministic import Trajectory
from .spectral import ConfigurationError, FourierField, GridSpec

__all__ = [
    "RunReport",
    "write_report",
    "write_series_csv",
    "write_snapshot",
    "read_snapshot",
]

MAGIC = b"CBFD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdB")

KIND_GENERIC = 0
KIND_DIVFREE = 1


def jsonify(obj):
    """Recursively convert numpy scalars/arrays for JSON serialization."""
    if isinstance(obj, dict):
        return {str(k): jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonify(v) for v in obj.tolist()]
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


@dataclass
class RunReport:
    """Self-contained experiment outcome; re-runnable from the config echo."""

    kind: str
    config: dict
    seed_manifest: dict
    metrics: dict = field(default_factory=dict)
    passfail: dict = field(default_factory=dict)
    build_id: str = f"cbfed-lab {__version__}"
    wall_time_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.passfail.values())

    def as_dict(self) -> dict:
        return jsonify({
            "kind": self.kind,
            "build_id": self.build_id,
            "config": self.config,
            "seed_manifest": self.seed_manifest,
            "metrics": self.metrics,
            "passfail": self.passfail,
            "passed": self.passed,
            "wall_time_s": self.wall_time_s,
        })

    def metrics_blob(self) -> str:
        """Canonical serialization of everything under the determinism contract
        (wall time excluded)."""
        payload = jsonify({"kind": self.kind, "config": self.config,
                           "seed_manifest": self.seed_manifest,
                           "metrics": self.metrics, "passfail": self.passfail})
        return json.dumps(payload, sort_keys=True)


def write_report(report: RunReport, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def write_series_csv(traj: Trajectory, out_dir: Path, name: str = "series") -> Path:
    series_dir = out_dir / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    path = series_dir / f"{name}.csv"
    keys = sorted(traj.series)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time"] + keys)
        for i, t in enumerate(traj.times):
            writer.writerow([repr(float(t))] + [repr(float(traj.series[k][i])) for k in keys])
    return path


def write_snapshot(f: FourierField, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    kind = KIND_DIVFREE if f.divergence_free else KIND_GENERIC
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, f.grid.dim, f.grid.modes,
                          f.grid.length, kind)
    flat = f.coeffs.ravel()
    data = np.empty(flat.size * 2, dtype="<f8")
    data[0::2] = flat.real
    data[1::2] = flat.imag
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())
    return path


def read_snapshot(path: Path) -> FourierField:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, version, dim, n, length, kind = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise ConfigurationError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported snapshot version {version}")
        grid = GridSpec(dim, n, length)
        count = dim * n ** dim * 2
        data = np.frombuffer(fh.read(count * 8), dtype="<f8")
    if data.size != count:
        raise ConfigurationError("truncated snapshot payload")
    coeffs = (data[0::2] + 1j * data[1::2]).reshape((dim,) + grid.shape)
    return FourierField(grid, coeffs.astype(np.complex128),
                        divergence_free=kind == KIND_DIVFREE)


def write_fields(snapshots: list[tuple[float, FourierField]], out_dir: Path) -> list[Path]:
    fdir = out_dir / "fields"
    paths = []
    for i, (t, f) in enumerate(snapshots):
        paths.append(write_snapshot(f, fdir / f"snap_{i:04d}.bin"))
    return paths
