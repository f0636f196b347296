"""Run-directory export: deterministic CSV/JSON layouts plus the manifest.

Every writer here is byte-deterministic given the same inputs: JSON is
dumped with sorted keys, floats go through repr (shortest round-trip form),
and the manifest lists each output file's SHA-256 so a replay can be
verified without diffing payloads. Downstream consumers (figure tooling,
acceptance checks) read only these files, never library objects.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticReport
from .protocol import PwcProtocol, corridor_walls
from .sampler import EnsembleRun, rng_lane
from .target import GaussianMixture

__all__ = [
    "write_json",
    "write_csv",
    "sha256_file",
    "export_run",
    "export_history",
    "export_centerline",
    "write_manifest",
]

_SAMPLE_LANE = 3  # target_samples.csv draws; keep clear of fidelity lanes


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_json(path: str | Path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: str | Path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines.extend(",".join(_cell(v) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _vector_header(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}{i + 1}" for i in range(dim)]


def export_centerline(
    out_dir: str | Path,
    centerline,
    frame,
    width: float,
    grid: int = 201,
) -> None:
    """Fine centerline trace with corridor walls, one row per arc fraction."""
    s = np.linspace(0.0, 1.0, grid)
    mid = np.asarray([centerline(v) for v in s])
    left, right = corridor_walls(frame, centerline, width, s)
    dim = mid.shape[1]
    header = (
        ["s"]
        + _vector_header("x", dim)
        + _vector_header("left", dim)
        + _vector_header("right", dim)
    )
    rows = [
        [s[i], *mid[i], *left[i], *right[i]]
        for i in range(grid)
    ]
    write_csv(Path(out_dir) / "centerline.csv", header, rows)


def export_run(
    out_dir: str | Path,
    run: EnsembleRun,
    gmm: GaussianMixture,
    report: DiagnosticReport,
) -> None:
    """Write one simulation's artifacts under out_dir.

    Layout: protocol.json, target.json, target_samples.csv, diagnostics.json,
    adherence.csv, com.csv, guides.csv, snapshots/snap_XXX.csv.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    proto = run.protocol
    dim = run.dim

    (out / "protocol.json").write_text(proto.to_json() + "\n")
    write_json(out / "target.json", {
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covs": gmm.covs.tolist(),
    })
    draws = gmm.sample(run.particles, rng_lane(run.seed, _SAMPLE_LANE))
    write_csv(
        out / "target_samples.csv",
        _vector_header("x", dim),
        draws.tolist(),
    )
    write_json(out / "diagnostics.json", report.to_dict())
    write_csv(
        out / "adherence.csv",
        ["t", "adherence"],
        zip(report.adherence_times.tolist(), report.adherence_values.tolist()),
    )
    com = run.sum_x / run.particles
    write_csv(
        out / "com.csv",
        ["t"] + _vector_header("mean_", dim),
        [[t, *row] for t, row in zip(run.times.tolist(), com.tolist())],
    )
    write_csv(
        out / "guides.csv",
        ["t"] + _vector_header("nu_", dim),
        [
            [snap.time, *proto.nu[proto.piece_index(snap.time)]]
            for snap in run.snapshots
        ],
    )
    for idx, snap in enumerate(run.snapshots):
        rows = [
            [snap.time, p, *snap.positions[p]]
            for p in range(snap.positions.shape[0])
        ]
        write_csv(
            out / "snapshots" / f"snap_{idx:03d}.csv",
            ["t", "particle"] + _vector_header("x", dim),
            rows,
        )


def export_history(out_dir: str | Path, header, rows, nu_star: np.ndarray) -> None:
    """Learning trace (history.csv) and the optimized centers (nu_star.csv)."""
    out = Path(out_dir)
    write_csv(out / "history.csv", header, rows)
    nu_star = np.asarray(nu_star, dtype=float)
    write_csv(
        out / "nu_star.csv",
        ["piece"] + _vector_header("nu_", nu_star.shape[1]),
        [[k, *nu_star[k]] for k in range(nu_star.shape[0])],
    )


def write_manifest(
    out_root: str | Path,
    command: str,
    scenario: dict,
    version: str,
) -> Path:
    """Hash every file under out_root into manifest.json (itself excluded)."""
    root = Path(out_root)
    outputs = {}
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            outputs[path.relative_to(root).as_posix()] = sha256_file(path)
    return write_json(root / "manifest.json", {
        "schema": 1,
        "version": version,
        "command": command,
        "seed": int(scenario["sim"]["seed"]),
        "scenario": scenario,
        "outputs": outputs,
    })
