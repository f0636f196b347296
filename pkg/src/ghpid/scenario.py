"""Scenario files: validated JSON descriptions of runnable experiments.

A scenario is a plain dict (schema 1) that fully determines a run: corridor
frame, partition size, stiffness and centerline templates, time warp, target
mixture, simulation budget, and, per kind, either a sweep of corridor
variants (case_a), a learning setup over one expert corridor (case_b), or a
two-expert consensus setup (case_c). Loading normalizes defaults in place so
the resolved dict can be embedded verbatim in a run manifest and replayed.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

import numpy as np

from .learn import LearnConfig
from .protocol import (
    CENTERLINE_KINDS,
    STIFFNESS_KINDS,
    CorridorFrame,
    PwcProtocol,
    TimeWarp,
    discretize,
    make_centerline,
    make_stiffness,
)
from .sampler import SimConfig
from .target import GaussianMixture, TrustWeights

__all__ = [
    "ScenarioError",
    "load_scenario",
    "normalize_scenario",
    "build_frame",
    "build_target",
    "build_warp",
    "build_subrun_protocol",
    "sim_config",
    "learn_config",
    "target_to_dict",
]

SCENARIO_KINDS = ("case_a", "case_b", "case_c")

_LABEL_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.\-]*$")


class ScenarioError(ValueError):
    """Malformed or inconsistent scenario data."""


def _require(data: dict, key: str, where: str):
    if key not in data:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return data[key]


def _as_dict(value, where: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{where}: expected an object")
    return value


def build_frame(data: dict) -> CorridorFrame:
    data = _as_dict(data, "frame")
    return CorridorFrame(
        np.asarray(_require(data, "x_in", "frame"), dtype=float),
        np.asarray(_require(data, "x_out", "frame"), dtype=float),
    )


def build_target(data: dict) -> GaussianMixture:
    data = _as_dict(data, "target")
    return GaussianMixture(
        weights=np.asarray(_require(data, "weights", "target"), dtype=float),
        means=np.asarray(_require(data, "means", "target"), dtype=float),
        covs=np.asarray(_require(data, "covs", "target"), dtype=float),
    )


def target_to_dict(gmm: GaussianMixture) -> dict:
    return {
        "weights": gmm.weights.tolist(),
        "means": gmm.means.tolist(),
        "covs": gmm.covs.tolist(),
    }


def build_warp(data: dict) -> TimeWarp:
    data = _as_dict(data, "warp")
    return TimeWarp(
        alpha=float(data.get("alpha", 0.0)), s_max=float(data.get("s_max", 1.0))
    )


def _template(data: dict, kinds: tuple, where: str) -> tuple[str, dict]:
    data = _as_dict(data, where)
    kind = _require(data, "kind", where)
    if kind not in kinds:
        raise ScenarioError(f"{where}: unknown kind {kind!r}")
    params = _as_dict(data.get("params", {}), f"{where}.params")
    return kind, {key: float(val) for key, val in params.items()}


def build_subrun_protocol(scenario: dict, entry: dict) -> PwcProtocol:
    """Protocol for one sweep entry, falling back to scenario-level pieces."""
    frame = build_frame(entry.get("frame", scenario.get("frame")))
    ckind, cparams = _template(entry["centerline"], CENTERLINE_KINDS, "centerline")
    sdata = entry.get("stiffness", scenario.get("stiffness"))
    skind, sparams = _template(sdata, STIFFNESS_KINDS, "stiffness")
    warp = build_warp(entry.get("warp", scenario.get("warp", {})))
    return discretize(
        make_centerline(frame, ckind, cparams),
        make_stiffness(skind, sparams),
        warp,
        int(scenario["pieces"]),
        anchor_endpoints=bool(scenario.get("anchor_endpoints", True)),
    )


def sim_config(scenario: dict, full_paths: bool = False) -> SimConfig:
    sim = scenario["sim"]
    return SimConfig(
        steps=int(sim["steps"]),
        particles=int(sim["particles"]),
        seed=int(sim["seed"]),
        snapshot_times=np.linspace(0.0, 1.0, int(sim["snapshots"])),
        record_full_paths=full_paths,
    )


def learn_config(scenario: dict) -> LearnConfig:
    learn = dict(scenario["learn"])
    sim = scenario["sim"]
    learn.setdefault("particles", int(sim["particles"]))
    learn.setdefault("steps", int(sim["steps"]))
    learn.setdefault("seed", int(sim["seed"]))
    try:
        return LearnConfig(**learn)
    except TypeError as exc:
        raise ScenarioError(f"learn: {exc}") from exc


def _normalize_sim(scenario: dict) -> None:
    sim = _as_dict(_require(scenario, "sim", "scenario"), "sim")
    for key in ("steps", "particles", "seed"):
        sim[key] = int(_require(sim, key, "sim"))
    sim["snapshots"] = int(sim.get("snapshots", 10))
    sim["resamples"] = int(sim.get("resamples", 200))
    if sim["snapshots"] < 2:
        raise ScenarioError("sim: need at least two snapshots")


def _normalize_corridor(scenario: dict, where: str) -> None:
    build_frame(_require(scenario, "frame", where))
    scenario["pieces"] = int(_require(scenario, "pieces", where))
    scenario.setdefault("anchor_endpoints", True)
    scenario["walls_width"] = float(scenario.get("walls_width", 0.6))
    scenario["warp"] = _as_dict(scenario.get("warp", {}), "warp")
    build_warp(scenario["warp"])
    _template(_require(scenario, "stiffness", where), STIFFNESS_KINDS, "stiffness")


def normalize_scenario(data: dict) -> dict:
    """Validate a scenario dict in place; returns it with defaults filled."""
    data = _as_dict(data, "scenario")
    if int(data.get("schema", 0)) != 1:
        raise ScenarioError("scenario: unsupported or missing schema (need 1)")
    name = _require(data, "name", "scenario")
    if not _LABEL_RE.match(str(name)):
        raise ScenarioError(f"scenario: name {name!r} is not a safe identifier")
    kind = _require(data, "kind", "scenario")
    if kind not in SCENARIO_KINDS:
        raise ScenarioError(f"scenario: unknown kind {kind!r}")
    _normalize_sim(data)

    if kind == "case_a":
        _normalize_corridor(data, "case_a")
        build_target(_require(data, "target", "case_a"))
        sweep = _require(data, "sweep", "case_a")
        if not isinstance(sweep, list) or not sweep:
            raise ScenarioError("case_a: sweep must be a non-empty list")
        labels = set()
        for entry in sweep:
            entry = _as_dict(entry, "sweep entry")
            label = str(_require(entry, "label", "sweep entry"))
            if not _LABEL_RE.match(label) or label in labels:
                raise ScenarioError(f"sweep: bad or duplicate label {label!r}")
            labels.add(label)
            build_subrun_protocol(data, entry)
    elif kind == "case_b":
        _normalize_corridor(data, "case_b")
        build_target(_require(data, "target", "case_b"))
        _template(_require(data, "centerline", "case_b"), CENTERLINE_KINDS, "centerline")
        _require(data, "learn", "case_b")
        learn_config(data)
        build_subrun_protocol(data, {"centerline": data["centerline"]})
    else:
        experts = _require(data, "experts", "case_c")
        if not isinstance(experts, list) or len(experts) != 2:
            raise ScenarioError("case_c: experts must be a list of exactly two")
        data["pieces"] = int(_require(data, "pieces", "case_c"))
        for expert in experts:
            expert = _as_dict(expert, "expert")
            for key in ("frame", "centerline", "stiffness", "target"):
                _require(expert, key, "expert")
            expert["warp"] = _as_dict(expert.get("warp", {}), "expert warp")
            build_subrun_protocol(data, expert)
            build_target(expert["target"])
        trust = _require(data, "trust", "case_c")
        if not isinstance(trust, list) or not trust:
            raise ScenarioError("case_c: trust must be a non-empty list of pairs")
        for pair in trust:
            if not (isinstance(pair, list) and len(pair) == 2):
                raise ScenarioError("case_c: each trust entry is a [k1, k2] pair")
            TrustWeights(int(pair[0]), int(pair[1]))
        _require(data, "learn", "case_c")
        learn_config(data)
        final = _as_dict(data.get("final_sim", {}), "final_sim")
        final.setdefault("steps", data["sim"]["steps"])
        final.setdefault("particles", data["sim"]["particles"])
        data["final_sim"] = {key: int(final[key]) for key in ("steps", "particles")}
    return data


def load_scenario(path: str | Path) -> dict:
    """Read a scenario (or a manifest wrapping one) and normalize it."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(data, dict) and "scenario" in data:
        data = data["scenario"]  # manifests replay directly
    return normalize_scenario(data)
