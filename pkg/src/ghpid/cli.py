"""Command-line runner: scenarios in, run directories out.

Subcommands:
  case-a              corridor sweep: simulate + diagnose each sweep entry
  case-b              expert-following: learn centers, then evaluate
                      baseline / expert / optimized under one seed
  case-c              two-expert consensus: learn one protocol per trust
                      pair against the fused target
  sample              single sweep entry, full export
  fuse                fused targets only, no simulation
  trace-coefficients  kernel coefficient trace on a time grid
  validate-config     parse and check a scenario, write nothing

Every run directory carries a manifest.json embedding the resolved scenario
and the SHA-256 of each output file; pointing --config at a manifest replays
it. All subruns of a scenario share sim.seed, so sweeps are common-random-
number comparisons, and --threads only distributes independent subruns
(results are byte-identical at any thread count). Fidelity results are
reported in diagnostics.json, not turned into exit codes: a statistical
gate belongs to the acceptance layer, not to data generation.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import fidelity_null, report
from .greens import build_table, coefficient_trace
from .inference import reweight
from .learn import ConsensusTask, DesiderataTask, OptimizeAborted, history_to_rows, optimize
from .protocol import make_centerline
from .runio import (
    export_centerline,
    export_history,
    export_run,
    write_csv,
    write_json,
    write_manifest,
)
from .sampler import SimConfig, simulate
from .scenario import (
    ScenarioError,
    build_frame,
    build_subrun_protocol,
    build_target,
    learn_config,
    load_scenario,
    sim_config,
    target_to_dict,
)
from .target import TrustWeights, poe_fuse

# lane discipline: particle streams use raw indices under sim.seed, aux
# lanes 0/1 belong to the optimizer, so fidelity draws move to seed + 1
_FIDELITY_SEED_SHIFT = 1


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, int(args.threads))
    return max(1, int(os.environ.get("GHPID_THREADS", "1")))


def _apply_overrides(scenario: dict, args) -> None:
    if args.seed is not None:
        scenario["sim"]["seed"] = int(args.seed)
    if getattr(args, "snapshots", None) is not None:
        scenario["sim"]["snapshots"] = int(args.snapshots)


def _entry_geometry(scenario: dict, entry: dict):
    frame = build_frame(entry.get("frame", scenario.get("frame")))
    cdata = entry["centerline"]
    return frame, make_centerline(frame, cdata["kind"], cdata.get("params", {}))


def _run_entry(scenario: dict, entry: dict, target, null, out_dir: Path) -> None:
    proto = build_subrun_protocol(scenario, entry)
    run = simulate(build_table(proto), target, sim_config(scenario))
    rep = report(
        run,
        target,
        resamples=scenario["sim"]["resamples"],
        seed=scenario["sim"]["seed"] + _FIDELITY_SEED_SHIFT,
        null=null,
    )
    export_run(out_dir, run, target, rep)
    frame, centerline = _entry_geometry(scenario, entry)
    export_centerline(out_dir, centerline, frame, scenario["walls_width"])


def _shared_null(scenario: dict, target, particles: int | None = None) -> np.ndarray:
    sim = scenario["sim"]
    return fidelity_null(
        target,
        particles if particles is not None else sim["particles"],
        resamples=sim["resamples"],
        seed=sim["seed"] + _FIDELITY_SEED_SHIFT,
    )


def _map_jobs(jobs, threads: int) -> None:
    if threads <= 1 or len(jobs) <= 1:
        for job in jobs:
            job()
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(job) for job in jobs]
        for fut in futures:
            fut.result()


def run_case_a(scenario: dict, out: Path, threads: int) -> int:
    target = build_target(scenario["target"])
    null = _shared_null(scenario, target)
    jobs = [
        (lambda entry=entry: _run_entry(
            scenario, entry, target, null, out / entry["label"]
        ))
        for entry in scenario["sweep"]
    ]
    _map_jobs(jobs, threads)
    write_manifest(out, "case-a", scenario, __version__)
    return 0


def run_case_b(scenario: dict, out: Path, threads: int) -> int:
    target = build_target(scenario["target"])
    expert_entry = {"centerline": scenario["centerline"]}
    baseline_entry = {"centerline": {"kind": "straight", "params": {}}}
    expert = build_subrun_protocol(scenario, expert_entry)
    task = DesiderataTask(expert=expert, target=target)

    try:
        result = optimize(task, learn_config(scenario))
    except OptimizeAborted as exc:
        header, rows = history_to_rows(exc.history)
        write_csv(out / "history.csv", header, rows)
        print(f"error: optimization aborted: {exc}", file=sys.stderr)
        return 3
    header, rows = history_to_rows(result.history)
    export_history(out, header, rows, result.theta)

    null = _shared_null(scenario, target)
    jobs = []
    for label, entry, proto in (
        ("baseline", baseline_entry, None),
        ("expert", expert_entry, None),
        ("optimized", None, result.protocol),
    ):
        if proto is None:
            jobs.append(
                lambda e=entry, l=label: _run_entry(scenario, e, target, null, out / l)
            )
        else:
            def eval_job(p=proto, l=label):
                run = simulate(build_table(p), target, sim_config(scenario))
                rep = report(
                    run,
                    target,
                    resamples=scenario["sim"]["resamples"],
                    seed=scenario["sim"]["seed"] + _FIDELITY_SEED_SHIFT,
                    null=null,
                )
                export_run(out / l, run, target, rep)
            jobs.append(eval_job)
    _map_jobs(jobs, threads)
    write_manifest(out, "case-b", scenario, __version__)
    return 0


def _consensus_pair(scenario: dict, pair, out: Path) -> None:
    experts = tuple(
        (build_subrun_protocol(scenario, spec), build_target(spec["target"]))
        for spec in scenario["experts"]
    )
    task = ConsensusTask(experts=experts, trust=TrustWeights(int(pair[0]), int(pair[1])))
    sub = out / f"trust_{pair[0]}_{pair[1]}"
    write_json(sub / "fused_target.json", target_to_dict(task.fused))

    result = optimize(task, learn_config(scenario))
    header, rows = history_to_rows(result.history)
    export_history(sub, header, rows, result.theta)

    final = scenario["final_sim"]
    cfg = SimConfig(
        steps=final["steps"],
        particles=final["particles"],
        seed=scenario["sim"]["seed"],
        snapshot_times=np.linspace(0.0, 1.0, scenario["sim"]["snapshots"]),
    )
    null = _shared_null(scenario, task.fused, particles=final["particles"])
    run = simulate(build_table(result.protocol), task.fused, cfg)
    rep = report(
        run,
        task.fused,
        resamples=scenario["sim"]["resamples"],
        seed=scenario["sim"]["seed"] + _FIDELITY_SEED_SHIFT,
        null=null,
    )
    export_run(sub, run, task.fused, rep)


def run_case_c(scenario: dict, out: Path, threads: int) -> int:
    try:
        jobs = [
            (lambda pair=pair: _consensus_pair(scenario, pair, out))
            for pair in scenario["trust"]
        ]
        _map_jobs(jobs, threads)
    except OptimizeAborted as exc:
        print(f"error: optimization aborted: {exc}", file=sys.stderr)
        return 3
    write_manifest(out, "case-c", scenario, __version__)
    return 0


def run_sample(scenario: dict, out: Path, label: str | None) -> int:
    if scenario["kind"] == "case_c":
        raise ScenarioError("sample needs a corridor scenario (case_a or case_b)")
    if scenario["kind"] == "case_b":
        entry = {"centerline": scenario["centerline"]}
    else:
        sweep = scenario.get("sweep", [])
        if label is None:
            entry = sweep[0]
        else:
            matches = [e for e in sweep if e["label"] == label]
            if not matches:
                raise ScenarioError(f"no sweep entry labeled {label!r}")
            entry = matches[0]
    target = build_target(scenario["target"])
    null = _shared_null(scenario, target)
    _run_entry(scenario, entry, target, null, out)
    write_manifest(out, "sample", scenario, __version__)
    return 0


def run_fuse(scenario: dict, out: Path) -> int:
    if scenario["kind"] != "case_c":
        raise ScenarioError("fuse needs a case_c scenario")
    g1, g2 = (build_target(spec["target"]) for spec in scenario["experts"])
    for pair in scenario["trust"]:
        fused = poe_fuse(g1, g2, TrustWeights(int(pair[0]), int(pair[1])))
        write_json(out / f"fused_target_{pair[0]}_{pair[1]}.json", target_to_dict(fused))
    write_manifest(out, "fuse", scenario, __version__)
    return 0


def run_trace(scenario: dict, out: Path, grid: int) -> int:
    if scenario["kind"] == "case_b":
        entry = {"centerline": scenario["centerline"]}
    elif scenario.get("sweep"):
        entry = scenario["sweep"][0]
    else:
        raise ScenarioError("trace-coefficients needs a corridor scenario")
    proto = build_subrun_protocol(scenario, entry)
    table = build_table(proto)
    times = np.linspace(table.eps_start, 1.0 - table.eps_end, grid)
    trace = coefficient_trace(table, times)
    states = [reweight(table, float(t)) for t in times]
    header = list(trace) + ["k_precision", "gain"]
    rows = zip(
        *trace.values(),
        [st.k_precision for st in states],
        [st.gain for st in states],
    )
    write_csv(out / "coefficients.csv", header, rows)
    write_manifest(out, "trace-coefficients", scenario, __version__)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ghpid", description="Guided harmonic path-integral diffusion runner."
    )
    parser.add_argument("--version", action="version", version=f"ghpid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="scenario JSON (or a manifest)")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override sim.seed")

    p = sub.add_parser("case-a", help="corridor sweep")
    common(p)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--snapshots", type=int, default=None)

    p = sub.add_parser("case-b", help="expert following")
    common(p)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--snapshots", type=int, default=None)

    p = sub.add_parser("case-c", help="two-expert consensus")
    common(p)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--snapshots", type=int, default=None)

    p = sub.add_parser("sample", help="single corridor run")
    common(p)
    p.add_argument("--label", default=None, help="sweep entry to run")
    p.add_argument("--snapshots", type=int, default=None)

    p = sub.add_parser("fuse", help="write fused targets")
    common(p)

    p = sub.add_parser("trace-coefficients", help="kernel coefficient trace")
    common(p)
    p.add_argument("--grid", type=int, default=200)

    p = sub.add_parser("validate-config", help="check a scenario file")
    common(p, needs_out=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.config)
        _apply_overrides(scenario, args)
        if args.command == "validate-config":
            print(f"ok: {scenario['name']} ({scenario['kind']})")
            return 0
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "case-a":
            if scenario["kind"] != "case_a":
                raise ScenarioError("case-a needs a case_a scenario")
            return run_case_a(scenario, out, _threads(args))
        if args.command == "case-b":
            if scenario["kind"] != "case_b":
                raise ScenarioError("case-b needs a case_b scenario")
            return run_case_b(scenario, out, _threads(args))
        if args.command == "case-c":
            if scenario["kind"] != "case_c":
                raise ScenarioError("case-c needs a case_c scenario")
            return run_case_c(scenario, out, _threads(args))
        if args.command == "sample":
            return run_sample(scenario, out, args.label)
        if args.command == "fuse":
            return run_fuse(scenario, out)
        return run_trace(scenario, out, args.grid)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
