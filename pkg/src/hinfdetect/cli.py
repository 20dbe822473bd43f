"""Command line workflow: ``design``, ``simulate``, ``verify`` and ``sweep``.

Every command works on one run directory::

    scenario.yaml            copy of the scenario with overrides applied
    feasibility.json         LMI and Riccati report (design)
    gains/node_{i}.csv       detector gain schedule L_i(t) (design)
    gains/baseline_node_{i}.csv
    trajectories.csv         simulated signals (simulate)
    metrics.json             per-node reports (simulate)
    verify.json              invariant checks (verify)
    sweep.csv                gamma feasibility table (sweep)

Exit codes: 0 success, 1 infeasible or diverged, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, metrics
from .errors import ConfigError, HinfDetectError, InfeasibleError
from .model import Scenario, validate_scenario
from .runtime import SimResult, simulate, without_attacks
from .synthesis import (
    GainSchedule,
    check_lmis,
    node_system,
    partition_gain,
    reassemble_gain,
    sweep_gamma,
    synthesize,
)

log = logging.getLogger("hinfdetect")

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hinfdetect", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", type=Path, required=scenario_required, help="scenario YAML file")
        sp.add_argument("--out-dir", type=Path, required=True, help="run directory")
        sp.add_argument("--gamma", type=float, help="override design.gamma")
        sp.add_argument("--horizon", type=float, help="override sim.horizon [s]")
        sp.add_argument("--dt", type=float, help="override sim.step [s]")
        sp.add_argument("--seed", type=int, help="override sim.seed")
        sp.add_argument("-v", "--verbose", action="store_true")

    common(sub.add_parser("design", help="synthesise detector and baseline gains"))
    common(sub.add_parser("simulate", help="simulate with gains from a design run"), scenario_required=False)
    common(sub.add_parser("verify", help="check invariants on a simulated run"), scenario_required=False)
    sw = sub.add_parser("sweep", help="gamma feasibility table")
    common(sw)
    sw.add_argument("--gammas", required=True, help="comma separated gamma values")
    return p


def _load(args) -> Scenario:
    path = args.scenario if args.scenario is not None else args.out_dir / "scenario.yaml"
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    cfg = io.parse_scenario(path).with_overrides(
        gamma=args.gamma, horizon=args.horizon, step=args.dt, seed=args.seed
    )
    return validate_scenario(cfg)


def _gain_paths(out: Path, i: int) -> tuple[Path, Path]:
    return out / "gains" / f"node_{i + 1}.csv", out / "gains" / f"baseline_node_{i + 1}.csv"


def _read_gains(scenario: Scenario, out: Path) -> tuple[list[GainSchedule], list[GainSchedule]]:
    baseline, detector = [], []
    for i in range(scenario.N):
        det_p, base_p = _gain_paths(out, i)
        if not det_p.is_file() or not base_p.is_file():
            raise ConfigError(f"gain schedule {det_p} or {base_p} missing; run 'hinfdetect design' first")
        aug = node_system(scenario, i)
        plain = node_system(scenario, i, augmented=False)
        det = io.read_gain_csv(det_p, n=aug.n, n_eps=aug.n_eps, col_sizes=aug.col_sizes, sources=aug.sources)
        base = io.read_gain_csv(
            base_p, n=plain.n, n_eps=plain.n_eps, col_sizes=plain.col_sizes, sources=plain.sources
        )
        for g in (det, base):
            if g.times[-1] < scenario.grid[-1] - 1e-9:
                raise ConfigError(
                    f"gains in {out / 'gains'} end at t={g.times[-1]:g} but the horizon is "
                    f"{scenario.grid[-1]:g}; rerun 'hinfdetect design' with the same horizon"
                )
        detector.append(det)
        baseline.append(base)
    return baseline, detector


def cmd_design(args) -> int:
    sc = _load(args)
    out = args.out_dir
    (out / "gains").mkdir(parents=True, exist_ok=True)
    io.write_scenario(sc.config, out / "scenario.yaml")
    try:
        design = synthesize(sc)
    except InfeasibleError as exc:
        feas = getattr(exc, "feasibility", None)
        if feas is None:
            feas = check_lmis(sc)[1]
        io.write_json(feas.as_dict(), out / "feasibility.json")
        g = feas.global_lmi
        if not g.feasible:
            print(
                f"infeasible: global coupling LMI R + gamma^2 (Phi + Phi' - Delta) > I fails at "
                f"gamma={g.gamma:g}, min eigenvalue {g.min_eig:.6g}",
                file=sys.stderr,
            )
        for node, ok in enumerate(feas.local_ok):
            if not ok:
                print(f"infeasible: local LMI R_check > I fails at node {node + 1}", file=sys.stderr)
        if feas.lmi_feasible:
            print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    io.write_json(design.feasibility.as_dict(), out / "feasibility.json")
    for i in range(sc.N):
        det_p, base_p = _gain_paths(out, i)
        io.write_gain_csv(design.detector[i], det_p)
        io.write_gain_csv(design.baseline[i], base_p)
    print(f"design ok: global LMI min eigenvalue {design.feasibility.global_lmi.min_eig:.6g}", file=sys.stderr)
    return EXIT_OK


def _threshold(sc: Scenario, result: SimResult, baseline, detector) -> list[float]:
    sim = sc.config.sim
    if sim.threshold is not None:
        return [sim.threshold] * sc.N
    calib = result if not any(result.hijacked) else simulate(without_attacks(sc), baseline, detector)
    return [metrics.calibrate_threshold(calib.phi[i], sim.min_threshold) for i in range(sc.N)]


def cmd_simulate(args) -> int:
    sc = _load(args)
    out = args.out_dir
    baseline, detector = _read_gains(sc, out)
    result = simulate(sc, baseline, detector)
    io.write_scenario(sc.config, out / "scenario.yaml")
    io.write_trajectories_csv(result, out / "trajectories.csv")
    thr = _threshold(sc, result, baseline, detector)
    report = [metrics.node_report(result, sc, i, thr[i], sc.config.sim.dwell) for i in range(sc.N)]
    io.write_json(report, out / "metrics.json")
    for r in report:
        events = ", ".join(f"t={ev['onset']:.3f}" for ev in r["detections"]) or "none"
        print(
            f"node {r['node']}: settled phi {r['tracking']['settled']}, hinf ratio "
            f"{r['hinf']['ratio']:.4g}, detections {events}",
            file=sys.stderr,
        )
    return EXIT_OK


def verify_run(sc: Scenario, result: SimResult, detector: list[GainSchedule]) -> dict:
    """Invariant checks on a recorded run.

    ``passed`` requires the gain partition round trip and the attenuation
    bound at every node.  The error-dynamics residual is reported only: it
    is a finite-difference check and needs a fine step to be meaningful.
    """
    checks = []
    for i in range(sc.N):
        g = detector[i]
        blocks = partition_gain(g.L, g.n, g.col_sizes, g.sources)
        roundtrip = bool(np.array_equal(reassemble_gain(blocks, g.sources), g.L))
        res = metrics.error_dynamics_residual(result, sc, g, i)
        hinf = metrics.hinf_ratio(result, sc, i)
        checks.append(
            {
                "node": i + 1,
                "gain_partition_roundtrip": roundtrip,
                "error_dynamics_residual": res,
                "hinf_ratio": hinf.ratio,
                "hinf_ok": hinf.satisfied,
            }
        )
    passed = all(c["gain_partition_roundtrip"] and c["hinf_ok"] for c in checks)
    return {"passed": passed, "nodes": checks}


def cmd_verify(args) -> int:
    sc = _load(args)
    out = args.out_dir
    traj = out / "trajectories.csv"
    if not traj.is_file():
        raise ConfigError(f"{traj} missing; run 'hinfdetect simulate' first")
    _, detector = _read_gains(sc, out)
    result = io.read_trajectories_csv(traj, sc)
    report = verify_run(sc, result, detector)
    io.write_json(report, out / "verify.json")
    for c in report["nodes"]:
        print(
            f"node {c['node']}: partition {'ok' if c['gain_partition_roundtrip'] else 'FAIL'}, "
            f"error dynamics residual {c['error_dynamics_residual']:.3g}, "
            f"hinf ratio {c['hinf_ratio']:.4g} {'ok' if c['hinf_ok'] else 'FAIL'}",
            file=sys.stderr,
        )
    return EXIT_OK if report["passed"] else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    sc = _load(args)
    try:
        gammas = [float(g) for g in args.gammas.split(",") if g.strip()]
    except ValueError as exc:
        raise ConfigError(f"--gammas: {exc}") from exc
    if any(g <= 0 for g in gammas):
        raise ConfigError("--gammas: values must be positive")
    rows = sweep_gamma(sc, sorted(gammas))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gamma", "lmi_min_eig", "lmi_feasible", "local_ok", *[f"riccati_node{i + 1}" for i in range(sc.N)], "feasible"])
        for r in rows:
            w.writerow([repr(r.gamma), repr(r.lmi_min_eig), int(r.lmi_feasible), int(r.local_ok), *map(int, r.riccati_bounded), int(r.feasible)])
    print(f"sweep: {sum(r.feasible for r in rows)}/{len(rows)} feasible", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep}


def run_cli(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except HinfDetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
