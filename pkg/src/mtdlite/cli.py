"""Command line front end.

Subcommands:
  train     build a classifier from synthetic telemetry and save it
  simulate  run a packaged or user scenario and emit its report
  run       drive the sandbox daemon loop from a framework config
  report    summarize a deployment journal

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
The MTD_LOG environment variable sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import importlib.resources
import json
import logging
import os
import signal
import sys
import time
from pathlib import Path

from .classifier import (
    ForestParams,
    TreeParams,
    evaluate,
    train_forest,
    train_knn,
    train_tree,
)
from .config import (
    FrameworkConfig,
    ScenarioSpec,
    TrainSettings,
    load_framework_config,
    load_scenario,
)
from .errors import ConfigError, MtdError
from .model_io import save_model
from .profiles import default_profiles
from .scenario import ScenarioRunner, save_report
from .telemetry import (
    generate_dataset,
    minmax_fit,
    save_scaler,
    scale_dataset,
    split,
)

log = logging.getLogger(__name__)

_SCENARIO_PACKAGE = "mtdlite"
_SCENARIO_DIR = "scenarios"


def _setup_logging() -> None:
    level = os.environ.get("MTD_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_model(settings: TrainSettings, seed: int):
    t0 = time.perf_counter()
    profiles = default_profiles(confusable=settings.confusable)
    dataset = generate_dataset(profiles, settings.n_per_class, seed)
    train, test = split(dataset, settings.train_fraction, seed)
    scaler = minmax_fit(train)
    train_scaled = scale_dataset(train, scaler)
    test_scaled = scale_dataset(test, scaler)
    if settings.algo == "tree":
        model = train_tree(train_scaled,
                           TreeParams(max_depth=settings.max_depth,
                                      min_samples_leaf=settings.min_samples_leaf))
    elif settings.algo == "forest":
        model = train_forest(
            train_scaled, n_trees=settings.n_trees,
            params=ForestParams(
                tree=TreeParams(max_depth=settings.max_depth,
                                min_samples_leaf=settings.min_samples_leaf)),
            seed=seed)
    else:
        model = train_knn(train_scaled, k=settings.k)
    elapsed = time.perf_counter() - t0
    report = evaluate(model, test_scaled)
    return model, scaler, report, elapsed, len(train), len(test)


def cmd_train(args: argparse.Namespace) -> int:
    settings = TrainSettings()
    seed = 0
    if args.config:
        cfg = load_framework_config(args.config)
        settings = cfg.train
        seed = cfg.seed
    if args.algo:
        settings.algo = args.algo
    if args.seed is not None:
        seed = args.seed
    model, scaler, report, elapsed, n_train, n_test = _train_model(settings, seed)
    print(f"algo={settings.algo} seed={seed} "
          f"train={n_train} test={n_test} fit={elapsed:.1f}s")
    print(report.to_text())
    if args.out_model:
        save_model(model, args.out_model)
        print(f"model written to {args.out_model}")
    if args.out_scaler:
        save_scaler(scaler, args.out_scaler)
        print(f"scaler written to {args.out_scaler}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def bundled_scenarios() -> list[str]:
    root = importlib.resources.files(_SCENARIO_PACKAGE) / _SCENARIO_DIR
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def _resolve_scenario(ref: str) -> Path:
    path = Path(ref)
    if path.exists():
        return path
    candidate = importlib.resources.files(_SCENARIO_PACKAGE) \
        / _SCENARIO_DIR / f"{ref}.toml"
    with importlib.resources.as_file(candidate) as real:
        if real.exists():
            return real
    raise ConfigError(f"scenario {ref!r} is neither a file nor one of the "
                      f"packaged scenarios {bundled_scenarios()}")


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = load_scenario(_resolve_scenario(args.scenario),
                         seed_override=args.seed)
    report = ScenarioRunner(spec, journal_path=args.journal).run()
    if args.out:
        save_report(report, args.out)
        totals = report["totals"]
        print(f"scenario {report['scenario']} finished at "
              f"t={report['duration_s']:.0f}s; report written to {args.out}")
        for key in sorted(totals):
            print(f"  {key} = {totals[key]}")
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _daemon_spec(cfg: FrameworkConfig) -> ScenarioSpec:
    return ScenarioSpec(
        name="daemon",
        seed=cfg.seed,
        duration_s=cfg.daemon.duration_s,
        dt_s=cfg.daemon.dt_s,
        environment=cfg.environment,
        adversaries=cfg.infections,
        detection=cfg.detection,
        proactive=cfg.proactive,
        policy=cfg.policy,
        trap=cfg.trap,
        trap_start_dir=cfg.trap_start_dir,
        file_format=cfg.file_format,
    )


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_framework_config(args.config)
    journal = cfg.daemon.journal_path or "mtd_journal.jsonl"
    spec = _daemon_spec(cfg)
    runner = ScenarioRunner(spec, journal_path=journal)

    stop = {"flag": False}

    def _signal(_signum, _frame):
        stop["flag"] = True

    previous = {}
    for sig in (signal.SIGINT, signal.SIGTERM):
        previous[sig] = signal.signal(sig, _signal)
    try:
        report = runner.run(should_stop=lambda: stop["flag"])
    finally:
        for sig, handler in previous.items():
            signal.signal(sig, handler)
    print(f"run {'interrupted' if report['stopped_early'] else 'complete'} "
          f"at t={runner.env.now:.0f}s; journal written to {journal}")
    print(f"  alarms={len(report['alarms'])} outcomes={len(report['outcomes'])}")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

def _load_journal(path: str) -> list[dict]:
    lines = []
    try:
        with open(path, encoding="utf-8") as fh:
            for i, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    lines.append(json.loads(raw))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{i}: bad journal line: {exc}") \
                        from None
    except FileNotFoundError:
        raise ConfigError(f"journal not found: {path}") from None
    return lines


def _journal_summary(lines: list[dict]) -> dict:
    alarms = [l for l in lines if l.get("kind") == "alarm"]
    outcomes = [l for l in lines if l.get("kind") == "outcome"]
    others = [l for l in lines if l.get("kind") not in ("alarm", "outcome")]
    by_status: dict[str, int] = {}
    for o in outcomes:
        by_status[o.get("status", "?")] = by_status.get(o.get("status", "?"), 0) + 1
    return {
        "alarms": alarms,
        "outcomes": outcomes,
        "events": others,
        "counts": {
            "alarms": len(alarms),
            "outcomes": len(outcomes),
            "events": len(others),
            "outcomes_by_status": by_status,
        },
    }


def _format_table(summary: dict) -> str:
    rows = []
    rows.append("kind     t          what")
    rows.append("-" * 60)
    for a in summary["alarms"]:
        what = a.get("rule_id") or \
            f"{a.get('behavior')} ({a.get('sample_label')}, " \
            f"conf={a.get('confidence')})"
        rows.append(f"alarm    {a.get('t', 0):<10.1f} {a.get('origin')}: {what}")
    for o in summary["outcomes"]:
        metrics = " ".join(f"{k}={v}" for k, v in sorted(
            (o.get("metrics") or {}).items()))
        rows.append(f"outcome  {o.get('start', 0):<10.1f} "
                    f"{o.get('mechanism')} -> {o.get('status')} {metrics}")
    c = summary["counts"]
    rows.append("-" * 60)
    rows.append(f"{c['alarms']} alarm(s), {c['outcomes']} outcome(s), "
                f"{c['events']} other event(s)")
    return "\n".join(rows)


def cmd_report(args: argparse.Namespace) -> int:
    summary = _journal_summary(_load_journal(args.journal))
    if args.format == "json":
        print(json.dumps(summary, indent=2, sort_keys=True))
    else:
        print(_format_table(summary))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtdlite",
        description="Moving target defense sandbox: train detectors, run "
                    "attack scenarios, inspect journals.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a classifier on synthetic "
                                           "telemetry")
    p_train.add_argument("--config", help="framework config (TOML)")
    p_train.add_argument("--algo", choices=["knn", "tree", "forest"],
                         help="override the configured algorithm")
    p_train.add_argument("--out-model", help="write the trained model here")
    p_train.add_argument("--out-scaler", help="write the fitted scaler here")
    p_train.add_argument("--seed", type=int, help="override the configured seed")
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="run a scenario to completion")
    p_sim.add_argument("--scenario", required=True,
                       help="path to a scenario TOML or a packaged name: "
                            + ", ".join(bundled_scenarios()))
    p_sim.add_argument("--out", help="write the JSON report here "
                                     "(default: stdout)")
    p_sim.add_argument("--journal", help="also write the deployment journal "
                                         "here")
    p_sim.add_argument("--seed", type=int, help="override the scenario seed")
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="run the daemon loop from a config")
    p_run.add_argument("--config", required=True, help="framework config (TOML)")
    p_run.set_defaults(func=cmd_run)

    p_rep = sub.add_parser("report", help="summarize a deployment journal")
    p_rep.add_argument("--journal", required=True, help="journal JSONL path")
    p_rep.add_argument("--format", choices=["json", "table"], default="table")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MtdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
