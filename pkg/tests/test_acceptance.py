"""End-to-end acceptance gates for the framework.

One test per numbered criterion; each prints a single PASS/FAIL line with
the measured values. Tolerances are pinned in the assertions.
"""

from __future__ import annotations

import ipaddress
import json
import math
import random
import time
from types import SimpleNamespace

import numpy as np
import pytest

from mtdlite.adversary import RootkitActor
from mtdlite.classifier import (
    ForestParams,
    TreeParams,
    evaluate,
    predict_batch,
    train_forest,
    train_knn,
    train_tree,
)
from mtdlite.cli import _resolve_scenario, bundled_scenarios, main
from mtdlite.config import load_scenario, scenario_from_dict
from mtdlite.decision import DecisionEngine, ProactiveRule
from mtdlite.enforcement import EnforcementPolicy
from mtdlite.environment import (
    EnvironmentSpec,
    FileRootSpec,
    NetworkSpec,
    create_environment,
)
from mtdlite.errors import Exhausted
from mtdlite.mechanisms.ip_shuffle import enumerate_candidates, migrate
from mtdlite.mechanisms.libraries import (
    capture_baseline,
    restore_linker_reference,
    sanitize_preload,
)
from mtdlite.mechanisms.file_format import (
    restore_extensions,
    shuffle_extensions,
)
from mtdlite.mechanisms.ransomware_trap import TrapConfig, deploy_trap
from mtdlite.adversary import EncryptorActor
from mtdlite.model_io import load_model, save_model
from mtdlite.profiles import CONFUSABLE_PAIR, default_profiles
from mtdlite.scenario import ScenarioRunner, run_scenario
from mtdlite.telemetry import (
    N_FEATURES,
    generate_dataset,
    load_dataset,
    load_scaler,
    minmax_fit,
    save_dataset,
    save_scaler,
    scale_dataset,
    split,
)

N_PER_CLASS = 2160
DATASET_SEED = 0


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    print(f"acceptance criterion {criterion}: "
          f"{'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def trained_models():
    """Full-sized dataset and both classifiers, built once and timed."""
    t0 = time.perf_counter()
    dataset = generate_dataset(default_profiles(confusable=True),
                               n_per_class=N_PER_CLASS, seed=DATASET_SEED)
    train, test = split(dataset, train_fraction=0.8, seed=DATASET_SEED)
    scaler = minmax_fit(train)
    train_scaled = scale_dataset(train, scaler)
    test_scaled = scale_dataset(test, scaler)
    tree_params = TreeParams(max_depth=16, min_samples_leaf=2)
    forest = train_forest(train_scaled, n_trees=100,
                          params=ForestParams(tree=tree_params),
                          seed=DATASET_SEED)
    tree = train_tree(train_scaled, tree_params)
    forest_report = evaluate(forest, test_scaled)
    tree_report = evaluate(tree, test_scaled)
    elapsed = time.perf_counter() - t0
    return SimpleNamespace(
        dataset=dataset, train=train, test=test,
        forest_report=forest_report, tree_report=tree_report,
        elapsed=elapsed,
    )


def test_criterion_1_forest_quality(trained_models):
    m = trained_models
    assert len(m.dataset) == 8 * N_PER_CLASS
    assert len(m.dataset.classes) == 8
    assert m.dataset.vectors[0].features.shape == (N_FEATURES,)
    assert len(m.train) == 8 * N_PER_CLASS * 8 // 10
    rf = m.forest_report.macro_f1
    dt = m.tree_report.macro_f1
    ok = rf >= 0.95 and rf >= dt - 0.02 and m.elapsed < 60.0
    _verdict(1, ok, f"forest macro F1 {rf:.4f} (floor 0.95), tree {dt:.4f}, "
                    f"pipeline {m.elapsed:.1f}s (budget 60s)")


def test_criterion_2_confusion_shape(trained_models):
    report = trained_models.forest_report
    leak_label, paired_label = CONFUSABLE_PAIR
    li = report.classes.index(leak_label)
    pi = report.classes.index(paired_label)
    leak_row = report.confusion[li]
    into_paired = 100.0 * leak_row[pi] / sum(leak_row)
    other_diagonals = {
        cls: 100.0 * report.confusion[i][i] / sum(report.confusion[i])
        for i, cls in enumerate(report.classes) if i != li
    }
    worst = min(other_diagonals.values())
    ok = 15.0 <= into_paired <= 35.0 and worst >= 90.0
    _verdict(2, ok, f"{leak_label}->{paired_label} {into_paired:.2f}% "
                    f"(band 15..35), min other diagonal {worst:.2f}% "
                    f"(floor 90)")


def test_criterion_3_trap_limits_encryption():
    t0 = time.perf_counter()
    with_trap = ScenarioRunner(load_scenario(
        _resolve_scenario("ransomware_reactive")))
    trap_report = with_trap.run()

    no_trap_spec = load_scenario(_resolve_scenario("ransomware_reactive"))
    no_trap_spec.policy = EnforcementPolicy()
    baseline_report = ScenarioRunner(no_trap_spec).run()
    wall = time.perf_counter() - t0

    trap_bytes = trap_report["totals"]["real_bytes_encrypted"]
    base_bytes = baseline_report["totals"]["real_bytes_encrypted"]
    killed = trap_report["totals"]["encryptor_killed"]
    killed_at = trap_report["totals"].get("encryptor_killed_at_s", math.inf)
    end_files = {p for p, _ in with_trap.env.iter_files("/data", raw=True)}
    none_deleted = set(with_trap.watch.genuine_names) <= end_files

    ok = (base_bytes > 0
          and trap_bytes <= 0.10 * base_bytes
          and killed and killed_at < trap_report["duration_s"]
          and none_deleted
          and wall < 10.0)
    _verdict(3, ok, f"real bytes {trap_bytes} vs baseline {base_bytes} "
                    f"({100 * trap_bytes / base_bytes:.1f}%, cap 10%), "
                    f"killed at t={killed_at:.0f}s, "
                    f"real files deleted: {not none_deleted}, "
                    f"wall {wall:.2f}s (budget 10s)")


def test_criterion_4_extension_shuffle_limits_leak():
    report = run_scenario(load_scenario(_resolve_scenario("dataleak_reactive")))
    totals = report["totals"]
    frac = totals["leak_fraction"]
    restore = totals["restore"]
    ok = (totals["bytes_at_risk"] == 300_000_000
          and frac <= 0.15
          and restore["name_set_identical"]
          and restore["files_missing"] == 0)
    _verdict(4, ok, f"leaked {totals['bytes_leaked']} of "
                    f"{totals['bytes_at_risk']} bytes "
                    f"({100 * frac:.2f}%, cap 15%), restore identical: "
                    f"{restore['name_set_identical']}")


def _rootkit_trial(seed: int, inject_at: int) -> dict:
    doc = {
        "name": "sanitation-trial",
        "seed": seed,
        "duration_s": 1035,
        "environment": {
            "seed": seed,
            "files": {"roots": [{"path": "/data", "count": 2,
                                 "size_bytes": 2000,
                                 "extensions": [".txt"], "subdirs": 0}]},
        },
        "adversaries": [{"kind": "rootkit", "start_s": inject_at}],
        "detection": {"mode": "none"},
        "proactive": [{"id": "periodic-sanitize", "every_s": 60,
                       "mtds": ["libraries"]}],
    }
    return run_scenario(scenario_from_dict(doc))["totals"]


def test_criterion_5_periodic_sanitation():
    rng = random.Random(0xC0FFEE)
    trials = 100
    on_time = 0
    worst = 0.0
    for i in range(trials):
        inject = rng.randint(1, 960)
        totals = _rootkit_trial(seed=i, inject_at=inject)
        latency = totals.get("disinfect_latency_s")
        assert totals["injected_at_s"] == float(inject)
        if latency is not None and latency <= 60.0 \
                and not totals["preload_tampered_at_end"] \
                and not totals["linker_tampered_at_end"]:
            on_time += 1
            worst = max(worst, latency)

    # idempotence: a second sanitation pass reports nothing to change
    env = create_environment(EnvironmentSpec(seed=1))
    baseline = capture_baseline(env)
    actor = RootkitActor()
    actor.start(env, 0.0)
    actor.step(env, 0.0, 1.0)
    first = (sanitize_preload(env, baseline).changed,
             restore_linker_reference(env, baseline).changed)
    second = (sanitize_preload(env, baseline).changed,
              restore_linker_reference(env, baseline).changed)
    idempotent = first == (True, True) and second == (False, False)

    ok = on_time == trials and idempotent
    _verdict(5, ok, f"{on_time}/{trials} trials disinfected within 60s "
                    f"(worst {worst:.0f}s), second pass idempotent: "
                    f"{idempotent}")


def test_criterion_6_migration_cuts_channel():
    report = run_scenario(load_scenario(_resolve_scenario("botnet_reactive")))
    totals = report["totals"]
    after = totals["deliveries_after_migration"]

    rng = random.Random(0xBEEF)
    cases = 1000
    holds = 0
    for _ in range(cases):
        prefix = rng.randint(24, 29)
        net = ipaddress.IPv4Network(f"10.{rng.randint(0, 255)}.0.0/{prefix}")
        hosts = list(net.hosts())
        n_peers = rng.randint(0, min(6, max(0, len(hosts) - 2)))
        peers = [str(a) for a in rng.sample(hosts[2:], n_peers)] \
            if len(hosts) > 2 else []
        n_dead = rng.randint(0, len(hosts) // 2)
        dead = [str(a) for a in rng.sample(hosts, n_dead)]
        env = create_environment(EnvironmentSpec(
            seed=rng.randint(0, 2**31), network=NetworkSpec(
                cidr=str(net), peers=peers, dead_addresses=dead)))
        active_before = set(env.scan_active_hosts())
        original = env.net.device_ip
        try:
            n_candidates = len(enumerate_candidates(env))
        except Exhausted:
            holds += 1
            continue
        try:
            result = migrate(env, rng)
        except Exhausted:
            holds += env.net.device_ip == original
            continue
        new = ipaddress.IPv4Address(result.new)
        if (new not in active_before and new in net.hosts()
                and result.attempts <= n_candidates):
            holds += 1

    ok = after == 0 and holds == cases
    _verdict(6, ok, f"deliveries after migration {after} (must be 0); "
                    f"invariants held in {holds}/{cases} random cases")


def test_criterion_7_mechanism_property_suites(tmp_path):
    # extension-map round trips on random trees
    rng = random.Random(0x5EED)
    trips = 500
    identical = 0
    for _ in range(trips):
        spec = EnvironmentSpec(seed=rng.randint(0, 2**31), files=[
            FileRootSpec(path="/t", count=rng.randint(1, 10),
                         size_bytes=10_000,
                         extensions=[".pdf", ".txt", ".db"],
                         subdirs=rng.randint(0, 3))])
        env = create_environment(spec)
        env.mkdir("/var")
        before = sorted(p for p, _ in env.iter_files("/t", raw=True))
        ext_map = shuffle_extensions(env, "/t", [".pdf", ".db"],
                                     seed=rng.randint(0, 2**31),
                                     store_path="/var/map.jsonl")
        restore_extensions(env, ext_map)
        identical += sorted(
            p for p, _ in env.iter_files("/t", raw=True)) == before

    # decoy space bound across random trap chases
    bound_runs = 25
    bound_held = 0
    for i in range(bound_runs):
        spec = EnvironmentSpec(seed=1000 + i, files=[
            FileRootSpec(path="/d", count=rng.randint(8, 40),
                         size_bytes=100_000, extensions=[".pdf"],
                         subdirs=rng.randint(0, 4))])
        env = create_environment(spec)
        actor = EncryptorActor("/d", [".pdf"],
                               rate_files_per_s=rng.choice([2.0, 4.0, 8.0]))
        actor.start(env, 0.0)
        handle = deploy_trap(env, "/d", TrapConfig())
        held = True
        for _ in range(120):
            env.tick(1.0)
            actor.step(env, env.now, 1.0)
            handle.poll(env, env.now)
            held &= handle.live_decoy_bytes() <= handle.space_bound()
        bound_held += held

    # proactive alarm count equals floor(T / interval)
    periodic_cases = 300
    periodic_exact = 0
    for _ in range(periodic_cases):
        if rng.random() < 0.5:
            interval = float(rng.randint(1, 300))
            horizon = float(rng.randint(1, 2000))
        else:
            interval = rng.uniform(0.5, 300.0)
            k = rng.randint(0, 50)
            horizon = interval * k + rng.uniform(0.05, 0.95) * interval
        engine = DecisionEngine(rules=[ProactiveRule(
            id="p", every_s=interval, mtds=["libraries"])])
        fired = engine.tick(horizon)
        periodic_exact += len(fired) == math.floor(horizon / interval)

    # model save/load prediction equality on 1000 probes per algorithm
    ds = generate_dataset(default_profiles(confusable=True), n_per_class=40,
                          seed=77)
    scaler = minmax_fit(ds)
    ds_scaled = scale_dataset(ds, scaler)
    probes = np.random.default_rng(123).uniform(
        -0.2, 1.2, size=(1000, N_FEATURES))
    tree_params = TreeParams(max_depth=10)
    models = {
        "tree": train_tree(ds_scaled, tree_params),
        "forest": train_forest(ds_scaled, n_trees=7,
                               params=ForestParams(tree=tree_params), seed=3),
        "knn": train_knn(ds_scaled, k=3),
    }
    io_equal = 0
    for name, model in models.items():
        path = tmp_path / f"{name}.mtdm"
        save_model(model, str(path))
        loaded = load_model(str(path))
        before = predict_batch(model, probes)
        after = predict_batch(loaded, probes)
        io_equal += (np.array_equal(before[0], after[0])
                     and np.array_equal(before[1], after[1]))

    # dataset and scaler exports import losslessly
    ds_path = tmp_path / "dataset.csv"
    save_dataset(ds, str(ds_path))
    ds_back = load_dataset(str(ds_path))
    x0, y0 = ds.as_arrays()
    x1, y1 = ds_back.as_arrays()
    sc_path = tmp_path / "scaler.txt"
    save_scaler(scaler, str(sc_path))
    sc_back = load_scaler(str(sc_path))
    lossless = (np.array_equal(x0, x1) and np.array_equal(y0, y1)
                and ds_back.classes == ds.classes
                and np.array_equal(scaler.mins, sc_back.mins)
                and np.array_equal(scaler.maxs, sc_back.maxs))

    ok = (identical == trips and bound_held == bound_runs
          and periodic_exact == periodic_cases and io_equal == 3
          and lossless)
    _verdict(7, ok, f"extension round trips {identical}/{trips}, "
                    f"decoy bound held {bound_held}/{bound_runs}, "
                    f"periodic counts exact {periodic_exact}/{periodic_cases}, "
                    f"model io equal {io_equal}/3, "
                    f"dataset+scaler lossless: {lossless}")


def test_criterion_8_simulate_is_deterministic(tmp_path):
    mismatched = []
    for name in bundled_scenarios():
        outs = []
        for run in range(2):
            out = tmp_path / f"{name}-{run}.json"
            assert main(["simulate", "--scenario", name,
                         "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        if outs[0] != outs[1]:
            mismatched.append(name)
    ok = not mismatched
    _verdict(8, ok, f"byte-identical reports for "
                    f"{len(bundled_scenarios()) - len(mismatched)}/"
                    f"{len(bundled_scenarios())} bundled scenarios"
                    + (f"; mismatched: {mismatched}" if mismatched else ""))
