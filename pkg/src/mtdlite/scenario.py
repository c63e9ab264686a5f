"""Scenario runner: drives the sandbox clock, adversaries, detection, and
enforcement in a fixed per-tick order, then emits a deterministic report.

Tick order (one iteration per dt):
  1. advance the clock
  2. start/step due adversaries (declaration order)
  3. close any telemetry windows that ended at or before now; classify them
     (reactive mode) or fire the scripted alarm
  4. run proactive decision rules
  5. step the enforcer (mechanism polling, outcome collection)

Everything downstream of the seed is deterministic, so two runs of the same
scenario spec produce byte-identical reports.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .adversary import (
    BotnetActor,
    EncryptorActor,
    ExfiltratorActor,
    RootkitActor,
)
from .classifier import train_forest, ForestParams, TreeParams
from .config import AdversarySpec, ScenarioSpec
from .decision import Alarm, DecisionEngine, ORIGIN_REACTIVE
from .enforcement import (
    Enforcer,
    EnforcementPolicy,
    MATCH_PROACTIVE,
    PolicyRule,
)
from .environment import SandboxEnvironment, create_environment
from .errors import ConfigError
from .labels import behavior_of
from .mechanisms import (
    FileFormatMechanism,
    IpShuffleMechanism,
    LibrariesMechanism,
    TrapMechanism,
)
from .mechanisms.file_format import load_extension_map, restore_extensions
from .mechanisms.libraries import (
    capture_baseline,
    linker_tampered,
    preload_tampered,
)
from .model_io import load_model
from .profiles import default_profiles
from .telemetry import (
    SwitchableSource,
    class_seed,
    collect_window,
    generate_dataset,
    load_scaler,
    minmax_fit,
    scale_dataset,
    split,
)

__all__ = ["ScenarioRunner", "run_scenario", "save_report"]

log = logging.getLogger(__name__)

_EPS = 1e-9


def _make_actor(spec: AdversarySpec, default_root: str | None):
    p = spec.params
    if spec.kind == "encryptor":
        return EncryptorActor(
            root=p.get("root", default_root or "/data"),
            target_exts=list(p.get("target_exts", [".pdf"])),
            rate_files_per_s=float(p.get("rate_files_per_s", 4.0)),
            cpu_percent=float(p.get("cpu_percent", 90.0)),
            name=p.get("name", "encryptor"),
        )
    if spec.kind == "exfiltrator":
        return ExfiltratorActor(
            root=p.get("root", default_root or "/data"),
            target_exts=list(p.get("target_exts", [".pdf"])),
            rate_bytes_per_s=float(p.get("rate_bytes_per_s", 1_000_000.0)),
            cpu_percent=float(p.get("cpu_percent", 35.0)),
            name=p.get("name", "exfiltrator"),
        )
    if spec.kind == "rootkit":
        return RootkitActor(
            artifact_dir=p.get("artifact_dir", "/usr/lib/.rk"),
            name=p.get("name", "rootkit"),
        )
    if spec.kind == "botnet":
        return BotnetActor(
            c2_address=p.get("c2", "203.0.113.7"),
            beacon_interval_s=float(p.get("beacon_interval_s", 2.0)),
            name=p.get("name", "botnet"),
        )
    raise ConfigError(f"unknown adversary kind {spec.kind!r}")


@dataclass
class _ActorRecord:
    spec: AdversarySpec
    actor: object
    started: bool = False
    started_at: float = 0.0


@dataclass
class _Watch:
    """Derived observations kept outside the report until the end."""
    files_at_risk: int = 0
    bytes_at_risk: int = 0
    genuine_names: list[str] = field(default_factory=list)
    rootkit_disinfected_at: float | None = None
    restore_report: dict | None = None


class ScenarioRunner:
    def __init__(self, spec: ScenarioSpec, journal_path: str | Path | None = None):
        self.spec = spec
        self.env: SandboxEnvironment = create_environment(spec.environment)
        self.start_digest = self.env.state_digest()
        self.baseline = capture_baseline(self.env)
        self.actors = [_ActorRecord(a, _make_actor(a, spec.file_format.root or None))
                       for a in spec.adversaries]
        self.created: dict[str, list] = {}
        self.alarms: list[Alarm] = []
        self.watch = _Watch()
        self._scripted_fired = False

        store_parent = spec.file_format.store_path.rsplit("/", 1)[0]
        if store_parent:
            self.env.mkdir(store_parent)

        self.engine = self._build_engine()
        self.enforcer = Enforcer(self.env, self._effective_policy(),
                                 self._build_factories(),
                                 journal_path=str(journal_path) if journal_path
                                 else None)
        self._source = SwitchableSource(
            default_profiles(confusable=True),
            seed=class_seed(spec.seed, "scenario-telemetry"),
            initial="normal",
        )
        self._snapshot_at_risk()

    # -- setup ---------------------------------------------------------------

    def _build_engine(self) -> DecisionEngine:
        det = self.spec.detection
        model = scaler = None
        if det.mode == "reactive":
            if det.model_path and det.scaler_path:
                model = load_model(det.model_path)
                scaler = load_scaler(det.scaler_path)
            else:
                model, scaler = self._train_inline()
        return DecisionEngine(
            rules=self.spec.proactive,
            model=model,
            scaler=scaler,
            threshold=det.threshold,
            suppress_s=det.suppress_s,
            window_s=det.window_s,
        )

    def _train_inline(self):
        """Small forest trained from the synthetic profiles at scenario setup.
        Sized for speed; the full-sized model belongs to the train command."""
        det = self.spec.detection
        ds = generate_dataset(default_profiles(confusable=True),
                              n_per_class=det.inline_n_per_class,
                              seed=self.spec.seed)
        train, _ = split(ds, train_fraction=0.8, seed=self.spec.seed)
        scaler = minmax_fit(train)
        model = train_forest(
            scale_dataset(train, scaler),
            n_trees=det.inline_n_trees,
            params=ForestParams(tree=TreeParams(max_depth=det.inline_max_depth)),
            seed=self.spec.seed,
        )
        log.info("inline reactive model: forest of %d trees on %d vectors",
                 det.inline_n_trees, len(train))
        return model, scaler

    def _effective_policy(self) -> EnforcementPolicy:
        policy = self.spec.policy
        if self.spec.proactive and policy.rule_for(MATCH_PROACTIVE) is None:
            mtds: list[str] = []
            for rule in self.spec.proactive:
                for m in rule.mtds:
                    if m not in mtds:
                        mtds.append(m)
            policy = EnforcementPolicy(
                rules=list(policy.rules) + [PolicyRule(on=MATCH_PROACTIVE,
                                                       deploy=mtds)])
        return policy

    def _build_factories(self) -> dict:
        spec = self.spec

        def track(mechanism):
            self.created.setdefault(mechanism.id, []).append(mechanism)
            return mechanism

        def trap():
            if not spec.trap_start_dir:
                raise ConfigError("ransomware_trap needs a start directory")
            return track(TrapMechanism(spec.trap_start_dir, spec.trap))

        def file_format():
            ff = spec.file_format
            if not ff.root or not ff.target_exts:
                raise ConfigError("file_format needs a root and target_exts")
            return track(FileFormatMechanism(ff.root, ff.target_exts,
                                             seed=spec.seed,
                                             store_path=ff.store_path))

        return {
            TrapMechanism.id: trap,
            FileFormatMechanism.id: file_format,
            LibrariesMechanism.id:
                lambda: track(LibrariesMechanism(self.baseline)),
            IpShuffleMechanism.id:
                lambda: track(IpShuffleMechanism(rng=self.env.rng)),
        }

    def _snapshot_at_risk(self) -> None:
        """Record what the adversaries could reach before anything runs."""
        ff = self.spec.file_format
        exts = {e if e.startswith(".") else "." + e for e in ff.target_exts}
        roots = {ff.root} if ff.root else set()
        for rec in self.actors:
            root = rec.spec.params.get("root")
            if root:
                roots.add(root)
            for e in rec.spec.params.get("target_exts", []):
                exts.add(e if e.startswith(".") else "." + e)
        names: list[str] = []
        files = bytes_ = 0
        for root in sorted(roots):
            if not self.env.dir_exists(root):
                continue
            for path, f in self.env.iter_files(root, raw=True):
                names.append(path)
                if not exts or any(path.endswith(e) for e in exts):
                    files += 1
                    bytes_ += f.size
        self.watch.files_at_risk = files
        self.watch.bytes_at_risk = bytes_
        self.watch.genuine_names = sorted(names)

    # -- main loop -----------------------------------------------------------

    def run(self, should_stop=None) -> dict:
        spec = self.spec
        window_s = spec.detection.window_s
        next_window = window_s
        self._advance_actors(0.0, 0.0)
        stopped_early = False
        while self.env.now + spec.dt_s <= spec.duration_s + _EPS:
            if should_stop is not None and should_stop():
                stopped_early = True
                break
            now = self.env.tick(spec.dt_s)
            self._advance_actors(now, spec.dt_s)
            if spec.detection.mode == "reactive":
                while next_window <= now + _EPS:
                    self._close_window(next_window, window_s)
                    next_window += window_s
            elif spec.detection.mode == "scripted":
                self._maybe_scripted(now)
            for alarm in self.engine.tick(now):
                self._handle(alarm)
            self.enforcer.step(now)
            self._watch_rootkit(now)
        end = self.env.now
        self.enforcer.shutdown(end)
        if spec.file_format.restore_at_end:
            self._restore_extensions()
        return self._report(end, stopped_early)

    def _advance_actors(self, now: float, dt: float) -> None:
        for rec in self.actors:
            if not rec.started and rec.spec.start_s <= now + _EPS:
                rec.actor.start(self.env, now)
                rec.started = True
                rec.started_at = now
                log.info("adversary %s started at t=%.1f", rec.spec.kind, now)
            if rec.started and not rec.actor.finished and dt > 0:
                rec.actor.step(self.env, now, dt)

    def _current_label(self) -> str:
        label = "normal"
        for rec in self.actors:
            if rec.started and rec.actor.emitting(self.env):
                label = rec.actor.telemetry_label
        return label

    def _close_window(self, window_end: float, window_s: float) -> None:
        self._source.set_profile(self._current_label())
        vector = collect_window(self._source, window_s)
        alarm = self.engine.reactive_step(vector)
        if alarm is not None:
            self._handle(alarm)

    def _maybe_scripted(self, now: float) -> None:
        det = self.spec.detection
        if self._scripted_fired or now + _EPS < det.at_s:
            return
        self._scripted_fired = True
        self._handle(Alarm(
            origin=ORIGIN_REACTIVE,
            timestamp=det.at_s,
            behavior=behavior_of(det.label),
            sample_label=det.label,
            confidence=1.0,
        ))

    def _handle(self, alarm: Alarm) -> None:
        self.alarms.append(alarm)
        self.enforcer.handle_alarm(alarm)

    def _watch_rootkit(self, now: float) -> None:
        if self.watch.rootkit_disinfected_at is not None:
            return
        injected = [r for r in self.actors
                    if isinstance(r.actor, RootkitActor) and r.actor.finished]
        if not injected:
            return
        if not preload_tampered(self.env, self.baseline) \
                and not linker_tampered(self.env, self.baseline):
            self.watch.rootkit_disinfected_at = now

    def _restore_extensions(self) -> None:
        ff = self.spec.file_format
        instances = self.created.get(FileFormatMechanism.id, [])
        ext_map = instances[-1].ext_map if instances else None
        if ext_map is None and self.env.file_exists(ff.store_path):
            ext_map = load_extension_map(self.env, ff.store_path)
        if ext_map is None or not ext_map.entries:
            return
        report = restore_extensions(self.env, ext_map)
        names = sorted(p for p, _ in self.env.iter_files(ff.root, raw=True)) \
            if self.env.dir_exists(ff.root) else []
        self.watch.restore_report = {
            "files_restored": report.restored,
            "files_missing": len(report.missing),
            "name_set_identical": names == self.watch.genuine_names,
        }

    # -- report --------------------------------------------------------------

    def _decoy_paths(self) -> set[str]:
        paths: set[str] = set()
        for mech in self.created.get(TrapMechanism.id, []):
            if mech._handle is not None:
                paths |= mech.handle.decoy_paths
        return paths

    def _report(self, end: float, stopped_early: bool) -> dict:
        spec = self.spec
        outcomes = [o.to_dict() for o in self.enforcer.outcomes()]
        phases = []
        for rec in self.actors:
            if not rec.started:
                continue
            stats = asdict(rec.actor.stats)
            end_s = end
            if isinstance(rec.actor, (EncryptorActor, ExfiltratorActor)):
                if rec.actor.finished:
                    end_s = rec.started_at + rec.actor.stats.runtime_s
            elif isinstance(rec.actor, RootkitActor) and rec.actor.finished:
                end_s = rec.actor.stats.injected_at
            phases.append({"kind": "adversary", "name": rec.spec.kind,
                           "start_s": rec.started_at, "end_s": end_s,
                           "stats": stats})
        for o in outcomes:
            phases.append({"kind": "mtd", "name": o["mechanism"],
                           "start_s": o["start"], "end_s": o["end"],
                           "status": o["status"]})
        report = {
            "scenario": spec.name,
            "seed": spec.seed,
            "duration_s": spec.duration_s,
            "dt_s": spec.dt_s,
            "stopped_early": stopped_early,
            "environment": {
                "start_digest": self.start_digest,
                "end_digest": self.env.state_digest(),
                "files_end": self.env.file_count(),
                "device_ip_end": str(self.env.net.device_ip),
            },
            "alarms": [a.to_dict() for a in self.alarms],
            "outcomes": outcomes,
            "phases": phases,
            "totals": self._totals(end),
        }
        return report

    def _totals(self, end: float) -> dict:
        totals: dict = {"alarms": len(self.alarms)}
        kinds = {r.spec.kind for r in self.actors}
        audit = self.env.events_since(0)
        if "encryptor" in kinds:
            totals.update(self._encryptor_totals(audit))
        if "exfiltrator" in kinds:
            totals.update(self._exfiltrator_totals())
        if "rootkit" in kinds:
            totals.update(self._rootkit_totals())
        if "botnet" in kinds:
            totals.update(self._botnet_totals(audit))
        return totals

    def _encryptor_totals(self, audit) -> dict:
        decoys = self._decoy_paths()
        real = [e for e in audit if e.kind == "file_encrypted"
                and e.path not in decoys]
        decoy_hits = sum(1 for e in audit if e.kind == "file_encrypted"
                         and e.path in decoys)
        real_bytes = 0
        for e in real:
            if self.env.file_exists(e.path):
                real_bytes += self.env.read_file(e.path).size
        actors = [r.actor for r in self.actors
                  if isinstance(r.actor, EncryptorActor)]
        kill_times = [e.time for e in audit if e.kind == "proc_killed"
                      and e.pid in {a.pid for a in actors}]
        at_risk = self.watch.files_at_risk
        out = {
            "files_at_risk": at_risk,
            "real_files_encrypted": len(real),
            "real_bytes_encrypted": real_bytes,
            "decoy_files_encrypted": decoy_hits,
            "encryptor_killed": any(a.stats.killed for a in actors),
        }
        if at_risk:
            out["real_loss_fraction"] = round(len(real) / at_risk, 6)
        if kill_times:
            out["encryptor_killed_at_s"] = min(kill_times)
        return out

    def _exfiltrator_totals(self) -> dict:
        actors = [r.actor for r in self.actors
                  if isinstance(r.actor, ExfiltratorActor)]
        leaked = sum(a.stats.bytes_leaked for a in actors)
        out = {
            "bytes_at_risk": self.watch.bytes_at_risk,
            "bytes_leaked": leaked,
            "files_touched": sum(a.stats.files_touched for a in actors),
        }
        if self.watch.bytes_at_risk:
            out["leak_fraction"] = round(leaked / self.watch.bytes_at_risk, 6)
        if self.watch.restore_report is not None:
            out["restore"] = self.watch.restore_report
        return out

    def _rootkit_totals(self) -> dict:
        actors = [r.actor for r in self.actors
                  if isinstance(r.actor, RootkitActor)]
        injected = [a.stats.injected_at for a in actors if a.finished]
        out = {
            "preload_tampered_at_end": preload_tampered(self.env, self.baseline),
            "linker_tampered_at_end": linker_tampered(self.env, self.baseline),
        }
        if injected:
            out["injected_at_s"] = min(injected)
            if self.watch.rootkit_disinfected_at is not None:
                out["disinfected_at_s"] = self.watch.rootkit_disinfected_at
                out["disinfect_latency_s"] = round(
                    self.watch.rootkit_disinfected_at - min(injected), 6)
        return out

    def _botnet_totals(self, audit) -> dict:
        actors = [r.actor for r in self.actors
                  if isinstance(r.actor, BotnetActor)]
        migrations = [e.time for e in audit if e.kind == "ip_assigned"]
        beacons = [e for e in audit if e.kind == "beacon"]
        migrated_at = min(migrations) if migrations else None
        after = sum(1 for e in beacons
                    if migrated_at is not None and e.time > migrated_at
                    and e.detail and e.detail.startswith("delivered"))
        out = {
            "beacons_sent": sum(a.stats.sent for a in actors),
            "beacons_delivered": sum(a.stats.delivered for a in actors),
            "deliveries_after_migration": after,
        }
        if migrated_at is not None:
            out["migrated_at_s"] = migrated_at
        return out


def run_scenario(spec: ScenarioSpec,
                 journal_path: str | Path | None = None) -> dict:
    return ScenarioRunner(spec, journal_path=journal_path).run()


def save_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
