"""Structured-config (TOML) parsing into typed specs for the environment,
scenarios, and the framework daemon/training entry points.

All validation failures raise ConfigError naming the offending key.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib

from .decision import ProactiveRule
from .enforcement import EnforcementPolicy, PolicyRule
from .environment import (
    EnvironmentSpec,
    FileRootSpec,
    NetworkSpec,
    ProcessSpec,
    RuntimeSpec,
)
from .errors import ConfigError
from .mechanisms import MECHANISM_IDS
from .mechanisms.file_format import DEFAULT_MAP_PATH
from .mechanisms.ransomware_trap import TrapConfig

__all__ = [
    "AdversarySpec", "DetectionSpec", "FileFormatSettings", "ScenarioSpec",
    "TrainSettings", "DaemonSettings", "FrameworkConfig",
    "load_toml", "environment_spec_from_dict", "load_environment_spec",
    "scenario_from_dict", "load_scenario",
    "framework_from_dict", "load_framework_config",
]

log = logging.getLogger(__name__)


def load_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from None


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return doc[key]


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

def environment_spec_from_dict(doc: dict, default_seed: int = 0) -> EnvironmentSpec:
    net_doc = doc.get("network", {})
    network = NetworkSpec(
        cidr=net_doc.get("cidr", "192.168.1.0/24"),
        gateway=net_doc.get("gateway"),
        device=net_doc.get("device"),
        peers=list(net_doc.get("peers", [])),
        dead_addresses=list(net_doc.get("dead_addresses", [])),
    )
    roots = []
    files_doc = doc.get("files", {})
    for i, root in enumerate(files_doc.get("roots", [])):
        roots.append(FileRootSpec(
            path=_require(root, "path", f"files.roots[{i}]"),
            count=int(root.get("count", 0)),
            size_bytes=int(root.get("size_bytes", 0)),
            extensions=list(root.get("extensions", [".dat"])),
            subdirs=int(root.get("subdirs", 0)),
        ))
    processes = []
    for i, proc in enumerate(doc.get("processes", [])):
        processes.append(ProcessSpec(
            name=_require(proc, "name", f"processes[{i}]"),
            cpu=float(proc.get("cpu", 1.0)),
            whitelisted=bool(proc.get("whitelisted", False)),
        ))
    runtime_doc = doc.get("runtime", {})
    runtime = RuntimeSpec(**{k: runtime_doc[k] for k in (
        "preload_path", "preload_content", "linker_path",
        "linker_ref", "linker_ref_offset") if k in runtime_doc})
    return EnvironmentSpec(
        seed=int(doc.get("seed", default_seed)),
        network=network,
        files=roots,
        processes=processes,
        runtime=runtime,
    )


def load_environment_spec(path: str | Path) -> EnvironmentSpec:
    return environment_spec_from_dict(load_toml(path))


# ---------------------------------------------------------------------------
# Scenario
# ---------------------------------------------------------------------------

@dataclass
class AdversarySpec:
    kind: str  # encryptor | exfiltrator | rootkit | botnet
    start_s: float = 0.0
    params: dict = field(default_factory=dict)


@dataclass
class DetectionSpec:
    mode: str = "none"  # reactive | scripted | none
    window_s: float = 5.0
    threshold: float = 0.5
    suppress_s: float = 30.0
    # scripted mode
    at_s: float = 0.0
    label: str = ""
    # reactive mode: either load a model from disk or train inline
    model_path: str | None = None
    scaler_path: str | None = None
    inline_n_per_class: int = 120
    inline_n_trees: int = 15
    inline_max_depth: int = 12


@dataclass
class FileFormatSettings:
    root: str = ""
    target_exts: list[str] = field(default_factory=list)
    store_path: str = DEFAULT_MAP_PATH
    restore_at_end: bool = False


@dataclass
class ScenarioSpec:
    name: str
    seed: int
    duration_s: float
    environment: EnvironmentSpec
    dt_s: float = 1.0
    adversaries: list[AdversarySpec] = field(default_factory=list)
    detection: DetectionSpec = field(default_factory=DetectionSpec)
    proactive: list[ProactiveRule] = field(default_factory=list)
    policy: EnforcementPolicy = field(default_factory=EnforcementPolicy)
    trap: TrapConfig = field(default_factory=TrapConfig)
    trap_start_dir: str | None = None
    file_format: FileFormatSettings = field(default_factory=FileFormatSettings)


_ADVERSARY_KINDS = {"encryptor", "exfiltrator", "rootkit", "botnet"}


def _adversary_from_dict(doc: dict, where: str) -> AdversarySpec:
    kind = _require(doc, "kind", where)
    if kind not in _ADVERSARY_KINDS:
        raise ConfigError(f"{where}: unknown adversary kind {kind!r}, "
                          f"expected one of {sorted(_ADVERSARY_KINDS)}")
    params = {k: v for k, v in doc.items() if k not in ("kind", "start_s", "at_s")}
    start = float(doc.get("start_s", doc.get("at_s", 0.0)))
    return AdversarySpec(kind=kind, start_s=start, params=params)


def _detection_from_dict(doc: dict) -> DetectionSpec:
    det = DetectionSpec(
        mode=doc.get("mode", "none"),
        window_s=float(doc.get("window_s", 5.0)),
        threshold=float(doc.get("threshold", 0.5)),
        suppress_s=float(doc.get("suppress_s", 30.0)),
        at_s=float(doc.get("at_s", 0.0)),
        label=doc.get("label", ""),
        model_path=doc.get("model_path"),
        scaler_path=doc.get("scaler_path"),
    )
    if det.mode not in ("reactive", "scripted", "none"):
        raise ConfigError(f"detection.mode {det.mode!r} not one of "
                          "reactive|scripted|none")
    if det.mode == "scripted" and not det.label:
        raise ConfigError("scripted detection requires a label")
    inline = doc.get("inline_model", {})
    det.inline_n_per_class = int(inline.get("n_per_class", det.inline_n_per_class))
    det.inline_n_trees = int(inline.get("n_trees", det.inline_n_trees))
    det.inline_max_depth = int(inline.get("max_depth", det.inline_max_depth))
    return det


def _proactive_from_list(docs: list[dict]) -> list[ProactiveRule]:
    rules = []
    for i, doc in enumerate(docs):
        rules.append(ProactiveRule(
            id=_require(doc, "id", f"proactive[{i}]"),
            every_s=doc.get("every_s"),
            on_action=doc.get("on_action"),
            mtds=list(doc.get("mtds", [])),
        ))
    return rules


def _policy_from_list(docs: list[dict]) -> EnforcementPolicy:
    rules = [PolicyRule(on=_require(doc, "on", f"policy[{i}]"),
                        deploy=list(doc.get("deploy", [])))
             for i, doc in enumerate(docs)]
    return EnforcementPolicy(rules=rules)


def _trap_from_dict(doc: dict) -> tuple[TrapConfig, str | None]:
    start_dir = doc.get("start_dir")
    kwargs = {}
    for key in ("dummy_files_per_dir", "dummy_file_size", "cpu_floor_percent",
                "open_files_per_minute_threshold", "poll_interval_s",
                "decoy_extension", "observation_window_s", "quiet_grace_s"):
        if key in doc:
            kwargs[key] = doc[key]
    if "whitelist" in doc:
        kwargs["whitelist"] = frozenset(doc["whitelist"])
    try:
        return TrapConfig(**kwargs), start_dir
    except ValueError as exc:
        raise ConfigError(f"trap: {exc}") from None


def _file_format_from_dict(doc: dict) -> FileFormatSettings:
    return FileFormatSettings(
        root=doc.get("root", ""),
        target_exts=list(doc.get("target_exts", [])),
        store_path=doc.get("store_path", DEFAULT_MAP_PATH),
        restore_at_end=bool(doc.get("restore_at_end", False)),
    )


def scenario_from_dict(doc: dict, name_hint: str = "scenario") -> ScenarioSpec:
    name = doc.get("name", name_hint)
    seed = int(doc.get("seed", 0))
    duration = float(_require(doc, "duration_s", name))
    if duration <= 0:
        raise ConfigError(f"{name}: duration_s must be > 0")
    env_doc = _require(doc, "environment", name)
    spec = ScenarioSpec(
        name=name,
        seed=seed,
        duration_s=duration,
        dt_s=float(doc.get("dt_s", 1.0)),
        environment=environment_spec_from_dict(env_doc, default_seed=seed),
        adversaries=[_adversary_from_dict(a, f"adversaries[{i}]")
                     for i, a in enumerate(doc.get("adversaries", []))],
        detection=_detection_from_dict(doc.get("detection", {})),
        proactive=_proactive_from_list(doc.get("proactive", [])),
        policy=_policy_from_list(doc.get("policy", [])),
        file_format=_file_format_from_dict(doc.get("file_format", {})),
    )
    spec.trap, spec.trap_start_dir = _trap_from_dict(doc.get("trap", {}))
    if spec.trap_start_dir is None and spec.environment.files:
        spec.trap_start_dir = spec.environment.files[0].path
    if not spec.file_format.root and spec.environment.files:
        spec.file_format.root = spec.environment.files[0].path
    spec.policy.validate(known_mechanisms=set(MECHANISM_IDS))
    return spec


def load_scenario(path: str | Path, seed_override: int | None = None) -> ScenarioSpec:
    doc = load_toml(path)
    if seed_override is not None:
        doc = dict(doc)
        doc["seed"] = seed_override
        env = dict(doc.get("environment", {}))
        env["seed"] = seed_override
        doc["environment"] = env
    return scenario_from_dict(doc, name_hint=Path(path).stem)


# ---------------------------------------------------------------------------
# Framework (train + daemon)
# ---------------------------------------------------------------------------

@dataclass
class TrainSettings:
    n_per_class: int = 2160
    confusable: bool = True
    train_fraction: float = 0.8
    algo: str = "forest"
    n_trees: int = 100
    max_depth: int = 16
    min_samples_leaf: int = 2
    k: int = 5


@dataclass
class DaemonSettings:
    duration_s: float = 300.0
    dt_s: float = 1.0
    journal_path: str | None = None


@dataclass
class FrameworkConfig:
    seed: int
    environment: EnvironmentSpec
    train: TrainSettings
    detection: DetectionSpec
    proactive: list[ProactiveRule]
    policy: EnforcementPolicy
    trap: TrapConfig
    trap_start_dir: str | None
    file_format: FileFormatSettings
    daemon: DaemonSettings
    infections: list[AdversarySpec]


def framework_from_dict(doc: dict) -> FrameworkConfig:
    seed = int(doc.get("seed", 0))
    train_doc = doc.get("train", {})
    dataset_doc = doc.get("dataset", {})
    train = TrainSettings(
        n_per_class=int(dataset_doc.get("n_per_class", 2160)),
        confusable=bool(dataset_doc.get("confusable", True)),
        train_fraction=float(dataset_doc.get("train_fraction", 0.8)),
        algo=train_doc.get("algo", "forest"),
        n_trees=int(train_doc.get("n_trees", 100)),
        max_depth=int(train_doc.get("max_depth", 16)),
        min_samples_leaf=int(train_doc.get("min_samples_leaf", 2)),
        k=int(train_doc.get("k", 5)),
    )
    if train.algo not in ("knn", "tree", "forest"):
        raise ConfigError(f"train.algo {train.algo!r} not one of knn|tree|forest")
    daemon_doc = doc.get("daemon", {})
    daemon = DaemonSettings(
        duration_s=float(daemon_doc.get("duration_s", 300.0)),
        dt_s=float(daemon_doc.get("dt_s", 1.0)),
        journal_path=daemon_doc.get("journal_path"),
    )
    infections = [_adversary_from_dict(a, f"daemon.infections[{i}]")
                  for i, a in enumerate(daemon_doc.get("infections", []))]
    detection = _detection_from_dict(doc.get("reactive", {}))
    if "reactive" in doc and "mode" not in doc["reactive"]:
        detection.mode = "reactive"
    config = FrameworkConfig(
        seed=seed,
        environment=environment_spec_from_dict(doc.get("environment", {}),
                                               default_seed=seed),
        train=train,
        detection=detection,
        proactive=_proactive_from_list(doc.get("proactive", [])),
        policy=_policy_from_list(doc.get("policy", [])),
        trap=TrapConfig(),
        trap_start_dir=None,
        file_format=_file_format_from_dict(doc.get("file_format", {})),
        daemon=daemon,
        infections=infections,
    )
    config.trap, config.trap_start_dir = _trap_from_dict(doc.get("trap", {}))
    if config.trap_start_dir is None and config.environment.files:
        config.trap_start_dir = config.environment.files[0].path
    if not config.file_format.root and config.environment.files:
        config.file_format.root = config.environment.files[0].path
    config.policy.validate(known_mechanisms=set(MECHANISM_IDS))
    return config


def load_framework_config(path: str | Path) -> FrameworkConfig:
    return framework_from_dict(load_toml(path))
