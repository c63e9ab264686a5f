"""File-format defense: replace genuine file extensions with fresh random
pseudo-extensions, keeping a persisted bidirectional map for restoration.

The map is written to its sidecar location before the first rename so that
an interrupted shuffle can always be undone. Pseudo-extensions are per-file,
eight lowercase alphanumerics, and are checked against both the already
issued pseudo set and every genuine extension in sight.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field

from ..environment import SandboxEnvironment
from ..errors import PathError
from .base import (
    STATUS_MITIGATED,
    STATUS_NOOP,
    Mechanism,
    MechanismContext,
    MtdOutcome,
)

__all__ = ["ExtensionMap", "MapEntry", "RestoreReport", "FileFormatMechanism",
           "shuffle_extensions", "restore_extensions", "load_extension_map",
           "DEFAULT_MAP_PATH"]

log = logging.getLogger(__name__)

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789"
PSEUDO_LENGTH = 8
MAP_FORMAT_VERSION = 1
DEFAULT_MAP_PATH = "/var/mtd/extension_map.jsonl"


@dataclass
class MapEntry:
    path: str          # original path, genuine extension included
    genuine_ext: str
    pseudo_ext: str

    @property
    def shuffled_path(self) -> str:
        return self.path[: -len(self.genuine_ext)] + "." + self.pseudo_ext


@dataclass
class ExtensionMap:
    entries: list[MapEntry] = field(default_factory=list)
    alphabet: str = ALPHABET
    pseudo_length: int = PSEUDO_LENGTH
    store_path: str = DEFAULT_MAP_PATH


@dataclass
class RestoreReport:
    restored: int = 0
    missing: list[str] = field(default_factory=list)


def _extension_of(name: str) -> str | None:
    if "." not in name:
        return None
    return "." + name.rsplit(".", 1)[1]


def _fresh_pseudo(rng: random.Random, taken: set[str]) -> str:
    while True:
        ext = "".join(rng.choice(ALPHABET) for _ in range(PSEUDO_LENGTH))
        if ext not in taken:
            return ext


def _persist_map(env: SandboxEnvironment, ext_map: ExtensionMap) -> None:
    lines = [json.dumps({"format": "extension_map",
                         "version": MAP_FORMAT_VERSION}, sort_keys=True)]
    for e in ext_map.entries:
        lines.append(json.dumps({"path": e.path, "genuine_ext": e.genuine_ext,
                                 "pseudo_ext": e.pseudo_ext}, sort_keys=True))
    env.write_file(ext_map.store_path, ("\n".join(lines) + "\n").encode())


def load_extension_map(env: SandboxEnvironment, store_path: str) -> ExtensionMap:
    data = env.read_file(store_path).data or b""
    lines = data.decode().splitlines()
    if not lines:
        raise PathError(f"empty extension map at {store_path!r}")
    header = json.loads(lines[0])
    if header.get("format") != "extension_map" or \
            header.get("version") != MAP_FORMAT_VERSION:
        raise PathError(f"unrecognized extension map header at {store_path!r}")
    entries = [MapEntry(**json.loads(line)) for line in lines[1:]]
    return ExtensionMap(entries=entries, store_path=store_path)


def shuffle_extensions(env: SandboxEnvironment, root: str,
                       target_exts: list[str], seed: int,
                       store_path: str = DEFAULT_MAP_PATH) -> ExtensionMap:
    """Rename every file under `root` whose extension is targeted to a fresh
    pseudo-extension. The complete map is persisted before any rename."""
    if not env.dir_exists(root):
        raise PathError(f"shuffle root missing: {root!r}")
    if not target_exts:
        raise PathError("target extension set is empty")
    root = root.rstrip("/")
    store_root = store_path.rsplit("/", 1)[0] or "/"
    if store_root == root or store_root.startswith(root + "/"):
        raise PathError(
            f"map sidecar {store_path!r} must live outside the protected root")
    targets = set(target_exts)
    rng = random.Random(seed)
    # genuine universe: targeted extensions plus everything visible in-tree
    taken = {ext.lstrip(".") for ext in targets}
    matched: list[tuple[str, str]] = []
    for path, _f in env.iter_files(root):
        ext = _extension_of(path.rsplit("/", 1)[1])
        if ext is None:
            continue
        taken.add(ext.lstrip("."))
        if ext in targets:
            matched.append((path, ext))
    ext_map = ExtensionMap(store_path=store_path)
    for path, ext in matched:
        pseudo = _fresh_pseudo(rng, taken)
        taken.add(pseudo)
        ext_map.entries.append(MapEntry(path=path, genuine_ext=ext, pseudo_ext=pseudo))
    # crash safety: map reaches the store before the first rename
    _persist_map(env, ext_map)
    for entry in ext_map.entries:
        new_name = entry.shuffled_path.rsplit("/", 1)[1]
        env.rename_file(entry.path, new_name)
    log.info("shuffled %d extensions under %s", len(ext_map.entries), root)
    return ext_map


def restore_extensions(env: SandboxEnvironment, ext_map: ExtensionMap) -> RestoreReport:
    """Undo a shuffle. Files deleted in the meantime are reported, not fatal.
    Clears the map (memory and store)."""
    report = RestoreReport()
    for entry in ext_map.entries:
        shuffled = entry.shuffled_path
        if not env.file_exists(shuffled):
            report.missing.append(entry.path)
            continue
        env.rename_file(shuffled, entry.path.rsplit("/", 1)[1])
        report.restored += 1
    ext_map.entries.clear()
    _persist_map(env, ext_map)
    return report


class FileFormatMechanism(Mechanism):
    id = "file_format"

    def __init__(self, root: str, target_exts: list[str], seed: int,
                 store_path: str = DEFAULT_MAP_PATH):
        self._root = root
        self._target_exts = list(target_exts)
        self._seed = seed
        self._store_path = store_path
        self._started_at = 0.0
        self.ext_map: ExtensionMap | None = None

    def start(self, env: SandboxEnvironment, ctx: MechanismContext) -> None:
        self._started_at = ctx.now
        self.ext_map = shuffle_extensions(env, self._root, self._target_exts,
                                          self._seed, self._store_path)

    def done(self, env: SandboxEnvironment, now: float) -> bool:
        return True

    def finish(self, env: SandboxEnvironment, now: float) -> MtdOutcome:
        renamed = len(self.ext_map.entries) if self.ext_map else 0
        return MtdOutcome(
            mechanism=self.id,
            start=self._started_at,
            end=now,
            status=STATUS_MITIGATED if renamed else STATUS_NOOP,
            metrics={"files_renamed": renamed},
        )
