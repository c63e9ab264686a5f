"""Ransomware decoy trap: a honeypot directory chain that stalls recursive
encryptors, reclaims encrypted decoys, and kills the encrypting process.

Suspect selection: CPU at or above a floor, not whitelisted, and more
open-file events in the rolling minute than the configured threshold. A kill
happens only after one full observation window of continuous suspicion.

Decoy placement keeps at most one prepared decoy directory ahead of the
encryption front: when encryption begins inside the prepared directory (or
moves elsewhere), a fresh decoy directory is chained into the newly active
one. Decoy files are self-identifying via a magic byte prefix so that the
trap can never delete a real file.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..environment import ProcessRecord, SandboxEnvironment
from ..errors import NoSuchProcess, PathError, RefusedWhitelisted
from .base import (
    STATUS_MITIGATED,
    STATUS_NOOP,
    Mechanism,
    MechanismContext,
    MtdOutcome,
)

__all__ = ["DECOY_MAGIC", "TrapConfig", "TrapHandle", "TrapMechanism",
           "deploy_trap", "identify_encryptor"]

log = logging.getLogger(__name__)

DECOY_MAGIC = b"MTDDECOY"


@dataclass
class TrapConfig:
    dummy_files_per_dir: int = 20
    dummy_file_size: int = 65536
    cpu_floor_percent: float = 10.0
    open_files_per_minute_threshold: int = 60
    whitelist: frozenset[str] = frozenset()
    poll_interval_s: float = 1.0
    # extension given to decoys; None mirrors the most common extension
    # under the protected directory
    decoy_extension: str | None = None
    observation_window_s: float = 60.0
    quiet_grace_s: float = 5.0

    def __post_init__(self):
        self.whitelist = frozenset(self.whitelist)
        for name in ("dummy_files_per_dir", "dummy_file_size",
                     "cpu_floor_percent", "open_files_per_minute_threshold",
                     "poll_interval_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"trap config {name} must be > 0")


def identify_encryptor(processes: list[ProcessRecord], config: TrapConfig,
                       window_s: float = 60.0) -> list[int]:
    """Suspect pids, ascending. `window_s` documents the rolling window the
    snapshot's open-file counts were computed over."""
    suspects = []
    for proc in processes:
        if not proc.alive:
            continue
        if proc.cpu_percent < config.cpu_floor_percent:
            continue
        if proc.name in config.whitelist:
            continue
        if proc.files_opened_last_minute > config.open_files_per_minute_threshold:
            suspects.append(proc.pid)
    return sorted(suspects)


@dataclass
class TrapState:
    prepared_dir: str | None = None
    decoys_created: int = 0
    decoys_deleted: int = 0
    decoys_reclaimed: int = 0
    suspects: dict[int, float] = field(default_factory=dict)
    kills: list[int] = field(default_factory=list)


class TrapHandle:
    def __init__(self, env: SandboxEnvironment, start_dir: str, config: TrapConfig):
        if not env.dir_exists(start_dir):
            raise PathError(f"trap start directory missing: {start_dir!r}")
        self.start_dir = start_dir.rstrip("/")
        self.config = config
        self.state = TrapState()
        self.decoy_paths: set[str] = set()
        self.decoy_dirs: list[str] = []
        self._begun_dirs: set[str] = set()
        self._active_dir: str | None = None
        self._live_decoys: dict[str, int] = {}  # path -> size
        self._deploy_time = env.now
        self._last_poll: float | None = None
        self._last_event_seq = 0
        self._last_encryption_t: float | None = None
        self._dir_counter = 0
        self._ext = config.decoy_extension or self._common_extension(env)

    # -- observation --------------------------------------------------------

    def _common_extension(self, env: SandboxEnvironment) -> str:
        counts: dict[str, int] = {}
        for path, _f in env.iter_files(self.start_dir):
            name = path.rsplit("/", 1)[1]
            if "." in name:
                ext = "." + name.rsplit(".", 1)[1]
                counts[ext] = counts.get(ext, 0) + 1
        if not counts:
            return ".dat"
        return min(counts, key=lambda e: (-counts[e], e))

    def _consume_events(self, env: SandboxEnvironment) -> list[str]:
        """Digest new audit events; returns newly encrypted decoy paths."""
        encrypted_decoys = []
        for ev in env.events_since(self._last_event_seq):
            self._last_event_seq = ev.seq + 1
            if ev.kind != "file_encrypted" or ev.path is None:
                continue
            parent = ev.path.rsplit("/", 1)[0]
            self._begun_dirs.add(parent)
            self._active_dir = parent
            self._last_encryption_t = ev.time
            if ev.path in self._live_decoys:
                encrypted_decoys.append(ev.path)
        return encrypted_decoys

    # -- decoy management ----------------------------------------------------

    def _make_decoy_dir(self, env: SandboxEnvironment, parent: str) -> None:
        self._dir_counter += 1
        path = f"{parent}/backup_{self._dir_counter:03d}"
        env.mkdir(path)
        for i in range(self.config.dummy_files_per_dir):
            body = DECOY_MAGIC + env.rng.randbytes(
                max(0, self.config.dummy_file_size - len(DECOY_MAGIC)))
            fpath = f"{path}/decoy_{i:03d}{self._ext}"
            env.create_file(fpath, data=body)
            self.decoy_paths.add(fpath)
            self._live_decoys[fpath] = len(body)
            self.state.decoys_created += 1
        self.decoy_dirs.append(path)
        self.state.prepared_dir = path

    def _reclaim_prepared(self, env: SandboxEnvironment) -> None:
        """Remove untouched decoys from a mispositioned prepared directory."""
        prepared = self.state.prepared_dir
        if prepared is None or prepared in self._begun_dirs:
            return
        _dirs, files = env.list_dir(prepared, raw=True)
        for fpath in files:
            if fpath in self._live_decoys:
                env.delete_file(fpath)
                del self._live_decoys[fpath]
                self.state.decoys_reclaimed += 1

    def _delete_encrypted(self, env: SandboxEnvironment, paths: list[str]) -> None:
        for fpath in paths:
            f = env.read_file(fpath)
            if f.data is None or not f.data.startswith(DECOY_MAGIC) or not f.encrypted:
                continue
            env.delete_file(fpath)
            del self._live_decoys[fpath]
            self.state.decoys_deleted += 1

    def _place(self, env: SandboxEnvironment) -> None:
        prepared = self.state.prepared_dir
        if self._active_dir is None:
            # idle: one decoy directory inside a random existing subdirectory
            if prepared is None:
                dirs, _files = env.list_dir(self.start_dir)
                parent = env.rng.choice(sorted(dirs)) if dirs else self.start_dir
                self._make_decoy_dir(env, parent)
            return
        well_placed = (prepared is not None
                       and prepared not in self._begun_dirs
                       and prepared.rsplit("/", 1)[0] == self._active_dir)
        if well_placed:
            return
        self._reclaim_prepared(env)
        self._make_decoy_dir(env, self._active_dir)

    # -- process monitoring ---------------------------------------------------

    def _monitor(self, env: SandboxEnvironment, now: float) -> None:
        current = set(identify_encryptor(env.list_processes(), self.config))
        for pid in list(self.state.suspects):
            if pid not in current:
                del self.state.suspects[pid]
        for pid in sorted(current):
            self.state.suspects.setdefault(pid, now)
        for pid, first_seen in sorted(self.state.suspects.items()):
            if now - first_seen >= self.config.observation_window_s:
                try:
                    result = env.kill_process(pid)
                except (NoSuchProcess, RefusedWhitelisted) as exc:
                    log.warning("trap kill of pid %d refused: %s", pid, exc)
                    continue
                self.state.kills.append(pid)
                del self.state.suspects[pid]
                log.info("trap killed pid %d (%s) at t=%.1f", pid, result.name, now)

    # -- loop ------------------------------------------------------------------

    def poll(self, env: SandboxEnvironment, now: float) -> None:
        if self._last_poll is not None and \
                now - self._last_poll < self.config.poll_interval_s:
            return
        self._last_poll = now
        encrypted = self._consume_events(env)
        self._delete_encrypted(env, encrypted)
        self._place(env)
        self._monitor(env, now)

    def live_decoy_bytes(self) -> int:
        return sum(self._live_decoys.values())

    def space_bound(self) -> int:
        return 2 * self.config.dummy_files_per_dir * self.config.dummy_file_size

    def quiet(self, now: float) -> bool:
        if self.state.suspects:
            return False
        if self._last_encryption_t is None:
            return True
        return now - self._last_encryption_t >= self.config.quiet_grace_s

    def stats(self) -> dict[str, int]:
        return {
            "decoys_created": self.state.decoys_created,
            "decoys_deleted": self.state.decoys_deleted,
            "decoys_reclaimed": self.state.decoys_reclaimed,
            "kills": len(self.state.kills),
            "live_decoy_bytes": self.live_decoy_bytes(),
        }


def deploy_trap(env: SandboxEnvironment, start_dir: str,
                config: TrapConfig | None = None) -> TrapHandle:
    """Activate the trap loop on `start_dir`; the first poll runs
    immediately."""
    handle = TrapHandle(env, start_dir, config or TrapConfig())
    handle.poll(env, env.now)
    return handle


class TrapMechanism(Mechanism):
    id = "ransomware_trap"

    def __init__(self, start_dir: str, config: TrapConfig | None = None):
        self._start_dir = start_dir
        self._config = config or TrapConfig()
        self._handle: TrapHandle | None = None
        self._started_at = 0.0

    @property
    def handle(self) -> TrapHandle:
        if self._handle is None:
            raise RuntimeError("trap not started")
        return self._handle

    def start(self, env: SandboxEnvironment, ctx: MechanismContext) -> None:
        self._started_at = ctx.now
        self._handle = deploy_trap(env, self._start_dir, self._config)

    def step(self, env: SandboxEnvironment, now: float) -> None:
        self.handle.poll(env, now)

    def done(self, env: SandboxEnvironment, now: float) -> bool:
        h = self.handle
        return bool(h.state.kills) and h.quiet(now)

    def finish(self, env: SandboxEnvironment, now: float) -> MtdOutcome:
        h = self.handle
        mitigated = bool(h.state.kills) or h.state.decoys_deleted > 0
        return MtdOutcome(
            mechanism=self.id,
            start=self._started_at,
            end=now,
            status=STATUS_MITIGATED if mitigated else STATUS_NOOP,
            metrics={
                "decoys_created": h.state.decoys_created,
                "decoys_deleted": h.state.decoys_deleted,
                "decoys_reclaimed": h.state.decoys_reclaimed,
                "processes_killed": len(h.state.kills),
            },
        )
