"""Deterministic emulators of the four hostile behaviors driving scenarios:
a recursive extension-targeting encryptor, an extension-targeting
exfiltrator, a preload-tampering rootkit, and a beaconing botnet.

Actors advance on the scenario scheduler's tick; rates are enforced through
budget accumulators so fractional-per-tick rates stay exact over time.
"""

from __future__ import annotations

import ipaddress
import logging
from collections import deque
from dataclasses import dataclass, field

from .environment import SandboxEnvironment
from .errors import PathError

__all__ = [
    "EncryptorStats", "LeakStats", "TamperStats", "BeaconStats",
    "EncryptorActor", "ExfiltratorActor", "RootkitActor", "BotnetActor",
    "run_encryptor", "run_exfiltrator", "run_rootkit", "run_botnet",
]

log = logging.getLogger(__name__)


@dataclass
class EncryptorStats:
    files_encrypted: int = 0
    bytes_encrypted: int = 0
    runtime_s: float = 0.0
    killed: bool = False


@dataclass
class LeakStats:
    bytes_leaked: int = 0
    files_touched: int = 0
    runtime_s: float = 0.0


@dataclass
class TamperStats:
    injected_at: float = 0.0
    preload_tampered: bool = False
    linker_tampered: bool = False
    artifacts: list[str] = field(default_factory=list)


@dataclass
class BeaconStats:
    sent: int = 0
    delivered: int = 0


def _ext_of(path: str) -> str | None:
    name = path.rsplit("/", 1)[1]
    if "." not in name:
        return None
    return "." + name.rsplit(".", 1)[1]


class _TreeWalker:
    """Depth-first traversal that snapshots a directory's files on entry and
    lists its subdirectories only after the files are exhausted, so content
    added mid-visit is skipped but new subdirectories are still found."""

    def __init__(self, root: str):
        self._stack: list[str] = [root.rstrip("/") or "/"]
        self._current: str | None = None
        self._queue: deque[str] = deque()
        self._visited: set[str] = set()

    def next_file(self, env: SandboxEnvironment) -> str | None:
        while not self._queue:
            if self._current is not None:
                dirs, _ = env.list_dir(self._current)
                for d in reversed(dirs):
                    if d not in self._visited:
                        self._stack.append(d)
                self._current = None
            if not self._stack:
                return None
            d = self._stack.pop()
            if d in self._visited:
                continue
            self._visited.add(d)
            self._current = d
            _, files = env.list_dir(d)
            self._queue = deque(files)
        return self._queue.popleft()


class EncryptorActor:
    """Recursive encryptor: encrypts files matching its target extensions at
    a fixed rate, registering high CPU and a high open-file rate."""

    telemetry_label = "ransomware_poc"

    def __init__(self, root: str, target_exts: list[str],
                 rate_files_per_s: float = 4.0, cpu_percent: float = 90.0,
                 name: str = "encryptor"):
        self.root = root
        self.targets = set(target_exts)
        self.rate = rate_files_per_s
        self.cpu = cpu_percent
        self.name = name
        self.stats = EncryptorStats()
        self.pid: int | None = None
        self._walker: _TreeWalker | None = None
        self._budget = 0.0
        self._exhausted = False
        self._started_at = 0.0

    def start(self, env: SandboxEnvironment, now: float) -> None:
        if not env.dir_exists(self.root):
            raise PathError(f"encryptor root missing: {self.root!r}")
        self.pid = env.spawn_process(self.name, self.cpu)
        self._walker = _TreeWalker(self.root)
        self._started_at = now

    @property
    def finished(self) -> bool:
        return self._exhausted or self.stats.killed

    def emitting(self, env: SandboxEnvironment) -> bool:
        """Whether this actor currently drives the host's telemetry."""
        return (self.pid is not None and env.process_alive(self.pid)
                and not self.finished)

    def step(self, env: SandboxEnvironment, now: float, dt: float) -> None:
        if self.finished or self.pid is None:
            return
        if not env.process_alive(self.pid):
            self.stats.killed = True
            self.stats.runtime_s = now - self._started_at
            return
        self._budget += self.rate * dt
        while self._budget >= 1.0:
            path = self._walker.next_file(env)
            if path is None:
                self._exhausted = True
                self.stats.runtime_s = now - self._started_at
                return
            if _ext_of(path) not in self.targets:
                continue
            if not env.file_exists(path):
                continue
            f = env.read_file(path)
            if f.encrypted:
                continue
            env.record_file_open(self.pid, path)
            env.encrypt_file(path, pid=self.pid)
            self.stats.files_encrypted += 1
            self.stats.bytes_encrypted += f.size
            self._budget -= 1.0
        self.stats.runtime_s = now - self._started_at


class ExfiltratorActor:
    """Streams bytes of extension-matching files to a sink at a fixed rate.
    Selection is by current name, so renamed files vanish from its view."""

    telemetry_label = "thetick"

    def __init__(self, root: str, target_exts: list[str],
                 rate_bytes_per_s: float, cpu_percent: float = 35.0,
                 name: str = "exfiltrator"):
        self.root = root
        self.targets = set(target_exts)
        self.rate = rate_bytes_per_s
        self.cpu = cpu_percent
        self.name = name
        self.stats = LeakStats()
        self.pid: int | None = None
        self._walker: _TreeWalker | None = None
        self._budget = 0.0
        self._current: tuple[str, int] | None = None  # path, bytes remaining
        self._exhausted = False
        self._started_at = 0.0

    def start(self, env: SandboxEnvironment, now: float) -> None:
        if not env.dir_exists(self.root):
            raise PathError(f"exfiltrator root missing: {self.root!r}")
        self.pid = env.spawn_process(self.name, self.cpu)
        self._walker = _TreeWalker(self.root)
        self._started_at = now

    @property
    def finished(self) -> bool:
        return self._exhausted

    def emitting(self, env: SandboxEnvironment) -> bool:
        return (self.pid is not None and env.process_alive(self.pid)
                and not self.finished)

    def _next_file(self, env: SandboxEnvironment) -> bool:
        while True:
            path = self._walker.next_file(env)
            if path is None:
                self._exhausted = True
                return False
            if _ext_of(path) not in self.targets:
                continue
            if not env.file_exists(path):
                continue
            size = env.read_file(path).size
            if size == 0:
                continue
            env.record_file_open(self.pid, path)
            self._current = (path, size)
            self.stats.files_touched += 1
            return True

    def step(self, env: SandboxEnvironment, now: float, dt: float) -> None:
        if self.finished or self.pid is None or not env.process_alive(self.pid):
            return
        self._budget += self.rate * dt
        while self._budget >= 1.0:
            if self._current is None and not self._next_file(env):
                break
            path, remaining = self._current
            if not env.file_exists(path):
                # renamed or removed mid-stream: the rest is out of reach
                self._current = None
                continue
            take = int(min(self._budget, remaining))
            if take <= 0:
                break
            self.stats.bytes_leaked += take
            self._budget -= take
            remaining -= take
            env.record_event("file_read", pid=self.pid, path=path, detail=str(take))
            self._current = None if remaining == 0 else (path, remaining)
        self.stats.runtime_s = now - self._started_at


class RootkitActor:
    """Preload hijacker: points the preload file at its own library, breaks
    the linker's preload reference, and hides its artifacts from listings."""

    telemetry_label = "beurk"

    def __init__(self, artifact_dir: str = "/usr/lib/.rk",
                 name: str = "rootkit"):
        self.artifact_dir = artifact_dir.rstrip("/")
        self.lib_path = f"{self.artifact_dir}/libhook.so"
        self.name = name
        self.stats = TamperStats()
        self.pid: int | None = None
        self._injected = False

    def start(self, env: SandboxEnvironment, now: float) -> None:
        self.pid = env.spawn_process(self.name, 6.0)

    @property
    def finished(self) -> bool:
        return self._injected

    def emitting(self, env: SandboxEnvironment) -> bool:
        # hooks keep generating telemetry until sanitation evicts them
        if not self._injected:
            return False
        f = env.read_file(env.runtime.preload_path) \
            if env.file_exists(env.runtime.preload_path) else None
        return f is not None and (f.data or b"") == self.lib_path.encode()

    def step(self, env: SandboxEnvironment, now: float, dt: float) -> None:
        if self._injected or self.pid is None or not env.process_alive(self.pid):
            return
        env.mkdir(self.artifact_dir)
        env.write_file(self.lib_path, b"RKHOOK\x00" + self.name.encode(),
                       pid=self.pid)
        rt = env.runtime
        env.write_file(rt.preload_path, self.lib_path.encode(), pid=self.pid)
        linker = bytearray(env.read_file(rt.linker_path).data or b"")
        ref_len = len(rt.clean_linker_ref)
        off = rt.linker_ref_offset
        linker[off:off + ref_len] = b"\x00" * ref_len
        env.write_file(rt.linker_path, bytes(linker), pid=self.pid)
        env.runtime.hiding[self.lib_path] = [self.artifact_dir]
        self.stats.injected_at = now
        self.stats.preload_tampered = True
        self.stats.linker_tampered = True
        self.stats.artifacts = [self.artifact_dir, self.lib_path]
        self._injected = True
        log.info("rootkit injected at t=%.1f", now)


class BotnetActor:
    """Beacons from the device to its C&C at a fixed interval. Delivery
    works only while the device still holds the address the C&C learned at
    infection time."""

    telemetry_label = "bashlite"

    def __init__(self, c2_address: str, beacon_interval_s: float = 2.0,
                 name: str = "botnet"):
        self.c2 = str(ipaddress.IPv4Address(c2_address))
        self.interval = beacon_interval_s
        self.name = name
        self.stats = BeaconStats()
        self.pid: int | None = None
        self.learned_ip: str | None = None
        self._next_beacon: float = 0.0

    def start(self, env: SandboxEnvironment, now: float) -> None:
        self.pid = env.spawn_process(self.name, 15.0)
        self.learned_ip = str(env.net.device_ip)
        self._next_beacon = now + self.interval

    @property
    def finished(self) -> bool:
        return False

    def emitting(self, env: SandboxEnvironment) -> bool:
        return self.pid is not None and env.process_alive(self.pid)

    def step(self, env: SandboxEnvironment, now: float, dt: float) -> None:
        if self.pid is None or not env.process_alive(self.pid):
            return
        while self._next_beacon <= now + 1e-9:
            self.stats.sent += 1
            delivered = str(env.net.device_ip) == self.learned_ip
            if delivered:
                self.stats.delivered += 1
            env.record_event(
                "beacon", pid=self.pid,
                detail=f"{'delivered' if delivered else 'lost'} "
                       f"{env.net.device_ip}->{self.c2}")
            self._next_beacon += self.interval


def _drive(env: SandboxEnvironment, actor, duration_s: float | None,
           dt: float = 1.0) -> None:
    actor.start(env, env.now)
    start = env.now
    while not actor.finished:
        if duration_s is not None and env.now - start >= duration_s:
            break
        env.tick(dt)
        actor.step(env, env.now, dt)


def run_encryptor(env: SandboxEnvironment, root: str, target_exts: list[str],
                  rate_files_per_s: float = 4.0, cpu_profile: float = 90.0,
                  max_seconds: float | None = None) -> EncryptorStats:
    actor = EncryptorActor(root, target_exts, rate_files_per_s, cpu_profile)
    _drive(env, actor, max_seconds)
    return actor.stats


def run_exfiltrator(env: SandboxEnvironment, root: str, target_exts: list[str],
                    rate_bytes_per_s: float,
                    max_seconds: float | None = None) -> LeakStats:
    actor = ExfiltratorActor(root, target_exts, rate_bytes_per_s)
    _drive(env, actor, max_seconds)
    return actor.stats


def run_rootkit(env: SandboxEnvironment) -> TamperStats:
    actor = RootkitActor()
    actor.start(env, env.now)
    actor.step(env, env.now, 0.0)
    return actor.stats


def run_botnet(env: SandboxEnvironment, c2_address: str,
               beacon_interval_s: float = 2.0,
               duration_s: float = 42.0) -> BeaconStats:
    actor = BotnetActor(c2_address, beacon_interval_s)
    _drive(env, actor, duration_s)
    return actor.stats
