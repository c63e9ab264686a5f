"""Deterministic sandbox substrate: virtual file tree, process table, subnet
and clock.

Every defense mechanism and every adversary emulator acts only through this
interface, which keeps scenario runs replayable bit-for-bit from a seed. A
live-host backend can satisfy the same surface; the sandbox is the default
and the only backend exercised by the test suite.
"""

from __future__ import annotations

import hashlib
import ipaddress
import random
from dataclasses import dataclass, field
from typing import Callable, Iterator

from .errors import (
    ClockError,
    CollisionError,
    ConfigError,
    NoSuchProcess,
    PathError,
    RangeError,
    RefusedWhitelisted,
)

__all__ = [
    "EnvironmentSpec",
    "FileRootSpec",
    "NetworkSpec",
    "ProcessSpec",
    "RuntimeSpec",
    "ProcessRecord",
    "SubnetState",
    "RuntimeState",
    "VirtualFile",
    "KillResult",
    "AssignResult",
    "AuditEvent",
    "SandboxEnvironment",
    "create_environment",
]

DEFAULT_PRELOAD_PATH = "/etc/ld.so.preload"
DEFAULT_PRELOAD_CONTENT = "/lib/libc.so.6"
DEFAULT_LINKER_PATH = "/lib/ld-linux.so"
DEFAULT_LINKER_REF = "/etc/ld.so.preload"
DEFAULT_LINKER_REF_OFFSET = 64
_LINKER_FILE_SIZE = 256

OPEN_FILE_WINDOW_S = 60.0


# ---------------------------------------------------------------------------
# Specs (parsed from the environment config document, see config.py)
# ---------------------------------------------------------------------------

@dataclass
class FileRootSpec:
    """One populated root: `count` files of `size_bytes` total, spread over
    `subdirs` subdirectories (0 = flat), cycling through `extensions`."""

    path: str
    count: int = 0
    size_bytes: int = 0
    extensions: list[str] = field(default_factory=lambda: [".dat"])
    subdirs: int = 0


@dataclass
class ProcessSpec:
    name: str
    cpu: float = 1.0
    whitelisted: bool = False


@dataclass
class NetworkSpec:
    cidr: str = "192.168.1.0/24"
    gateway: str | None = None
    device: str | None = None
    peers: list[str] = field(default_factory=list)
    # Addresses that fail the connectivity check when assigned (scripted
    # connectivity matrix). Empty set = always-true matrix.
    dead_addresses: list[str] = field(default_factory=list)


@dataclass
class RuntimeSpec:
    """Virtual analogues of the preload file and the dynamic-linker binary."""

    preload_path: str = DEFAULT_PRELOAD_PATH
    preload_content: str = DEFAULT_PRELOAD_CONTENT
    linker_path: str = DEFAULT_LINKER_PATH
    linker_ref: str = DEFAULT_LINKER_REF
    linker_ref_offset: int = DEFAULT_LINKER_REF_OFFSET


@dataclass
class EnvironmentSpec:
    seed: int = 0
    network: NetworkSpec = field(default_factory=NetworkSpec)
    files: list[FileRootSpec] = field(default_factory=list)
    processes: list[ProcessSpec] = field(default_factory=list)
    runtime: RuntimeSpec = field(default_factory=RuntimeSpec)


# ---------------------------------------------------------------------------
# State types
# ---------------------------------------------------------------------------

@dataclass
class VirtualFile:
    """File contents are modeled as (size, digest); decoy and runtime files
    additionally carry real bytes."""

    name: str
    size: int
    digest: str
    encrypted: bool = False
    data: bytes | None = None
    readonly: bool = False


@dataclass
class _Dir:
    name: str
    dirs: dict[str, "_Dir"] = field(default_factory=dict)
    files: dict[str, VirtualFile] = field(default_factory=dict)


@dataclass
class ProcessRecord:
    pid: int
    name: str
    cpu_percent: float
    files_opened_last_minute: int
    whitelisted: bool
    alive: bool


@dataclass
class SubnetState:
    network: ipaddress.IPv4Network
    device_ip: ipaddress.IPv4Address
    gateway_ip: ipaddress.IPv4Address
    active_hosts: set[ipaddress.IPv4Address]
    connectivity: Callable[[ipaddress.IPv4Address], bool]


@dataclass
class RuntimeState:
    preload_path: str
    clean_preload_content: str
    linker_path: str
    clean_linker_ref: str
    linker_ref_offset: int
    # Listing filters installed by preload-hijacking malware, keyed on the
    # preload content that activates them. Hiding is only in effect while the
    # live preload content matches a key.
    hiding: dict[str, list[str]] = field(default_factory=dict)


@dataclass
class KillResult:
    pid: int
    name: str
    killed_at: float


@dataclass
class AssignResult:
    previous: str
    assigned: str


@dataclass
class AuditEvent:
    seq: int
    time: float
    kind: str
    pid: int | None = None
    path: str | None = None
    detail: str | None = None


class _ProcState:
    """Internal per-process bookkeeping (open-file event times)."""

    __slots__ = ("pid", "name", "cpu_percent", "whitelisted", "alive",
                 "open_times", "total_opens")

    def __init__(self, pid: int, name: str, cpu_percent: float, whitelisted: bool):
        self.pid = pid
        self.name = name
        self.cpu_percent = cpu_percent
        self.whitelisted = whitelisted
        self.alive = True
        self.open_times: list[float] = []
        self.total_opens = 0


def _split(path: str) -> list[str]:
    parts = [p for p in path.split("/") if p]
    if not path.startswith("/"):
        raise PathError(f"path must be absolute: {path!r}")
    return parts


class SandboxEnvironment:
    """Single-writer virtual host. All mutation goes through methods on this
    class; read operations return copies safe to share."""

    def __init__(self, spec: EnvironmentSpec):
        self.spec = spec
        self.clock: float = 0.0
        self.rng = random.Random(spec.seed)
        self._root = _Dir(name="")
        self._procs: dict[int, _ProcState] = {}
        self._next_pid = 100
        self.audit: list[AuditEvent] = []
        self._audit_seq = 0
        self.net = self._build_network(spec.network)
        self.runtime = self._build_runtime(spec.runtime)
        self._populate_files(spec.files)
        for p in spec.processes:
            self.spawn_process(p.name, p.cpu, whitelisted=p.whitelisted)

    # -- construction -------------------------------------------------------

    def _build_network(self, ns: NetworkSpec) -> SubnetState:
        try:
            network = ipaddress.IPv4Network(ns.cidr)
        except ValueError as exc:
            raise ConfigError(f"invalid CIDR {ns.cidr!r}: {exc}") from None
        hosts = list(network.hosts())
        if len(hosts) < 2:
            raise ConfigError(f"subnet {ns.cidr} has fewer than two usable hosts")
        gateway = ipaddress.IPv4Address(ns.gateway) if ns.gateway else hosts[0]
        if ns.device:
            device = ipaddress.IPv4Address(ns.device)
        else:
            device = next(h for h in hosts if h != gateway)
        peers = {ipaddress.IPv4Address(p) for p in ns.peers}
        for addr in (gateway, device, *peers):
            if addr not in network or addr == network.network_address or \
                    addr == network.broadcast_address:
                raise ConfigError(f"address {addr} outside host range of {ns.cidr}")
        dead = {ipaddress.IPv4Address(a) for a in ns.dead_addresses}
        active = {device, gateway} | peers
        return SubnetState(
            network=network,
            device_ip=device,
            gateway_ip=gateway,
            active_hosts=active,
            connectivity=lambda addr: addr not in dead,
        )

    def _build_runtime(self, rs: RuntimeSpec) -> RuntimeState:
        state = RuntimeState(
            preload_path=rs.preload_path,
            clean_preload_content=rs.preload_content,
            linker_path=rs.linker_path,
            clean_linker_ref=rs.linker_ref,
            linker_ref_offset=rs.linker_ref_offset,
        )
        self.write_file(rs.preload_path, rs.preload_content.encode())
        self.write_file(rs.linker_path, self._linker_bytes(rs, rs.linker_ref))
        return state

    def _linker_bytes(self, rs: RuntimeSpec, ref: str) -> bytes:
        blob = bytearray(hashlib.sha256(f"linker:{self.spec.seed}".encode()).digest() * 8)
        blob = blob[:_LINKER_FILE_SIZE]
        off = rs.linker_ref_offset
        blob[off:off + len(ref)] = ref.encode()
        return bytes(blob)

    def _populate_files(self, roots: list[FileRootSpec]) -> None:
        for root in roots:
            self.mkdir(root.path)
            if root.count <= 0:
                continue
            dirs = [root.path]
            if root.subdirs > 0:
                dirs = [f"{root.path.rstrip('/')}/dir_{i:02d}" for i in range(root.subdirs)]
                for d in dirs:
                    self.mkdir(d)
            per_file = root.size_bytes // root.count
            remainder = root.size_bytes - per_file * root.count
            for i in range(root.count):
                ext = root.extensions[i % len(root.extensions)]
                directory = dirs[i % len(dirs)]
                size = per_file + (remainder if i == 0 else 0)
                path = f"{directory.rstrip('/')}/file_{i:04d}{ext}"
                self.create_file(path, size=size)

    # -- clock --------------------------------------------------------------

    def tick(self, seconds: float) -> float:
        if seconds < 0:
            raise ClockError(f"cannot tick backwards ({seconds})")
        self.clock += seconds
        return self.clock

    @property
    def now(self) -> float:
        return self.clock

    def _event(self, kind: str, pid: int | None = None, path: str | None = None,
               detail: str | None = None) -> None:
        self.audit.append(AuditEvent(self._audit_seq, self.clock, kind, pid, path, detail))
        self._audit_seq += 1

    def record_event(self, kind: str, pid: int | None = None,
                     path: str | None = None, detail: str | None = None) -> None:
        """Append a custom entry to the audit log (e.g. service restarts)."""
        self._event(kind, pid=pid, path=path, detail=detail)

    def events_since(self, seq: int) -> list[AuditEvent]:
        return [e for e in self.audit if e.seq >= seq]

    # -- filesystem ---------------------------------------------------------

    def _lookup_dir(self, path: str, create: bool = False) -> _Dir:
        node = self._root
        for part in _split(path):
            if part not in node.dirs:
                if part in node.files:
                    raise PathError(f"{path!r}: {part!r} is a file, not a directory")
                if not create:
                    raise PathError(f"no such directory: {path!r}")
                node.dirs[part] = _Dir(name=part)
            node = node.dirs[part]
        return node

    def _lookup_file(self, path: str) -> tuple[_Dir, VirtualFile]:
        parts = _split(path)
        if not parts:
            raise PathError("empty path")
        parent = "/" + "/".join(parts[:-1])
        node = self._lookup_dir(parent)
        name = parts[-1]
        if name not in node.files:
            raise PathError(f"no such file: {path!r}")
        return node, node.files[name]

    def mkdir(self, path: str) -> None:
        self._lookup_dir(path, create=True)

    def dir_exists(self, path: str) -> bool:
        try:
            self._lookup_dir(path)
            return True
        except PathError:
            return False

    def file_exists(self, path: str) -> bool:
        try:
            self._lookup_file(path)
            return True
        except PathError:
            return False

    def _synthetic_digest(self, path: str, size: int) -> str:
        return hashlib.sha256(f"file:{self.spec.seed}:{path}:{size}".encode()).hexdigest()

    def create_file(self, path: str, size: int = 0, data: bytes | None = None,
                    pid: int | None = None) -> VirtualFile:
        parts = _split(path)
        parent = self._lookup_dir("/" + "/".join(parts[:-1]), create=True)
        name = parts[-1]
        if name in parent.files or name in parent.dirs:
            raise PathError(f"path already exists: {path!r}")
        if data is not None:
            size = len(data)
            digest = hashlib.sha256(data).hexdigest()
        else:
            digest = self._synthetic_digest(path, size)
        f = VirtualFile(name=name, size=size, digest=digest, data=data)
        parent.files[name] = f
        self._event("file_created", pid=pid, path=path)
        return f

    def write_file(self, path: str, data: bytes, pid: int | None = None) -> None:
        """Create or overwrite a byte-carrying file."""
        try:
            _, f = self._lookup_file(path)
        except PathError:
            self.create_file(path, data=data, pid=pid)
            return
        if f.readonly:
            raise PermissionError(f"read-only file: {path}")
        f.data = data
        f.size = len(data)
        f.digest = hashlib.sha256(data).hexdigest()
        self._event("file_written", pid=pid, path=path)

    def read_file(self, path: str) -> VirtualFile:
        _, f = self._lookup_file(path)
        return VirtualFile(name=f.name, size=f.size, digest=f.digest,
                           encrypted=f.encrypted, data=f.data, readonly=f.readonly)

    def delete_file(self, path: str, pid: int | None = None) -> None:
        parent, f = self._lookup_file(path)
        del parent.files[f.name]
        self._event("file_deleted", pid=pid, path=path)

    def rename_file(self, path: str, new_name: str, pid: int | None = None) -> str:
        parent, f = self._lookup_file(path)
        if new_name in parent.files or new_name in parent.dirs:
            raise PathError(f"rename target exists: {new_name!r}")
        del parent.files[f.name]
        f.name = new_name
        parent.files[new_name] = f
        new_path = path.rsplit("/", 1)[0] + "/" + new_name
        self._event("file_renamed", pid=pid, path=path, detail=new_path)
        return new_path

    def encrypt_file(self, path: str, pid: int | None = None) -> None:
        """Mark a file encrypted: the digest changes, the count does not."""
        _, f = self._lookup_file(path)
        if not f.encrypted:
            f.encrypted = True
            f.digest = hashlib.sha256(f"enc:{f.digest}".encode()).hexdigest()
            self._event("file_encrypted", pid=pid, path=path)

    def _hidden_names(self) -> list[str]:
        try:
            preload = self.read_file(self.runtime.preload_path).data or b""
        except PathError:
            return []
        return self.runtime.hiding.get(preload.decode(errors="replace"), [])

    def _is_hidden(self, path: str, hidden: list[str]) -> bool:
        return any(path == h or path.startswith(h.rstrip("/") + "/") for h in hidden)

    def list_dir(self, path: str, raw: bool = False) -> tuple[list[str], list[str]]:
        """Return (subdirectory paths, file paths), sorted. Honors the
        preload-keyed hiding filter unless raw=True."""
        node = self._lookup_dir(path)
        base = path.rstrip("/")
        hidden = [] if raw else self._hidden_names()
        dirs = [f"{base}/{n}" for n in sorted(node.dirs)]
        files = [f"{base}/{n}" for n in sorted(node.files)]
        if hidden:
            dirs = [d for d in dirs if not self._is_hidden(d, hidden)]
            files = [f for f in files if not self._is_hidden(f, hidden)]
        return dirs, files

    def walk(self, path: str, raw: bool = False) -> Iterator[tuple[str, list[str], list[str]]]:
        """Depth-first walk yielding (dir path, subdir paths, file paths)."""
        dirs, files = self.list_dir(path, raw=raw)
        yield path.rstrip("/") or "/", dirs, files
        for d in dirs:
            yield from self.walk(d, raw=raw)

    def iter_files(self, path: str, raw: bool = False) -> Iterator[tuple[str, VirtualFile]]:
        for dirpath, _dirs, files in self.walk(path, raw=raw):
            node = self._lookup_dir(dirpath)
            for fpath in files:
                yield fpath, node.files[fpath.rsplit("/", 1)[1]]

    def file_count(self) -> int:
        return sum(len(files) for _, _, files in self.walk("/", raw=True))

    # -- processes ----------------------------------------------------------

    def spawn_process(self, name: str, cpu_percent: float, whitelisted: bool = False) -> int:
        pid = self._next_pid
        self._next_pid += 1
        self._procs[pid] = _ProcState(pid, name, cpu_percent, whitelisted)
        self._event("proc_spawned", pid=pid, detail=name)
        return pid

    def record_file_open(self, pid: int, path: str, count: int = 1) -> None:
        proc = self._procs.get(pid)
        if proc is None or not proc.alive:
            return
        proc.open_times.extend([self.clock] * count)
        proc.total_opens += count

    def _opens_in_window(self, proc: _ProcState) -> int:
        cutoff = self.clock - OPEN_FILE_WINDOW_S
        # open_times is appended in clock order; count the suffix inside the
        # window without mutating (reads must not perturb the state digest)
        times = proc.open_times
        i = 0
        while i < len(times) and times[i] <= cutoff:
            i += 1
        return len(times) - i

    def opens_total(self, pid: int) -> int:
        """Cumulative open count for a pid (monotone; used for per-suspect
        observation windows)."""
        proc = self._procs.get(pid)
        if proc is None:
            return 0
        return proc.total_opens

    def list_processes(self) -> list[ProcessRecord]:
        records = []
        for pid in sorted(self._procs):
            p = self._procs[pid]
            records.append(ProcessRecord(
                pid=p.pid,
                name=p.name,
                cpu_percent=p.cpu_percent if p.alive else 0.0,
                files_opened_last_minute=self._opens_in_window(p) if p.alive else 0,
                whitelisted=p.whitelisted,
                alive=p.alive,
            ))
        return records

    def process_alive(self, pid: int) -> bool:
        p = self._procs.get(pid)
        return p is not None and p.alive

    def kill_process(self, pid: int) -> KillResult:
        p = self._procs.get(pid)
        if p is None or not p.alive:
            raise NoSuchProcess(f"no such process: {pid}")
        if p.whitelisted:
            raise RefusedWhitelisted(f"refusing to kill whitelisted pid {pid} ({p.name})")
        p.alive = False
        p.cpu_percent = 0.0
        self._event("proc_killed", pid=pid, detail=p.name)
        return KillResult(pid=pid, name=p.name, killed_at=self.clock)

    # -- network ------------------------------------------------------------

    def scan_active_hosts(self) -> set[ipaddress.IPv4Address]:
        return set(self.net.active_hosts)

    def host_range(self) -> list[ipaddress.IPv4Address]:
        return list(self.net.network.hosts())

    def assign_ip(self, addr: ipaddress.IPv4Address | str) -> AssignResult:
        addr = ipaddress.IPv4Address(addr)
        net = self.net
        if addr not in net.network or addr == net.network.network_address or \
                addr == net.network.broadcast_address:
            raise RangeError(f"{addr} outside host range of {net.network}")
        if addr in net.active_hosts and addr != net.device_ip:
            raise CollisionError(f"{addr} already claimed")
        previous = net.device_ip
        net.active_hosts.discard(previous)
        net.device_ip = addr
        net.active_hosts.add(addr)
        self._event("ip_assigned", detail=f"{previous}->{addr}")
        return AssignResult(previous=str(previous), assigned=str(addr))

    def check_connectivity(self) -> bool:
        return bool(self.net.connectivity(self.net.device_ip))

    # -- digest -------------------------------------------------------------

    def state_digest(self) -> str:
        """Lowercase hex sha256 over a canonical serialization of all state."""
        h = hashlib.sha256()

        def put(*parts: object) -> None:
            h.update("\x1f".join(str(p) for p in parts).encode())
            h.update(b"\x1e")

        put("clock", repr(self.clock))
        put("rng", self.rng.getstate())
        net = self.net
        put("net", net.network, net.device_ip, net.gateway_ip,
            ",".join(sorted(str(a) for a in net.active_hosts)))
        rt = self.runtime
        put("runtime", rt.preload_path, rt.clean_preload_content, rt.linker_path,
            rt.clean_linker_ref, rt.linker_ref_offset,
            sorted((k, tuple(v)) for k, v in rt.hiding.items()))
        for dirpath, _dirs, files in self.walk("/", raw=True):
            put("dir", dirpath)
            node = self._lookup_dir(dirpath)
            for fpath in files:
                f = node.files[fpath.rsplit("/", 1)[1]]
                put("file", fpath, f.size, f.digest, int(f.encrypted),
                    f.data.hex() if f.data is not None else "-")
        for pid in sorted(self._procs):
            p = self._procs[pid]
            put("proc", p.pid, p.name, repr(p.cpu_percent), int(p.whitelisted),
                int(p.alive), p.total_opens)
        return h.hexdigest()


def create_environment(spec: EnvironmentSpec) -> SandboxEnvironment:
    """Materialize a deterministic environment; replayable from (spec, seed)."""
    return SandboxEnvironment(spec)
