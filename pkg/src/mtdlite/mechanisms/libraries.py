"""Library sanitation: restore the preload configuration file and the
dynamic linker's embedded reference to it, unlinking preload-hijacking
rootkits.

The clean baseline is captured once from a known-good state and sealed with
a digest; sanitation refuses to run against an unsealed or altered baseline.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass

from ..environment import SandboxEnvironment
from ..errors import IntegrityError, PathError
from .base import (
    STATUS_MITIGATED,
    STATUS_NOOP,
    Mechanism,
    MechanismContext,
    MtdOutcome,
)

__all__ = ["LinkerBaseline", "SanitizeReport", "LibrariesMechanism",
           "capture_baseline", "save_baseline", "load_baseline",
           "sanitize_preload", "restore_linker_reference",
           "preload_tampered", "linker_tampered"]

log = logging.getLogger(__name__)


@dataclass
class SanitizeReport:
    changed: bool
    detail: str


@dataclass
class LinkerBaseline:
    preload_path: str
    preload_content: str
    linker_path: str
    linker_ref: str
    linker_ref_offset: int
    seal: str = ""

    def compute_seal(self) -> str:
        canon = "\x1f".join([
            "linker-baseline-v1", self.preload_path, self.preload_content,
            self.linker_path, self.linker_ref, str(self.linker_ref_offset),
        ])
        return hashlib.sha256(canon.encode()).hexdigest()

    def verify(self) -> None:
        if not self.seal:
            raise IntegrityError("baseline is unsealed; refusing to sanitize")
        if self.seal != self.compute_seal():
            raise IntegrityError("baseline seal mismatch; refusing to sanitize")


def capture_baseline(env: SandboxEnvironment) -> LinkerBaseline:
    """Snapshot the current (presumed clean) preload and linker state, sealed."""
    rt = env.runtime
    try:
        preload = env.read_file(rt.preload_path).data or b""
    except PathError:
        raise IntegrityError(
            f"cannot capture baseline: preload file {rt.preload_path!r} missing")
    linker = env.read_file(rt.linker_path)
    if linker.data is None:
        raise IntegrityError(f"linker file {rt.linker_path!r} carries no bytes")
    off = rt.linker_ref_offset
    ref = linker.data[off:off + len(rt.clean_linker_ref)].decode(errors="replace")
    baseline = LinkerBaseline(
        preload_path=rt.preload_path,
        preload_content=preload.decode(),
        linker_path=rt.linker_path,
        linker_ref=ref,
        linker_ref_offset=off,
    )
    baseline.seal = baseline.compute_seal()
    return baseline


def save_baseline(baseline: LinkerBaseline, path: str) -> None:
    doc = {
        "preload_path": baseline.preload_path,
        "preload_content": baseline.preload_content,
        "linker_path": baseline.linker_path,
        "linker_ref": baseline.linker_ref,
        "linker_ref_offset": baseline.linker_ref_offset,
        "seal": baseline.seal,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_baseline(path: str) -> LinkerBaseline:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    baseline = LinkerBaseline(**doc)
    baseline.verify()
    return baseline


def preload_tampered(env: SandboxEnvironment, baseline: LinkerBaseline) -> bool:
    try:
        current = (env.read_file(baseline.preload_path).data or b"").decode()
    except PathError:
        return True
    return current != baseline.preload_content


def linker_tampered(env: SandboxEnvironment, baseline: LinkerBaseline) -> bool:
    try:
        data = env.read_file(baseline.linker_path).data or b""
    except PathError:
        return True
    off = baseline.linker_ref_offset
    return data[off:off + len(baseline.linker_ref)] != baseline.linker_ref.encode()


def sanitize_preload(env: SandboxEnvironment, baseline: LinkerBaseline) -> SanitizeReport:
    """Force the preload file back to its baseline content (idempotent)."""
    baseline.verify()
    want = baseline.preload_content.encode()
    try:
        current = env.read_file(baseline.preload_path).data
    except PathError:
        current = None
    if current == want:
        return SanitizeReport(changed=False, detail="preload already clean")
    env.write_file(baseline.preload_path, want)
    detail = "preload recreated" if current is None else "preload rewritten"
    log.info("%s at %s", detail, baseline.preload_path)
    return SanitizeReport(changed=True, detail=detail)


def restore_linker_reference(env: SandboxEnvironment,
                             baseline: LinkerBaseline) -> SanitizeReport:
    """Re-embed the baseline reference string at its offset in the linker
    file. A missing linker file is an integrity failure, never fabricated."""
    baseline.verify()
    if not env.file_exists(baseline.linker_path):
        raise IntegrityError(f"linker file missing: {baseline.linker_path!r}")
    data = env.read_file(baseline.linker_path).data or b""
    ref = baseline.linker_ref.encode()
    off = baseline.linker_ref_offset
    if data[off:off + len(ref)] == ref:
        return SanitizeReport(changed=False, detail="linker reference intact")
    patched = bytearray(data)
    if len(patched) < off + len(ref):
        patched.extend(b"\x00" * (off + len(ref) - len(patched)))
    patched[off:off + len(ref)] = ref
    env.write_file(baseline.linker_path, bytes(patched))
    log.info("linker reference restored at %s+%d", baseline.linker_path, off)
    return SanitizeReport(changed=True, detail="linker reference restored")


class LibrariesMechanism(Mechanism):
    id = "libraries"

    def __init__(self, baseline: LinkerBaseline):
        self._baseline = baseline
        self._started_at = 0.0
        self._reports: tuple[SanitizeReport, SanitizeReport] | None = None

    def start(self, env: SandboxEnvironment, ctx: MechanismContext) -> None:
        self._started_at = ctx.now
        self._reports = (sanitize_preload(env, self._baseline),
                         restore_linker_reference(env, self._baseline))

    def done(self, env: SandboxEnvironment, now: float) -> bool:
        return True

    def finish(self, env: SandboxEnvironment, now: float) -> MtdOutcome:
        pre, ref = self._reports
        changed = pre.changed or ref.changed
        return MtdOutcome(
            mechanism=self.id,
            start=self._started_at,
            end=now,
            status=STATUS_MITIGATED if changed else STATUS_NOOP,
            metrics={"preload_restored": int(pre.changed),
                     "linker_restored": int(ref.changed)},
        )
