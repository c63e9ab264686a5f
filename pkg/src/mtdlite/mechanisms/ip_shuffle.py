"""IP shuffling: migrate the device to a fresh address on its subnet to cut
command-and-control channels.

Candidates are the subnet's host range minus every active host, the gateway,
and the current device address (network and broadcast never appear in the
host range). A random candidate is tried; on connectivity failure it is
dropped and another drawn, until success or exhaustion. A successful
migration records a service-restart event.
"""

from __future__ import annotations

import ipaddress
import logging
import random
from dataclasses import dataclass

from ..environment import SandboxEnvironment
from ..errors import Exhausted
from .base import (
    STATUS_FAILED,
    STATUS_MITIGATED,
    Mechanism,
    MechanismContext,
    MtdOutcome,
)

__all__ = ["MigrationResult", "IpShuffleMechanism",
           "enumerate_candidates", "migrate"]

log = logging.getLogger(__name__)


@dataclass
class MigrationResult:
    old: str
    new: str
    attempts: int
    duration_s: float = 0.0


def enumerate_candidates(env: SandboxEnvironment) -> list[ipaddress.IPv4Address]:
    """Free addresses, ascending. Raises Exhausted when none remain."""
    net = env.net
    excluded = set(net.active_hosts) | {net.gateway_ip, net.device_ip}
    candidates = [a for a in env.host_range() if a not in excluded]
    if not candidates:
        raise Exhausted(f"no free addresses left on {net.network}")
    return candidates


def migrate(env: SandboxEnvironment, rng: random.Random) -> MigrationResult:
    """Shuffle to a random connected candidate, retrying failed picks.

    If every candidate fails the connectivity check, the original address is
    restored and Exhausted is raised.
    """
    old = env.net.device_ip
    candidates = enumerate_candidates(env)
    attempts = 0
    while candidates:
        pick = rng.choice(candidates)
        attempts += 1
        env.assign_ip(pick)
        if env.check_connectivity():
            env.record_event("service_restart",
                             detail=f"migrated {old}->{pick} attempts={attempts}")
            log.info("migrated %s -> %s after %d attempt(s)", old, pick, attempts)
            return MigrationResult(old=str(old), new=str(pick), attempts=attempts)
        candidates.remove(pick)
        log.debug("candidate %s has no connectivity, dropped", pick)
    env.assign_ip(old)
    raise Exhausted(f"all {attempts} candidate(s) failed connectivity")


class IpShuffleMechanism(Mechanism):
    id = "ip_shuffle"

    def __init__(self, rng: random.Random | None = None):
        self._rng = rng
        self._started_at = 0.0
        self.result: MigrationResult | None = None
        self._error: str | None = None

    def start(self, env: SandboxEnvironment, ctx: MechanismContext) -> None:
        self._started_at = ctx.now
        rng = self._rng if self._rng is not None else env.rng
        try:
            self.result = migrate(env, rng)
        except Exhausted as exc:
            self._error = str(exc)
            log.error("ip shuffle failed: %s", exc)

    def done(self, env: SandboxEnvironment, now: float) -> bool:
        return True

    def finish(self, env: SandboxEnvironment, now: float) -> MtdOutcome:
        if self.result is None:
            return MtdOutcome(mechanism=self.id, start=self._started_at, end=now,
                              status=STATUS_FAILED,
                              metrics={"error": self._error or "unknown"})
        return MtdOutcome(
            mechanism=self.id,
            start=self._started_at,
            end=now,
            status=STATUS_MITIGATED,
            metrics={"migrations": 1, "attempts": self.result.attempts,
                     "old": self.result.old, "new": self.result.new},
        )
