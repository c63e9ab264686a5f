"""The HOW/WHAT module: resolve alarms against an ordered policy into
deployment plans, run mechanisms single-flight, and journal outcomes.

The journal is append-only JSON lines; every line carries a `kind` tag
(`alarm`, `outcome`, or `event`). For each completed deployment, exactly one
outcome line per started mechanism appears, in plan order.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

from .decision import ORIGIN_PROACTIVE, Alarm
from .environment import SandboxEnvironment
from .errors import ConfigError
from .labels import Behavior
from .mechanisms import Mechanism, MechanismContext, MtdOutcome

__all__ = ["PolicyRule", "EnforcementPolicy", "DeploymentPlan",
           "Deployment", "Enforcer", "resolve",
           "MATCH_PROACTIVE", "MATCH_DEFAULT"]

log = logging.getLogger(__name__)

MATCH_PROACTIVE = "Proactive"
MATCH_DEFAULT = "Default"
_VALID_MATCHES = {b.value for b in Behavior} | {MATCH_PROACTIVE, MATCH_DEFAULT}


@dataclass
class PolicyRule:
    on: str
    deploy: list[str]


@dataclass
class EnforcementPolicy:
    rules: list[PolicyRule] = field(default_factory=list)

    def validate(self, known_mechanisms: set[str] | None = None) -> None:
        seen = set()
        for rule in self.rules:
            if rule.on not in _VALID_MATCHES:
                raise ConfigError(
                    f"policy match {rule.on!r} not one of {sorted(_VALID_MATCHES)}")
            if rule.on in seen:
                raise ConfigError(f"duplicate policy match key {rule.on!r}")
            seen.add(rule.on)
            if known_mechanisms is not None:
                unknown = [m for m in rule.deploy if m not in known_mechanisms]
                if unknown:
                    raise ConfigError(
                        f"policy rule {rule.on!r} deploys unknown mechanism(s) "
                        f"{unknown}")

    def rule_for(self, key: str) -> PolicyRule | None:
        for rule in self.rules:
            if rule.on == key:
                return rule
        return None


@dataclass
class DeploymentPlan:
    mechanism_ids: list[str]
    alarm: Alarm


def resolve(policy: EnforcementPolicy, alarm: Alarm) -> DeploymentPlan:
    """Pure mapping (policy, alarm) -> plan; no environment access."""
    if alarm.origin == ORIGIN_PROACTIVE:
        rule = policy.rule_for(MATCH_PROACTIVE)
    else:
        rule = policy.rule_for(str(alarm.behavior))
        if rule is None:
            rule = policy.rule_for(MATCH_DEFAULT)
    if rule is None:
        log.warning("alarm %s matched no policy rule; empty plan",
                    alarm.behavior or alarm.origin)
        return DeploymentPlan(mechanism_ids=[], alarm=alarm)
    return DeploymentPlan(mechanism_ids=list(rule.deploy), alarm=alarm)


@dataclass
class Deployment:
    plan: DeploymentPlan
    started: list[str] = field(default_factory=list)   # non-coalesced, plan order
    coalesced: list[str] = field(default_factory=list)
    outcomes: dict[str, MtdOutcome] = field(default_factory=dict)
    flushed: bool = False

    @property
    def complete(self) -> bool:
        return all(mid in self.outcomes for mid in self.started)

    def ordered_outcomes(self) -> list[MtdOutcome]:
        return [self.outcomes[mid] for mid in self.started]


class Enforcer:
    """Serial alarm consumer. Each mechanism id is single-flight: while an
    instance runs, further deployments of the same id coalesce into it."""

    def __init__(self, env: SandboxEnvironment, policy: EnforcementPolicy,
                 factories: dict[str, Callable[[], Mechanism]],
                 journal_path: str | None = None):
        policy.validate(known_mechanisms=set(factories))
        self.env = env
        self.policy = policy
        self.factories = dict(factories)
        self.journal_lines: list[dict] = []
        self.deployments: list[Deployment] = []
        self._running: dict[str, tuple[Mechanism, Deployment]] = {}
        self._journal_fh = open(journal_path, "w", encoding="utf-8") \
            if journal_path else None

    # -- journal -------------------------------------------------------------

    def journal(self, line: dict) -> None:
        self.journal_lines.append(line)
        if self._journal_fh is not None:
            self._journal_fh.write(json.dumps(line, sort_keys=True) + "\n")
            self._journal_fh.flush()

    def close(self) -> None:
        if self._journal_fh is not None:
            self._journal_fh.close()
            self._journal_fh = None

    # -- deployment ----------------------------------------------------------

    def handle_alarm(self, alarm: Alarm) -> Deployment | None:
        self.journal({"kind": "alarm", **alarm.to_dict()})
        plan = resolve(self.policy, alarm)
        if not plan.mechanism_ids:
            return None
        return self.deploy(plan)

    def deploy(self, plan: DeploymentPlan) -> Deployment:
        unknown = [m for m in plan.mechanism_ids if m not in self.factories]
        if unknown:
            raise ConfigError(f"unknown mechanism id(s) {unknown}; nothing deployed")
        deployment = Deployment(plan=plan)
        now = self.env.now
        behavior = str(plan.alarm.behavior) if plan.alarm.behavior else None
        for mid in plan.mechanism_ids:
            if mid in self._running:
                deployment.coalesced.append(mid)
                log.info("mechanism %s already running; coalesced", mid)
                continue
            mechanism = self.factories[mid]()
            deployment.started.append(mid)
            ctx = MechanismContext(now=now, alarm_behavior=behavior,
                                   journal=self.journal)
            mechanism.start(self.env, ctx)
            self._running[mid] = (mechanism, deployment)
        self.deployments.append(deployment)
        self._collect(now)
        return deployment

    def step(self, now: float) -> None:
        for mid in list(self._running):
            mechanism, _dep = self._running[mid]
            mechanism.step(self.env, now)
        self._collect(now)

    def _collect(self, now: float) -> None:
        for mid in list(self._running):
            mechanism, deployment = self._running[mid]
            if mechanism.done(self.env, now):
                deployment.outcomes[mid] = mechanism.finish(self.env, now)
                del self._running[mid]
        self._flush_complete()

    def _flush_complete(self) -> None:
        for deployment in self.deployments:
            if deployment.flushed or not deployment.complete:
                continue
            for outcome in deployment.ordered_outcomes():
                self.journal(outcome.to_dict())
            deployment.flushed = True

    def shutdown(self, now: float) -> None:
        """Force-finish running mechanisms and flush the journal."""
        for mid in list(self._running):
            mechanism, deployment = self._running.pop(mid)
            deployment.outcomes[mid] = mechanism.finish(self.env, now)
        self._flush_complete()
        self.close()

    def running_ids(self) -> list[str]:
        return sorted(self._running)

    def outcomes(self) -> list[MtdOutcome]:
        out = []
        for deployment in self.deployments:
            out.extend(deployment.ordered_outcomes()
                       if deployment.complete else
                       [deployment.outcomes[m] for m in deployment.started
                        if m in deployment.outcomes])
        return out
