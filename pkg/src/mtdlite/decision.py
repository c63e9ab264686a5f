"""The WHEN module: proactive time/action rules plus reactive classification
over the telemetry stream, both emitting alarms for enforcement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

from .classifier import predict
from .errors import ClockError, ConfigError, NotConfigured
from .labels import DEFAULT_BEHAVIOR_OF, Behavior
from .telemetry import FeatureVector, Scaler, minmax_apply

__all__ = ["ProactiveRule", "Alarm", "DecisionEngine"]

log = logging.getLogger(__name__)

ORIGIN_PROACTIVE = "proactive"
ORIGIN_REACTIVE = "reactive"


@dataclass
class ProactiveRule:
    """Either a periodic trigger (`every_s`) or an action-event trigger
    (`on_action`), never both."""

    id: str
    every_s: float | None = None
    on_action: str | None = None
    mtds: list[str] = field(default_factory=list)

    def __post_init__(self):
        if (self.every_s is None) == (self.on_action is None):
            raise ConfigError(
                f"rule {self.id!r}: exactly one of every_s/on_action required")
        if self.every_s is not None and self.every_s <= 0:
            raise ConfigError(f"rule {self.id!r}: interval must be > 0")


@dataclass
class Alarm:
    origin: str  # proactive | reactive
    timestamp: float
    behavior: Behavior | None = None   # present iff reactive
    sample_label: str | None = None    # raw classifier output, reactive only
    confidence: float | None = None
    rule_id: str | None = None         # proactive only

    def __post_init__(self):
        if self.origin == ORIGIN_REACTIVE and self.behavior is None:
            raise ConfigError("reactive alarms must carry a behavior label")
        if self.origin == ORIGIN_PROACTIVE and self.behavior is not None:
            raise ConfigError("proactive alarms must not carry a behavior label")

    def to_dict(self) -> dict:
        return {
            "origin": self.origin,
            "t": self.timestamp,
            "behavior": str(self.behavior) if self.behavior else None,
            "sample_label": self.sample_label,
            "confidence": self.confidence,
            "rule_id": self.rule_id,
        }


class DecisionEngine:
    """Emits proactive alarms from the rule set on tick() and reactive alarms
    from classified telemetry windows on reactive_step().

    Reactive debounce: repeated identical labels within `suppress_s` collapse
    into the first alarm.
    """

    def __init__(self, rules: list[ProactiveRule] | None = None, model=None,
                 scaler: Scaler | None = None, threshold: float = 0.5,
                 per_label_thresholds: dict[str, float] | None = None,
                 suppress_s: float = 30.0, window_s: float = 5.0,
                 behavior_map: dict[str, Behavior] | None = None):
        self.rules = list(rules or [])
        ids = [r.id for r in self.rules]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate proactive rule ids: {ids}")
        self.model = model
        self.scaler = scaler
        self.threshold = threshold
        self.per_label_thresholds = dict(per_label_thresholds or {})
        self.suppress_s = suppress_s
        self.window_s = window_s
        self.behavior_map = dict(behavior_map or DEFAULT_BEHAVIOR_OF)
        self.now = 0.0
        # periodic rules: count of interval boundaries already fired
        self._fired: dict[str, int] = {r.id: 0 for r in self.rules}
        self._pending_actions: list[str] = []
        self._last_reactive: dict[str, float] = {}

    # -- proactive ----------------------------------------------------------

    def post_action(self, name: str) -> None:
        """Queue a named action event; matching rules fire on the next tick."""
        self._pending_actions.append(name)

    def tick(self, now: float) -> list[Alarm]:
        if now < self.now:
            raise ClockError(f"time regression: {now} < {self.now}")
        alarms: list[Alarm] = []
        for rule in self.rules:
            if rule.every_s is not None:
                # exact rational boundary count avoids float-division drift
                boundary = int(Fraction(now) / Fraction(rule.every_s))
                for k in range(self._fired[rule.id] + 1, boundary + 1):
                    ts = float(k * Fraction(rule.every_s))
                    alarms.append(Alarm(origin=ORIGIN_PROACTIVE, timestamp=ts,
                                        rule_id=rule.id))
                self._fired[rule.id] = max(self._fired[rule.id], boundary)
        if self._pending_actions:
            for name in self._pending_actions:
                for rule in self.rules:
                    if rule.on_action == name:
                        alarms.append(Alarm(origin=ORIGIN_PROACTIVE, timestamp=now,
                                            rule_id=rule.id))
            self._pending_actions.clear()
        alarms.sort(key=lambda a: (a.timestamp, a.rule_id))
        self.now = now
        return alarms

    def rule_mtds(self, rule_id: str) -> list[str]:
        for rule in self.rules:
            if rule.id == rule_id:
                return list(rule.mtds)
        return []

    # -- reactive -----------------------------------------------------------

    def reactive_step(self, vector: FeatureVector) -> Alarm | None:
        if self.model is None or self.scaler is None:
            raise NotConfigured("reactive path needs a loaded model and scaler")
        scaled = minmax_apply(self.scaler, vector.features)
        label, confidence = predict(self.model, scaled)
        behavior = self.behavior_map.get(label)
        if behavior is None:
            log.warning("prediction %r has no behavior mapping; ignored", label)
            return None
        if behavior is Behavior.NORMAL:
            return None
        threshold = self.per_label_thresholds.get(label, self.threshold)
        if confidence < threshold:
            return None
        # the alarm lands at the window's end, when the vector became available
        t = vector.window_start + self.window_s
        last = self._last_reactive.get(label)
        if last is not None and t - last < self.suppress_s:
            return None
        self._last_reactive[label] = t
        return Alarm(origin=ORIGIN_REACTIVE, timestamp=t, behavior=behavior,
                     sample_label=label, confidence=confidence)
