"""Behavior labels: per-sample class names and the coarse behavior categories
that enforcement policies match on."""

from __future__ import annotations

from enum import Enum


class Behavior(str, Enum):
    """Coarse host behavior category, as matched by enforcement policies."""

    NORMAL = "Normal"
    BOTNET = "Botnet"
    RANSOMWARE = "Ransomware"
    ROOTKIT = "Rootkit"
    BACKDOOR = "Backdoor"

    def __str__(self) -> str:  # keeps journal/report output compact
        return self.value


#: Default per-sample class labels and the behavior category each maps to.
#: Class labels are plain strings so the class set stays configurable.
DEFAULT_BEHAVIOR_OF: dict[str, Behavior] = {
    "normal": Behavior.NORMAL,
    "bashlite": Behavior.BOTNET,
    "ransomware_poc": Behavior.RANSOMWARE,
    "beurk": Behavior.ROOTKIT,
    "bdvl": Behavior.ROOTKIT,
    "httpbackdoor": Behavior.BACKDOOR,
    "pythonbackdoor": Behavior.BACKDOOR,
    "thetick": Behavior.BACKDOOR,
}

DEFAULT_CLASSES: list[str] = list(DEFAULT_BEHAVIOR_OF)


def behavior_of(label: str, mapping: dict[str, Behavior] | None = None) -> Behavior:
    """Map a per-sample class label to its behavior category."""
    table = mapping if mapping is not None else DEFAULT_BEHAVIOR_OF
    try:
        return table[label]
    except KeyError:
        raise KeyError(f"no behavior category for class label {label!r}") from None
