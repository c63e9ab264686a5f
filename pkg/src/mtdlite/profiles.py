"""Default synthetic behavior profiles for the eight monitored classes.

Each malicious class shifts a distinct block of features away from the
normal baseline by several dispersion units, which keeps the classes
separable. The exception is deliberate: `thetick` (the data-leak backdoor)
is duty-cycled. It transfers in bursts, and between bursts its windows are
drawn from the normal baseline itself, so classifiers assign a tuned
fraction of its windows to normal while the reverse direction stays clean.
"""

from __future__ import annotations

import numpy as np

from .labels import DEFAULT_CLASSES
from .telemetry import N_FEATURES, BehaviorProfile, family_slices

__all__ = [
    "CONFUSABLE_PAIR",
    "CONFUSABLE_IDLE_FRACTION",
    "default_profiles",
    "normal_profile",
]

# Baseline per-family mean levels (events per 5 s window) and the relative
# dispersion applied everywhere.
_FAMILY_BASE = {
    "net": 40.0,
    "mem": 55.0,
    "fs": 25.0,
    "cpu": 18.0,
    "sched": 30.0,
    "drv": 6.0,
    "rnd": 12.0,
}
_REL_DISPERSION = 0.16
_MIN_DISPERSION = 0.6
_FAMILY_RHO = {"net": 0.2, "fs": 0.2}

# Confusable pair: this fraction of thetick windows falls between transfer
# bursts and is drawn from the normal baseline (one-sided confusion).
CONFUSABLE_PAIR = ("thetick", "normal")
CONFUSABLE_IDLE_FRACTION = 0.25

# Signature of thetick's active (transferring) windows.
_THETICK_SIG = {"rnd": (range(4, 8), 5.0), "net": (range(13, 15), 4.0)}

# Per-class signatures: family -> (indices within family, shift in
# dispersion units). Blocks are distinct per class pair.
_SIGNATURES: dict[str, dict[str, tuple[range, float]]] = {
    "bashlite": {"net": (range(0, 6), 6.0), "cpu": (range(0, 3), 3.0)},
    "ransomware_poc": {"fs": (range(0, 8), 6.0), "cpu": (range(6, 12), 5.0),
                       "rnd": (range(0, 4), 4.0)},
    "beurk": {"drv": (range(0, 4), 6.0), "sched": (range(0, 4), 4.0)},
    "bdvl": {"drv": (range(4, 8), 6.0), "fs": (range(10, 14), 4.0)},
    "httpbackdoor": {"net": (range(8, 13), 6.0), "mem": (range(0, 5), 4.0)},
    "pythonbackdoor": {"mem": (range(6, 11), 6.0), "sched": (range(5, 9), 4.0),
                       "net": (range(6, 8), 3.0)},
}


def _baseline() -> tuple[np.ndarray, np.ndarray]:
    means = np.empty(N_FEATURES)
    for family, sl in family_slices():
        base = _FAMILY_BASE[family]
        width = sl.stop - sl.start
        # mild deterministic within-family variation so features differ
        ramp = np.linspace(0.6, 1.4, width)
        means[sl] = base * ramp
    dispersions = np.maximum(means * _REL_DISPERSION, _MIN_DISPERSION)
    return means, dispersions


def normal_profile() -> BehaviorProfile:
    means, dispersions = _baseline()
    return BehaviorProfile(label="normal", means=means, dispersions=dispersions,
                           family_rho=dict(_FAMILY_RHO))


def _shifted(label: str, signature: dict[str, tuple[range, float]]) -> BehaviorProfile:
    means, dispersions = _baseline()
    offsets = {family: sl.start for family, sl in family_slices()}
    for family, (indices, shift) in signature.items():
        for i in indices:
            j = offsets[family] + i
            means[j] += shift * dispersions[j]
    return BehaviorProfile(label=label, means=means, dispersions=dispersions,
                           family_rho=dict(_FAMILY_RHO))


def _thetick_profile(confusable: bool) -> BehaviorProfile:
    active = _shifted("thetick", _THETICK_SIG)
    if not confusable:
        return active
    idle_means, idle_dispersions = _baseline()
    return BehaviorProfile(
        label="thetick",
        means=active.means,
        dispersions=active.dispersions,
        family_rho=dict(_FAMILY_RHO),
        idle_means=idle_means,
        idle_dispersions=idle_dispersions,
        idle_fraction=CONFUSABLE_IDLE_FRACTION,
    )


def default_profiles(confusable: bool = True) -> list[BehaviorProfile]:
    """The eight default class profiles, in canonical class order."""
    profiles = []
    for label in DEFAULT_CLASSES:
        if label == "normal":
            profiles.append(normal_profile())
        elif label == "thetick":
            profiles.append(_thetick_profile(confusable))
        else:
            profiles.append(_shifted(label, _SIGNATURES[label]))
    return profiles
