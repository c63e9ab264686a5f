"""Behavioral telemetry: fixed-width feature vectors over 5-second windows.

The default source is a synthetic generator driven by per-class Gaussian
profiles. Real collectors can plug in by exposing the same one-method
source protocol (``next_window``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EndOfStream, FormatError, StratifyError

__all__ = [
    "FAMILY_LAYOUT",
    "N_FEATURES",
    "DEFAULT_WINDOW_S",
    "FeatureVector",
    "BehaviorProfile",
    "Dataset",
    "Scaler",
    "SyntheticSource",
    "SwitchableSource",
    "feature_names",
    "csv_columns",
    "family_slices",
    "collect_window",
    "generate_dataset",
    "minmax_fit",
    "minmax_apply",
    "scale_dataset",
    "split",
    "save_dataset",
    "load_dataset",
    "save_scaler",
    "load_scaler",
]

# Feature families and their widths; order is the on-disk column order.
FAMILY_LAYOUT: tuple[tuple[str, int], ...] = (
    ("net", 15),
    ("mem", 12),
    ("fs", 15),
    ("cpu", 12),
    ("sched", 10),
    ("drv", 8),
    ("rnd", 8),
)
N_FEATURES = sum(n for _, n in FAMILY_LAYOUT)
DEFAULT_WINDOW_S = 5.0


def family_slices() -> list[tuple[str, slice]]:
    out = []
    start = 0
    for name, width in FAMILY_LAYOUT:
        out.append((name, slice(start, start + width)))
        start += width
    return out


def feature_names() -> list[str]:
    """Family-prefixed names: net_00..net_14, mem_00.., .., rnd_07."""
    names = []
    for family, width in FAMILY_LAYOUT:
        names.extend(f"{family}_{i:02d}" for i in range(width))
    return names


def csv_columns() -> list[str]:
    """Dataset file column names: f000..f079."""
    return [f"f{i:03d}" for i in range(N_FEATURES)]


@dataclass
class FeatureVector:
    """One observation window: `features` holds event counts/rates."""

    features: np.ndarray
    window_start: float = 0.0
    label: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape != (N_FEATURES,):
            raise ConfigError(
                f"feature vector must have {N_FEATURES} values, got {self.features.shape}")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("feature values must be finite")


@dataclass
class BehaviorProfile:
    """Gaussian generator parameters for one behavior class.

    `family_rho` adds equicorrelated noise within a feature family
    (correlation hint); families absent from the dict stay independent.
    Negative draws clamp to zero since features model event counts.

    A duty-cycled behavior (one that is dormant part of the time) sets
    `idle_fraction` plus `idle_means`/`idle_dispersions`; that fraction of
    windows is drawn from the idle parameters instead.
    """

    label: str
    means: np.ndarray
    dispersions: np.ndarray
    family_rho: dict[str, float] = field(default_factory=dict)
    idle_means: np.ndarray | None = None
    idle_dispersions: np.ndarray | None = None
    idle_fraction: float = 0.0

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.dispersions = np.asarray(self.dispersions, dtype=np.float64)
        if self.means.shape != (N_FEATURES,) or self.dispersions.shape != (N_FEATURES,):
            raise ConfigError(
                f"profile {self.label!r} must define all {N_FEATURES} features")
        if np.any(self.dispersions < 0):
            raise ConfigError(f"profile {self.label!r} has negative dispersion")
        if not 0.0 <= self.idle_fraction <= 1.0:
            raise ConfigError(
                f"profile {self.label!r} idle_fraction must be in [0, 1]")
        if self.idle_fraction > 0.0:
            if self.idle_means is None or self.idle_dispersions is None:
                raise ConfigError(
                    f"profile {self.label!r} sets idle_fraction without idle "
                    f"parameters")
            self.idle_means = np.asarray(self.idle_means, dtype=np.float64)
            self.idle_dispersions = np.asarray(self.idle_dispersions,
                                               dtype=np.float64)
            if self.idle_means.shape != (N_FEATURES,) \
                    or self.idle_dispersions.shape != (N_FEATURES,):
                raise ConfigError(
                    f"profile {self.label!r} idle parameters must define all "
                    f"{N_FEATURES} features")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        # idle mask is drawn first so profiles without a duty cycle keep
        # their exact historical draw sequence
        idle = rng.random(n) < self.idle_fraction if self.idle_fraction > 0.0 \
            else None
        eps = rng.standard_normal((n, N_FEATURES))
        for family, sl in family_slices():
            rho = float(self.family_rho.get(family, 0.0))
            if rho:
                shared = rng.standard_normal((n, 1))
                eps[:, sl] = rho * shared + math.sqrt(1.0 - rho * rho) * eps[:, sl]
        means = np.broadcast_to(self.means, (n, N_FEATURES))
        disps = np.broadcast_to(self.dispersions, (n, N_FEATURES))
        if idle is not None and idle.any():
            means = np.where(idle[:, None], self.idle_means, means)
            disps = np.where(idle[:, None], self.idle_dispersions, disps)
        x = means + disps * eps
        np.maximum(x, 0.0, out=x)
        return x


@dataclass
class Dataset:
    vectors: list[FeatureVector]
    classes: list[str]
    provenance: str = ""

    def __post_init__(self):
        known = set(self.classes)
        for v in self.vectors:
            if v.label is None or v.label not in known:
                raise ConfigError(f"vector label {v.label!r} not in class list")

    def __len__(self) -> int:
        return len(self.vectors)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, y) with y as integer codes into `classes`."""
        if not self.vectors:
            return np.empty((0, N_FEATURES)), np.empty((0,), dtype=np.int64)
        index = {c: i for i, c in enumerate(self.classes)}
        x = np.stack([v.features for v in self.vectors])
        y = np.fromiter((index[v.label] for v in self.vectors), dtype=np.int64,
                        count=len(self.vectors))
        return x, y


@dataclass
class Scaler:
    mins: np.ndarray
    maxs: np.ndarray


class SyntheticSource:
    """Draws windows from one fixed profile; optionally finite."""

    def __init__(self, profile: BehaviorProfile, seed: int,
                 max_windows: int | None = None, start_time: float = 0.0):
        self.profile = profile
        self._rng = np.random.default_rng(seed)
        self._next_start = float(start_time)
        self._remaining = max_windows

    def next_window(self, duration_s: float) -> FeatureVector:
        if self._remaining is not None:
            if self._remaining <= 0:
                raise EndOfStream("synthetic source exhausted")
            self._remaining -= 1
        row = self.profile.sample(self._rng, 1)[0]
        fv = FeatureVector(row, window_start=self._next_start, label=self.profile.label)
        self._next_start += float(duration_s)
        return fv


class SwitchableSource:
    """Synthetic source whose generating profile can be switched between
    windows; the scenario runner uses this to reflect the currently active
    behavior."""

    def __init__(self, profiles: list[BehaviorProfile], seed: int,
                 initial: str, start_time: float = 0.0):
        self._profiles = {p.label: p for p in profiles}
        if len(self._profiles) != len(profiles):
            raise ConfigError("duplicate labels among profiles")
        if initial not in self._profiles:
            raise ConfigError(f"unknown initial profile {initial!r}")
        self._rng = np.random.default_rng(seed)
        self._label = initial
        self._next_start = float(start_time)

    @property
    def label(self) -> str:
        return self._label

    def set_profile(self, label: str) -> None:
        if label not in self._profiles:
            raise ConfigError(f"unknown profile {label!r}")
        self._label = label

    def next_window(self, duration_s: float) -> FeatureVector:
        row = self._profiles[self._label].sample(self._rng, 1)[0]
        fv = FeatureVector(row, window_start=self._next_start, label=self._label)
        self._next_start += float(duration_s)
        return fv


def collect_window(source, duration_s: float = DEFAULT_WINDOW_S) -> FeatureVector:
    """Pull one window covering [t, t+duration_s) from a source."""
    if duration_s <= 0:
        raise ConfigError(f"window duration must be positive, got {duration_s}")
    return source.next_window(float(duration_s))


def class_seed(seed: int, label: str) -> int:
    """Stable per-class generator seed (hash-derived, platform-independent)."""
    digest = hashlib.sha256(f"telemetry:{seed}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generate_dataset(profiles: list[BehaviorProfile], n_per_class: int,
                     seed: int, window_s: float = DEFAULT_WINDOW_S) -> Dataset:
    """Labeled synthetic dataset: n_per_class windows per profile,
    reproducible from seed."""
    if not profiles:
        raise ConfigError("at least one profile required")
    if n_per_class < 1:
        raise ConfigError(f"n_per_class must be >= 1, got {n_per_class}")
    labels = [p.label for p in profiles]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate labels among profiles: {labels}")
    vectors: list[FeatureVector] = []
    for profile in profiles:
        rng = np.random.default_rng(class_seed(seed, profile.label))
        rows = profile.sample(rng, n_per_class)
        for i in range(n_per_class):
            vectors.append(FeatureVector(rows[i], window_start=i * window_s,
                                         label=profile.label))
    return Dataset(vectors=vectors, classes=labels,
                   provenance=f"synthetic seed={seed} n_per_class={n_per_class}")


def minmax_fit(train: Dataset) -> Scaler:
    x, _ = train.as_arrays()
    if x.shape[0] == 0:
        raise ConfigError("cannot fit scaler on empty dataset")
    return Scaler(mins=x.min(axis=0), maxs=x.max(axis=0))


def minmax_apply(scaler: Scaler, values: np.ndarray) -> np.ndarray:
    """Affine [0,1] map per feature; constant features map to 0; values
    outside the fit range are not clamped."""
    values = np.asarray(values, dtype=np.float64)
    span = scaler.maxs - scaler.mins
    safe = np.where(span == 0, 1.0, span)
    out = (values - scaler.mins) / safe
    if out.ndim == 1:
        out[span == 0] = 0.0
    else:
        out[:, span == 0] = 0.0
    return out


def scale_dataset(dataset: Dataset, scaler: Scaler) -> Dataset:
    """Copy of the dataset with every vector passed through the scaler."""
    vectors = [FeatureVector(minmax_apply(scaler, v.features),
                             window_start=v.window_start, label=v.label)
               for v in dataset.vectors]
    return Dataset(vectors, list(dataset.classes),
                   provenance=dataset.provenance + " [scaled]")


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split; per-class ratios deviate from the global ratio by at
    most one vector, both partitions non-empty for every class."""
    if not (0.0 < train_fraction < 1.0):
        raise ConfigError(f"train_fraction must be in (0,1), got {train_fraction}")
    by_class: dict[str, list[int]] = {c: [] for c in dataset.classes}
    for i, v in enumerate(dataset.vectors):
        by_class[v.label].append(i)
    rng = np.random.default_rng(class_seed(seed, "split"))
    train_idx: list[int] = []
    test_idx: list[int] = []
    for cls in dataset.classes:
        idx = by_class[cls]
        n = len(idx)
        if n < 2:
            raise StratifyError(f"class {cls!r} has {n} member(s); need >= 2 to split")
        perm = rng.permutation(n)
        n_train = int(round(train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        chosen = [idx[p] for p in perm]
        train_idx.extend(chosen[:n_train])
        test_idx.extend(chosen[n_train:])
    train = Dataset([dataset.vectors[i] for i in train_idx], list(dataset.classes),
                    provenance=dataset.provenance + " [train]")
    test = Dataset([dataset.vectors[i] for i in test_idx], list(dataset.classes),
                   provenance=dataset.provenance + " [test]")
    return train, test


# ---------------------------------------------------------------------------
# On-disk formats. Dataset: CSV `label,f000..f079`, UTF-8, LF endings.
# Scaler: plain text, one `name min max` line per feature. Floats use
# shortest round-trip representation, so both formats are lossless.
# ---------------------------------------------------------------------------

def save_dataset(dataset: Dataset, path: str) -> None:
    cols = csv_columns()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("label," + ",".join(cols) + "\n")
        for v in dataset.vectors:
            fh.write(v.label + "," + ",".join(repr(float(x)) for x in v.features) + "\n")


def load_dataset(path: str, window_s: float = DEFAULT_WINDOW_S) -> Dataset:
    expected = "label," + ",".join(csv_columns())
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != expected:
            raise FormatError(f"{path}: bad dataset header (line 1)")
        vectors: list[FeatureVector] = []
        classes: list[str] = []
        seen: set[str] = set()
        per_class_count: dict[str, int] = {}
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != N_FEATURES + 1:
                raise FormatError(
                    f"{path}: line {lineno}: expected {N_FEATURES + 1} fields, "
                    f"got {len(parts)}")
            label = parts[0]
            try:
                values = np.array([float(p) for p in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from None
            k = per_class_count.get(label, 0)
            per_class_count[label] = k + 1
            vectors.append(FeatureVector(values, window_start=k * window_s, label=label))
            if label not in seen:
                seen.add(label)
                classes.append(label)
    return Dataset(vectors=vectors, classes=classes, provenance=f"import {path}")


def save_scaler(scaler: Scaler, path: str) -> None:
    cols = csv_columns()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"minmax v1 {N_FEATURES}\n")
        # repr of a Python float round-trips exactly; numpy scalar repr does not
        for i, name in enumerate(cols):
            fh.write(f"{name} {float(scaler.mins[i])!r} {float(scaler.maxs[i])!r}\n")


def load_scaler(path: str) -> Scaler:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "minmax" or header[1] != "v1":
            raise FormatError(f"{path}: bad scaler header (line 1)")
        count = int(header[2])
        if count != N_FEATURES:
            raise FormatError(
                f"{path}: scaler has {count} features, expected {N_FEATURES}")
        mins = np.empty(count)
        maxs = np.empty(count)
        for i in range(count):
            parts = fh.readline().split()
            if len(parts) != 3:
                raise FormatError(f"{path}: line {i + 2}: expected 3 fields")
            mins[i] = float(parts[1])
            maxs[i] = float(parts[2])
    return Scaler(mins=mins, maxs=maxs)
