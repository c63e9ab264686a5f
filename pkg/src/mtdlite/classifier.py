"""From-scratch supervised classifiers: decision tree (Gini), random forest,
and k-nearest-neighbors, with evaluation reporting.

Determinism rules used throughout: stable sorts, midpoint thresholds between
consecutive distinct sorted values, and tie-breaks by lowest index (feature,
threshold, class).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, TrainError
from .telemetry import Dataset

__all__ = [
    "TreeParams",
    "ForestParams",
    "DecisionTreeModel",
    "RandomForestModel",
    "KnnModel",
    "EvalReport",
    "train_tree",
    "train_forest",
    "train_knn",
    "predict",
    "predict_batch",
    "evaluate",
]


@dataclass
class TreeParams:
    max_depth: int = 16
    min_samples_leaf: int = 2


@dataclass
class ForestParams:
    tree: TreeParams = field(default_factory=TreeParams)
    # None -> floor(sqrt(n_features)) at train time
    features_per_split: int | None = None
    bootstrap: bool = True


@dataclass
class DecisionTreeModel:
    """Array-of-nodes tree. feature[i] == -1 marks a leaf; histogram rows
    hold per-class training counts reaching each node."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    histogram: np.ndarray
    classes: list[str]
    params: TreeParams = field(default_factory=TreeParams)

    @property
    def n_features(self) -> int:
        return self._n_features

    def __post_init__(self):
        self._n_features = -1  # set by trainer / loader

    def depth(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)


@dataclass
class RandomForestModel:
    trees: list[DecisionTreeModel]
    classes: list[str]
    features_per_split: int
    seed: int

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features


@dataclass
class KnnModel:
    points: np.ndarray
    labels: np.ndarray
    k: int
    classes: list[str]

    @property
    def n_features(self) -> int:
        return self.points.shape[1]


class _TreeBuilder:
    """Grows one tree depth-first (left child before right) so node ids are
    reproducible."""

    def __init__(self, x: np.ndarray, y: np.ndarray, n_classes: int,
                 params: TreeParams, feature_rng: np.random.Generator | None,
                 m_features: int):
        self.x = x
        self.y = y
        self.n_classes = n_classes
        self.params = params
        self.rng = feature_rng
        self.m = m_features
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.hist: list[np.ndarray] = []

    def _new_node(self, counts: np.ndarray) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.hist.append(counts)
        return len(self.feature) - 1

    def _candidate_features(self) -> np.ndarray:
        n_feat = self.x.shape[1]
        if self.rng is None or self.m >= n_feat:
            return np.arange(n_feat)
        chosen = self.rng.choice(n_feat, size=self.m, replace=False)
        chosen.sort()
        return chosen

    def _best_split(self, idx: np.ndarray, counts: np.ndarray
                    ) -> tuple[int, float] | None:
        n = idx.shape[0]
        msl = self.params.min_samples_leaf
        total = counts.astype(np.float64)
        parent_gini = 1.0 - float(np.square(total / n).sum())
        best: tuple[float, int, float] | None = None
        y = self.y[idx]
        onehot = np.zeros((n, self.n_classes), dtype=np.float64)
        onehot[np.arange(n), y] = 1.0
        for f in self._candidate_features():
            col = self.x[idx, f]
            order = np.argsort(col, kind="mergesort")
            xs = col[order]
            # positions where a boundary between distinct values exists
            cut = np.nonzero(xs[1:] > xs[:-1])[0] + 1
            if cut.size == 0:
                continue
            cut = cut[(cut >= msl) & (cut <= n - msl)]
            if cut.size == 0:
                continue
            left_counts = np.cumsum(onehot[order], axis=0)[cut - 1]
            nl = cut.astype(np.float64)
            nr = n - nl
            gl = 1.0 - np.square(left_counts / nl[:, None]).sum(axis=1)
            gr = 1.0 - np.square((total - left_counts) / nr[:, None]).sum(axis=1)
            weighted = (nl * gl + nr * gr) / n
            j = int(np.argmin(weighted))
            w = float(weighted[j])
            if w < parent_gini - 1e-12 and (best is None or w < best[0] - 1e-12):
                thr = (xs[cut[j] - 1] + xs[cut[j]]) / 2.0
                best = (w, int(f), float(thr))
        if best is None:
            return None
        return best[1], best[2]

    def grow(self, idx: np.ndarray, depth: int) -> int:
        counts = np.bincount(self.y[idx], minlength=self.n_classes)
        node = self._new_node(counts)
        n = idx.shape[0]
        if depth >= self.params.max_depth or n < 2 * self.params.min_samples_leaf \
                or np.count_nonzero(counts) <= 1:
            return node
        found = self._best_split(idx, counts)
        if found is None:
            return node
        f, thr = found
        go_left = self.x[idx, f] <= thr
        left_idx = idx[go_left]
        right_idx = idx[~go_left]
        self.feature[node] = f
        self.threshold[node] = thr
        self.left[node] = self.grow(left_idx, depth + 1)
        self.right[node] = self.grow(right_idx, depth + 1)
        return node

    def build(self, classes: list[str]) -> DecisionTreeModel:
        self.grow(np.arange(self.x.shape[0]), 0)
        model = DecisionTreeModel(
            feature=np.array(self.feature, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            histogram=np.stack(self.hist).astype(np.uint32),
            classes=list(classes),
            params=self.params,
        )
        model._n_features = self.x.shape[1]
        return model


def _check_train(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    if len(dataset) == 0:
        raise TrainError("training dataset is empty")
    return dataset.as_arrays()


def train_tree(train: Dataset, params: TreeParams | None = None) -> DecisionTreeModel:
    """Greedy Gini-minimizing decision tree; deterministic given (train, params)."""
    params = params or TreeParams()
    x, y = _check_train(train)
    builder = _TreeBuilder(x, y, len(train.classes), params, None, x.shape[1])
    return builder.build(train.classes)


def train_forest(train: Dataset, n_trees: int = 100,
                 params: ForestParams | None = None, seed: int = 0) -> RandomForestModel:
    """Bootstrap forest; per-tree sample and feature draws derive from
    spawned child seeds, so results are stable across platforms."""
    if n_trees < 1:
        raise TrainError(f"n_trees must be >= 1, got {n_trees}")
    params = params or ForestParams()
    x, y = _check_train(train)
    n, n_feat = x.shape
    m = params.features_per_split or int(np.floor(np.sqrt(n_feat)))
    m = max(1, min(m, n_feat))
    trees = []
    for child in np.random.SeedSequence(seed).spawn(n_trees):
        rng = np.random.default_rng(child)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
            xs, ys = x[sample], y[sample]
        else:
            xs, ys = x, y
        builder = _TreeBuilder(xs, ys, len(train.classes), params.tree, rng, m)
        trees.append(builder.build(train.classes))
    return RandomForestModel(trees=trees, classes=list(train.classes),
                             features_per_split=m, seed=seed)


def train_knn(train: Dataset, k: int = 5) -> KnnModel:
    if k < 1:
        raise TrainError(f"k must be >= 1, got {k}")
    x, y = _check_train(train)
    if k > x.shape[0]:
        raise TrainError(f"k={k} exceeds training size {x.shape[0]}")
    return KnnModel(points=x, labels=y, k=k, classes=list(train.classes))


def _tree_leaves(tree: DecisionTreeModel, x: np.ndarray) -> np.ndarray:
    node = np.zeros(x.shape[0], dtype=np.int32)
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not active.any():
            return node
        rows = np.nonzero(active)[0]
        cur = node[rows]
        go_left = x[rows, feat[rows]] <= tree.threshold[cur]
        node[rows] = np.where(go_left, tree.left[cur], tree.right[cur])


def _tree_predict_batch(tree: DecisionTreeModel, x: np.ndarray
                        ) -> tuple[np.ndarray, np.ndarray]:
    leaves = _tree_leaves(tree, x)
    hist = tree.histogram[leaves].astype(np.float64)
    codes = np.argmax(hist, axis=1)
    conf = hist[np.arange(len(x)), codes] / hist.sum(axis=1)
    return codes, conf


def _forest_predict_batch(forest: RandomForestModel, x: np.ndarray
                          ) -> tuple[np.ndarray, np.ndarray]:
    n_classes = len(forest.classes)
    votes = np.zeros((x.shape[0], n_classes), dtype=np.int64)
    for tree in forest.trees:
        codes, _ = _tree_predict_batch(tree, x)
        votes[np.arange(x.shape[0]), codes] += 1
    winners = np.argmax(votes, axis=1)
    conf = votes[np.arange(x.shape[0]), winners] / len(forest.trees)
    return winners, conf


def _knn_predict_batch(model: KnnModel, x: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    n_classes = len(model.classes)
    codes = np.empty(x.shape[0], dtype=np.int64)
    conf = np.empty(x.shape[0], dtype=np.float64)
    for i in range(x.shape[0]):
        d = np.square(model.points - x[i]).sum(axis=1)
        # stable order: distance ties resolve to the earliest training point
        near = np.argsort(d, kind="mergesort")[:model.k]
        votes = np.bincount(model.labels[near], minlength=n_classes)
        codes[i] = int(np.argmax(votes))
        conf[i] = votes[codes[i]] / model.k
    return codes, conf


def predict_batch(model, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized prediction: returns (class codes, confidences)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise ShapeError(
            f"expected shape (n, {model.n_features}), got {x.shape}")
    if isinstance(model, DecisionTreeModel):
        return _tree_predict_batch(model, x)
    if isinstance(model, RandomForestModel):
        return _forest_predict_batch(model, x)
    if isinstance(model, KnnModel):
        return _knn_predict_batch(model, x)
    raise ShapeError(f"unknown model type {type(model).__name__}")


def predict(model, vector) -> tuple[str, float]:
    """Classify one vector; confidence is the leaf-histogram proportion
    (tree), vote fraction (forest), or neighbor-vote fraction (k-NN)."""
    values = np.asarray(getattr(vector, "features", vector), dtype=np.float64)
    if values.ndim != 1 or values.shape[0] != model.n_features:
        raise ShapeError(
            f"expected {model.n_features} features, got shape {values.shape}")
    codes, conf = predict_batch(model, values[None, :])
    return model.classes[int(codes[0])], float(conf[0])


@dataclass
class EvalReport:
    classes: list[str]
    confusion: np.ndarray  # rows = true, columns = predicted, counts
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    macro_f1: float

    def row_percentages(self) -> np.ndarray:
        totals = self.confusion.sum(axis=1, keepdims=True).astype(np.float64)
        safe = np.where(totals == 0, 1.0, totals)
        return 100.0 * self.confusion / safe

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "confusion": self.confusion.tolist(),
            "precision": [round(float(p), 6) for p in self.precision],
            "recall": [round(float(r), 6) for r in self.recall],
            "f1": [round(float(f), 6) for f in self.f1],
            "macro_f1": round(float(self.macro_f1), 6),
        }

    def to_text(self) -> str:
        width = max(12, max(len(c) for c in self.classes) + 2)
        lines = ["per-class metrics:"]
        header = f"{'class':<{width}}{'precision':>10}{'recall':>10}{'f1':>10}"
        lines.append(header)
        for i, cls in enumerate(self.classes):
            lines.append(f"{cls:<{width}}{self.precision[i]:>10.3f}"
                         f"{self.recall[i]:>10.3f}{self.f1[i]:>10.3f}")
        lines.append(f"macro F1: {self.macro_f1:.2f}")
        lines.append("confusion matrix (rows = true, cols = predicted):")
        head = " " * width + "".join(f"{c[:8]:>9}" for c in self.classes)
        lines.append(head)
        for i, cls in enumerate(self.classes):
            row = "".join(f"{int(v):>9}" for v in self.confusion[i])
            lines.append(f"{cls:<{width}}{row}")
        return "\n".join(lines)


def evaluate(model, test: Dataset) -> EvalReport:
    if len(test) == 0:
        raise TrainError("test dataset is empty")
    x, y = test.as_arrays()
    codes, _ = predict_batch(model, x)
    # map model class order onto the dataset class order
    if model.classes != test.classes:
        remap = np.array([test.classes.index(c) for c in model.classes])
        codes = remap[codes]
    n = len(test.classes)
    confusion = np.zeros((n, n), dtype=np.int64)
    np.add.at(confusion, (y, codes), 1)
    tp = np.diag(confusion).astype(np.float64)
    pred_totals = confusion.sum(axis=0).astype(np.float64)
    true_totals = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, pred_totals, out=np.zeros(n), where=pred_totals > 0)
    recall = np.divide(tp, true_totals, out=np.zeros(n), where=true_totals > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n), where=denom > 0)
    return EvalReport(classes=list(test.classes), confusion=confusion,
                      precision=precision, recall=recall, f1=f1,
                      macro_f1=float(f1.mean()))
