"""Portable binary model serialization.

Layout (all little-endian), documented for external readers:

    offset 0: magic `MTDM` (4 bytes)
    u16 format version (currently 1)
    u8  model kind: 1 = decision tree, 2 = random forest, 3 = k-NN
    u8  reserved (0)
    u16 feature count
    u16 class count
    per class: u16 byte length + UTF-8 name
    then the kind-specific payload:
      tree:   one tree block
      forest: u32 tree count, u16 features-per-split, u64 train seed,
              then tree blocks
      k-NN:   u16 k, u32 sample count, then f64 features row-major,
              then u32 label codes
    tree block: u32 node count, then per node:
      i32 feature (-1 = leaf), f64 threshold, i32 left, i32 right,
      u32 histogram[class count]

Corruption surfaces as FormatError carrying the byte offset.
"""

from __future__ import annotations

import struct

import numpy as np

from .classifier import DecisionTreeModel, KnnModel, RandomForestModel
from .errors import FormatError

__all__ = ["MAGIC", "FORMAT_VERSION", "save_model", "load_model"]

MAGIC = b"MTDM"
FORMAT_VERSION = 1
_KIND_TREE = 1
_KIND_FOREST = 2
_KIND_KNN = 3


class _Writer:
    def __init__(self):
        self.chunks: list[bytes] = []

    def pack(self, fmt: str, *values) -> None:
        self.chunks.append(struct.pack("<" + fmt, *values))

    def raw(self, data: bytes) -> None:
        self.chunks.append(data)

    def getvalue(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        size = struct.calcsize(fmt)
        if self.offset + size > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at offset {self.offset} "
                f"(needed {size} bytes, {len(self.data) - self.offset} left)")
        values = struct.unpack_from(fmt, self.data, self.offset)
        self.offset += size
        return values if len(values) > 1 else values[0]

    def raw(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at offset {self.offset} "
                f"(needed {size} bytes, {len(self.data) - self.offset} left)")
        out = self.data[self.offset:self.offset + size]
        self.offset += size
        return out


def _write_tree(w: _Writer, tree: DecisionTreeModel, n_classes: int) -> None:
    n_nodes = len(tree.feature)
    w.pack("I", n_nodes)
    hist = tree.histogram.astype(np.uint32)
    for i in range(n_nodes):
        w.pack("idii", int(tree.feature[i]), float(tree.threshold[i]),
               int(tree.left[i]), int(tree.right[i]))
        w.raw(hist[i].astype("<u4").tobytes())


def _read_tree(r: _Reader, n_classes: int, n_features: int,
               classes: list[str]) -> DecisionTreeModel:
    n_nodes = r.unpack("I")
    if n_nodes == 0:
        raise FormatError(f"{r.path}: empty tree block at offset {r.offset - 4}")
    feature = np.empty(n_nodes, dtype=np.int32)
    threshold = np.empty(n_nodes, dtype=np.float64)
    left = np.empty(n_nodes, dtype=np.int32)
    right = np.empty(n_nodes, dtype=np.int32)
    hist = np.empty((n_nodes, n_classes), dtype=np.uint32)
    for i in range(n_nodes):
        feature[i], threshold[i], left[i], right[i] = r.unpack("idii")
        hist[i] = np.frombuffer(r.raw(4 * n_classes), dtype="<u4")
        if feature[i] >= n_features or feature[i] < -1:
            raise FormatError(
                f"{r.path}: node {i} references feature {feature[i]} "
                f"outside 0..{n_features - 1} (offset {r.offset})")
        for child in (left[i], right[i]):
            if child >= n_nodes or (feature[i] >= 0 and child < 0):
                raise FormatError(
                    f"{r.path}: node {i} has invalid child {child} "
                    f"(offset {r.offset})")
    model = DecisionTreeModel(feature=feature, threshold=threshold, left=left,
                              right=right, histogram=hist, classes=list(classes))
    model._n_features = n_features
    return model


def save_model(model, path: str) -> None:
    w = _Writer()
    w.raw(MAGIC)
    if isinstance(model, DecisionTreeModel):
        kind = _KIND_TREE
    elif isinstance(model, RandomForestModel):
        kind = _KIND_FOREST
    elif isinstance(model, KnnModel):
        kind = _KIND_KNN
    else:
        raise FormatError(f"cannot serialize model type {type(model).__name__}")
    w.pack("HBB", FORMAT_VERSION, kind, 0)
    w.pack("HH", model.n_features, len(model.classes))
    for cls in model.classes:
        raw = cls.encode("utf-8")
        w.pack("H", len(raw))
        w.raw(raw)
    n_classes = len(model.classes)
    if kind == _KIND_TREE:
        _write_tree(w, model, n_classes)
    elif kind == _KIND_FOREST:
        w.pack("IHQ", len(model.trees), model.features_per_split, model.seed)
        for tree in model.trees:
            _write_tree(w, tree, n_classes)
    else:
        w.pack("HI", model.k, model.points.shape[0])
        w.raw(model.points.astype("<f8").tobytes())
        w.raw(model.labels.astype("<u4").tobytes())
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_model(path: str):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    magic = r.raw(4)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, kind, _reserved = r.unpack("HBB")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: format version {version}, expected {FORMAT_VERSION}")
    n_features, n_classes = r.unpack("HH")
    if n_classes == 0:
        raise FormatError(f"{path}: zero classes at offset {r.offset - 2}")
    classes = []
    for _ in range(n_classes):
        length = r.unpack("H")
        classes.append(r.raw(length).decode("utf-8"))
    if kind == _KIND_TREE:
        model = _read_tree(r, n_classes, n_features, classes)
    elif kind == _KIND_FOREST:
        n_trees, m, seed = r.unpack("IHQ")
        if n_trees == 0:
            raise FormatError(f"{path}: forest with zero trees")
        trees = [_read_tree(r, n_classes, n_features, classes)
                 for _ in range(n_trees)]
        model = RandomForestModel(trees=trees, classes=classes,
                                  features_per_split=m, seed=seed)
    elif kind == _KIND_KNN:
        k, n = r.unpack("HI")
        points = np.frombuffer(r.raw(8 * n * n_features), dtype="<f8")
        points = points.reshape(n, n_features).astype(np.float64)
        labels = np.frombuffer(r.raw(4 * n), dtype="<u4").astype(np.int64)
        model = KnnModel(points=points, labels=labels, k=k, classes=classes)
    else:
        raise FormatError(f"{path}: unknown model kind {kind} at offset 6")
    if r.offset != len(data):
        raise FormatError(
            f"{path}: {len(data) - r.offset} trailing bytes at offset {r.offset}")
    return model
