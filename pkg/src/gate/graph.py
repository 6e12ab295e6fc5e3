"""Sparse graph and feature containers plus the canonical on-disk dataset format.

A dataset directory holds (UTF-8, LF line endings):

    meta.tsv        single line ``N<TAB>F<TAB>num_classes``
    edges.tsv       one ``src<TAB>dst`` pair per line, 0-based, undirected
    features.tsv    N lines, line i = F tab-separated reals for node i
    labels.tsv      N lines, line i = integer class of node i
    split_train.txt / split_val.txt / split_test.txt
                    one node id per line

Graphs are stored undirected and unweighted; loading symmetrizes, collapses
duplicate edges, and enforces a self-loop on every node.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

SPLIT_FILES = ("split_train.txt", "split_val.txt", "split_test.txt")


class DatasetError(Exception):
    """Malformed or inconsistent dataset files, with file/line context."""


def _fail(path, message, lineno=None):
    where = f"{path}:{lineno}" if lineno is not None else str(path)
    raise DatasetError(f"{where}: {message}")


@dataclass
class SparseGraph:
    """Undirected adjacency in CSR form with a self-loop on every node.

    ``col_indices[row_offsets[i]:row_offsets[i+1]]`` lists the neighbors of
    node i (node i included) in strictly increasing order. The structure is
    symmetric: entry (i, j) is stored iff (j, i) is. Immutable once built.
    """

    num_nodes: int
    row_offsets: np.ndarray
    col_indices: np.ndarray

    def __post_init__(self):
        self.row_offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        self.row_offsets.setflags(write=False)
        self.col_indices.setflags(write=False)

    @classmethod
    def from_edges(cls, num_nodes: int, edges) -> "SparseGraph":
        """Build from an (m, 2) array-like of undirected edges.

        Either orientation is accepted; duplicates and pre-existing self-loops
        collapse silently, and every node gets a self-loop.
        """
        if num_nodes < 1:
            raise ValueError("graph needs at least one node")
        pairs = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        loops = np.arange(num_nodes, dtype=np.int64)
        src = np.concatenate([pairs[:, 0], pairs[:, 1], loops])
        dst = np.concatenate([pairs[:, 1], pairs[:, 0], loops])
        # unique sorted (src, dst) keys; N^2 fits comfortably in int64
        keys = np.unique(src * num_nodes + dst)
        rows = keys // num_nodes
        cols = keys % num_nodes
        offsets = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=num_nodes), out=offsets[1:])
        return cls(num_nodes, offsets, cols)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def num_edges(self) -> int:
        """Undirected non-loop edge count E (nnz = N + 2E)."""
        return (self.nnz - self.num_nodes) // 2

    @cached_property
    def row_counts(self) -> np.ndarray:
        counts = np.diff(self.row_offsets)
        counts.setflags(write=False)
        return counts

    @cached_property
    def edge_rows(self) -> np.ndarray:
        """Row (source) index of every stored entry, aligned with col_indices."""
        rows = np.repeat(np.arange(self.num_nodes, dtype=np.int64), self.row_counts)
        rows.setflags(write=False)
        return rows

    def degree(self, i: int) -> int:
        """|N_i| including the self-loop."""
        if not 0 <= i < self.num_nodes:
            raise IndexError(f"node id {i} out of range [0, {self.num_nodes})")
        return int(self.row_offsets[i + 1] - self.row_offsets[i])

    def neighbors(self, i: int) -> np.ndarray:
        if not 0 <= i < self.num_nodes:
            raise IndexError(f"node id {i} out of range [0, {self.num_nodes})")
        return self.col_indices[self.row_offsets[i] : self.row_offsets[i + 1]]

    def stats(self) -> dict:
        """Size counters under both degree conventions (E/N and nnz/N)."""
        n = self.num_nodes
        return {
            "num_nodes": n,
            "num_edges": self.num_edges,
            "nnz": self.nnz,
            "edges_per_node": self.num_edges / n,
            "mean_neighbors": self.nnz / n,
        }

    def validate(self):
        """Check the CSR invariants; raises ValueError on violation."""
        off, cols, n = self.row_offsets, self.col_indices, self.num_nodes
        if off.shape != (n + 1,) or off[0] != 0 or off[-1] != cols.shape[0]:
            raise ValueError("row_offsets inconsistent with col_indices")
        if np.any(np.diff(off) < 1):
            raise ValueError("every node needs at least its self-loop")
        if cols.size and (cols.min() < 0 or cols.max() >= n):
            raise ValueError("column index out of range")
        rows = self.edge_rows
        order = cols + rows * n
        if np.any(np.diff(order) <= 0):
            raise ValueError("column indices not strictly increasing within rows")
        loop_keys = np.arange(n, dtype=np.int64) * (n + 1)
        if not np.all(np.isin(loop_keys, order)):
            raise ValueError("missing self-loop")
        transposed = np.sort(cols * n + rows)
        if not np.array_equal(np.sort(order), transposed):
            raise ValueError("adjacency not symmetric")


@dataclass
class FeatureMatrix:
    """Dense F x N node attributes; column i holds the features of node i."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("feature matrix must be 2-D (features x nodes)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature matrix contains non-finite values")
        self.values.setflags(write=False)

    @property
    def num_features(self) -> int:
        return self.values.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelVector:
    """One integer class per node; every class in [0, num_classes) occurs."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1:
            raise ValueError("labels must be 1-D")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        present = np.unique(self.labels)
        if present.size and (present[0] < 0 or present[-1] >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")
        if present.size != self.num_classes:
            raise ValueError("some class has no node")
        self.labels.setflags(write=False)


@dataclass
class SplitSpec:
    """Disjoint train/val/test node id sets."""

    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __post_init__(self):
        self.train_ids = np.ascontiguousarray(self.train_ids, dtype=np.int64)
        self.val_ids = np.ascontiguousarray(self.val_ids, dtype=np.int64)
        self.test_ids = np.ascontiguousarray(self.test_ids, dtype=np.int64)
        total = self.train_ids.size + self.val_ids.size + self.test_ids.size
        combined = np.concatenate([self.train_ids, self.val_ids, self.test_ids])
        if np.unique(combined).size != total:
            raise ValueError("split id sets overlap or contain duplicates")
        for arr in (self.train_ids, self.val_ids, self.test_ids):
            arr.setflags(write=False)

    def check_range(self, num_nodes: int):
        for name, arr in (("train", self.train_ids), ("val", self.val_ids), ("test", self.test_ids)):
            if arr.size and (arr.min() < 0 or arr.max() >= num_nodes):
                raise ValueError(f"{name} split contains node id outside [0, {num_nodes})")


class Dataset(NamedTuple):
    graph: SparseGraph
    features: FeatureMatrix
    labels: LabelVector
    splits: SplitSpec


def _read_int_pairs(path, num_nodes):
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                _fail(path, f"expected 2 tab-separated node ids, got {len(fields)}"
                            " (weighted edges are not supported)", lineno)
            try:
                s, d = int(fields[0]), int(fields[1])
            except ValueError:
                _fail(path, f"non-integer node id in {fields!r}", lineno)
            if not (0 <= s < num_nodes and 0 <= d < num_nodes):
                _fail(path, f"node id out of range [0, {num_nodes}) in edge {s}\t{d}", lineno)
            pairs.append((s, d))
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def _read_ints(path, bound=None, what="node id"):
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                i = int(line)
            except ValueError:
                _fail(path, f"non-integer {what} {line!r}", lineno)
            if bound is not None and not 0 <= i < bound:
                _fail(path, f"{what} {i} out of range [0, {bound})", lineno)
            ids.append(i)
    return np.asarray(ids, dtype=np.int64)


def _read_features(path, num_nodes, num_features):
    try:
        values = np.loadtxt(path, delimiter="\t", dtype=np.float64, ndmin=2)
    except ValueError:
        values = None
    if values is None or values.shape != (num_nodes, num_features) or not np.all(np.isfinite(values)):
        _scan_features(path, num_nodes, num_features)  # raises with line context
        _fail(path, "feature matrix malformed")  # unreachable safety net
    return values


def _scan_features(path, num_nodes, num_features):
    """Slow per-line pass used only to produce a precise diagnostic."""
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line and lineno > num_nodes:
                continue
            count += 1
            fields = line.split("\t")
            if len(fields) != num_features:
                _fail(path, f"expected {num_features} feature values, got {len(fields)}", lineno)
            for f in fields:
                try:
                    v = float(f)
                except ValueError:
                    _fail(path, f"non-numeric feature value {f!r}", lineno)
                if not np.isfinite(v):
                    _fail(path, f"non-finite feature value {f!r}", lineno)
    if count != num_nodes:
        _fail(path, f"expected {num_nodes} feature lines, found {count}")


def _require(directory, name):
    path = os.path.join(directory, name)
    if not os.path.isfile(path):
        raise DatasetError(f"{path}: missing file")
    return path


def load_dataset(directory) -> Dataset:
    """Load a canonical dataset directory.

    The returned graph is symmetrized with self-loops added and duplicate
    edges collapsed; reloading a saved dataset reproduces identical arrays.
    """
    directory = os.fspath(directory)
    meta_path = _require(directory, "meta.tsv")
    with open(meta_path, "r", encoding="utf-8") as fh:
        line = fh.readline().rstrip("\n")
    fields = line.split("\t")
    if len(fields) != 3:
        _fail(meta_path, f"expected 'N<TAB>F<TAB>num_classes', got {line!r}", 1)
    try:
        num_nodes, num_features, num_classes = (int(f) for f in fields)
    except ValueError:
        _fail(meta_path, f"non-integer meta field in {line!r}", 1)
    if num_nodes < 1 or num_features < 1 or num_classes < 1:
        _fail(meta_path, "meta counts must be positive", 1)

    edges = _read_int_pairs(_require(directory, "edges.tsv"), num_nodes)
    graph = SparseGraph.from_edges(num_nodes, edges)

    feat_path = _require(directory, "features.tsv")
    values = _read_features(feat_path, num_nodes, num_features)
    features = FeatureMatrix(np.ascontiguousarray(values.T))

    labels_path = _require(directory, "labels.tsv")
    raw = _read_ints(labels_path, what="class label")
    if raw.size != num_nodes:
        _fail(labels_path, f"expected {num_nodes} labels, found {raw.size}")
    if raw.size and (raw.min() < 0 or raw.max() >= num_classes):
        bad = int(np.argmax((raw < 0) | (raw >= num_classes)))
        _fail(labels_path, f"class {raw[bad]} outside [0, {num_classes})", bad + 1)
    try:
        labels = LabelVector(raw, num_classes)
    except ValueError as exc:
        _fail(labels_path, str(exc))

    parts = [_read_ints(_require(directory, name), bound=num_nodes) for name in SPLIT_FILES]
    try:
        splits = SplitSpec(*parts)
    except ValueError as exc:
        raise DatasetError(f"{directory}: {exc}") from exc
    return Dataset(graph, features, labels, splits)


def save_dataset(directory, dataset: Dataset):
    """Write a Dataset back out in the canonical format."""
    os.makedirs(directory, exist_ok=True)
    g, x, y, s = dataset
    with open(os.path.join(directory, "meta.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"{g.num_nodes}\t{x.num_features}\t{y.num_classes}\n")
    rows, cols = g.edge_rows, g.col_indices
    upper = rows < cols  # one line per undirected edge, loops implied
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8") as fh:
        for i, j in zip(rows[upper], cols[upper]):
            fh.write(f"{i}\t{j}\n")
    with open(os.path.join(directory, "features.tsv"), "w", encoding="utf-8") as fh:
        for col in x.values.T:
            fh.write("\t".join(repr(float(v)) for v in col) + "\n")
    with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(v)}\n" for v in y.labels)
    for name, ids in zip(SPLIT_FILES, (s.train_ids, s.val_ids, s.test_ids)):
        with open(os.path.join(directory, name), "w", encoding="utf-8") as fh:
            fh.writelines(f"{int(v)}\n" for v in ids)


def induce_subgraph(graph: SparseGraph, features: FeatureMatrix, keep):
    """Restrict to ``keep`` (renumbered), dropping edges that leave the set.

    Returns (subgraph, subfeatures, index_map) where index_map[new] = old.
    Self-loops survive by construction, so no node ends up isolated.
    """
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    if keep.size == 0:
        raise ValueError("keep set is empty")
    if keep[0] < 0 or keep[-1] >= graph.num_nodes:
        raise ValueError("keep set contains node id out of range")
    old_to_new = np.full(graph.num_nodes, -1, dtype=np.int64)
    old_to_new[keep] = np.arange(keep.size, dtype=np.int64)
    rows, cols = graph.edge_rows, graph.col_indices
    mask = (old_to_new[rows] >= 0) & (old_to_new[cols] >= 0)
    new_rows = old_to_new[rows[mask]]
    new_cols = old_to_new[cols[mask]]
    offsets = np.zeros(keep.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(new_rows, minlength=keep.size), out=offsets[1:])
    sub = SparseGraph(int(keep.size), offsets, new_cols)
    return sub, FeatureMatrix(features.values[:, keep]), keep


def degree(graph: SparseGraph, i: int) -> int:
    """Neighborhood size |N_i| of node i, self-loop included."""
    return graph.degree(i)
