"""Convert Planetoid-distribution benchmark files into canonical TSV datasets.

The upstream distribution ships, per dataset ``<name>``:

    ind.<name>.x / .tx / .allx    pickled scipy sparse feature blocks
    ind.<name>.y / .ty / .ally    pickled one-hot label blocks
    ind.<name>.graph              pickled {node: [neighbors]} adjacency
    ind.<name>.test.index         text file of test node ids

Reassembly follows the standard split convention: the labeled block heads the
node ordering (train = first len(y) nodes, val = the following block), test
nodes are reordered into their index positions, and gaps in the test index
range (Citeseer) are zero-filled. The output is the canonical directory
layout consumed by the training package: meta/edges/features/labels TSVs
plus split_train/val/test id lists.
"""

from __future__ import annotations

import os
import pickle
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

FILE_SUFFIXES = ("x", "y", "tx", "ty", "allx", "ally", "graph", "test.index")
VAL_SIZE = 500

# published statistics: nodes, edges, features, classes, train/val/test sizes
EXPECTED_STATS = {
    "cora": {"nodes": 2708, "edges": 5429, "features": 1433, "classes": 7,
             "train": 140, "val": 500, "test": 1000},
    "citeseer": {"nodes": 3327, "edges": 4732, "features": 3703, "classes": 6,
                 "train": 120, "val": 500, "test": 1000},
    "pubmed": {"nodes": 19717, "edges": 44338, "features": 500, "classes": 3,
               "train": 60, "val": 500, "test": 1000},
}
CHECK_FIELDS = ("nodes", "edges", "features", "classes", "train", "val", "test")


class ConversionError(Exception):
    """Missing upstream files or inconsistent block shapes."""


@dataclass
class PlanetoidBundle:
    """The raw upstream components of one dataset."""

    x: sp.spmatrix
    y: np.ndarray
    tx: sp.spmatrix
    ty: np.ndarray
    allx: sp.spmatrix
    ally: np.ndarray
    graph: dict
    test_index: np.ndarray


def load_bundle(input_dir, name) -> PlanetoidBundle:
    parts = {}
    for suffix in FILE_SUFFIXES:
        path = os.path.join(input_dir, f"ind.{name}.{suffix}")
        if not os.path.isfile(path):
            raise ConversionError(f"missing upstream file: {path}")
        if suffix == "test.index":
            with open(path, "r", encoding="utf-8") as fh:
                parts[suffix] = np.array([int(line) for line in fh if line.strip()],
                                         dtype=np.int64)
        else:
            with open(path, "rb") as fh:
                parts[suffix] = pickle.load(fh, encoding="latin1")
    return PlanetoidBundle(parts["x"], np.asarray(parts["y"]), parts["tx"],
                           np.asarray(parts["ty"]), parts["allx"],
                           np.asarray(parts["ally"]), dict(parts["graph"]),
                           parts["test.index"])


def assemble(bundle: PlanetoidBundle):
    """Reorder the upstream blocks into the final node numbering.

    Returns (features N x F, labels, splits dict, zero_filled count). Test
    indices absent from the contiguous test range (Citeseer's isolated nodes)
    get zero feature/label rows and belong to no split.
    """
    test_idx = bundle.test_index
    if test_idx.size == 0:
        raise ConversionError("empty test index file")
    test_range = np.sort(test_idx)
    full_range = np.arange(test_range[0], test_range[-1] + 1)
    tx = np.asarray(bundle.tx.todense(), dtype=np.float64)
    ty = np.asarray(bundle.ty, dtype=np.float64)
    allx = np.asarray(bundle.allx.todense(), dtype=np.float64)
    ally = np.asarray(bundle.ally, dtype=np.float64)
    if allx.shape[1] != tx.shape[1]:
        raise ConversionError(f"feature width mismatch: allx has {allx.shape[1]} "
                              f"columns, tx has {tx.shape[1]}")
    if ally.shape[1] != ty.shape[1]:
        raise ConversionError("label width mismatch between ally and ty")
    if tx.shape[0] != test_idx.size:
        raise ConversionError(f"tx has {tx.shape[0]} rows but test.index lists "
                              f"{test_idx.size} nodes")

    zero_filled = int(full_range.size - test_idx.size)
    if zero_filled:
        tx_ext = np.zeros((full_range.size, tx.shape[1]))
        ty_ext = np.zeros((full_range.size, ty.shape[1]))
        tx_ext[test_range - test_range[0]] = tx
        ty_ext[test_range - test_range[0]] = ty
        tx, ty = tx_ext, ty_ext

    features = np.vstack([allx, tx])
    onehot = np.vstack([ally, ty])
    num_nodes = features.shape[0]
    if test_range[0] != allx.shape[0] or test_range[-1] != num_nodes - 1:
        raise ConversionError(
            f"test index range [{test_range[0]}, {test_range[-1]}] does not "
            f"line up with allx ({allx.shape[0]} rows) + tx ({tx.shape[0]} rows)")
    features[test_idx] = features[test_range]
    onehot[test_idx] = onehot[test_range]
    labels = np.argmax(onehot, axis=1).astype(np.int64)

    train_count = bundle.y.shape[0]
    val_count = min(VAL_SIZE, allx.shape[0] - train_count)
    splits = {
        "train": np.arange(train_count, dtype=np.int64),
        "val": np.arange(train_count, train_count + val_count, dtype=np.int64),
        "test": test_range.astype(np.int64),
    }
    return features, labels, splits, zero_filled


def _edge_pairs(graph: dict, num_nodes: int) -> np.ndarray:
    """Unique undirected (i < j) pairs from the adjacency dict, loops dropped."""
    src, dst = [], []
    for node, nbrs in graph.items():
        node = int(node)
        if not 0 <= node < num_nodes:
            raise ConversionError(f"graph key {node} outside [0, {num_nodes})")
        for nbr in nbrs:
            nbr = int(nbr)
            if not 0 <= nbr < num_nodes:
                raise ConversionError(f"neighbor {nbr} of node {node} outside "
                                      f"[0, {num_nodes})")
            if node < nbr:
                src.append(node)
                dst.append(nbr)
            elif nbr < node:
                src.append(nbr)
                dst.append(node)
    if not src:
        return np.empty((0, 2), dtype=np.int64)
    pairs = np.stack([np.asarray(src, dtype=np.int64),
                      np.asarray(dst, dtype=np.int64)], axis=1)
    return np.unique(pairs, axis=0)


def _row_normalize(features: np.ndarray) -> np.ndarray:
    sums = features.sum(axis=1, keepdims=True)
    sums[sums == 0] = 1.0
    return features / sums


def convert(input_dir, name, output_dir, row_normalize: bool = False) -> dict:
    """Write the canonical directory; returns the computed statistics.

    Deterministic: repeated runs produce byte-identical files.
    """
    bundle = load_bundle(input_dir, name)
    features, labels, splits, zero_filled = assemble(bundle)
    if row_normalize:
        features = _row_normalize(features)
    num_nodes, num_features = features.shape
    num_classes = int(labels.max()) + 1
    graph_nodes = max(int(k) for k in bundle.graph) + 1 if bundle.graph else 0
    if graph_nodes > num_nodes:
        raise ConversionError(f"graph mentions node {graph_nodes - 1} but only "
                              f"{num_nodes} feature rows exist")
    pairs = _edge_pairs(bundle.graph, num_nodes)

    os.makedirs(output_dir, exist_ok=True)

    def path(fname):
        return os.path.join(output_dir, fname)

    with open(path("meta.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{num_nodes}\t{num_features}\t{num_classes}\n")
    with open(path("edges.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{i}\t{j}\n" for i, j in pairs)
    with open(path("features.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        for row in features:
            fh.write("\t".join(f"{v:.17g}" for v in row) + "\n")
    with open(path("labels.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(f"{v}\n" for v in labels)
    for split_name, ids in splits.items():
        with open(path(f"split_{split_name}.txt"), "w", encoding="utf-8",
                  newline="\n") as fh:
            fh.writelines(f"{v}\n" for v in ids)

    return {"name": name, "nodes": num_nodes, "edges": int(pairs.shape[0]),
            "features": num_features, "classes": num_classes,
            "train": int(splits["train"].size), "val": int(splits["val"].size),
            "test": int(splits["test"].size), "zero_filled": zero_filled}


def _recompute_stats(output_dir) -> dict:
    """Re-parse a canonical directory from scratch (no shared loader code)."""
    stats = {}

    def path(fname):
        return os.path.join(output_dir, fname)

    with open(path("meta.tsv"), "r", encoding="utf-8") as fh:
        n, f, c = (int(v) for v in fh.readline().split("\t"))
    stats["nodes"], stats["features"], stats["classes"] = n, f, c

    seen = set()
    with open(path("edges.tsv"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            a, b = (int(v) for v in line.split("\t"))
            if a != b:
                seen.add((min(a, b), max(a, b)))
    stats["edges"] = len(seen)

    with open(path("features.tsv"), "r", encoding="utf-8") as fh:
        widths = {len(line.rstrip("\n").split("\t")) for line in fh if line.strip()}
    stats["feature_widths"] = widths

    with open(path("labels.tsv"), "r", encoding="utf-8") as fh:
        labels = [int(line) for line in fh if line.strip()]
    stats["label_count"] = len(labels)
    stats["observed_classes"] = len(set(labels))

    for split in ("train", "val", "test"):
        with open(path(f"split_{split}.txt"), "r", encoding="utf-8") as fh:
            stats[split] = sum(1 for line in fh if line.strip())
    return stats


def identify_dataset(output_dir, stats) -> str | None:
    base = os.path.basename(os.path.normpath(output_dir)).lower()
    if base in EXPECTED_STATS:
        return base
    for name, expected in EXPECTED_STATS.items():
        if (stats.get("nodes"), stats.get("features"), stats.get("classes")) == \
                (expected["nodes"], expected["features"], expected["classes"]):
            return name
    return None


def verify(output_dir):
    """Compare a canonical directory against the published statistics.

    Returns (report_lines, all_ok). Every field gets its own pass/fail line
    with both numbers printed on mismatch.
    """
    lines = []
    try:
        stats = _recompute_stats(output_dir)
    except (OSError, ValueError) as exc:
        lines.append(f"read: FAIL ({exc})")
        lines.extend(f"{field}: FAIL (unavailable)" for field in CHECK_FIELDS)
        return lines, False

    name = identify_dataset(output_dir, stats)
    ok = True
    if name is None:
        lines.append("dataset: FAIL (statistics match no published benchmark)")
        ok = False
        expected = {}
    else:
        lines.append(f"dataset: {name}")
        expected = EXPECTED_STATS[name]

    for field in CHECK_FIELDS:
        got = stats.get(field)
        want = expected.get(field)
        if want is None:
            lines.append(f"{field}: FAIL (got {got}, expected unavailable)")
            ok = False
        elif got == want:
            lines.append(f"{field}: PASS ({got})")
        else:
            lines.append(f"{field}: FAIL (got {got}, expected {want})")
            ok = False

    widths = stats["feature_widths"]
    if widths == {stats["features"]}:
        lines.append(f"feature rows: PASS (uniform width {stats['features']})")
    else:
        lines.append(f"feature rows: FAIL (widths {sorted(widths)}, "
                     f"expected {{{stats['features']}}})")
        ok = False
    if stats["label_count"] == stats["nodes"]:
        lines.append(f"label rows: PASS ({stats['label_count']})")
    else:
        lines.append(f"label rows: FAIL (got {stats['label_count']}, "
                     f"expected {stats['nodes']})")
        ok = False
    if stats["observed_classes"] == stats["classes"]:
        lines.append(f"observed classes: PASS ({stats['observed_classes']})")
    else:
        lines.append(f"observed classes: FAIL (got {stats['observed_classes']}, "
                     f"expected {stats['classes']})")
        ok = False
    return lines, ok
