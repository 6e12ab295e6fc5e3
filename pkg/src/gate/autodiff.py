"""Reverse-mode differentiation over the op set the auto-encoder needs.

The engine is deliberately small: dense rank-<=2 tensors plus per-edge
vectors aligned to a SparseGraph's CSR layout, a linear tape, and hand-written
backward rules for every op. No broadcasting and no rank-3 tensors. Every
forward op validates that its output is finite.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

# edges processed per chunk in gather-heavy kernels, scaled by row count
_CHUNK_BUDGET = 8_000_000


class NumericError(RuntimeError):
    """A forward op or gradient produced NaN/Inf."""


class ShapeError(ValueError):
    """Operand shapes violate an op's contract."""


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """Array value with a gradient flag; hashable by identity."""

    __slots__ = ("value", "requires_grad", "_produced")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._produced = False

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        grad = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{grad})"


def constant(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def parameter(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def _wants_grad(t: Tensor) -> bool:
    return t.requires_grad or t._produced


class Tape:
    """Ordered op record; inputs of every op precede it by construction."""

    def __init__(self):
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def record(self, output: Tensor, inputs, backward_fn):
        _check_finite(output.value, "op output")
        output._produced = True
        self._nodes.append((output, tuple(inputs), backward_fn))
        return output

    def backward(self, loss: Tensor, parameters=None) -> dict:
        """Accumulate d(loss)/d(t) for every requires_grad tensor on the tape.

        Tensors the loss does not reach get exact zeros; ``parameters`` may
        list extra leaves (e.g. ablated-away parameters) to include as zeros.
        """
        if loss.value.ndim != 0:
            raise ShapeError("loss must be a scalar tensor")
        grads = {id(loss): np.ones(())}
        leaves = {id(p): p for p in (parameters or ())}
        for output, inputs, backward_fn in reversed(self._nodes):
            for t in inputs:
                if t.requires_grad:
                    leaves.setdefault(id(t), t)
            g = grads.get(id(output))
            if g is None:
                continue
            for t, contrib in zip(inputs, backward_fn(g)):
                if contrib is None:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = contrib if acc is None else acc + contrib
        result = {}
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(t.value)
            _check_finite(g, "gradient")
            result[t] = g
        return result


def backward(tape: Tape, loss: Tensor, parameters=None) -> dict:
    """Gradient map of a scalar loss over the tape's parameters."""
    return tape.backward(loss, parameters)


# ---------------------------------------------------------------------------
# dense ops


def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError("matmul operands must be rank 2")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.value, b.value
    out = Tensor(av @ bv)
    wa, wb = _wants_grad(a), _wants_grad(b)

    def bwd(g):
        return (g @ bv.T if wa else None, av.T @ g if wb else None)

    return tape.record(out, (a, b), bwd)


def transpose(tape: Tape, a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ShapeError("transpose expects a rank-2 tensor")
    out = Tensor(np.ascontiguousarray(a.value.T))
    wa = _wants_grad(a)

    def bwd(g):
        return (np.ascontiguousarray(g.T) if wa else None,)

    return tape.record(out, (a,), bwd)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.value + b.value)
    wa, wb = _wants_grad(a), _wants_grad(b)

    def bwd(g):
        return (g if wa else None, g if wb else None)

    return tape.record(out, (a, b), bwd)


def sub(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(a.value - b.value)
    wa, wb = _wants_grad(a), _wants_grad(b)

    def bwd(g):
        return (g if wa else None, -g if wb else None)

    return tape.record(out, (a, b), bwd)


def scale(tape: Tape, a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    out = Tensor(a.value * factor)
    wa = _wants_grad(a)

    def bwd(g):
        return (g * factor if wa else None,)

    return tape.record(out, (a,), bwd)


def sigmoid(tape: Tape, a: Tensor) -> Tensor:
    out_v = expit(a.value)
    out = Tensor(out_v)
    wa = _wants_grad(a)

    def bwd(g):
        return (g * out_v * (1.0 - out_v) if wa else None,)

    return tape.record(out, (a,), bwd)


def tanh(tape: Tape, a: Tensor) -> Tensor:
    out_v = np.tanh(a.value)
    out = Tensor(out_v)
    wa = _wants_grad(a)

    def bwd(g):
        return (g * (1.0 - out_v * out_v) if wa else None,)

    return tape.record(out, (a,), bwd)


def reduce_sum(tape: Tape, a: Tensor) -> Tensor:
    out = Tensor(a.value.sum())
    wa = _wants_grad(a)
    shape = a.value.shape

    def bwd(g):
        return (np.full(shape, float(g)) if wa else None,)

    return tape.record(out, (a,), bwd)


def column_norm_sum(tape: Tape, a: Tensor, eps: float = 1e-12) -> Tensor:
    """sum_i sqrt(||column i||^2 + eps); the eps keeps d/da defined at zero."""
    if a.value.ndim != 2:
        raise ShapeError("column_norm_sum expects a rank-2 tensor")
    av = a.value
    norms = np.sqrt(np.einsum("ij,ij->j", av, av) + eps)
    out = Tensor(norms.sum())
    wa = _wants_grad(a)

    def bwd(g):
        return (av / norms * float(g) if wa else None,)

    return tape.record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# edge-aligned ops over a SparseGraph's CSR layout


def _check_edge_aligned(t: Tensor, g):
    if t.value.shape != (g.nnz,):
        raise ShapeError(f"expected edge-aligned tensor of length {g.nnz}, got {t.shape}")


def edge_scores(tape: Tape, s_vals: Tensor, r_vals: Tensor, g) -> Tensor:
    """Per stored entry (i, j): sigmoid(s_i + r_j), edge-aligned output."""
    n = g.num_nodes
    if s_vals.shape != (1, n) or r_vals.shape != (1, n):
        raise ShapeError(f"edge_scores expects two 1x{n} tensors, "
                         f"got {s_vals.shape} and {r_vals.shape}")
    rows, cols = g.edge_rows, g.col_indices
    out_v = expit(s_vals.value[0, rows] + r_vals.value[0, cols])
    out = Tensor(out_v)
    ws, wr = _wants_grad(s_vals), _wants_grad(r_vals)
    offsets = g.row_offsets

    def bwd(grad):
        gz = grad * out_v * (1.0 - out_v)
        ds = np.add.reduceat(gz, offsets[:-1])[None, :] if ws else None
        dr = np.bincount(cols, weights=gz, minlength=n)[None, :] if wr else None
        return (ds, dr)

    return tape.record(out, (s_vals, r_vals), bwd)


def segment_softmax(tape: Tape, scores: Tensor, g) -> Tensor:
    """Softmax within each CSR row; rows sum to 1 and shifts cancel exactly."""
    _check_edge_aligned(scores, g)
    rows, offsets = g.edge_rows, g.row_offsets
    x = scores.value
    row_max = np.maximum.reduceat(x, offsets[:-1])
    ex = np.exp(x - row_max[rows])
    denom = np.add.reduceat(ex, offsets[:-1])
    out_v = ex / denom[rows]
    out = Tensor(out_v)
    wx = _wants_grad(scores)

    def bwd(grad):
        if not wx:
            return (None,)
        weighted = np.add.reduceat(grad * out_v, offsets[:-1])
        return (out_v * (grad - weighted[rows]),)

    return tape.record(out, (scores,), bwd)


def attention_aggregate(tape: Tape, alpha: Tensor, v: Tensor, g) -> Tensor:
    """Column i of the output is sum_{j in N_i} alpha_ij * v[:, j]."""
    _check_edge_aligned(alpha, g)
    n = g.num_nodes
    if v.value.ndim != 2 or v.shape[1] != n:
        raise ShapeError(f"expected values shaped (d, {n}), got {v.shape}")
    rows, cols, offsets = g.edge_rows, g.col_indices, g.row_offsets
    coeff = sp.csr_matrix((alpha.value, cols, offsets), shape=(n, n))
    vv = v.value
    out = Tensor(np.ascontiguousarray((coeff @ vv.T).T))
    wa, wv = _wants_grad(alpha), _wants_grad(v)

    def bwd(grad):
        da = _edge_dots(grad, vv, rows, cols) if wa else None
        dv = np.ascontiguousarray((coeff.T @ grad.T).T) if wv else None
        return (da, dv)

    return tape.record(out, (alpha, v), bwd)


def _edge_dots(a, b, rows, cols):
    """out_e = <a[:, rows[e]], b[:, cols[e]]>, chunked to bound temporaries.

    Gathers row-contiguous transposed copies; fancy-indexing columns of a
    (d, N) array is an order of magnitude slower.
    """
    at = np.ascontiguousarray(a.T)
    bt = at if b is a else np.ascontiguousarray(b.T)
    nnz = rows.shape[0]
    out = np.empty(nnz)
    chunk = max(1, _CHUNK_BUDGET // max(1, a.shape[0]))
    for start in range(0, nnz, chunk):
        slc = slice(start, min(start + chunk, nnz))
        out[slc] = np.einsum("ed,ed->e", at[rows[slc]], bt[cols[slc]])
    return out


def edge_log_sigmoid_sum(tape: Tape, h: Tensor, g) -> Tensor:
    """sum over stored (i, j) of log sigmoid(<h_i, h_j>), self-loops included.

    Computed stably as -softplus(-z); the gradient flows to both endpoint
    columns of every entry.
    """
    n = g.num_nodes
    if h.value.ndim != 2 or h.shape[1] != n:
        raise ShapeError(f"expected representations shaped (d, {n}), got {h.shape}")
    rows, cols, offsets = g.edge_rows, g.col_indices, g.row_offsets
    hv = h.value
    z = _edge_dots(hv, hv, rows, cols)
    out = Tensor(-np.logaddexp(0.0, -z).sum())
    wh = _wants_grad(h)

    def bwd(grad):
        if not wh:
            return (None,)
        w = float(grad) * expit(-z)  # d/dz log sigmoid(z) = sigmoid(-z)
        wmat = sp.csr_matrix((w, cols, offsets), shape=(n, n))
        both = wmat + wmat.T
        return (np.ascontiguousarray((both @ hv.T).T),)

    return tape.record(out, (h,), bwd)
