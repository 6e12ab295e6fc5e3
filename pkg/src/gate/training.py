"""Joint reconstruction loss, Adam, and the full-batch epoch loop.

The loss is sum_i ||x_i - xhat_i||_2 plus lambda times the structure term
-sum over stored (i, j) of log sigmoid(<h_i, h_j>), both over the whole
graph every step. Ablations: ``no_attention`` swaps attention for uniform
weights, ``no_structure`` zeroes lambda, ``no_features`` drops the feature
term.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tape, Tensor
from .graph import FeatureMatrix, SparseGraph
from .model import ForwardTrace, forward, init_model

ABLATIONS = ("none", "no_attention", "no_structure", "no_features")
NORM_EPS = 1e-12


@dataclass
class TrainConfig:
    """Everything one training run needs, with the published defaults."""

    structure_weight: float = 0.5       # lambda on the structure term
    epochs: int = 100
    learning_rate: float = 1e-4
    dims: tuple = (512, 512)            # layer sizes d_1..d_L (input dim comes from X)
    seed: int = 0
    tied: bool = True
    activation: str = "identity"
    ablation: str = "none"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.structure_weight < 0:
            raise ValueError("structure_weight must be nonnegative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r} (choose from {ABLATIONS})")

    @property
    def effective_structure_weight(self) -> float:
        return 0.0 if self.ablation == "no_structure" else self.structure_weight


def _values_of(x):
    if isinstance(x, FeatureMatrix):
        return x.values
    if isinstance(x, Tensor):
        return x.value
    return np.asarray(x, dtype=np.float64)


def feature_loss(tape: Tape, x, xhat: Tensor) -> Tensor:
    """sum_i ||x_i - xhat_i||_2 (unsquared norms, eps-guarded at zero)."""
    ref = ad.constant(_values_of(x))
    if ref.shape != xhat.shape:
        raise ad.ShapeError(f"feature shapes differ: {ref.shape} vs {xhat.shape}")
    return ad.column_norm_sum(tape, ad.sub(tape, xhat, ref), eps=NORM_EPS)


def structure_loss(tape: Tape, h: Tensor, g: SparseGraph) -> Tensor:
    """-sum over stored (i, j) of log sigmoid(<h_i, h_j>); always >= 0."""
    return ad.scale(tape, ad.edge_log_sigmoid_sum(tape, h, g), -1.0)


def total_loss(trace: ForwardTrace, x, g: SparseGraph, cfg: TrainConfig) -> Tensor:
    """feature_loss + lambda * structure_loss with the ablation switches applied.

    ``no_structure`` takes the exact lambda=0 code path, so its gradients are
    bit-identical to a plain run with lambda=0.
    """
    tape = trace.tape
    lam = cfg.effective_structure_weight
    if cfg.ablation == "no_features":
        return ad.scale(tape, structure_loss(tape, trace.embeddings, g), lam)
    feat = feature_loss(tape, x, trace.reconstruction)
    if lam == 0.0:
        return feat
    struct = structure_loss(tape, trace.embeddings, g)
    return ad.add(tape, feat, ad.scale(tape, struct, lam))


def feature_loss_value(x, xhat_values) -> float:
    """Plain-array evaluation of the feature term, for logging."""
    resid = np.asarray(xhat_values) - _values_of(x)
    return float(np.sqrt(np.einsum("ij,ij->j", resid, resid) + NORM_EPS).sum())


def structure_loss_value(h_values, g: SparseGraph) -> float:
    """Plain-array evaluation of the structure term, for logging."""
    h = np.asarray(h_values)
    z = ad._edge_dots(h, h, g.edge_rows, g.col_indices)
    return float(np.logaddexp(0.0, -z).sum())


@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    first_moment: list
    second_moment: list
    step: int = 0

    @classmethod
    def for_parameters(cls, params) -> "AdamState":
        return cls([np.zeros_like(p.value) for p in params],
                   [np.zeros_like(p.value) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        g = grads[p]
        if g.shape != p.value.shape:
            raise ad.ShapeError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i}")
        m, v = state.first_moment[i], state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.value = p.value - cfg.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + cfg.adam_eps)
    return params, state


class EpochLoss(NamedTuple):
    feature: float
    structure: float
    total: float


def train(g: SparseGraph, x, cfg: TrainConfig):
    """Full-batch training for cfg.epochs iterations.

    Returns (model, history); history holds one EpochLoss per epoch with both
    raw components regardless of ablation. Deterministic for a given seed.
    """
    x_values = _values_of(x)
    if x_values.shape[1] != g.num_nodes:
        raise ad.ShapeError(f"feature matrix covers {x_values.shape[1]} nodes, "
                            f"graph has {g.num_nodes}")
    model = init_model((x_values.shape[0],) + cfg.dims, cfg.seed, tied=cfg.tied,
                       activation=cfg.activation,
                       uniform_attention=(cfg.ablation == "no_attention"))
    params = model.parameters()
    state = AdamState.for_parameters(params)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        try:
            tape = Tape()
            trace = forward(model, x_values, g, tape)
            loss = total_loss(trace, x_values, g, cfg)
            grads = ad.backward(tape, loss, parameters=params)
            adam_step(params, grads, state, cfg)
        except NumericError as exc:
            raise NumericError(f"epoch {epoch}: {exc}") from exc
        history.append(EpochLoss(
            feature=feature_loss_value(x_values, trace.reconstruction.value),
            structure=structure_loss_value(trace.embeddings.value, g),
            total=loss.item(),
        ))
    return model, history


def write_loss_history(history, path):
    """Emit the per-epoch losses as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "feature_loss", "structure_loss", "total_loss"])
        for epoch, rec in enumerate(history, start=1):
            writer.writerow([epoch, f"{rec.feature:.12g}", f"{rec.structure:.12g}",
                             f"{rec.total:.12g}"])
