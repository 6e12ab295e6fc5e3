"""Stacked attention encoder/decoder layers over a shared adjacency.

Each encoder layer k maps representations H^(k-1) (d_{k-1} x N) to H^(k)
(d_k x N): per-edge relevance sigmoid(vs.(act(W h_i)) + vr.(act(W h_j))) is
softmax-normalized over each node's neighborhood and used to average the
transformed neighbor columns. Decoder layers run the mirror image back down
to a feature reconstruction; with tied weights the decoder reuses W^T and
the encoder's attention coefficients.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .graph import FeatureMatrix, SparseGraph

ACTIVATIONS = ("identity", "sigmoid", "tanh")


def _apply_activation(tape, t, name):
    if name == "identity":
        return t
    if name == "sigmoid":
        return ad.sigmoid(tape, t)
    if name == "tanh":
        return ad.tanh(tape, t)
    raise ValueError(f"unknown activation {name!r} (choose from {ACTIVATIONS})")


@dataclass
class LayerParams:
    """One layer's trainable tensors; decoder fields are None when tied."""

    weight: Tensor                      # (d_k, d_{k-1})
    attn_self: Tensor                   # (1, d_k), scores the center node
    attn_neigh: Tensor                  # (1, d_k), scores the neighbor
    dec_weight: Optional[Tensor] = None         # (d_{k-1}, d_k)
    dec_attn_self: Optional[Tensor] = None      # (1, d_{k-1})
    dec_attn_neigh: Optional[Tensor] = None     # (1, d_{k-1})

    @property
    def tied(self) -> bool:
        return self.dec_weight is None

    def parameters(self):
        params = [self.weight, self.attn_self, self.attn_neigh]
        if not self.tied:
            params += [self.dec_weight, self.dec_attn_self, self.dec_attn_neigh]
        return params


@dataclass
class GateModel:
    """Layer parameter stacks plus the flags that shape the forward pass."""

    dims: tuple                 # (d_0 = F, d_1, ..., d_L)
    layers: list
    activation: str = "identity"
    tied: bool = True
    uniform_attention: bool = False     # replace attention with 1/|N_i|
    seed: int = 0

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    def parameters(self):
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.parameters())


def _glorot(rng, shape, fan_sum):
    bound = np.sqrt(6.0 / fan_sum)
    return rng.uniform(-bound, bound, size=shape)


def init_model(dims, seed: int, tied: bool = True, activation: str = "identity",
               uniform_attention: bool = False) -> GateModel:
    """Deterministically initialize a model; same seed, same bits.

    ``dims`` is (input_dim, d_1, ..., d_L). Weights draw Glorot-uniform
    bounds sqrt(6/(d_k + d_{k-1})); attention vectors use sqrt(6/(d_k + 1)).
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("dims must list the input size and at least one layer size")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dimensions must be positive, got {dims}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r} (choose from {ACTIVATIONS})")
    rng = np.random.default_rng(seed)
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        layer = LayerParams(
            weight=ad.parameter(_glorot(rng, (d_out, d_in), d_out + d_in)),
            attn_self=ad.parameter(_glorot(rng, (1, d_out), d_out + 1)),
            attn_neigh=ad.parameter(_glorot(rng, (1, d_out), d_out + 1)),
        )
        if not tied:
            layer.dec_weight = ad.parameter(_glorot(rng, (d_in, d_out), d_in + d_out))
            layer.dec_attn_self = ad.parameter(_glorot(rng, (1, d_in), d_in + 1))
            layer.dec_attn_neigh = ad.parameter(_glorot(rng, (1, d_in), d_in + 1))
        layers.append(layer)
    return GateModel(dims=dims, layers=layers, activation=activation, tied=tied,
                     uniform_attention=uniform_attention, seed=int(seed))


@dataclass
class ForwardTrace:
    """All per-layer tensors of one forward pass, still attached to its tape."""

    tape: Tape
    encoder_reps: list          # [H^(0), ..., H^(L)]
    decoder_reps: list          # [Hhat^(L), ..., Hhat^(0)]
    encoder_attention: list     # [C^(1), ..., C^(L)], edge-aligned
    decoder_attention: list     # [Chat^(1), ..., Chat^(L)], edge-aligned

    @property
    def embeddings(self) -> Tensor:
        return self.encoder_reps[-1]

    @property
    def reconstruction(self) -> Tensor:
        return self.decoder_reps[-1]


def _as_input_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, FeatureMatrix):
        return ad.constant(x.values)
    return ad.constant(x)


def _uniform_coefficients(g: SparseGraph) -> Tensor:
    return ad.constant(1.0 / g.row_counts[g.edge_rows])


def _attention_from_values(tape, g, attn_self, attn_neigh, values):
    s = ad.matmul(tape, attn_self, values)
    r = ad.matmul(tape, attn_neigh, values)
    return ad.segment_softmax(tape, ad.edge_scores(tape, s, r, g), g)


def encoder_attention(model: GateModel, k: int, h_prev, g: SparseGraph,
                      tape: Optional[Tape] = None) -> Tensor:
    """Edge-aligned attention coefficients of encoder layer k (1-based)."""
    if not 1 <= k <= model.num_layers:
        raise IndexError(f"layer index {k} out of range [1, {model.num_layers}]")
    tape = tape if tape is not None else Tape()
    if model.uniform_attention:
        return _uniform_coefficients(g)
    layer = model.layers[k - 1]
    h_prev = _as_input_tensor(h_prev)
    values = _apply_activation(tape, ad.matmul(tape, layer.weight, h_prev), model.activation)
    return _attention_from_values(tape, g, layer.attn_self, layer.attn_neigh, values)


def encode(model: GateModel, x, g: SparseGraph, tape: Optional[Tape] = None):
    """Run the encoder stack; returns (H, encoder_reps, encoder_attention)."""
    tape = tape if tape is not None else Tape()
    reps = [_as_input_tensor(x)]
    attention = []
    for layer in model.layers:
        values = _apply_activation(tape, ad.matmul(tape, layer.weight, reps[-1]),
                                   model.activation)
        if model.uniform_attention:
            alpha = _uniform_coefficients(g)
        else:
            alpha = _attention_from_values(tape, g, layer.attn_self, layer.attn_neigh, values)
        reps.append(ad.attention_aggregate(tape, alpha, values, g))
        attention.append(alpha)
    return reps[-1], reps, attention


def decode(model: GateModel, h, g: SparseGraph, tape: Optional[Tape] = None,
           encoder_coefficients=None):
    """Run the decoder stack from embeddings down to the reconstruction.

    Returns (Xhat, decoder_reps, decoder_attention). Tied models reuse the
    encoder's attention, so ``encoder_coefficients`` is required then.
    """
    tape = tape if tape is not None else Tape()
    reps = [_as_input_tensor(h)]
    attention = [None] * model.num_layers
    for k in range(model.num_layers, 0, -1):
        layer = model.layers[k - 1]
        dec_weight = ad.transpose(tape, layer.weight) if layer.tied else layer.dec_weight
        values = _apply_activation(tape, ad.matmul(tape, dec_weight, reps[-1]),
                                   model.activation)
        if model.uniform_attention:
            alpha = _uniform_coefficients(g)
        elif model.tied:
            if encoder_coefficients is None:
                raise ValueError("tied decoding reuses the encoder attention; "
                                 "pass encoder_coefficients")
            alpha = encoder_coefficients[k - 1]
        else:
            alpha = _attention_from_values(tape, g, layer.dec_attn_self,
                                           layer.dec_attn_neigh, values)
        reps.append(ad.attention_aggregate(tape, alpha, values, g))
        attention[k - 1] = alpha
    return reps[-1], reps, attention


def forward(model: GateModel, x, g: SparseGraph, tape: Optional[Tape] = None) -> ForwardTrace:
    """Full pass: encode then decode, with all per-layer tensors exposed."""
    tape = tape if tape is not None else Tape()
    h, enc_reps, enc_attn = encode(model, x, g, tape)
    coeffs = enc_attn if (model.tied and not model.uniform_attention) else None
    _, dec_reps, dec_attn = decode(model, h, g, tape, encoder_coefficients=coeffs)
    return ForwardTrace(tape, enc_reps, dec_reps, enc_attn, dec_attn)


# ---------------------------------------------------------------------------
# checkpoint container: flat binary, little-endian throughout

_MAGIC = b"GATECKP1"
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_checkpoint(model: GateModel, path):
    """Write a byte-deterministic flat binary checkpoint (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<qBBBxI", model.seed, int(model.tied),
                             int(model.uniform_attention),
                             _ACT_CODES[model.activation], model.num_layers))
        fh.write(np.asarray(model.dims, dtype="<i8").tobytes())
        for p in model.parameters():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path) -> GateModel:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    seed, tied, uniform, act_code, num_layers = struct.unpack_from("<qBBBxI", data, 8)
    if act_code >= len(ACTIVATIONS):
        raise ValueError(f"{path}: unknown activation code {act_code}")
    offset = 8 + struct.calcsize("<qBBBxI")
    dims = np.frombuffer(data, dtype="<i8", count=num_layers + 1, offset=offset)
    offset += dims.nbytes
    model = init_model(tuple(dims), seed, tied=bool(tied),
                       activation=ACTIVATIONS[act_code], uniform_attention=bool(uniform))
    for p in model.parameters():
        arr = np.frombuffer(data, dtype="<f8", count=p.value.size, offset=offset)
        p.value = arr.reshape(p.value.shape).copy()
        offset += arr.nbytes
    if offset != len(data):
        raise ValueError(f"{path}: checkpoint size mismatch")
    return model
