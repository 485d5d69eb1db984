"""Neural building blocks: dense layers, sinusoidal positional encoding,
multi-head self-attention with padding masks, layer normalization, dropout,
encoder blocks, and mask-aware average pooling.

Parameter tensors are created with requires_grad=True and exposed through
``parameters()`` as (name, tensor) pairs in a fixed declaration order; the
checkpoint format and the optimizer both rely on that order being stable.
``l2_parameters()`` returns the subset subject to weight decay: dense and
projection weights only, never biases or normalization gains.
"""

from __future__ import annotations

import math

import numpy as np

from sst import tensor as T
from sst.tensor import DomainError, ShapeMismatchError, Tensor

ACTIVATIONS = ("none", "relu", "sigmoid")

# Additive logit penalty for padded keys.  Large enough that exp underflows
# to exactly 0.0 after softmax max-subtraction, small enough to stay finite.
MASK_LOGIT = -1e9


def glorot_uniform(n_in: int, n_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


class DenseLayer:
    """Affine map with an optional fixed activation."""

    def __init__(self, n_in: int, n_out: int, activation: str, rng: np.random.Generator):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{activation}', expected one of {ACTIVATIONS}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        self.weight = Tensor(glorot_uniform(n_in, n_out, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeMismatchError(
                f"dense layer expects trailing dim {self.n_in}, got {x.shape[-1]}"
            )
        out = x @ self.weight + self.bias
        if self.activation == "relu":
            return T.relu(out)
        if self.activation == "sigmoid":
            return T.sigmoid(out)
        return out

    def parameters(self):
        return [("weight", self.weight), ("bias", self.bias)]

    def l2_parameters(self):
        return [self.weight]


def positional_encoding_table(max_len: int, dmodel: int) -> np.ndarray:
    """Sinusoidal table: row pos holds sin(pos/10000^(2i/dmodel)) in even
    columns and cos of the same angle in odd columns."""
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    even = np.arange(0, dmodel, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / dmodel)
    table = np.zeros((max_len, dmodel))
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles[:, : dmodel // 2])
    return table


class PositionalEncoding:
    def __init__(self, max_len: int, dmodel: int):
        if max_len < 1 or dmodel < 1:
            raise ValueError("positional encoding needs positive max_len and dmodel")
        self.max_len = max_len
        self.dmodel = dmodel
        self.table = Tensor(positional_encoding_table(max_len, dmodel))

    def lookup(self, length: int) -> Tensor:
        if length > self.max_len:
            raise ShapeMismatchError(
                f"sequence length {length} exceeds positional table max_len {self.max_len}"
            )
        return Tensor(self.table.data[:length])


class MultiHeadAttention:
    """Scaled dot-product self-attention split across n_heads subspaces.

    Head i reads columns [i*d_k, (i+1)*d_k) of each projection, so the fused
    [dmodel, dmodel] projections are exactly h independent per-head matrices
    laid side by side.
    """

    def __init__(self, dmodel: int, n_heads: int, rng: np.random.Generator):
        if dmodel % n_heads != 0:
            raise ShapeMismatchError(
                f"dmodel {dmodel} not divisible by n_heads {n_heads}"
            )
        self.dmodel = dmodel
        self.n_heads = n_heads
        self.d_k = dmodel // n_heads
        self.w_q = Tensor(glorot_uniform(dmodel, dmodel, rng), requires_grad=True)
        self.w_k = Tensor(glorot_uniform(dmodel, dmodel, rng), requires_grad=True)
        self.w_v = Tensor(glorot_uniform(dmodel, dmodel, rng), requires_grad=True)
        self.w_o = Tensor(glorot_uniform(dmodel, dmodel, rng), requires_grad=True)

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        # [B, T, dmodel] -> [B, h, T, d_k]
        return T.transpose(
            x.reshape(batch, length, self.n_heads, self.d_k), (0, 2, 1, 3)
        )

    def __call__(self, x: Tensor, pad_mask: np.ndarray, return_weights: bool = False):
        if x.ndim != 3 or x.shape[-1] != self.dmodel:
            raise ShapeMismatchError(
                f"attention expects [B, T, {self.dmodel}], got {x.shape}"
            )
        batch, length, _ = x.shape
        pad_mask = np.asarray(pad_mask, dtype=np.float64)
        if pad_mask.shape != (batch, length):
            raise ShapeMismatchError(
                f"pad_mask shape {pad_mask.shape} does not match batch ({batch}, {length})"
            )

        q = self._split_heads(x @ self.w_q, batch, length)
        k = self._split_heads(x @ self.w_k, batch, length)
        v = self._split_heads(x @ self.w_v, batch, length)

        scores = T.scale(q @ T.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(self.d_k))
        # padded keys get a -1e9 logit so softmax assigns them exactly zero
        penalty = (pad_mask * MASK_LOGIT)[:, None, None, :]
        weights = T.softmax(scores + Tensor(penalty), axis=-1)

        context = weights @ v  # [B, h, T, d_k]
        merged = T.transpose(context, (0, 2, 1, 3)).reshape(batch, length, self.dmodel)
        out = merged @ self.w_o
        if return_weights:
            return out, weights.data.copy()
        return out

    def parameters(self):
        return [
            ("w_q", self.w_q),
            ("w_k", self.w_k),
            ("w_v", self.w_v),
            ("w_o", self.w_o),
        ]

    def l2_parameters(self):
        return [self.w_q, self.w_k, self.w_v, self.w_o]


class LayerNorm:
    """Normalize the trailing axis to zero mean and unit variance, then apply
    a learned affine transform."""

    EPS = 1e-9

    def __init__(self, width: int):
        self.width = width
        self.gain = Tensor(np.ones(width), requires_grad=True)
        self.bias = Tensor(np.zeros(width), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.width:
            raise ShapeMismatchError(
                f"layer norm expects trailing dim {self.width}, got {x.shape[-1]}"
            )
        mean = x.mean(axis=-1, keepdims=True)
        centered = x - mean
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / T.sqrt(var + self.EPS)
        return normed * self.gain + self.bias

    def parameters(self):
        return [("gain", self.gain), ("bias", self.bias)]

    def l2_parameters(self):
        return []


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: zero each element with probability rate and scale
    survivors by 1/(1-rate) so the expected value is unchanged.  Identity
    when not training."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


class EncoderBlock:
    """Self-attention sublayer plus position-wise feed-forward sublayer, each
    wrapped as layernorm(x + dropout(sublayer(x)))."""

    def __init__(self, dmodel: int, dff: int, n_heads: int, dropout_rate: float,
                 rng: np.random.Generator):
        self.attention = MultiHeadAttention(dmodel, n_heads, rng)
        self.ff_expand = DenseLayer(dmodel, dff, "relu", rng)
        self.ff_contract = DenseLayer(dff, dmodel, "none", rng)
        self.norm_attn = LayerNorm(dmodel)
        self.norm_ff = LayerNorm(dmodel)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, pad_mask: np.ndarray, training: bool,
                 rng: np.random.Generator) -> Tensor:
        attended = self.attention(x, pad_mask)
        x = self.norm_attn(x + dropout(attended, self.dropout_rate, training, rng))
        ff = self.ff_contract(self.ff_expand(x))
        return self.norm_ff(x + dropout(ff, self.dropout_rate, training, rng))

    def parameters(self):
        out = []
        for prefix, module in (
            ("attention", self.attention),
            ("ff_expand", self.ff_expand),
            ("ff_contract", self.ff_contract),
            ("norm_attn", self.norm_attn),
            ("norm_ff", self.norm_ff),
        ):
            out.extend((f"{prefix}.{name}", p) for name, p in module.parameters())
        return out

    def l2_parameters(self):
        return (
            self.attention.l2_parameters()
            + self.ff_expand.l2_parameters()
            + self.ff_contract.l2_parameters()
        )


def global_average_pool(x: Tensor, pad_mask: np.ndarray) -> Tensor:
    """Mean over real (unpadded) timesteps only.  Padded positions carry
    zeros after masking, so they neither shift the sum nor the count."""
    if x.ndim != 3:
        raise ShapeMismatchError(f"pooling expects [B, T, D], got {x.shape}")
    pad_mask = np.asarray(pad_mask, dtype=np.float64)
    batch, length, _ = x.shape
    if pad_mask.shape != (batch, length):
        raise ShapeMismatchError(
            f"pad_mask shape {pad_mask.shape} does not match batch ({batch}, {length})"
        )
    real = 1.0 - pad_mask
    counts = real.sum(axis=1)
    if np.any(counts == 0):
        bad = int(np.argmax(counts == 0))
        raise DomainError(f"sample {bad} has no unpadded timesteps to pool over")
    masked = x * Tensor(real[:, :, None])
    return masked.sum(axis=1) / Tensor(counts[:, None])
