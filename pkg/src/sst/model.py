"""Full sequence classifier: embedding, positional encoding, a stack of
encoder blocks, mask-aware pooling, and a sigmoid MLP emitting one
(negative, positive) head pair per task.

The checkpoint format is binary: magic, one version byte, an 8-byte
little-endian length, the config as canonical JSON, then every parameter
buffer as raw little-endian float64 in declaration order.  Round trips are
bit-exact; any mismatch fails loudly before a model is returned.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from sst import layers as L
from sst import tensor as T
from sst.tensor import ShapeMismatchError, Tensor

CHECKPOINT_MAGIC = b"SSTCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent with its config."""


@dataclass
class SstConfig:
    """Hyperparameters for one model/training run.

    Defaults are the smallest values of the published search grid; the data
    extents (n_features, max_timesteps, n_tasks) have no sensible default
    and must be supplied.
    """

    n_features: int
    max_timesteps: int
    n_tasks: int
    n_layers: int = 2
    dmodel: int = 64
    dff: int = 32
    n_heads: int = 1
    dropout_rate: float = 0.1
    lr_factor: float = 0.1
    batch_size: int = 512
    warmup: int = 4000
    uncertainty_weighting: bool = True
    l2_factor: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        for field in ("n_features", "max_timesteps", "n_tasks", "n_layers",
                      "dmodel", "dff", "n_heads", "batch_size", "warmup"):
            value = getattr(self, field)
            if not isinstance(value, int) or value < 1:
                raise ValueError(f"config field {field} must be a positive integer, got {value!r}")
        if self.dmodel % self.n_heads != 0:
            raise ValueError(
                f"dmodel {self.dmodel} must be divisible by n_heads {self.n_heads}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.lr_factor <= 0:
            raise ValueError(f"lr_factor must be positive, got {self.lr_factor}")
        if self.l2_factor < 0:
            raise ValueError(f"l2_factor must be non-negative, got {self.l2_factor}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed!r}")

    @classmethod
    def field_names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in dataclasses.fields(cls))

    @classmethod
    def from_dict(cls, raw: dict) -> "SstConfig":
        known = set(cls.field_names())
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))


class SstModel:
    """Encoder over [B, T, n_features] inputs producing [B, 2*n_tasks] raw
    sigmoid scores, two per task: column 2j is the negative head and 2j+1
    the positive head."""

    def __init__(self, config: SstConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        self.embedding = L.DenseLayer(config.n_features, config.dmodel, "none", rng)
        self.pe = L.PositionalEncoding(config.max_timesteps, config.dmodel)
        self.blocks = [
            L.EncoderBlock(config.dmodel, config.dff, config.n_heads,
                           config.dropout_rate, rng)
            for _ in range(config.n_layers)
        ]
        self.mlp = [
            L.DenseLayer(config.dmodel, config.dff, "sigmoid", rng),
            L.DenseLayer(config.dff, config.dff, "sigmoid", rng),
            L.DenseLayer(config.dff, 2 * config.n_tasks, "sigmoid", rng),
        ]

    def forward(self, x, pad_mask, training: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 3 or x.shape[-1] != self.config.n_features:
            raise ShapeMismatchError(
                f"expected input [B, T, {self.config.n_features}], got {x.shape}"
            )
        if training and rng is None:
            raise ValueError("training-mode forward needs an rng for dropout")
        if isinstance(pad_mask, Tensor):
            pad_mask = pad_mask.data
        pad_mask = np.asarray(pad_mask, dtype=np.float64)
        length = x.shape[1]
        rate = self.config.dropout_rate

        h = self.embedding(x) + self.pe.lookup(length)
        h = L.dropout(h, rate, training, rng) if training else h
        for block in self.blocks:
            h = block(h, pad_mask, training, rng)
        pooled = L.global_average_pool(h, pad_mask)
        for layer in self.mlp[:-1]:
            pooled = layer(pooled)
            pooled = L.dropout(pooled, rate, training, rng) if training else pooled
        return self.mlp[-1](pooled)

    def predict_proba(self, x, pad_mask) -> Tensor:
        """Per-task positive probability: each (negative, positive) head pair
        is normalized as pos / (pos + neg).  Sigmoid outputs are strictly
        positive so the ratio is always defined."""
        raw = self.forward(x, pad_mask, training=False)
        m = self.config.n_tasks
        pairs = raw.reshape(raw.shape[0], m, 2)
        neg, pos = pairs[:, :, 0], pairs[:, :, 1]
        return pos / (pos + neg)

    # -- parameter bookkeeping -----------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = [(f"embedding.{n}", p) for n, p in self.embedding.parameters()]
        for i, block in enumerate(self.blocks):
            out.extend((f"blocks.{i}.{n}", p) for n, p in block.parameters())
        for i, layer in enumerate(self.mlp):
            out.extend((f"mlp.{i}.{n}", p) for n, p in layer.parameters())
        return out

    def l2_parameters(self) -> list[Tensor]:
        out = self.embedding.l2_parameters()
        for block in self.blocks:
            out.extend(block.l2_parameters())
        for layer in self.mlp:
            out.extend(layer.l2_parameters())
        return out

    def zero_grad(self) -> None:
        for _, p in self.parameters():
            p.grad = None

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data.copy() for _, p in self.parameters()]

    def load_state_arrays(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for (name, p), arr in zip(params, arrays):
            if arr.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.copy()


# -- checkpoint i/o ----------------------------------------------------


def save_weights(model: SstModel, path) -> None:
    config_bytes = model.config.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(len(config_bytes).to_bytes(8, "little"))
        fh.write(config_bytes)
        for _, p in model.parameters():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_weights(path, expect: SstConfig | None = None) -> SstModel:
    """Rebuild a model from a checkpoint.  ``expect`` cross-checks the stored
    config against what the caller assumes; mismatches name the field."""
    with open(path, "rb") as fh:
        blob = fh.read()
    offset = len(CHECKPOINT_MAGIC)
    if blob[:offset] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic at offset 0)")
    if len(blob) < offset + 9:
        raise CheckpointError(f"truncated checkpoint header at offset {len(blob)}")
    version = blob[offset]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    offset += 1
    config_len = int.from_bytes(blob[offset:offset + 8], "little")
    offset += 8
    if len(blob) < offset + config_len:
        raise CheckpointError(
            f"truncated checkpoint: config needs {config_len} bytes at offset {offset}"
        )
    try:
        raw = json.loads(blob[offset:offset + config_len].decode("utf-8"))
        config = SstConfig.from_dict(raw)
    except (ValueError, TypeError) as err:
        raise CheckpointError(f"invalid embedded config: {err}") from err
    offset += config_len

    if expect is not None:
        for field in SstConfig.field_names():
            want, got = getattr(expect, field), getattr(config, field)
            if want != got:
                raise CheckpointError(
                    f"config mismatch for {field}: expected {want}, found {got}"
                )

    model = SstModel(config)
    arrays = []
    for name, p in model.parameters():
        nbytes = p.data.size * 8
        if len(blob) < offset + nbytes:
            raise CheckpointError(
                f"truncated checkpoint: parameter '{name}' needs {nbytes} bytes "
                f"at offset {offset}, file has {len(blob) - offset}"
            )
        arrays.append(
            np.frombuffer(blob, dtype="<f8", count=p.data.size, offset=offset)
            .reshape(p.data.shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(f"trailing data after parameters at offset {offset}")
    model.load_state_arrays(arrays)
    return model
