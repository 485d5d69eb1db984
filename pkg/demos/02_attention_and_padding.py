#!/usr/bin/env python3
# Multi-head attention on a padded batch: look at the attention weights,
# then show that padded timesteps cannot influence the model output.

import numpy as np

from sst.layers import MultiHeadAttention
from sst.model import SstConfig, SstModel
from sst.tensor import Tensor

rng = np.random.default_rng(0)

# two sequences of length 4, second one has its last step padded
x = rng.normal(size=(2, 4, 8))
pad_mask = np.zeros((2, 4))
pad_mask[1, 3] = 1.0

mha = MultiHeadAttention(dmodel=8, n_heads=2, rng=rng)
out, weights = mha(Tensor(x), pad_mask, return_weights=True)

print("attention weights, sample 1 head 0 (last key is padded):")
print(np.round(weights[1, 0], 4))
print("each row sums to", weights[1, 0].sum(axis=-1))
print("weight on the padded key:", weights[1, :, :, 3].max(), "(exactly zero)")

# the same guarantee holds end to end through the full encoder
cfg = SstConfig(n_features=5, max_timesteps=6, n_tasks=2, n_layers=2,
                dmodel=16, dff=16, n_heads=2, dropout_rate=0.0, seed=1)
model = SstModel(cfg)

xb = rng.normal(size=(3, 4, 5))
mb = np.zeros((3, 4))
p_before = model.predict_proba(Tensor(xb), mb).data

# append a garbage timestep, marked padded
xb2 = np.concatenate([xb, np.full((3, 1, 5), 123.0)], axis=1)
mb2 = np.concatenate([mb, np.ones((3, 1))], axis=1)
p_after = model.predict_proba(Tensor(xb2), mb2).data

print("\nmax probability change after appending a padded step:",
      np.abs(p_after - p_before).max())
