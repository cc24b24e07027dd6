#!/usr/bin/env python3
"""Train the 16 quantizer tables and look at the rate-distortion curve.

Takes about half a minute.
"""

# %%
import numpy as np

from dred.latent import reference_transform
from dred.training import TrainConfig, synthetic_corpus, train_tables

# %% The frozen transform: energy falls off quickly across latent dimensions
tr = reference_transform()
print("latent std (first, middle, last):", np.round(tr.latent_std[[0, 40, 79]], 3))

# %% Train on 120 synthetic sequences of 4 s each
corpus = synthetic_corpus(120)
table, points = train_tables(TrainConfig(), corpus)

# %% Larger lambda: fewer bits, more distortion, fewer dimensions in use
print(f"{'idx':>3} {'bits/vec':>9} {'distortion':>10} {'dims':>5} {'IS bits':>8}")
for p in points:
    print(f"{p.lambda_index:3d} {p.mean_rate_bits:9.2f} {p.mean_distortion:10.4f} "
          f"{p.nondegenerate_dims:5d} {p.is_rate_bits:8.2f}")

# %% Quantizer scale and dead-zone width for the strongest dimensions
print("q     ", np.round(table.latent.q[[0, 8, 15], :6], 2))
print("delta ", np.round(table.latent.delta[[0, 8, 15], :6], 2))

table.save("table.bin")
