#!/usr/bin/env python3
"""Dead-zone quantization, the discrete Laplace model and the range coder."""

# %%
import numpy as np

from dred.laplace import LaplaceParams, discrete_pmf, quantize_deadzone, rate_bits, theta_implicit
from dred.rangecoder import encode_symbols, ideal_bits, model_from

# %% A wider dead zone sends more values to zero
z = np.linspace(-3, 3, 13)
for theta in (0.5, 0.75, 1.0):
    print(f"theta={theta:4.2f}", quantize_deadzone(z, theta))

# %% Probability of each symbol for r = 0.6
r = 0.6
for theta in (0.5, theta_implicit(r), 1.0):
    p = discrete_pmf(np.arange(-3, 4), LaplaceParams(r, theta))
    print(f"theta={theta:.4f}", np.round(p, 4))

# %% With the implicit threshold the bit cost is linear in |k|
k = np.arange(0, 6)
print("rate bits", np.round(rate_bits(k, r), 4))
print("-log2 P  ", np.round(-np.log2(discrete_pmf(k, LaplaceParams.implicit(r))), 4))

# %% Range-code samples and compare with the ideal code length
rng = np.random.default_rng(0)
k = np.arange(-255, 256)
pk = discrete_pmf(k, LaplaceParams.implicit(r))
samples = rng.choice(k, size=20000, p=pk / pk.sum())
model = model_from(r, theta_implicit(r))
buf = encode_symbols(samples, model)
print(f"coded {len(buf)} bytes = {8 * len(buf) / len(samples):.4f} bits/symbol, "
      f"ideal {ideal_bits(samples, model) / len(samples):.4f}, entropy {-(pk * np.log2(pk)).sum():.4f}")
