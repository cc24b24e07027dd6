#!/usr/bin/env python3
"""Send a stream with 1.04 s of redundancy through bursty loss.

Expects table.bin from 02_train_tables.py in the working directory.
"""

# %%
import numpy as np

from dred.features import gen_synthetic_features
from dred.framing import build_stream, default_registry, default_schedule, payload_bit_budget
from dred.latent import QuantizerTable, reference_transform
from dred.netsim import LossTrace, PayloadCache, SweepConfig, simulate, sweep

table = QuantizerTable.load("table.bin")
tr = reference_transform()
schedule = default_schedule(1.04)
registry = default_registry()
print("lambda index by age:", schedule.lambda_index_by_age)

# %% Ten seconds of features, one packet every 20 ms
features = gen_synthetic_features(1, 1000)
stream = build_stream(features, table, schedule, tr)
budget = payload_bit_budget(schedule, table, [gen_synthetic_features(2, 400)], tr)
print(f"mean payload {budget.mean_bits:.0f} bits -> {budget.bitrate_bps / 1000:.1f} kb/s of redundancy")

# %% A single long burst: up to 51 lost packets are fully recovered
cache = PayloadCache(table, registry, tr)
for length in (10, 51, 52, 60):
    rep = simulate(stream, LossTrace.single_burst(500, 200, length), table, registry, tr, cache)
    print(f"burst {length:2d}: recovered {rep.frames_recovered_redundancy:3d} frames, "
          f"lost {rep.frames_unrecovered:2d}")

# %% Random bursty loss at increasing rates
reports = sweep([0.0, 0.1, 0.2, 0.3, 0.5], SweepConfig(n_packets=500, seeds=tuple(range(10))),
                stream, table, registry, tr, reference=features)
for rate, rep in zip([0.0, 0.1, 0.2, 0.3, 0.5], reports):
    dist = rep.redundancy_distortion
    print(f"loss {rate:.1f}: primary {rep.primary_fraction:.3f}, "
          f"redundancy {rep.frames_recovered_redundancy / rep.frames_total:.3f}, "
          f"lost {rep.frames_unrecovered / rep.frames_total:.3f}, "
          f"distortion {'-' if dist is None else f'{dist:.3f}'}")

# %% Recovered frames mostly come from the freshest latents
rep = reports[2]
print("recovered frames by age:", rep.redundancy_by_age[:10])
print("mean age:", np.average(np.arange(len(rep.redundancy_by_age)), weights=rep.redundancy_by_age))
