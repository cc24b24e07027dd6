import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dred.errors import FormatError, InvalidArgument
from dred.features import gen_synthetic_features
from dred.framing import build_stream, default_registry, default_schedule
from dred.netsim import (LossModel, LossTrace, PayloadCache, RecoveryReport, SweepConfig, gen_loss_trace,
                         min_age_oracle, simulate, sweep)


@pytest.fixture(scope="module")
def setup(table, transform):
    seq = gen_synthetic_features(77, 1000)
    stream = build_stream(seq, table, default_schedule(1.04), transform)
    registry = default_registry()
    return seq, stream, registry, PayloadCache(table, registry, transform)


def test_model_parameters():
    m = LossModel.from_average(0.184, 5.0)
    assert m.p_bad_to_good == pytest.approx(0.2)
    assert m.p_good_to_bad == pytest.approx(0.045098, abs=1e-6)
    assert m.stationary_loss == pytest.approx(0.184)


@pytest.mark.parametrize("avg, burst", [(1.0, 5.0), (1.5, 5.0), (-0.1, 5.0), (0.1, 0.5), (0.9, 1.0)])
def test_model_validation(avg, burst):
    with pytest.raises(InvalidArgument):
        LossModel.from_average(avg, burst)


def test_lossless():
    assert gen_loss_trace(0.0, 5.0, 1000, 0).arrived.all()


def test_deterministic_per_seed():
    a = gen_loss_trace(0.2, 3.0, 5000, 9)
    assert np.array_equal(a.arrived, gen_loss_trace(0.2, 3.0, 5000, 9).arrived)
    assert not np.array_equal(a.arrived, gen_loss_trace(0.2, 3.0, 5000, 10).arrived)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_loss_statistics(seed):
    tr = gen_loss_trace(0.184, 5.0, 10**6, seed)
    assert len(tr) == 10**6
    assert abs(tr.loss_rate - 0.184) < 0.003
    assert abs(tr.mean_burst() - 5.0) < 0.1


def test_memoryless_burst_lengths():
    # bad-state runs are geometric: P(len = 1) = p_bad_to_good
    tr = gen_loss_trace(0.3, 4.0, 400000, 4)
    lengths = np.array([n for _, n in tr.bursts()])
    assert np.mean(lengths == 1) == pytest.approx(0.25, abs=0.01)


def test_trace_file(tmp_path):
    tr = LossTrace(np.array([1, 0, 0, 1, 1], dtype=bool))
    assert tr.to_string() == "10011\n"
    path = tmp_path / "t.txt"
    tr.save(path)
    assert np.array_equal(LossTrace.load(path).arrived, tr.arrived)
    with pytest.raises(FormatError):
        LossTrace.from_string("10x1")
    assert tr.bursts() == [(1, 2)]


def test_zero_loss(setup, table, transform):
    _, stream, registry, cache = setup
    rep = simulate(stream, LossTrace(np.ones(500, bool)), table, registry, transform, cache)
    assert rep.frames_unrecovered == 0 and rep.decoder_invocations == 0
    assert rep.frames_recovered_primary == rep.frames_total == 1000


@pytest.mark.parametrize("length, unrecovered", [(1, 0), (51, 0), (52, 2), (53, 4), (60, 18)])
def test_single_burst(setup, table, transform, length, unrecovered):
    _, stream, registry, cache = setup
    rep = simulate(stream, LossTrace.single_burst(500, 200, length), table, registry, transform, cache)
    assert rep.frames_unrecovered == unrecovered == 2 * max(0, length - 51)
    assert rep.decoder_invocations == 1
    assert rep.frames_recovered_redundancy == 2 * min(length, 51)


def test_trailing_burst_is_lost(setup, table, transform):
    _, stream, registry, cache = setup
    rep = simulate(stream, LossTrace.single_burst(500, 490, 10), table, registry, transform, cache)
    assert rep.frames_unrecovered == 20 and rep.decoder_invocations == 0


def test_length_mismatch(setup, table, transform):
    _, stream, registry, cache = setup
    with pytest.raises(InvalidArgument):
        simulate(stream, LossTrace(np.ones(10, bool)), table, registry, transform, cache)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 0.6), st.floats(1.0, 30.0))
def test_freshest_copy(setup, table, transform, seed, loss, burst):
    _, stream, registry, cache = setup
    if loss / (1 - loss) / burst > 1:
        return
    trace = gen_loss_trace(loss, burst, 500, seed)
    ages = {}
    rep = simulate(stream, trace, table, registry, transform, cache, ages_out=ages)
    assert ages == min_age_oracle(trace, default_schedule(1.04))
    rep.check()
    assert rep.decoder_invocations == len(re.findall("0+1", trace.to_string()))


def test_recovered_features_match_decoder(setup, table, transform):
    seq, stream, registry, cache = setup
    trace = gen_loss_trace(0.2, 5.0, 500, 3)
    rep = simulate(stream, trace, table, registry, transform, cache, reference=seq)
    assert rep.redundancy_distortion is not None
    assert 0.0 < rep.redundancy_distortion < 5.0


def test_sweep(setup, table, transform):
    seq, stream, registry, _ = setup
    reports = sweep([0.0, 0.1, 0.3], SweepConfig(n_packets=500, seeds=tuple(range(20))), stream, table,
                    registry, transform)
    assert reports[0].frames_unrecovered == 0 and reports[0].primary_fraction == 1.0
    fractions = [r.primary_fraction for r in reports]
    assert fractions == sorted(fractions, reverse=True)
    assert len({round(r.redundancy_bitrate_bps, 6) for r in reports}) == 1
    for r in reports:
        r.check()


def test_report_json_round_trip():
    rep = RecoveryReport(frames_total=4, frames_recovered_primary=2, frames_recovered_redundancy=2,
                         redundancy_by_age=[2])
    rep.check()
    import json
    d = json.loads(rep.to_json())
    assert d["frames_total"] == 4 and d["primary_fraction"] == 0.5
