import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dred.errors import FormatError, InvalidArgument
from dred.features import gen_synthetic_features
from dred.framing import (MuxedPacket, RateSchedule, ScheduleRegistry, available_latents, build_payload,
                          build_stream, decode_varint, default_registry, default_schedule, encode_varint,
                          parse_payload, payload_bit_budget, rate_matched_schedule, read_stream, write_stream)
from dred.latent import decode_packet_latents


@pytest.fixture(scope="module")
def coded(transform):
    seq = gen_synthetic_features(31, 600)
    z, s = transform.analyze(seq.frames)
    return seq, z, s


def same_symbols(a, b):
    return (np.array_equal(a.is_symbols, b.is_symbols) and len(a.latent_symbols) == len(b.latent_symbols)
            and all(np.array_equal(x, y) for x, y in zip(a.latent_symbols, b.latent_symbols)))


@given(st.integers(0, 2**40))
def test_varint_round_trip(v):
    data = encode_varint(v) + b"\x07"
    assert decode_varint(data, 0) == (v, len(data) - 1)


def test_varint_errors():
    with pytest.raises(InvalidArgument):
        encode_varint(-1)
    with pytest.raises(FormatError):
        decode_varint(b"\x80\x80", 0)


class TestSchedules:
    def test_default_endpoints(self):
        s = default_schedule(1.04)
        assert s.duration_frames == 26
        assert s.lambda_index_by_age[0] == 0 and s.lambda_index_by_age[-1] == 15
        assert list(s.lambda_index_by_age) == sorted(s.lambda_index_by_age)

    def test_minimal(self):
        s = default_schedule(0.04)
        assert s.duration_frames == 1 and s.lambda_index_by_age == (0,)

    @pytest.mark.parametrize("d", [0.02, 0.05, 0.5, -0.04])
    def test_bad_duration(self, d):
        with pytest.raises(InvalidArgument):
            default_schedule(d)

    def test_invariants(self):
        with pytest.raises(InvalidArgument):
            RateSchedule(2, (3, 1))
        with pytest.raises(InvalidArgument):
            RateSchedule(2, (0,))
        with pytest.raises(InvalidArgument):
            RateSchedule(1, (16,))

    def test_registry(self):
        reg = default_registry()
        assert reg.get(0) == default_schedule(1.04)
        with pytest.raises(FormatError):
            reg.get(7)
        with pytest.raises(InvalidArgument):
            reg.register(default_schedule(0.4))

    def test_rate_matched(self, table, probe_latents):
        s = rate_matched_schedule(table, probe_latents)
        assert s.duration_frames == 26 and s.schedule_id == 1
        assert list(s.lambda_index_by_age) == sorted(s.lambda_index_by_age)


def test_round_trip(table, transform, coded):
    _, z, s = coded
    reg = default_registry()
    p = build_payload(z, s, table, default_schedule(1.04), 120)
    q = parse_payload(p.wire, table, reg)
    assert same_symbols(p, q)
    assert q.n_latents == q.n_decoded == 26 and q.complete
    assert q.latent_indices == list(range(120, 120 - 52, -2))
    np.testing.assert_array_equal(q.initial_state, p.initial_state)
    for a, b in zip(p.latents, q.latents):
        np.testing.assert_array_equal(a, b)


def test_decodes_to_104_frames(table, transform, coded):
    seq, z, s = coded
    q = parse_payload(build_payload(z, s, table, default_schedule(1.04), 200).wire, table, default_registry())
    frames = decode_packet_latents(q.latents, q.initial_state, transform)
    assert len(frames) == 104
    assert q.covered_steps() == range(149, 201)


def test_minimal_payload(table, coded):
    _, z, s = coded
    sch = RateSchedule(1, (0,), schedule_id=3)
    reg = ScheduleRegistry([sch])
    q = parse_payload(build_payload(z, s, table, sch, 10).wire, table, reg)
    assert q.n_decoded == 1 and q.covered_steps() == range(9, 11)


def test_empty_schedule_is_state_only(table, coded):
    _, z, s = coded
    sch = RateSchedule(0, (), schedule_id=9, is_lambda_index=4)
    p = build_payload(z, s, table, sch, 50)
    q = parse_payload(p.wire, table, ScheduleRegistry([sch]))
    assert q.n_decoded == 0 and np.array_equal(q.is_symbols, p.is_symbols)


def test_consecutive_payloads_opposite_parity(table, coded):
    _, z, s = coded
    sch = default_schedule(1.04)
    a = build_payload(z, s, table, sch, 100)
    b = build_payload(z, s, table, sch, 101)
    assert a.parity != b.parity
    span_a, span_b = set(a.covered_steps()), set(b.covered_steps())
    assert len(span_a & span_b) == 51
    assert not set(a.latent_indices) & set(b.latent_indices)


def test_insufficient_history(table, coded):
    _, z, s = coded
    sch = default_schedule(1.04)
    with pytest.raises(InvalidArgument):
        build_payload(z, s, table, sch, 49)
    p = build_payload(z, s, table, sch, 49, truncate=True)
    assert p.n_latents == 25 == available_latents(49, sch)
    q = parse_payload(p.wire, table, default_registry())
    assert same_symbols(p, q)
    with pytest.raises(InvalidArgument):
        build_payload(z, s, table, sch, len(z))


def test_prefix_decode(table, coded):
    _, z, s = coded
    reg = default_registry()
    full = parse_payload(build_payload(z, s, table, default_schedule(1.04), 250).wire, table, reg)
    for k in (0, 1, 3, 13, 26, 40):
        part = parse_payload(full.wire, table, reg, max_latents=k)
        assert part.n_decoded == min(k, 26)
        assert all(np.array_equal(a, b) for a, b in zip(part.latent_symbols, full.latent_symbols))


def test_truncated_wire_gives_partial_result(table, coded):
    _, z, s = coded
    reg = default_registry()
    p = build_payload(z, s, table, default_schedule(1.04), 250)
    seen_partial = False
    for cut in range(1, len(p.wire)):
        try:
            q = parse_payload(p.wire[:-cut], table, reg)
        except FormatError:
            continue
        assert q.n_decoded < 26
        seen_partial |= q.n_decoded > 0
        assert all(np.array_equal(a, b) for a, b in zip(q.latent_symbols, p.latent_symbols))
    assert seen_partial
    with pytest.raises(FormatError):
        parse_payload(p.wire[:6], table, reg)


def test_header_corruption(table, coded):
    _, z, s = coded
    reg = default_registry()
    wire = bytearray(build_payload(z, s, table, default_schedule(1.04), 250).wire)
    bad = bytearray(wire)
    bad[1] = 77
    with pytest.raises(FormatError):
        parse_payload(bytes(bad), table, reg)
    bad = bytearray(wire)
    bad[0] ^= 0xFF
    with pytest.raises(FormatError):
        parse_payload(bytes(bad), table, reg)
    with pytest.raises(FormatError):
        parse_payload(bytes(wire) + b"\x00", table, reg)


def test_budget_additivity(table, transform, probe):
    base = RateSchedule(6, (0, 2, 4, 6, 8, 10), schedule_id=5)
    longer = base.extended(6, lambda_index=12)
    steps = range(30, 200, 7)
    a = payload_bit_budget(base, table, probe, transform, steps)
    b = payload_bit_budget(longer, table, probe, transform, steps)
    assert b.mean_bits_by_age[:6] == pytest.approx(a.mean_bits_by_age)
    ideal_a = a.mean_is_bits + sum(a.mean_bits_by_age)
    ideal_b = b.mean_is_bits + sum(b.mean_bits_by_age)
    assert ideal_b - ideal_a == pytest.approx(sum(b.mean_bits_by_age[6:]))
    assert b.bitrate_bps == pytest.approx(b.mean_bits / 0.02)


def test_budget_empty_schedule(table, transform, probe):
    sch = RateSchedule(0, (), schedule_id=9, is_lambda_index=0)
    b = payload_bit_budget(sch, table, probe, transform)
    assert b.mean_bits_by_age == []
    # header (4 bytes here) plus the coded initial state
    assert b.mean_bits <= 8 * 4 + b.mean_is_bits + 16


def test_muxed_packet_json(tmp_path):
    pkts = [MuxedPacket(i, 20 * i, bytes(30), None if i == 1 else bytes([i, 2, 3])) for i in range(3)]
    path = tmp_path / "s.jsonl"
    write_stream(path, pkts)
    assert read_stream(path) == pkts
    with pytest.raises(InvalidArgument):
        write_stream(path, [pkts[0], pkts[2]])
    with pytest.raises(FormatError):
        MuxedPacket.from_json('{"sequence": 1}')


def test_build_stream(table, transform):
    seq = gen_synthetic_features(8, 200)
    pkts = build_stream(seq, table, default_schedule(1.04), transform)
    assert len(pkts) == 100
    assert [p.send_time_ms for p in pkts[:3]] == [0, 20, 40]
    reg = default_registry()
    counts = [parse_payload(p.redundancy, table, reg).n_latents for p in pkts]
    assert counts[:4] == [1, 1, 2, 2] and counts[-1] == 26
