"""Redundancy payloads: one initial state plus a strided run of latents.

A payload built at 20-ms step ``n`` carries the latents ``n, n-2, ...``
(every second one, so consecutive packets hold complementary halves),
quantized coarser with age, and the initial state of step ``n``. Everything
goes into one range-coder stream, initial state first and then latents
newest first, so a receiver can stop after the few latents it needs.

Wire layout (see FORMAT.md)::

    magic      u8      0xD5
    schedule   u8      registry id
    position   varint  (newest_index << 1) | parity
    length     varint  range-coder bytes that follow
    coded      bytes   range-coded symbols
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InvalidArgument
from .latent import (N_LAMBDA, QuantizerTable, Transform, dequantize, encode_stream,
                     quantize_batch)
from .rangecoder import RangeDecoder, RangeEncoder, SymbolModel, ideal_bits
from .training import coded_bits

PAYLOAD_MAGIC = 0xD5
STEP_MS = 20
LATENT_MS = 40


# --------------------------------------------------------------------------
# varints


def encode_varint(value: int) -> bytes:
    """Unsigned LEB128."""
    if value < 0:
        raise InvalidArgument(f"varint must be non-negative, got {value}")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Return ``(value, next_pos)``."""
    value = shift = 0
    while True:
        if pos >= len(data):
            raise FormatError("payload ends inside a varint")
        byte = data[pos]
        pos += 1
        value |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise FormatError("varint too long")


# --------------------------------------------------------------------------
# schedules


@dataclass(frozen=True)
class RateSchedule:
    """Lambda index per latent age (0 = newest) for ``duration_frames`` latents."""

    duration_frames: int
    lambda_index_by_age: tuple
    schedule_id: int = 0
    is_lambda_index: int | None = None

    def __post_init__(self):
        idx = tuple(int(k) for k in self.lambda_index_by_age)
        object.__setattr__(self, "lambda_index_by_age", idx)
        if self.duration_frames < 0 or len(idx) != self.duration_frames:
            raise InvalidArgument(f"need {self.duration_frames} lambda indices, got {len(idx)}")
        if any(not 0 <= k < N_LAMBDA for k in idx):
            raise InvalidArgument(f"lambda indices must lie in [0, {N_LAMBDA - 1}]")
        if any(b < a for a, b in zip(idx, idx[1:])):
            raise InvalidArgument("lambda index must not decrease with age")
        if not 0 <= self.schedule_id <= 255:
            raise InvalidArgument("schedule id must fit in one byte")
        if self.is_lambda_index is None:
            object.__setattr__(self, "is_lambda_index", idx[0] if idx else 0)
        if not 0 <= self.is_lambda_index < N_LAMBDA:
            raise InvalidArgument("initial-state lambda index out of range")

    @property
    def duration_s(self) -> float:
        return self.duration_frames * LATENT_MS / 1000.0

    def extended(self, n: int, lambda_index: int | None = None, schedule_id: int | None = None) -> "RateSchedule":
        """Same schedule with ``n`` extra, older latents at ``lambda_index`` (default: the oldest index)."""
        k = self.lambda_index_by_age[-1] if lambda_index is None else lambda_index
        return RateSchedule(self.duration_frames + n, self.lambda_index_by_age + (k,) * n,
                            self.schedule_id if schedule_id is None else schedule_id, self.is_lambda_index)


def default_schedule(duration_s: float, schedule_id: int = 0) -> RateSchedule:
    """Linear age-to-lambda map from index 0 (newest) to 15 (oldest).

    ``duration_s`` must be a multiple of 40 ms; 1.04 s gives 26 latents.
    """
    n = round(duration_s * 1000.0 / LATENT_MS)
    if duration_s < 0 or not math.isclose(n * LATENT_MS / 1000.0, duration_s, abs_tol=1e-9):
        raise InvalidArgument(f"duration must be a non-negative multiple of 40 ms, got {duration_s}")
    if n <= 1:
        return RateSchedule(n, (0,) * n, schedule_id)
    idx = [round((N_LAMBDA - 1) * age / (n - 1)) for age in range(n)]
    return RateSchedule(n, idx, schedule_id)


def measured_rates(table: QuantizerTable, probe_latents: np.ndarray) -> np.ndarray:
    """Mean coded bits per latent vector for each lambda index."""
    probe = np.atleast_2d(probe_latents)
    return np.array([coded_bits(quantize_batch(probe, table.latent, k), table.latent, k).mean()
                     for k in range(table.n_lambda)])


def rate_matched_schedule(table: QuantizerTable, probe_latents: np.ndarray, n_latents: int = 26,
                          newest_bits: float = 50.0, oldest_bits: float = 6.0, schedule_id: int = 1) -> RateSchedule:
    """Schedule whose per-age rate follows a geometric ramp from ``newest_bits`` to ``oldest_bits``.

    Each age takes the lambda index whose measured rate on ``probe_latents``
    is closest to the target; a running maximum keeps the indices
    non-decreasing.
    """
    rates = measured_rates(table, probe_latents)
    if n_latents == 1:
        targets = np.array([newest_bits])
    else:
        targets = newest_bits * (oldest_bits / newest_bits) ** (np.arange(n_latents) / (n_latents - 1))
    idx = np.argmin(np.abs(rates[None, :] - targets[:, None]), axis=1)
    idx = np.maximum.accumulate(idx)
    return RateSchedule(n_latents, idx.tolist(), schedule_id)


class ScheduleRegistry:
    """Pre-shared schedules keyed by their one-byte id."""

    def __init__(self, schedules=()):
        self._by_id: dict[int, RateSchedule] = {}
        for s in schedules:
            self.register(s)

    def register(self, schedule: RateSchedule) -> None:
        old = self._by_id.get(schedule.schedule_id)
        if old is not None and old != schedule:
            raise InvalidArgument(f"schedule id {schedule.schedule_id} already registered")
        self._by_id[schedule.schedule_id] = schedule

    def get(self, schedule_id: int) -> RateSchedule:
        try:
            return self._by_id[schedule_id]
        except KeyError:
            raise FormatError(f"unknown schedule id {schedule_id}") from None

    def __contains__(self, schedule_id):
        return schedule_id in self._by_id

    def __iter__(self):
        return iter(self._by_id.values())


def default_registry() -> ScheduleRegistry:
    return ScheduleRegistry([default_schedule(1.04)])


# --------------------------------------------------------------------------
# payloads


@dataclass
class RedundancyPayload:
    """A built or parsed payload.

    ``latent_symbols`` and ``latents`` are newest first. After a partial
    parse ``n_decoded`` may be smaller than ``n_latents``.
    """

    schedule_id: int
    newest_index: int
    is_symbols: np.ndarray
    is_lambda_index: int
    latent_symbols: list
    lambda_indices: list
    wire: bytes
    n_latents: int
    initial_state: np.ndarray | None = None
    latents: list = field(default_factory=list)

    @property
    def parity(self) -> int:
        return self.newest_index & 1

    @property
    def n_decoded(self) -> int:
        return len(self.latent_symbols)

    @property
    def complete(self) -> bool:
        return self.n_decoded == self.n_latents

    @property
    def latent_indices(self) -> list[int]:
        """20-ms step index of each latent present, newest first."""
        return [self.newest_index - 2 * a for a in range(self.n_decoded)]

    def covered_steps(self) -> range:
        """20-ms steps reconstructable from the decoded latents."""
        return range(self.newest_index - 2 * self.n_decoded + 1, self.newest_index + 1)

    @property
    def size_bits(self) -> int:
        return 8 * len(self.wire)


def available_latents(newest_index: int, schedule: RateSchedule, stride: int = 2) -> int:
    """Latents a payload at ``newest_index`` can hold: the schedule length or the history, whichever is less."""
    return min(schedule.duration_frames, newest_index // stride + 1)


def _rows(values):
    if isinstance(values, np.ndarray):
        return values
    return np.stack([np.asarray(getattr(v, "values", v), dtype=float) for v in values])


def _header(schedule_id: int, newest_index: int, coded_len: int) -> bytes:
    return (bytes([PAYLOAD_MAGIC, schedule_id]) + encode_varint((newest_index << 1) | (newest_index & 1))
            + encode_varint(coded_len))


def build_payload(latents, states, table: QuantizerTable, schedule: RateSchedule, newest_index: int,
                  truncate: bool = False) -> RedundancyPayload:
    """Quantize and code the payload ending at 20-ms step ``newest_index``.

    ``latents`` and ``states`` are the encoder outputs per step (sequences of
    vectors or ``(T, dim)`` arrays). Without enough history a
    :class:`InvalidArgument` is raised unless ``truncate`` is set, in which
    case the payload holds only the latents that exist.
    """
    z = _rows(latents)
    s = _rows(states)
    if not 0 <= newest_index < min(len(z), len(s)):
        raise InvalidArgument(f"newest_index {newest_index} outside encoded range [0, {min(len(z), len(s))})")
    n = available_latents(newest_index, schedule)
    if n < schedule.duration_frames and not truncate:
        raise InvalidArgument(
            f"step {newest_index} has history for {n} latents, schedule needs {schedule.duration_frames}")

    enc = RangeEncoder()
    k_is = schedule.is_lambda_index
    is_sym = quantize_batch(s[newest_index][None, :], table.state, k_is)[0]
    for v, m in zip(is_sym.tolist(), table.state.models(k_is)):
        enc.encode(v, m)
    lat_syms, ks = [], []
    for age in range(n):
        k = schedule.lambda_index_by_age[age]
        sym = quantize_batch(z[newest_index - 2 * age][None, :], table.latent, k)[0]
        for v, m in zip(sym.tolist(), table.latent.models(k)):
            enc.encode(v, m)
        lat_syms.append(sym)
        ks.append(k)
    coded = enc.finish().data
    wire = _header(schedule.schedule_id, newest_index, len(coded)) + coded
    return RedundancyPayload(
        schedule.schedule_id, newest_index, is_sym, k_is, lat_syms, ks, wire, n,
        dequantize(is_sym, table.state, k_is), [dequantize(v, table.latent, k) for v, k in zip(lat_syms, ks)])


def parse_header(data: bytes):
    """Return ``(schedule_id, newest_index, coded_len, body_offset)``."""
    data = bytes(data)
    if len(data) < 2:
        raise FormatError("payload shorter than its header")
    if data[0] != PAYLOAD_MAGIC:
        raise FormatError(f"bad payload magic 0x{data[0]:02x}")
    position, pos = decode_varint(data, 2)
    newest, parity = position >> 1, position & 1
    if parity != newest & 1:
        raise FormatError("parity bit disagrees with newest index")
    coded_len, pos = decode_varint(data, pos)
    return data[1], newest, coded_len, pos


def _decode_vector(dec: RangeDecoder, models: list[SymbolModel]) -> np.ndarray:
    return np.array([dec.decode(m) for m in models], dtype=np.int64)


def parse_payload(data: bytes, table: QuantizerTable, registry: ScheduleRegistry,
                  max_latents: int | None = None) -> RedundancyPayload:
    """Decode a payload using only its bytes and the static tables.

    ``max_latents`` stops after that many latents (newest first). If the
    bytes are truncated, decoding keeps every latent whose symbols depend
    only on bytes actually present and reports a partial result; losing
    even the initial state raises :class:`FormatError`.
    """
    data = bytes(data)
    schedule_id, newest, coded_len, pos = parse_header(data)
    schedule = registry.get(schedule_id)
    n_total = available_latents(newest, schedule)
    want = n_total if max_latents is None else max(0, min(int(max_latents), n_total))
    body = data[pos: pos + coded_len]
    if len(data) > pos + coded_len:
        raise FormatError(f"{len(data) - pos - coded_len} trailing bytes after payload")
    have = len(body)
    truncated = have < coded_len
    dec = RangeDecoder(body, strict=False)

    def intact():
        return not truncated or dec.consumed <= have

    k_is = schedule.is_lambda_index
    is_sym = _decode_vector(dec, table.state.models(k_is))
    if not intact():
        raise FormatError("payload truncated before the first latent")
    lat_syms, ks = [], []
    for age in range(want):
        k = schedule.lambda_index_by_age[age]
        sym = _decode_vector(dec, table.latent.models(k))
        if not intact():
            break
        lat_syms.append(sym)
        ks.append(k)
    if not truncated and len(lat_syms) == n_total:
        dec.check_end()
    return RedundancyPayload(
        schedule_id, newest, is_sym, k_is, lat_syms, ks, data, n_total,
        dequantize(is_sym, table.state, k_is), [dequantize(v, table.latent, k) for v, k in zip(lat_syms, ks)])


# --------------------------------------------------------------------------
# budget


@dataclass
class BitBudget:
    mean_bits: float
    mean_coded_bits: float
    mean_is_bits: float
    mean_bits_by_age: list
    n_payloads: int

    @property
    def bitrate_bps(self) -> float:
        return self.mean_bits / (STEP_MS / 1000.0)


def payload_bit_budget(schedule: RateSchedule, table: QuantizerTable, probe, transform: Transform,
                       newest_indices=None) -> BitBudget:
    """Mean payload size over every full-history payload of the probe sequences.

    ``mean_bits`` counts whole wire bytes including the header;
    ``mean_is_bits`` and ``mean_bits_by_age`` are ideal code lengths under
    the coder's frequency tables. ``newest_indices`` restricts the steps
    used (the same steps for every sequence).
    """
    total = coded = is_bits = 0.0
    by_age = np.zeros(schedule.duration_frames)
    count = 0
    is_models = table.state.models(schedule.is_lambda_index)
    lat_models = {k: table.latent.models(k) for k in set(schedule.lambda_index_by_age)}
    for seq in probe:
        z, s = (_rows(v) for v in encode_stream(seq, transform))
        first = 2 * max(schedule.duration_frames - 1, 0)
        steps = range(first, len(z)) if newest_indices is None else newest_indices
        for n in steps:
            p = build_payload(z, s, table, schedule, n)
            total += p.size_bits
            coded += 8 * (len(p.wire) - parse_header(p.wire)[3])
            is_bits += ideal_bits(p.is_symbols, is_models)
            for age, (sym, k) in enumerate(zip(p.latent_symbols, p.lambda_indices)):
                by_age[age] += ideal_bits(sym, lat_models[k])
            count += 1
    if count == 0:
        raise InvalidArgument("probe corpus too short for this schedule")
    return BitBudget(total / count, coded / count, is_bits / count, (by_age / count).tolist(), count)


# --------------------------------------------------------------------------
# multiplexed packets


@dataclass
class MuxedPacket:
    """A primary-codec packet stub with optional redundancy attached.

    Only the primary payload's size matters here; its bytes are opaque.
    """

    sequence: int
    send_time_ms: int
    primary_payload: bytes
    redundancy: bytes | None = None

    def to_json(self) -> str:
        red = None if self.redundancy is None else base64.b64encode(self.redundancy).decode("ascii")
        return json.dumps({"sequence": self.sequence, "send_time_ms": self.send_time_ms,
                           "primary_size_bytes": len(self.primary_payload), "redundancy_base64": red})

    @classmethod
    def from_json(cls, line: str) -> "MuxedPacket":
        try:
            rec = json.loads(line)
            red = rec["redundancy_base64"]
            return cls(int(rec["sequence"]), int(rec["send_time_ms"]), bytes(int(rec["primary_size_bytes"])),
                       None if red is None else base64.b64decode(red, validate=True))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad packet record: {exc}") from exc


def check_stream(packets) -> None:
    for a, b in zip(packets, packets[1:]):
        if b.sequence != a.sequence + 1 or b.send_time_ms - a.send_time_ms != STEP_MS:
            raise InvalidArgument(f"packets {a.sequence} and {b.sequence} break the 20-ms sequence")


def write_stream(path, packets) -> None:
    check_stream(packets)
    with open(path, "w") as fp:
        for p in packets:
            fp.write(p.to_json() + "\n")


def read_stream(path) -> list[MuxedPacket]:
    with open(path) as fp:
        packets = [MuxedPacket.from_json(line) for line in fp if line.strip()]
    try:
        check_stream(packets)
    except InvalidArgument as exc:
        raise FormatError(str(exc)) from exc
    return packets


def build_stream(features, table: QuantizerTable, schedule: RateSchedule, transform: Transform,
                 primary_bytes: int = 40) -> list[MuxedPacket]:
    """One packet per 20 ms, each carrying a payload that ends at its own step.

    Early packets hold as many latents as the history allows.
    """
    z, s = (_rows(v) for v in encode_stream(features, transform))
    packets = []
    for n in range(len(z)):
        red = build_payload(z, s, table, schedule, n, truncate=True).wire
        packets.append(MuxedPacket(n, STEP_MS * n, bytes(primary_bytes), red))
    return packets
