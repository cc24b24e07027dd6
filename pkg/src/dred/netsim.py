"""Burst-loss channel and a gap-filling receiver.

Losses come from a two-state Gilbert chain: every packet sent in the Bad
state is lost, none in the Good state. The receiver plays the primary
frames of every packet that arrives. When a packet arrives after a gap it
is treated as if all the lost packets had arrived with it: its redundancy
payload is decoded once and every lost step it covers is filled from it.
That packet always holds the freshest copy, since any later packet only
carries older latents for the same steps.

All counts in :class:`RecoveryReport` are 10-ms feature frames (two per
packet).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .features import FeatureSequence
from .framing import (STEP_MS, MuxedPacket, RateSchedule, ScheduleRegistry, build_stream, parse_payload)
from .latent import QuantizerTable, Transform, decode_packet_latents
from .training import frame_distortion

FRAMES_PER_PACKET = 2


@dataclass(frozen=True)
class LossModel:
    """Gilbert two-state chain. ``p_good_to_bad = 0`` is a lossless channel."""

    p_good_to_bad: float
    p_bad_to_good: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_good_to_bad <= 1.0:
            raise InvalidArgument(f"p_good_to_bad must lie in [0, 1], got {self.p_good_to_bad}")
        if not 0.0 < self.p_bad_to_good <= 1.0:
            raise InvalidArgument(f"p_bad_to_good must lie in (0, 1], got {self.p_bad_to_good}")

    @classmethod
    def from_average(cls, avg_loss: float, mean_burst: float, seed: int = 0) -> "LossModel":
        if not 0.0 <= avg_loss < 1.0:
            raise InvalidArgument(f"avg_loss must lie in [0, 1), got {avg_loss}")
        if mean_burst < 1.0:
            raise InvalidArgument(f"mean burst must be >= 1 packet, got {mean_burst}")
        p_bg = 1.0 / mean_burst
        p_gb = p_bg * avg_loss / (1.0 - avg_loss)
        if p_gb > 1.0:
            raise InvalidArgument(f"loss {avg_loss} unreachable with mean burst {mean_burst}")
        return cls(p_gb, p_bg, seed)

    @property
    def stationary_loss(self) -> float:
        return self.p_good_to_bad / (self.p_good_to_bad + self.p_bad_to_good)

    def generate(self, n: int) -> "LossTrace":
        """Draw ``n`` packets. Runs in each state are geometric, so whole runs are drawn at once."""
        if n < 0:
            raise InvalidArgument("n must be non-negative")
        if self.p_good_to_bad == 0.0 or n == 0:
            return LossTrace(np.ones(n, dtype=bool))
        rng = np.random.default_rng(self.seed)
        bad = bool(rng.random() < self.stationary_loss)
        out = np.empty(n, dtype=bool)
        pos = 0
        # expected packets per Good+Bad cycle
        cycle = 1.0 / self.p_good_to_bad + 1.0 / self.p_bad_to_good
        while pos < n:
            k = int((n - pos) / cycle) + 16
            good_runs = rng.geometric(self.p_good_to_bad, size=k)
            bad_runs = rng.geometric(self.p_bad_to_good, size=k)
            pairs = np.stack([bad_runs, good_runs] if bad else [good_runs, bad_runs], axis=1).ravel()
            states = np.tile([not bad, bad] if bad else [True, False], k)
            # states holds "arrived" per run
            runs = np.repeat(states, pairs)
            take = min(len(runs), n - pos)
            out[pos: pos + take] = runs[:take]
            pos += take
        return LossTrace(out)


@dataclass
class LossTrace:
    """Per-packet arrival flags at 20-ms spacing (``True`` = arrived)."""

    arrived: np.ndarray

    def __post_init__(self):
        self.arrived = np.asarray(self.arrived, dtype=bool)
        if self.arrived.ndim != 1:
            raise InvalidArgument("trace must be one-dimensional")

    def __len__(self):
        return len(self.arrived)

    @property
    def loss_rate(self) -> float:
        return float(1.0 - self.arrived.mean()) if len(self) else 0.0

    def bursts(self) -> list[tuple[int, int]]:
        """``(start, length)`` of every run of lost packets."""
        lost = np.concatenate([[0], (~self.arrived).astype(np.int8), [0]])
        edges = np.diff(lost)
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1)
        return list(zip(starts.tolist(), (ends - starts).tolist()))

    def mean_burst(self) -> float:
        b = self.bursts()
        return float(np.mean([n for _, n in b])) if b else 0.0

    def to_string(self) -> str:
        return "".join("1" if a else "0" for a in self.arrived) + "\n"

    @classmethod
    def from_string(cls, text: str) -> "LossTrace":
        body = text.strip()
        if set(body) - {"0", "1"}:
            raise FormatError("trace may only contain '0' and '1'")
        return cls(np.frombuffer(body.encode("ascii"), dtype=np.uint8) == ord("1"))

    def save(self, path) -> None:
        Path(path).write_text(self.to_string())

    @classmethod
    def load(cls, path) -> "LossTrace":
        return cls.from_string(Path(path).read_text())

    @classmethod
    def single_burst(cls, n: int, start: int, length: int) -> "LossTrace":
        arrived = np.ones(n, dtype=bool)
        arrived[start: start + length] = False
        return cls(arrived)


def gen_loss_trace(avg_loss: float, mean_burst_packets: float, n: int, seed: int) -> LossTrace:
    return LossModel.from_average(avg_loss, mean_burst_packets, seed).generate(n)


# --------------------------------------------------------------------------
# receiver


@dataclass
class RecoveryReport:
    frames_total: int = 0
    frames_recovered_primary: int = 0
    frames_recovered_redundancy: int = 0
    frames_unrecovered: int = 0
    redundancy_by_age: list = field(default_factory=list)
    redundancy_by_lambda: list = field(default_factory=lambda: [0] * 16)
    redundancy_bitrate_bps: float = 0.0
    decoder_invocations: int = 0
    n_bursts: int = 0
    bursts_fully_covered: int = 0
    mean_burst_covered: float = 0.0
    max_burst_covered: int = 0
    loss_rate: float = 0.0
    redundancy_distortion: float | None = None

    def check(self) -> None:
        parts = self.frames_recovered_primary + self.frames_recovered_redundancy + self.frames_unrecovered
        if parts != self.frames_total:
            raise AssertionError(f"category counts {parts} != total {self.frames_total}")
        if sum(self.redundancy_by_age) != self.frames_recovered_redundancy:
            raise AssertionError("age histogram does not sum to redundancy-recovered frames")

    @property
    def primary_fraction(self) -> float:
        return self.frames_recovered_primary / self.frames_total if self.frames_total else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primary_fraction"] = self.primary_fraction
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def merge(cls, reports) -> "RecoveryReport":
        """Sum counts over reports; burst statistics are recomputed, bitrate averaged."""
        reports = list(reports)
        out = cls()
        ages = max((len(r.redundancy_by_age) for r in reports), default=0)
        out.redundancy_by_age = [0] * ages
        covered_total = 0.0
        dist_num = dist_den = 0.0
        for r in reports:
            for name in ("frames_total", "frames_recovered_primary", "frames_recovered_redundancy",
                         "frames_unrecovered", "decoder_invocations", "n_bursts", "bursts_fully_covered"):
                setattr(out, name, getattr(out, name) + getattr(r, name))
            for i, v in enumerate(r.redundancy_by_age):
                out.redundancy_by_age[i] += v
            out.redundancy_by_lambda = [a + b for a, b in zip(out.redundancy_by_lambda, r.redundancy_by_lambda)]
            covered_total += r.mean_burst_covered * r.bursts_fully_covered
            out.max_burst_covered = max(out.max_burst_covered, r.max_burst_covered)
            if r.redundancy_distortion is not None:
                dist_num += r.redundancy_distortion * r.frames_recovered_redundancy
                dist_den += r.frames_recovered_redundancy
        if reports:
            out.redundancy_bitrate_bps = float(np.mean([r.redundancy_bitrate_bps for r in reports]))
            lost = sum(r.frames_total - r.frames_recovered_primary for r in reports)
            out.loss_rate = lost / out.frames_total if out.frames_total else 0.0
        out.mean_burst_covered = covered_total / out.bursts_fully_covered if out.bursts_fully_covered else 0.0
        out.redundancy_distortion = dist_num / dist_den if dist_den else None
        return out


class PayloadCache:
    """Decoded payloads keyed by wire bytes, shared across simulations of one stream."""

    def __init__(self, table: QuantizerTable, registry: ScheduleRegistry, transform: Transform | None = None):
        self.table = table
        self.registry = registry
        self.transform = transform
        self._parsed = {}
        self._frames = {}
        self.decodes = 0

    def parse(self, wire: bytes):
        p = self._parsed.get(wire)
        if p is None:
            p = parse_payload(wire, self.table, self.registry)
            self._parsed[wire] = p
            self.decodes += 1
        return p

    def frames(self, wire: bytes) -> np.ndarray:
        """Decoded feature frames of a payload, chronological, ending at its newest step."""
        out = self._frames.get(wire)
        if out is None:
            p = self.parse(wire)
            out = decode_packet_latents(p.latents, p.initial_state, self.transform).frames
            self._frames[wire] = out
        return out


def _frame_error(x_hat: np.ndarray, x: np.ndarray) -> np.ndarray:
    return frame_distortion(np.asarray(x_hat, dtype=float), np.asarray(x, dtype=float))[0]


def simulate(stream, trace: LossTrace, table: QuantizerTable, registry: ScheduleRegistry,
             transform: Transform | None = None, cache: PayloadCache | None = None,
             reference: FeatureSequence | None = None, ages_out: dict | None = None) -> RecoveryReport:
    """Play ``stream`` through ``trace`` and count how every feature frame was obtained.

    The redundancy of a packet is decoded only when it is the first arrival
    after one or more lost packets; lost packets with no later arrival stay
    unrecovered. With ``reference`` features (and a ``transform``) the
    recovered frames are actually synthesized and their mean distortion is
    reported. ``ages_out``, if given, receives ``{step: age}`` for every
    recovered step.
    """
    stream = list(stream)
    if len(stream) != len(trace):
        raise InvalidArgument(f"stream has {len(stream)} packets, trace has {len(trace)}")
    if reference is not None and transform is None:
        raise InvalidArgument("distortion measurement needs the transform")
    cache = cache or PayloadCache(table, registry, transform)
    if cache.transform is None:
        cache.transform = transform

    arrived = trace.arrived
    n = len(stream)
    rep = RecoveryReport(frames_total=FRAMES_PER_PACKET * n)
    rep.frames_recovered_primary = FRAMES_PER_PACKET * int(arrived.sum())
    red_bytes = sum(len(p.redundancy) for p in stream if p.redundancy is not None)
    rep.redundancy_bitrate_bps = 8.0 * red_bytes / n / (STEP_MS / 1000.0) if n else 0.0
    rep.loss_rate = trace.loss_rate
    ages: list[int] = []
    covered_bursts = []
    dist = []

    bursts = trace.bursts()
    rep.n_bursts = len(bursts)
    for start, length in bursts:
        end = start + length
        recovered = 0
        if end < n and stream[end].redundancy is not None:
            wire = stream[end].redundancy
            payload = cache.parse(wire)
            rep.decoder_invocations += 1
            newest = payload.newest_index
            if newest != stream[end].sequence:
                raise FormatError(f"packet {stream[end].sequence} carries a payload for step {newest}")
            lo = newest - 2 * payload.n_decoded + 1
            for step in range(max(start, lo), end):
                # latent t covers steps t - 1 and t; the packet holds t = newest, newest - 2, ...
                age = (newest - step) // 2
                k = payload.lambda_indices[age]
                while len(ages) <= age:
                    ages.append(0)
                ages[age] += FRAMES_PER_PACKET
                if ages_out is not None:
                    ages_out[step] = age
                rep.redundancy_by_lambda[k] += FRAMES_PER_PACKET
                recovered += 1
            if recovered and reference is not None:
                frames = cache.frames(wire)
                first = max(start, lo)
                off = FRAMES_PER_PACKET * (first - lo)
                x_hat = frames[off: off + FRAMES_PER_PACKET * recovered]
                x = reference.frames[FRAMES_PER_PACKET * first: FRAMES_PER_PACKET * (first + recovered)]
                dist.append(_frame_error(x_hat, x))
        rep.frames_recovered_redundancy += FRAMES_PER_PACKET * recovered
        rep.frames_unrecovered += FRAMES_PER_PACKET * (length - recovered)
        if recovered == length:
            covered_bursts.append(length)

    rep.redundancy_by_age = ages
    rep.bursts_fully_covered = len(covered_bursts)
    rep.mean_burst_covered = float(np.mean(covered_bursts)) if covered_bursts else 0.0
    rep.max_burst_covered = max(covered_bursts, default=0)
    if dist:
        rep.redundancy_distortion = float(np.concatenate(dist).mean())
    rep.check()
    return rep


def min_age_oracle(trace: LossTrace, schedule: RateSchedule) -> dict:
    """Freshest copy of every lost step, by exhaustive search over later arrivals.

    Returns ``{step: age}`` for every lost step that some later arrival
    covers, taking the minimum age over all such arrivals. Assumes every
    packet carries a payload built with ``schedule``.
    """
    arrived = trace.arrived
    out = {}
    for start, length in trace.bursts():
        end = start + length
        if end >= len(arrived):
            continue
        for step in range(start, end):
            best = None
            for m in range(step, len(arrived)):
                if not arrived[m]:
                    continue
                n_lat = min(schedule.duration_frames, m // 2 + 1)
                if m - 2 * n_lat + 1 <= step:
                    age = (m - step) // 2
                    best = age if best is None else min(best, age)
            if best is not None:
                out[step] = best
    return out


@dataclass
class SweepConfig:
    mean_burst: float = 5.0
    n_packets: int = 500
    seeds: tuple = (0,)


def sweep(loss_rates, config: SweepConfig, stream, table: QuantizerTable, registry: ScheduleRegistry,
          transform: Transform | None = None, reference: FeatureSequence | None = None) -> list[RecoveryReport]:
    """One merged report per loss rate, over ``config.seeds`` fixed traces each."""
    stream = list(stream)
    if len(stream) < config.n_packets:
        raise InvalidArgument(f"stream has {len(stream)} packets, sweep needs {config.n_packets}")
    stream = stream[: config.n_packets]
    if reference is not None:
        reference = reference[: FRAMES_PER_PACKET * config.n_packets]
    cache = PayloadCache(table, registry, transform)
    out = []
    for i, rate in enumerate(loss_rates):
        reports = [simulate(stream, gen_loss_trace(rate, config.mean_burst, config.n_packets, 1000 * seed + i),
                            table, registry, transform, cache, reference)
                   for seed in config.seeds]
        merged = RecoveryReport.merge(reports)
        out.append(merged)
    return out


__all__ = ["LossModel", "LossTrace", "gen_loss_trace", "RecoveryReport", "PayloadCache", "simulate",
           "min_age_oracle", "SweepConfig", "sweep", "build_stream", "MuxedPacket"]
