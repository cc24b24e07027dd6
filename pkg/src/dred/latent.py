"""Latent encoder/decoder pair and per-lambda quantization tables.

The encoder runs forward over the feature stream and emits, every 20 ms
(one feature pair), a latent vector and an initial state. With output
stride ``s`` a latent describes the last ``s`` pairs, so at stride 2 each
latent covers 40 ms and the even and odd latents each tile time.

The decoder works on one redundancy packet at a time, newest latent first,
and needs nothing beyond the packet contents. Its state starts from the
initial state, which carries the principal components of the newest
20-ms pair and is merged with the newest latent's view of that pair.

The transform itself is a fixed linear analysis/synthesis pair rather than
a trained network: latents are Karhunen-Loeve coefficients of normalized
feature windows, estimated from a seeded synthetic calibration corpus.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument
from .features import FEATURE_DIM, FeatureSequence, gen_synthetic_features
from .laplace import ALPHABET_MAX, round_half_away, soft_deadzone
from .rangecoder import SymbolModel, model_from

N_LAMBDA = 16
LATENT_DIM = 80
IS_DIM = 24
STRIDE = 2
PAIR_DIM = 2 * FEATURE_DIM
# scales below this are treated as a collapsed dimension
Q_MIN = 1e-6


def _principal_axes(samples: np.ndarray, n: int) -> np.ndarray:
    cov = np.cov(samples, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:n]
    axes = vecs[:, order].T
    # fix the sign so the largest component of each axis is positive
    pivots = np.argmax(np.abs(axes), axis=1)
    signs = np.sign(axes[np.arange(n), pivots])
    return axes * signs[:, None]


class Transform:
    """Seeded reference transform shared by encoder and decoder.

    Build through :func:`reference_transform`, which caches instances.
    """

    def __init__(self, seed: int = 0, stride: int = STRIDE, latent_dim: int = LATENT_DIM,
                 is_dim: int = IS_DIM, is_weight: float = 0.5, n_calib: int = 40):
        if stride < 1:
            raise InvalidArgument("stride must be >= 1")
        window_dim = stride * PAIR_DIM
        if latent_dim > window_dim:
            raise InvalidArgument(f"latent_dim {latent_dim} exceeds window size {window_dim}")
        if not 0 < is_dim <= PAIR_DIM:
            raise InvalidArgument(f"is_dim must lie in [1, {PAIR_DIM}]")
        self.seed = seed
        self.stride = stride
        self.latent_dim = latent_dim
        self.is_dim = is_dim
        self.is_weight = is_weight
        self.window_frames = 2 * stride
        self.window_dim = window_dim

        calib = [gen_synthetic_features(seed * 1000 + i, 400).frames.astype(float) for i in range(n_calib)]
        allf = np.concatenate(calib)
        self.mean = allf.mean(axis=0)
        self.std = allf.std(axis=0)
        windows = np.concatenate([self._windows(self.normalize(f)) for f in calib])
        self.analysis = _principal_axes(windows, latent_dim)  # (M, W)
        pairs = windows[:, -PAIR_DIM:]
        self.is_axes = _principal_axes(pairs, is_dim)  # (N_is, 40)
        self.latent_std = np.sqrt(np.mean((windows @ self.analysis.T) ** 2, axis=0))
        self.is_std = np.sqrt(np.mean((pairs @ self.is_axes.T) ** 2, axis=0))

    def normalize(self, frames: np.ndarray) -> np.ndarray:
        return (np.asarray(frames, dtype=float) - self.mean) / self.std

    def denormalize(self, frames: np.ndarray) -> np.ndarray:
        return np.asarray(frames) * self.std + self.mean

    def _windows(self, norm_frames: np.ndarray) -> np.ndarray:
        """One flattened window per 20-ms step, zero-padded before the start."""
        n_steps = norm_frames.shape[0] // 2
        pad = np.zeros((self.window_frames - 2, FEATURE_DIM))
        padded = np.concatenate([pad, norm_frames[: 2 * n_steps]])
        idx = 2 * np.arange(n_steps)[:, None] + np.arange(self.window_frames)[None, :]
        return padded[idx].reshape(n_steps, self.window_dim)

    def analyze(self, frames: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch encoder: latents ``(T, M)`` and initial states ``(T, N_is)``."""
        w = self._windows(self.normalize(frames))
        return w @ self.analysis.T, w[:, -PAIR_DIM:] @ self.is_axes.T

    def target_windows(self, frames: np.ndarray) -> np.ndarray:
        """Raw (not normalized) feature windows ``(T, 2 * stride, 20)`` matching each latent."""
        n_steps = frames.shape[0] // 2
        pad = np.tile(self.mean, (self.window_frames - 2, 1))
        padded = np.concatenate([pad, np.asarray(frames[: 2 * n_steps], dtype=float)])
        idx = 2 * np.arange(n_steps)[:, None] + np.arange(self.window_frames)[None, :]
        return padded[idx]

    def synthesize(self, latents: np.ndarray, state: np.ndarray | None = None) -> np.ndarray:
        """Map dequantized latents (newest first) to raw windows ``(n, 2 * stride, 20)``.

        ``state`` is the dequantized initial state; it is merged into the
        newest window's last pair within the initial-state subspace.
        """
        latents = np.atleast_2d(np.asarray(latents, dtype=float))
        w = latents @ self.analysis
        if state is not None:
            pair = w[0, -PAIR_DIM:]
            w[0, -PAIR_DIM:] = pair + self.is_weight * (np.asarray(state, dtype=float) - self.is_axes @ pair) @ self.is_axes
        return self.denormalize(w.reshape(-1, self.window_frames, FEATURE_DIM))

    def __repr__(self):
        return f"Transform(seed={self.seed}, stride={self.stride}, latent_dim={self.latent_dim}, is_dim={self.is_dim})"


@lru_cache(maxsize=16)
def reference_transform(seed: int = 0, stride: int = STRIDE, latent_dim: int = LATENT_DIM,
                        is_dim: int = IS_DIM) -> Transform:
    return Transform(seed, stride, latent_dim, is_dim)


@dataclass(frozen=True)
class LatentVector:
    values: np.ndarray
    frame_index: int


@dataclass(frozen=True)
class InitialState:
    values: np.ndarray
    frame_index: int


@dataclass(frozen=True)
class QuantizedLatent:
    """Integer symbols plus their dequantized values (``symbols / q``)."""

    symbols: np.ndarray
    lambda_index: int
    dequantized: np.ndarray


QuantizedIS = QuantizedLatent


class LatentEncoder:
    """Causal streaming encoder.

    Feed feature frames in any chunking; every complete pair yields one
    latent and one initial state. Only the last ``2 * stride - 2`` frames
    are kept as state.
    """

    def __init__(self, transform: Transform):
        self.transform = transform
        self._history = np.zeros((transform.window_frames - 2, FEATURE_DIM))
        self._pending = np.zeros((0, FEATURE_DIM))
        self.steps = 0

    def push(self, frames) -> list[tuple[LatentVector, InitialState]]:
        tr = self.transform
        frames = np.atleast_2d(np.asarray(frames, dtype=float))
        buf = np.concatenate([self._pending, tr.normalize(frames)])
        n_pairs = buf.shape[0] // 2
        self._pending = buf[2 * n_pairs:]
        out = []
        for i in range(n_pairs):
            window = np.concatenate([self._history, buf[2 * i: 2 * i + 2]])
            w = window.reshape(-1)
            z = tr.analysis @ w
            s = tr.is_axes @ w[-PAIR_DIM:]
            out.append((LatentVector(z, self.steps), InitialState(s, self.steps)))
            self._history = window[2:]
            self.steps += 1
        return out


def encode_stream(features: FeatureSequence, transform: Transform):
    """Encode a whole sequence; returns ``(latents, initial_states)``, one each per 20 ms."""
    if len(features) % 2:
        raise InvalidArgument(f"frame count must be even, got {len(features)}")
    pairs = LatentEncoder(transform).push(features.frames)
    return [p[0] for p in pairs], [p[1] for p in pairs]


def decode_packet_latents(latents, initial_state, transform: Transform) -> FeatureSequence:
    """Decode one packet's dequantized latents (newest first) and initial state.

    Returns ``2 * stride`` feature frames per latent in chronological order.
    """
    latents = [np.asarray(getattr(z, "values", z), dtype=float) for z in latents]
    if not latents:
        raise InvalidArgument("need at least one latent")
    state = getattr(initial_state, "values", initial_state)
    windows = transform.synthesize(np.stack(latents), state)
    return FeatureSequence(windows[::-1].reshape(-1, FEATURE_DIM))


_FIELDS = ("q", "delta", "theta", "r_soft", "r_hard")


@dataclass
class QuantizerParams:
    """Per-lambda, per-dimension quantizer and pmf parameters, shape ``(16, dim)``."""

    q: np.ndarray
    delta: np.ndarray
    theta: np.ndarray
    r_soft: np.ndarray
    r_hard: np.ndarray

    def __post_init__(self):
        for name in _FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float32))
        shape = self.q.shape
        if len(shape) != 2:
            raise InvalidArgument("parameter tables must be 2-D (lambda, dim)")
        for name in _FIELDS:
            if getattr(self, name).shape != shape:
                raise InvalidArgument(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(self.q < 0) or np.any(self.delta < 0) or np.any(self.theta < 0.5):
            raise InvalidArgument("need q >= 0, delta >= 0, theta >= 0.5")
        if np.any((self.r_soft <= 0) | (self.r_soft >= 1) | (self.r_hard <= 0) | (self.r_hard >= 1)):
            raise InvalidArgument("r parameters must lie in (0, 1)")

    @property
    def dim(self) -> int:
        return self.q.shape[1]

    @classmethod
    def constant(cls, n_lambda: int, dim: int, q=1.0, delta=0.0, theta=0.5, r_soft=0.5, r_hard=0.5):
        full = lambda v: np.broadcast_to(np.asarray(v, dtype=np.float32), (n_lambda, dim)).copy()
        return cls(full(q), full(delta), full(theta), full(r_soft), full(r_hard))

    def models(self, lambda_index: int) -> list[SymbolModel]:
        return [model_from(r, t) for r, t in zip(self.r_hard[lambda_index], self.theta[lambda_index])]


@dataclass
class QuantizerTable:
    latent: QuantizerParams
    state: QuantizerParams
    lambdas: np.ndarray = field(default=None)

    MAGIC = b"DREDQTAB"
    VERSION = 1

    def __post_init__(self):
        n = self.latent.q.shape[0]
        if self.state.q.shape[0] != n:
            raise InvalidArgument("latent and state tables disagree on lambda count")
        if self.lambdas is None:
            self.lambdas = np.zeros(n, dtype=np.float32)
        self.lambdas = np.asarray(self.lambdas, dtype=np.float32)
        if self.lambdas.shape != (n,):
            raise InvalidArgument("lambdas must have one entry per quantizer")

    @property
    def n_lambda(self) -> int:
        return self.latent.q.shape[0]

    @classmethod
    def constant(cls, latent_dim=LATENT_DIM, is_dim=IS_DIM, n_lambda=N_LAMBDA, **kw):
        return cls(QuantizerParams.constant(n_lambda, latent_dim, **kw),
                   QuantizerParams.constant(n_lambda, is_dim, **kw))

    def to_bytes(self) -> bytes:
        head = struct.pack("<8sHHHH", self.MAGIC, self.VERSION, self.n_lambda, self.latent.dim, self.state.dim)
        parts = [head, self.lambdas.astype("<f4").tobytes()]
        for params in (self.latent, self.state):
            for name in _FIELDS:
                parts.append(getattr(params, name).astype("<f4").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "QuantizerTable":
        head = struct.Struct("<8sHHHH")
        if len(data) < head.size:
            raise FormatError("table file shorter than its header")
        magic, version, n_lambda, m, n_is = head.unpack_from(data)
        if magic != cls.MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != cls.VERSION:
            raise FormatError(f"unsupported table version {version}")
        expected = head.size + 4 * (n_lambda + 5 * n_lambda * (m + n_is))
        if len(data) != expected:
            raise FormatError(f"table file should be {expected} bytes, got {len(data)}")
        arr = np.frombuffer(data, dtype="<f4", offset=head.size).astype(np.float32)
        lambdas, pos = arr[:n_lambda], n_lambda
        tables = []
        for dim in (m, n_is):
            vals = {}
            for name in _FIELDS:
                vals[name] = arr[pos: pos + n_lambda * dim].reshape(n_lambda, dim)
                pos += n_lambda * dim
            try:
                tables.append(QuantizerParams(**vals))
            except InvalidArgument as exc:
                raise FormatError(f"invalid table contents: {exc}") from exc
        return cls(tables[0], tables[1], lambdas)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "QuantizerTable":
        return cls.from_bytes(Path(path).read_bytes())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def _quantize(values, params: QuantizerParams, lambda_index: int) -> QuantizedLatent:
    if not 0 <= lambda_index < params.q.shape[0]:
        raise InvalidArgument(f"lambda_index must lie in [0, {params.q.shape[0] - 1}], got {lambda_index}")
    z = np.asarray(getattr(values, "values", values), dtype=float)
    if z.shape != (params.dim,):
        raise InvalidArgument(f"expected {params.dim} values, got shape {z.shape}")
    q = params.q[lambda_index].astype(float)
    delta = params.delta[lambda_index].astype(float)
    live = q >= Q_MIN
    qs = np.where(live, q, 1.0)
    sym = np.where(live, round_half_away(soft_deadzone(z * qs, delta)), 0.0)
    sym = np.clip(sym, -ALPHABET_MAX, ALPHABET_MAX).astype(np.int64)
    return QuantizedLatent(sym, lambda_index, dequantize(sym, params, lambda_index))


def dequantize(symbols, params: QuantizerParams, lambda_index: int) -> np.ndarray:
    q = params.q[lambda_index].astype(float)
    live = q >= Q_MIN
    return np.where(live, np.asarray(symbols, dtype=float) / np.where(live, q, 1.0), 0.0)


def quantize_latent(z, table: QuantizerTable, lambda_index: int) -> QuantizedLatent:
    return _quantize(z, table.latent, lambda_index)


def quantize_is(s, table: QuantizerTable, lambda_index: int) -> QuantizedIS:
    return _quantize(s, table.state, lambda_index)


def quantize_batch(values: np.ndarray, params: QuantizerParams, lambda_index: int) -> np.ndarray:
    """Vectorized hard quantization of ``(n, dim)`` values to integer symbols."""
    z = np.asarray(values, dtype=float)
    q = params.q[lambda_index].astype(float)
    delta = params.delta[lambda_index].astype(float)
    live = q >= Q_MIN
    sym = np.where(live, round_half_away(soft_deadzone(z * np.where(live, q, 1.0), delta)), 0.0)
    return np.clip(sym, -ALPHABET_MAX, ALPHABET_MAX).astype(np.int64)
