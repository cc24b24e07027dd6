"""Acoustic feature vectors and synthetic feature sequences.

A feature vector is 20 values sampled every 10 ms: 18 cepstral
coefficients, the log pitch frequency and the voicing (pitch correlation).
Real speech analysis is out of scope, so :func:`gen_synthetic_features`
produces deterministic stand-in sequences with similar statistics.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgument

N_CEPSTRUM = 18
FEATURE_DIM = N_CEPSTRUM + 2
PITCH_INDEX = N_CEPSTRUM
VOICING_INDEX = N_CEPSTRUM + 1
FRAME_MS = 10

# log(Hz) bounds of the pitch random walk
PITCH_MIN = float(np.log(62.5))
PITCH_MAX = float(np.log(500.0))

MAGIC = b"DREDFEAT"
VERSION = 1
_HEADER = struct.Struct("<8sHI")


@dataclass(frozen=True)
class FeatureVector:
    cepstrum: np.ndarray
    pitch: float
    voicing: float

    def __post_init__(self):
        cep = np.asarray(self.cepstrum, dtype=np.float32)
        if cep.shape != (N_CEPSTRUM,):
            raise InvalidArgument(f"cepstrum must have {N_CEPSTRUM} values, got {cep.shape}")
        object.__setattr__(self, "cepstrum", cep)
        object.__setattr__(self, "voicing", float(np.clip(self.voicing, -1.0, 1.0)))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.cepstrum, np.float32([self.pitch, self.voicing])])

    @classmethod
    def from_array(cls, values) -> "FeatureVector":
        values = np.asarray(values, dtype=np.float32)
        return cls(values[:N_CEPSTRUM], float(values[PITCH_INDEX]), float(values[VOICING_INDEX]))


class FeatureSequence:
    """An immutable run of feature vectors at a 10-ms interval.

    Frames are held as a read-only ``(n_frames, 20)`` float32 array.
    """

    sample_interval_ms = FRAME_MS

    def __init__(self, frames):
        arr = np.array(frames, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != FEATURE_DIM:
            raise InvalidArgument(f"expected (n, {FEATURE_DIM}) frames, got shape {arr.shape}")
        arr[:, VOICING_INDEX] = np.clip(arr[:, VOICING_INDEX], -1.0, 1.0)
        arr.flags.writeable = False
        self._frames = arr

    @property
    def frames(self) -> np.ndarray:
        return self._frames

    @property
    def cepstrum(self) -> np.ndarray:
        return self._frames[:, :N_CEPSTRUM]

    @property
    def pitch(self) -> np.ndarray:
        return self._frames[:, PITCH_INDEX]

    @property
    def voicing(self) -> np.ndarray:
        return self._frames[:, VOICING_INDEX]

    def __len__(self):
        return self._frames.shape[0]

    def __getitem__(self, index):
        if isinstance(index, slice):
            return FeatureSequence(self._frames[index])
        return FeatureVector.from_array(self._frames[index])

    def __eq__(self, other):
        if not isinstance(other, FeatureSequence):
            return NotImplemented
        return self._frames.shape == other._frames.shape and self._frames.tobytes() == other._frames.tobytes()

    def __repr__(self):
        return f"FeatureSequence(n_frames={len(self)})"


def gen_synthetic_features(seed: int, n_frames: int) -> FeatureSequence:
    """Generate a deterministic synthetic feature sequence.

    Cepstral tracks are sums of slow sinusoids plus a little noise, with
    amplitudes decaying over the coefficient index so that different
    directions of the feature space carry very different energy. Pitch is a
    reflected random walk in log frequency between 62.5 and 500 Hz. Voicing
    alternates between voiced (> 0.7) and unvoiced (< 0.2) segments of
    10 to 50 frames.
    """
    if n_frames < 2 or n_frames % 2:
        raise InvalidArgument(f"n_frames must be even and >= 2, got {n_frames}")
    rng = np.random.default_rng(seed)
    t = np.arange(n_frames) * (FRAME_MS / 1000.0)

    n_tones = 3
    freqs = rng.uniform(0.2, 4.0, size=(N_CEPSTRUM, n_tones))
    phases = rng.uniform(0.0, 2 * np.pi, size=(N_CEPSTRUM, n_tones))
    amps = 2.2 * 0.78 ** np.arange(N_CEPSTRUM)[:, None] * rng.uniform(0.5, 1.0, size=(N_CEPSTRUM, n_tones))
    amps /= np.sqrt(n_tones)
    cep = np.einsum("ck,ckt->tc", amps, np.sin(2 * np.pi * freqs[:, :, None] * t + phases[:, :, None]))
    cep += 0.05 * rng.standard_normal(cep.shape)
    cep = np.clip(cep, -4.0, 4.0)

    pitch = np.empty(n_frames)
    p = rng.uniform(np.log(90.0), np.log(250.0))
    steps = 0.03 * rng.standard_normal(n_frames)
    for i in range(n_frames):
        p += steps[i]
        if p > PITCH_MAX:
            p = 2 * PITCH_MAX - p
        elif p < PITCH_MIN:
            p = 2 * PITCH_MIN - p
        pitch[i] = p

    voicing = np.empty(n_frames)
    pos = 0
    voiced = bool(rng.integers(2))
    while pos < n_frames:
        length = int(rng.integers(10, 51))
        end = min(pos + length, n_frames)
        if voiced:
            voicing[pos:end] = rng.uniform(0.75, 0.95, size=end - pos)
        else:
            voicing[pos:end] = rng.uniform(0.0, 0.15, size=end - pos)
        voiced = not voiced
        pos = end

    frames = np.column_stack([cep, pitch, voicing])
    return FeatureSequence(frames)


def write_features(path, seq: FeatureSequence) -> None:
    header = _HEADER.pack(MAGIC, VERSION, len(seq))
    body = seq.frames.astype("<f4", copy=False).tobytes()
    Path(path).write_bytes(header + body)


def read_features(path) -> FeatureSequence:
    data = Path(path).read_bytes()
    return decode_features(data)


def decode_features(data: bytes) -> FeatureSequence:
    if len(data) < _HEADER.size:
        raise FormatError("feature file shorter than its header")
    magic, version, n_frames = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    expected = n_frames * FEATURE_DIM * 4
    body = data[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(f"header declares {n_frames} frames ({expected} bytes), body has {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(n_frames, FEATURE_DIM)
    return FeatureSequence(frames)


def feature_io(path, mode: str, seq: FeatureSequence | None = None):
    """Read (``mode='r'``) or write (``mode='w'``) a feature file."""
    if mode == "r":
        return read_features(path)
    if mode == "w":
        if seq is None:
            raise InvalidArgument("write mode needs a sequence")
        write_features(path, seq)
        return None
    raise InvalidArgument(f"mode must be 'r' or 'w', got {mode!r}")
