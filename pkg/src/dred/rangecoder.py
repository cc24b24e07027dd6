"""Multi-symbol range coder for discrete Laplace symbols.

32-bit low/range registers, 16-bit cumulative frequencies and byte-wise
renormalization with carry propagation into already written bytes. Bytes
are emitted most significant first. The coding loop uses integers only, so
identical inputs give identical bytes everywhere.

Stream termination writes a single byte: the final interval always spans
at least ``2**24``, so it contains a value whose low 24 bits are zero, and
the decoder supplies those three zero bytes itself. A decoder therefore
consumes exactly ``len(data) + 3`` bytes. That check catches most damage
to raw bytes, but a range-coded stream is not self-delimiting; reliable
truncation detection comes from the length declared in :class:`CodedBuffer`
(and carried by the payload wire format).
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import FormatError, InvalidArgument
from .laplace import ALPHABET_MAX, LaplaceParams, truncated_pmf

PRECISION = 16
TOTAL = 1 << PRECISION
N_SYMBOLS = 2 * ALPHABET_MAX + 1

_TOP = 1 << 32
_MASK = _TOP - 1
_RENORM = 1 << 24
# decoder reads this many bytes past the end of a complete stream
IMPLICIT_TAIL = 3


class SymbolModel:
    """Static frequency table for symbols ``-255..255``.

    ``freq[i]`` belongs to symbol ``i - 255``. Every symbol has a frequency
    of at least 1 and the frequencies sum to ``2**16``.
    """

    __slots__ = ("freq", "cum", "_cum_list", "_freq_list")

    def __init__(self, freq):
        freq = np.asarray(freq, dtype=np.int64)
        if freq.shape != (N_SYMBOLS,):
            raise InvalidArgument(f"need {N_SYMBOLS} frequencies, got {freq.shape}")
        if freq.min() < 1 or int(freq.sum()) != TOTAL:
            raise InvalidArgument("frequencies must be >= 1 and sum to 2**16")
        self.freq = freq
        self.cum = np.concatenate([[0], np.cumsum(freq)])
        self._cum_list = self.cum.tolist()
        self._freq_list = freq.tolist()

    def prob(self, k):
        return self.freq[np.asarray(k) + ALPHABET_MAX] / TOTAL

    def bits(self, k):
        return -np.log2(self.prob(k))

    def entropy(self) -> float:
        p = self.freq / TOTAL
        return float(-(p * np.log2(p)).sum())

    def __eq__(self, other):
        return isinstance(other, SymbolModel) and np.array_equal(self.freq, other.freq)

    def __hash__(self):
        return hash(self.freq.tobytes())


@lru_cache(maxsize=4096)
def _model_cached(r: float, theta: float) -> SymbolModel:
    p = truncated_pmf(LaplaceParams(r, theta, 0.0))
    # one count per symbol up front, the rest shared in proportion to p;
    # the rounding remainder goes to symbol 0 to keep the table symmetric
    spare = TOTAL - N_SYMBOLS
    freq = 1 + np.floor(p * spare).astype(np.int64)
    freq[ALPHABET_MAX] += TOTAL - int(freq.sum())
    return SymbolModel(freq)


def build_model(params: LaplaceParams) -> SymbolModel:
    return _model_cached(float(params.r), float(params.theta))


def model_from(r: float, theta: float) -> SymbolModel:
    """Model for raw ``(r, theta)``; ``r`` is clamped into ``[1e-9, 1 - 1e-9]``."""
    r = min(max(float(r), 1e-9), 1.0 - 1e-9)
    return _model_cached(r, max(float(theta), 0.5))


@dataclass(frozen=True)
class CodedBuffer:
    """Encoder output. ``bit_count`` is the declared stream length.

    A buffer whose ``data`` holds fewer than ``bit_count`` bits has been
    truncated in transit.
    """

    data: bytes
    bit_count: int

    def __len__(self):
        return len(self.data)

    @property
    def truncated(self) -> bool:
        return self.bit_count > 8 * len(self.data)


class RangeEncoder:
    """Single-use encoder. Call :meth:`encode` per symbol then :meth:`finish`."""

    def __init__(self):
        self.low = 0
        self.range = _MASK
        self.out = bytearray()
        self._done = False

    def encode(self, symbol: int, model: SymbolModel) -> None:
        idx = symbol + ALPHABET_MAX
        if not 0 <= idx < N_SYMBOLS:
            raise InvalidArgument(f"symbol {symbol} outside [-{ALPHABET_MAX}, {ALPHABET_MAX}]")
        step = self.range >> PRECISION
        self.low += step * model._cum_list[idx]
        self.range = step * model._freq_list[idx]
        if self.low >= _TOP:
            self._carry()
        while self.range < _RENORM:
            self.out.append(self.low >> 24)
            self.low = (self.low << 8) & _MASK
            self.range <<= 8

    def _carry(self):
        self.low -= _TOP
        i = len(self.out) - 1
        while self.out[i] == 0xFF:
            self.out[i] = 0
            i -= 1
        self.out[i] += 1

    def finish(self) -> CodedBuffer:
        if self._done:
            raise InvalidArgument("encoder already finished")
        self._done = True
        # smallest multiple of 2**24 inside [low, low + range)
        self.low = (self.low + _RENORM - 1) & ~(_RENORM - 1)
        if self.low >= _TOP:
            self._carry()
        self.out.append(self.low >> 24)
        data = bytes(self.out)
        return CodedBuffer(data, 8 * len(data))


class RangeDecoder:
    """Mirror of :class:`RangeEncoder`.

    ``consumed`` counts the bytes read so far, including implicit zero
    bytes past the end. With ``strict`` set, reading more than
    ``IMPLICIT_TAIL`` bytes past the end raises :class:`FormatError`.
    """

    def __init__(self, data: bytes, strict: bool = True):
        self.data = bytes(data)
        self.strict = strict
        self.consumed = 0
        self.range = _MASK
        self.code = 0
        # encoder's low register (mod 2**32), tracked to verify termination
        self.low = 0
        for _ in range(4):
            self.code = (self.code << 8) | self._next_byte()

    def _next_byte(self) -> int:
        pos = self.consumed
        self.consumed += 1
        if pos < len(self.data):
            return self.data[pos]
        if self.strict and pos >= len(self.data) + IMPLICIT_TAIL:
            raise FormatError("coded buffer is truncated")
        return 0

    def check_end(self) -> None:
        """Raise unless the stream ends exactly here with the encoder's flush value."""
        if self.consumed != len(self.data) + IMPLICIT_TAIL:
            raise FormatError(
                f"coded buffer length mismatch: {len(self.data)} bytes, decoder used {self.consumed - IMPLICIT_TAIL}"
            )
        if self.code != (-self.low) & (_RENORM - 1):
            raise FormatError("coded buffer does not end with a valid termination")

    def decode(self, model: SymbolModel) -> int:
        step = self.range >> PRECISION
        value = min(self.code // step, TOTAL - 1)
        idx = bisect_right(model._cum_list, value) - 1
        self.code -= step * model._cum_list[idx]
        self.low = (self.low + step * model._cum_list[idx]) & _MASK
        self.range = step * model._freq_list[idx]
        while self.range < _RENORM:
            self.code = ((self.code << 8) | self._next_byte()) & _MASK
            self.low = (self.low << 8) & _MASK
            self.range <<= 8
        return idx - ALPHABET_MAX


def _model_list(models, n):
    if isinstance(models, SymbolModel):
        return [models] * n
    models = list(models)
    if len(models) == 1:
        return models * n
    if len(models) != n:
        raise InvalidArgument(f"got {len(models)} models for {n} symbols")
    return models


def encode_symbols(symbols, models) -> CodedBuffer:
    """Range-code ``symbols``; ``models`` is one shared model or one per symbol."""
    symbols = [int(s) for s in symbols]
    models = _model_list(models, len(symbols))
    enc = RangeEncoder()
    for s, m in zip(symbols, models):
        enc.encode(s, m)
    return enc.finish()


def decode_symbols(buffer, models, n: int) -> list[int]:
    """Inverse of :func:`encode_symbols`.

    A different model sequence than the encoder used is not reliably
    detected and may yield garbage symbols. Truncated or extended buffers
    raise :class:`FormatError`.
    """
    if isinstance(buffer, CodedBuffer):
        if buffer.truncated:
            raise FormatError(f"coded buffer is truncated: {len(buffer.data)} of {buffer.bit_count // 8} bytes")
        data = buffer.data
    else:
        data = bytes(buffer)
    models = _model_list(models, n)
    dec = RangeDecoder(data)
    out = [dec.decode(m) for m in models]
    dec.check_end()
    return out


def ideal_bits(symbols, models) -> float:
    symbols = list(symbols)
    models = _model_list(models, len(symbols))
    return float(sum(m.bits(s) for s, m in zip(symbols, models)))
