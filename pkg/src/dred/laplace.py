"""Laplace quantization and rate mathematics.

All functions accept scalars or numpy arrays and broadcast. Quantizer
outputs are integer arrays (or Python ints for scalar input).

The decay parameter ``r`` relates to the standard deviation by
``r = exp(-sqrt(2) / sigma)``. A dead-zone quantizer with threshold
``theta`` sends every value in ``(-theta, theta)`` to zero and otherwise
uses unit steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument

EPSILON = 0.1
# below this decay the pmf is treated as a point mass at zero
R_DEGENERATE = 1e-9
ALPHABET_MAX = 255


@dataclass(frozen=True)
class LaplaceParams:
    r: float
    theta: float = 0.5
    delta: float | None = None
    epsilon: float = EPSILON

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise InvalidArgument(f"r must lie in (0, 1), got {self.r}")
        if self.theta < 0.5:
            raise InvalidArgument(f"theta must be >= 0.5, got {self.theta}")
        if self.delta is None:
            object.__setattr__(self, "delta", self.theta - 0.5)
        if self.delta < 0:
            raise InvalidArgument(f"delta must be >= 0, got {self.delta}")
        if self.epsilon != EPSILON:
            raise InvalidArgument(f"epsilon is fixed at {EPSILON}")

    @property
    def sigma(self) -> float:
        return -math.sqrt(2.0) / math.log(self.r)

    @classmethod
    def from_sigma(cls, sigma: float, theta: float = 0.5, delta: float | None = None) -> "LaplaceParams":
        return cls(math.exp(-math.sqrt(2.0) / sigma), theta, delta)

    @classmethod
    def implicit(cls, r: float, delta: float = 0.0) -> "LaplaceParams":
        return cls(r, theta_implicit(r), delta)


def _out(x, like):
    return x.item() if np.ndim(like) == 0 and np.ndim(x) == 0 else x


def continuous_pdf(z, params: LaplaceParams):
    r = params.r
    z = np.asarray(z, dtype=float)
    return _out(-math.log(r) / 2.0 * r ** np.abs(z), z)


def round_half_away(x):
    """Round to the nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=float)
    return _out(np.sign(x) * np.floor(np.abs(x) + 0.5), x)


def quantize_deadzone(z, theta: float):
    """Dead-zone quantizer with unit step.

    ``sgn(z) * floor(max(|z| + 1 - theta, 0))``; with ``theta = 0.5`` this
    is round-to-nearest with ties away from zero.
    """
    if theta < 0.5:
        raise InvalidArgument(f"theta must be >= 0.5, got {theta}")
    z = np.asarray(z, dtype=float)
    q = np.sign(z) * np.floor(np.maximum(np.abs(z) + 1.0 - theta, 0.0))
    q = q.astype(np.int64)
    return int(q) if q.ndim == 0 else q


def soft_deadzone(z, delta):
    """Differentiable dead zone ``z - delta * tanh(z / (delta + eps))``."""
    z = np.asarray(z, dtype=float)
    return _out(z - delta * np.tanh(z / (delta + EPSILON)), z)


def soft_deadzone_grad(z, delta):
    """Derivative of :func:`soft_deadzone` with respect to ``z``."""
    z = np.asarray(z, dtype=float)
    width = delta + EPSILON
    sech2 = 1.0 / np.cosh(np.clip(z / width, -350, 350)) ** 2
    return _out(1.0 - (delta / width) * sech2, z)


def soft_deadzone_grad_delta(z, delta):
    """Derivative of :func:`soft_deadzone` with respect to ``delta``."""
    z = np.asarray(z, dtype=float)
    width = delta + EPSILON
    u = z / width
    sech2 = 1.0 / np.cosh(np.clip(u, -350, 350)) ** 2
    return _out(-np.tanh(u) + delta * z / width**2 * sech2, z)


def discrete_pmf(k, params: LaplaceParams):
    """Probability of integer ``k`` after dead-zone quantization."""
    r, theta = params.r, params.theta
    k = np.asarray(k)
    mag = np.abs(k).astype(float)
    p = np.where(mag == 0, 1.0 - r**theta, 0.5 * (1.0 - r) * r ** (mag + theta - 1.0))
    return _out(p, k)


def theta_implicit(r: float):
    """Threshold at which both branches of the discrete pmf agree at zero.

    With this threshold the pmf reduces to ``(1 - r) / (1 + r) * r**|k|``.
    """
    r = np.asarray(r, dtype=float)
    if np.any((r <= 0) | (r >= 1)):
        raise InvalidArgument("r must lie in (0, 1)")
    return _out(np.log(2 * r / (1 + r)) / np.log(r), r)


def rate_bits(z_abs, r):
    """Per-sample bit cost under the implicit-threshold discrete Laplace.

    ``-log2((1 - r) / (1 + r)) - |z| log2(r)``. Averaging over samples gives
    the generalized discrete entropy. For ``r < 1e-9`` the distribution is a
    point mass and the cost is 0.
    """
    z_abs = np.asarray(z_abs, dtype=float)
    r = np.asarray(r, dtype=float)
    degenerate = r < R_DEGENERATE
    rs = np.where(degenerate, 0.5, r)
    bits = -np.log2((1 - rs) / (1 + rs)) - z_abs * np.log2(rs)
    bits = np.where(degenerate, 0.0, bits)
    return _out(bits, z_abs + r)


def rate_bits_grad_r(z_abs, r):
    """Derivative of :func:`rate_bits` with respect to ``r``."""
    z_abs = np.asarray(z_abs, dtype=float)
    return (1.0 / (1 - r) + 1.0 / (1 + r) - z_abs / r) / math.log(2)


def scale_quantize(z_e, q, delta):
    """Scale, apply the soft dead zone, then round (ties away from zero)."""
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise InvalidArgument("scale q must be positive")
    y = soft_deadzone(np.asarray(z_e, dtype=float) * q, delta)
    out = np.asarray(round_half_away(y)).astype(np.int64)
    return int(out) if out.ndim == 0 else out


def unscale(z_q, q):
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise InvalidArgument("scale q must be positive")
    return _out(np.asarray(z_q, dtype=float) / q, np.asarray(z_q) + q)


def truncated_pmf(params: LaplaceParams, kmax: int = ALPHABET_MAX) -> np.ndarray:
    """pmf over ``[-kmax, kmax]`` with the tail mass folded into the end symbols."""
    k = np.arange(-kmax, kmax + 1)
    p = np.asarray(discrete_pmf(k, params), dtype=float)
    # mass of |k| >= kmax on one side: 0.5 * r**(kmax + theta - 1)
    tail = 0.5 * params.r ** (kmax + params.theta - 1.0)
    p[0] = p[-1] = tail
    return p
