"""Gray-coded square QAM: bit mapping, hard decisions, and discrete-prior
posterior moments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np

SUPPORTED_ORDERS = (4, 16, 64, 256)


@dataclass(frozen=True)
class Constellation:
    """Unit-average-energy square QAM with reflected-binary Gray labels."""

    points: np.ndarray      # (M,) complex
    bit_labels: np.ndarray  # (M, log2 M) uint8
    order: int

    @property
    def bits_per_symbol(self) -> int:
        return self.bit_labels.shape[1]


@dataclass(frozen=True)
class PosteriorMoments:
    """Mean and variance of a symbol posterior; shapes follow the inputs."""

    mean: np.ndarray | complex
    variance: np.ndarray | float


@lru_cache(maxsize=None)
def build_constellation(M: int) -> Constellation:
    """Square Gray-coded M-QAM normalized to unit average symbol energy.

    Labels are reflected-binary Gray per axis (real-axis bits first), so
    axis-adjacent points differ in exactly one bit.
    """
    if M not in SUPPORTED_ORDERS:
        raise ValueError(f"unsupported QAM order {M}; expected one of {SUPPORTED_ORDERS}")
    m = math.isqrt(M)
    half = m.bit_length() - 1  # bits per axis

    levels = 2 * np.arange(m) - (m - 1)  # ..., -3, -1, 1, 3, ...
    gray = np.arange(m) ^ (np.arange(m) >> 1)
    axis_bits = ((gray[:, None] >> np.arange(half - 1, -1, -1)) & 1).astype(np.uint8)

    re_idx, im_idx = np.divmod(np.arange(M), m)
    points = levels[re_idx] + 1j * levels[im_idx]
    points = points / np.sqrt(np.mean(np.abs(points) ** 2))
    bit_labels = np.concatenate([axis_bits[re_idx], axis_bits[im_idx]], axis=1)
    return Constellation(points=points, bit_labels=bit_labels, order=M)


def modulate(bits: np.ndarray, c: Constellation) -> np.ndarray:
    """Map a bit stream (length divisible by log2 M) to constellation symbols."""
    bits = np.asarray(bits, dtype=np.uint8)
    b = c.bits_per_symbol
    if bits.size % b:
        raise ValueError(f"bit count {bits.size} not divisible by {b}")
    weights = 1 << np.arange(b - 1, -1, -1)
    codes = bits.reshape(-1, b) @ weights
    index_of = np.empty(c.order, dtype=np.int64)
    index_of[c.bit_labels @ weights] = np.arange(c.order)
    return c.points[index_of[codes]]


def demodulate_hard(x, c: Constellation):
    """Nearest-point hard decision; ties go to the lowest point index.

    Returns (points, bits) where bits has one row of log2 M bits per input
    symbol (scalar input gives a scalar point and a 1-D bit row).
    """
    x = np.asarray(x)
    d = np.abs(x[..., None] - c.points) ** 2
    idx = np.argmin(d, axis=-1)
    return c.points[idx], c.bit_labels[idx]


def posterior_moments(x_obs, v_obs, c: Constellation) -> PosteriorMoments:
    """Moments of the discrete posterior induced by a Gaussian observation.

    Weights w_s are proportional to exp(-|x_obs - s|^2 / v_obs) over the
    constellation; computed in the log domain with max subtraction.
    Accepts scalars or arrays (elementwise).
    """
    x_obs = np.asarray(x_obs, dtype=complex)
    v_obs = np.asarray(v_obs, dtype=float)
    if np.any(v_obs <= 0):
        raise ValueError("v_obs must be strictly positive (clamp before calling)")

    logw = -np.abs(x_obs[..., None] - c.points) ** 2 / v_obs[..., None]
    logw -= logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    w /= w.sum(axis=-1, keepdims=True)

    mean = w @ c.points
    variance = np.sum(w * np.abs(c.points - mean[..., None]) ** 2, axis=-1)
    return PosteriorMoments(mean=mean, variance=variance)
