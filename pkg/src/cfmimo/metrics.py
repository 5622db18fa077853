"""BER, post-detection SINR, and spectral efficiency."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrialMetrics:
    """Per-detector outcome of one Monte Carlo trial.

    sinr is None and sum_se is NaN for detectors without a defined SINR
    (the exhaustive-search oracle).
    """

    bit_errors: int
    bits_total: int
    sinr: np.ndarray | None
    sum_se: float
    iterations: int
    converged: bool = True
    elapsed_s: float = 0.0


def ber(hard_bits, true_bits) -> tuple[int, int]:
    """Hamming distance and length of two equal-length bit streams."""
    a = np.asarray(hard_bits)
    b = np.asarray(true_bits)
    if a.shape != b.shape:
        raise ValueError(f"bit streams differ in shape: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b)), int(a.size)


def sinr_ep(v_obs_final: np.ndarray) -> float:
    """Shared post-detection SINR of the iterative detector: K / sum(v_obs)."""
    v = np.asarray(v_obs_final, dtype=float)
    if np.any(v <= 0):
        raise ValueError("v_obs entries must be positive")
    return v.size / float(v.sum())


def se(sinr: float, tau_p: int, tau_c: int) -> float:
    """Spectral efficiency with pilot overhead: (1 - tau_p/tau_c) log2(1 + sinr)."""
    if not 0 <= tau_p <= tau_c:
        raise ValueError(f"need 0 <= tau_p <= tau_c, got tau_p={tau_p}, tau_c={tau_c}")
    return (1.0 - tau_p / tau_c) * float(np.log2(1.0 + sinr))


def sinr_linear(
    W: np.ndarray,
    Hhat: np.ndarray,
    D: np.ndarray,
    sigma2: float,
    p: float = 1.0,
    interference: np.ndarray | None = None,
) -> np.ndarray:
    """Per-UE post-detection SINR of a linear combiner (soft = W @ y).

    SINR_k = p |w_k hhat_k|^2 /
             (p sum_{i != k} |w_k hhat_i|^2 + p w_k diag(D) w_k^H + sigma2 ||w_k||^2)
    where w_k is row k of W. interference optionally restricts which UEs i
    count as interferers for UE k (True = interferes); cancellation-based
    detectors pass the mask of UEs not yet removed when k was detected.
    """
    G = W @ Hhat  # (K, K)
    gains = np.abs(G) ** 2
    signal = p * gains.diagonal()

    if interference is None:
        interference = ~np.eye(W.shape[0], dtype=bool)
    interf = p * np.sum(gains * interference, axis=1)

    w_abs2 = np.abs(W) ** 2
    err = p * w_abs2 @ np.asarray(D, dtype=float)
    noise = sigma2 * w_abs2.sum(axis=1)
    denom = interf + err + noise
    return np.divide(signal, denom, out=np.zeros_like(denom), where=denom > 0)
