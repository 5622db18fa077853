"""Small-scale fading, pilot transmission, and MMSE channel estimation.

The estimator also produces the per-link error statistics (alpha, C, D)
that the detectors use to account for pilot contamination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import LargeScaleFading


@dataclass(frozen=True)
class PilotBook:
    """tau mutually orthogonal pilot sequences, each of length tau.

    phi[i] is pilot i with squared norm tau, and phi_i^H phi_j = tau * [i == j].
    """

    phi: np.ndarray  # (tau, tau) complex

    @property
    def tau(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class PilotAssignment:
    """Pilot index per UE plus the induced pilot-sharing cohorts.

    Indices are 0-based: t[k] in {0, ..., tau-1}; cohorts[j] lists the UEs on
    pilot j, and the cohorts partition {0, ..., K-1}.
    """

    t: np.ndarray               # (K,) int
    cohorts: tuple              # tau arrays of UE indices

    def __post_init__(self):
        tau = len(self.cohorts)
        if np.any(self.t < 0) or np.any(self.t >= tau):
            raise ValueError("pilot indices out of range")
        flat = np.concatenate([np.asarray(c) for c in self.cohorts]) if tau else np.array([])
        if sorted(flat.tolist()) != list(range(len(self.t))):
            raise ValueError("cohorts must partition the UE set")


@dataclass(frozen=True)
class ChannelRealization:
    """One coherence block: true channel, MMSE estimate, and error statistics.

    alpha + C = beta holds exactly by construction, and D[l] = sum_k C[l, k]
    is the diagonal of the aggregate estimation-error covariance.
    """

    H: np.ndarray      # (L, K) complex, true channel
    Hhat: np.ndarray   # (L, K) complex, MMSE estimate
    alpha: np.ndarray  # (L, K) estimate variances
    C: np.ndarray      # (L, K) error variances
    D: np.ndarray      # (L,) aggregate error variances


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with unit variance."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def dft_pilot_book(tau: int) -> PilotBook:
    """Pilot book from the rows of a tau x tau DFT matrix.

    Rows are exactly orthogonal for any tau and have squared norm tau.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    n = np.arange(tau)
    phi = np.exp(-2j * np.pi * np.outer(n, n) / tau)
    return PilotBook(phi=phi)


def assign_pilots(K: int, tau: int, rng: np.random.Generator, mode: str = "iid") -> PilotAssignment:
    """Assign one of tau pilots to each of K UEs.

    mode "iid" draws each UE's pilot uniformly at random (pilots may end up
    unused); mode "balanced" deals pilots round-robin over a random UE
    permutation so cohort sizes differ by at most one.
    """
    if tau < 1:
        raise ValueError(f"tau must be >= 1, got {tau}")
    if mode == "iid":
        t = rng.integers(0, tau, size=K)
    elif mode == "balanced":
        t = np.empty(K, dtype=np.int64)
        t[rng.permutation(K)] = np.arange(K) % tau
    else:
        raise ValueError(f"unknown pilot assignment mode {mode!r}")
    cohorts = tuple(np.flatnonzero(t == j) for j in range(tau))
    return PilotAssignment(t=t, cohorts=cohorts)


def sample_channel(lsf: LargeScaleFading, rng: np.random.Generator) -> np.ndarray:
    """Draw the block-fading channel H with h_{l,k} = sqrt(beta_{l,k}) g_{l,k}."""
    return np.sqrt(lsf.beta) * crandn(rng, lsf.beta.shape)


def transmit_pilots(
    H: np.ndarray,
    assignment: PilotAssignment,
    book: PilotBook,
    p: float,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Received pilot signals, one length-tau row per AP.

    z_l = sqrt(p) * sum_i h_{l,i} phi_{t_i} + noise, noise CN(0, sigma2 I).
    """
    phi_per_ue = book.phi[assignment.t]  # (K, tau)
    Z = np.sqrt(p) * H @ phi_per_ue
    if sigma2 > 0:
        Z = Z + np.sqrt(sigma2) * crandn(rng, Z.shape)
    return Z


def mmse_estimate(
    Z: np.ndarray,
    H: np.ndarray,
    lsf: LargeScaleFading,
    assignment: PilotAssignment,
    book: PilotBook,
    p: float,
    sigma2: float,
) -> ChannelRealization:
    """MMSE channel estimate and its error statistics from received pilots.

    hhat_{l,k} = sqrt(p tau) beta_{l,k} / (sigma2 + p tau sum_{i in S} beta_{l,i})
                 * phi_{t_k}^H z_l / sqrt(tau),
    where S is UE k's pilot cohort. alpha is the estimate variance,
    C = beta - alpha the error variance, and D_l = sum_k C_{l,k}.
    """
    beta = lsf.beta
    tau = book.tau
    t = assignment.t

    # sum of beta over each pilot cohort, broadcast back per UE
    pilot_sums = np.stack(
        [beta[:, c].sum(axis=1) if len(c) else np.zeros(beta.shape[0]) for c in assignment.cohorts],
        axis=1,
    )  # (L, tau)
    cohort_sum = pilot_sums[:, t]  # (L, K)

    denom = sigma2 + p * tau * cohort_sum
    coef = np.sqrt(p * tau) * beta / denom
    proj = Z @ book.phi.conj().T / np.sqrt(tau)  # (L, tau), column j = phi_j^H z_l / sqrt(tau)
    Hhat = coef * proj[:, t]

    alpha = p * tau * beta**2 / denom
    C = beta - alpha
    D = C.sum(axis=1)
    return ChannelRealization(H=H, Hhat=Hhat, alpha=alpha, C=C, D=D)


def received_data(H: np.ndarray, x: np.ndarray, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Uplink data observation y = H x + n with n CN(0, sigma2 I).

    Data is always generated with the channel passed in; the estimate-plus-
    effective-noise decomposition used by the detectors is a receiver-side
    model, not a generation rule.
    """
    y = H @ x
    if sigma2 > 0:
        y = y + np.sqrt(sigma2) * crandn(rng, y.shape)
    return y
