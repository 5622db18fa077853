"""Uplink symbol detectors operating on (y, Hhat, D, sigma2).

All detectors treat the received vector as y = Hhat x + w, where w lumps
thermal noise with the channel-estimation error: w ~ CN(0, diag(D) + sigma2 I).
D is the length-L diagonal of the aggregate estimation-error covariance, so
pilot contamination enters every filter through it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .modem import Constellation, demodulate_hard, posterior_moments

LAMBDA_MIN = 5e-7  # site precisions at or below this keep their previous value
V_MIN = 1e-8       # floor applied to variances before any division
ML_SEARCH_LIMIT = 2**20

SYMBOL_ENERGY = 1.0  # constellations are unit-energy; filters assume E_x = 1


class DetectorFailure(RuntimeError):
    """Raised when a detector's state becomes non-finite; callers must count it."""


@dataclass(frozen=True)
class DetectionResult:
    """Output of one detector run on one coherence block.

    combining (K x L, soft = combining @ y) is set by the linear detectors so
    post-detection SINR can be evaluated downstream; interference is a K x K
    boolean mask of which UEs still interfere with each UE at the moment it
    was detected (successive cancellation only).
    """

    soft: np.ndarray                      # (K,) complex estimates
    hard: np.ndarray                      # (K,) constellation points
    hard_bits: np.ndarray                 # (K * log2 M,) uint8
    iterations: int = 1
    converged: bool = True                 # False only when an iterative run hit T_max
    v_obs_final: np.ndarray | None = None  # (K,) extrinsic variances (iterative detector)
    combining: np.ndarray | None = None
    interference: np.ndarray | None = None


@dataclass
class EpState:
    """Iterated quantities of the expectation-propagation detector."""

    lam: np.ndarray         # (K,) site precisions, > 0
    gamma: np.ndarray       # (K,) complex site means scaled by precision
    sigma_diag: np.ndarray  # (K,) posterior-belief variances
    mu: np.ndarray          # (K,) complex posterior-belief means
    x_obs: np.ndarray       # (K,) complex extrinsic means
    v_obs: np.ndarray       # (K,) extrinsic variances, > 0
    x_hat: np.ndarray       # (K,) complex discrete-posterior means
    v_post: np.ndarray      # (K,) discrete-posterior variances, >= 0
    iteration: int = 0


@dataclass(frozen=True)
class EpCache:
    """Per-trial constants of the iterative detector.

    Only the site parameters change across iterations, so the whitened Gram
    matrix and matched-filter output are computed once.
    """

    gram: np.ndarray  # Hhat^H R^-1 Hhat, R = diag(D) + sigma2 I
    hy: np.ndarray    # Hhat^H R^-1 y


def _flatten_bits(bits: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(bits).reshape(-1)


def make_ep_cache(y: np.ndarray, Hhat: np.ndarray, D: np.ndarray, sigma2: float) -> EpCache:
    r_inv = 1.0 / (np.asarray(D, dtype=float) + sigma2)
    Hw = Hhat.conj().T * r_inv  # (K, L) = Hhat^H R^-1
    return EpCache(gram=Hw @ Hhat, hy=Hw @ y)


def initial_ep_state(K: int) -> EpState:
    """Unit-precision, zero-mean sites; everything else filled on iteration 1."""
    cz = np.zeros(K, dtype=complex)
    return EpState(
        lam=np.ones(K),
        gamma=cz.copy(),
        sigma_diag=np.ones(K),
        mu=cz.copy(),
        x_obs=cz.copy(),
        v_obs=np.ones(K),
        x_hat=cz.copy(),
        v_post=np.ones(K),
        iteration=0,
    )


def ep_observation_step(state: EpState, cache: EpCache) -> EpState:
    """Gaussian posterior belief and its extrinsic part.

    Sigma = (gram + diag(lam))^-1, mu = Sigma (hy + gamma); the extrinsic
    pair divides out the site: v_obs = Sigma_kk / (1 - Sigma_kk lam_k),
    x_obs = v_obs (mu_k / Sigma_kk - gamma_k). Non-positive or non-finite
    v_obs entries are clamped to V_MIN.
    """
    if np.any(state.lam <= 0):
        raise ValueError("site precisions must be positive")
    A = cache.gram.copy()
    A[np.diag_indices_from(A)] += state.lam
    Sigma = np.linalg.inv(A)
    sigma_diag = Sigma.diagonal().real.copy()
    mu = Sigma @ (cache.hy + state.gamma)

    v_obs = sigma_diag / (1.0 - sigma_diag * state.lam)
    bad = ~np.isfinite(v_obs) | (v_obs <= 0)
    if bad.any():
        v_obs = np.where(bad, V_MIN, v_obs)
    x_obs = v_obs * (mu / sigma_diag - state.gamma)
    return replace(
        state,
        sigma_diag=sigma_diag,
        mu=mu,
        v_obs=v_obs,
        x_obs=x_obs,
        iteration=state.iteration + 1,
    )


def ep_estimation_step(state: EpState, c: Constellation, eta: float) -> EpState:
    """Moment matching against the discrete prior, with damped site updates.

    Candidate sites lam' = 1/V - 1/v_obs, gamma' = x_hat/V - x_obs/v_obs are
    smoothed as (1 - eta) * candidate + eta * previous; components whose
    damped precision falls at or below LAMBDA_MIN keep their previous
    (lam, gamma) pair so the site stays a proper Gaussian.
    """
    pm = posterior_moments(state.x_obs, state.v_obs, c)
    x_hat = pm.mean
    v_post = pm.variance
    V = np.maximum(v_post, V_MIN)

    lam_cand = 1.0 / V - 1.0 / state.v_obs
    gamma_cand = x_hat / V - state.x_obs / state.v_obs
    lam_new = (1.0 - eta) * lam_cand + eta * state.lam
    gamma_new = (1.0 - eta) * gamma_cand + eta * state.gamma

    keep = lam_new <= LAMBDA_MIN
    if keep.any():
        lam_new = np.where(keep, state.lam, lam_new)
        gamma_new = np.where(keep, state.gamma, gamma_new)
    return replace(state, x_hat=x_hat, v_post=v_post, lam=lam_new, gamma=gamma_new)


def detect_ep(
    y: np.ndarray,
    Hhat: np.ndarray,
    D: np.ndarray,
    sigma2: float,
    c: Constellation,
    eta: float = 0.7,
    T_max: int = 10,
    eps_conv: float = 1e-4,
) -> DetectionResult:
    """Expectation-propagation detection with damped site updates.

    Alternates the observation and estimation steps from unit sites and
    terminates once the moment-matched mean stops moving between iterations,
    ||x_hat(t) - x_hat(t-1)|| <= eps_conv, or at T_max. The fixed-point test
    is used rather than the within-iteration gap ||mu - x_hat|| because
    pilot-sharing UEs can be left permanently ambiguous (their site updates
    are rejected by the positivity clamp), which keeps the within-iteration
    gap bounded away from zero even after the iteration has stabilized.
    """
    K = Hhat.shape[1]
    cache = make_ep_cache(y, Hhat, D, sigma2)
    state = initial_ep_state(K)
    x_hat_prev = None
    converged = False
    for _ in range(T_max):
        state = ep_observation_step(state, cache)
        state = ep_estimation_step(state, c, eta)
        if not (np.all(np.isfinite(state.x_hat)) and np.all(np.isfinite(state.lam))):
            raise DetectorFailure(f"non-finite state at iteration {state.iteration}")
        if x_hat_prev is not None and np.linalg.norm(state.x_hat - x_hat_prev) <= eps_conv:
            converged = True
            break
        x_hat_prev = state.x_hat
    hard, bits = demodulate_hard(state.x_hat, c)
    return DetectionResult(
        soft=state.x_hat,
        hard=hard,
        hard_bits=_flatten_bits(bits),
        iterations=state.iteration,
        converged=converged,
        v_obs_final=state.v_obs,
    )


def detect_mrc(y: np.ndarray, Hhat: np.ndarray, c: Constellation) -> DetectionResult:
    """Conjugate combining with per-UE normalization.

    soft_k = hhat_k^H y / ||hhat_k||^2; the normalization keeps the output on
    the constellation scale so it can be sliced directly. An all-zero
    estimate column yields soft_k = 0 (erasure).
    """
    norms = np.sum(np.abs(Hhat) ** 2, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    W = Hhat.conj().T / safe[:, None]
    W[norms == 0] = 0.0
    soft = W @ y
    hard, bits = demodulate_hard(soft, c)
    return DetectionResult(soft=soft, hard=hard, hard_bits=_flatten_bits(bits), combining=W)


def detect_mmse(
    y: np.ndarray, Hhat: np.ndarray, D: np.ndarray, sigma2: float, c: Constellation
) -> DetectionResult:
    """Regularized linear MMSE with the estimation error in the noise model.

    soft = (Hhat^H R^-1 Hhat + I/E_x)^-1 Hhat^H R^-1 y, R = diag(D) + sigma2 I.
    """
    r_inv = 1.0 / (np.asarray(D, dtype=float) + sigma2)
    Hw = Hhat.conj().T * r_inv
    G = Hw @ Hhat
    G[np.diag_indices_from(G)] += 1.0 / SYMBOL_ENERGY
    W = np.linalg.solve(G, Hw)
    soft = W @ y
    hard, bits = demodulate_hard(soft, c)
    return DetectionResult(soft=soft, hard=hard, hard_bits=_flatten_bits(bits), combining=W)


def detect_mmse_sic(
    y: np.ndarray, Hhat: np.ndarray, D: np.ndarray, sigma2: float, c: Constellation
) -> DetectionResult:
    """MMSE detection with successive interference cancellation.

    Each stage applies the MMSE filter of the remaining columns to the
    residual, detects the UE with the highest post-filter SINR (smallest
    error-covariance diagonal), slices it, and subtracts its contribution.
    The per-stage filters are obtained by rank-1 downdates of the full
    inverse (Schur complement), which equals recomputing the filter on the
    reduced system.
    """
    K = Hhat.shape[1]
    r_inv = 1.0 / (np.asarray(D, dtype=float) + sigma2)
    residual = y.astype(complex).copy()

    Hw = Hhat.conj().T * r_inv  # (K, L)
    G = Hw @ Hhat
    G[np.diag_indices_from(G)] += 1.0 / SYMBOL_ENERGY
    Sigma = np.linalg.inv(G)   # error covariance of the full MMSE stage
    B = Sigma @ Hw             # current combining rows for all remaining UEs

    soft = np.zeros(K, dtype=complex)
    hard = np.zeros(K, dtype=complex)
    bits = np.zeros((K, c.bits_per_symbol), dtype=np.uint8)
    W_full = np.zeros((K, Hhat.shape[0]), dtype=complex)
    position = np.zeros(K, dtype=np.int64)
    active = np.ones(K, dtype=bool)

    sigma_diag = Sigma.diagonal().real.copy()
    for stage in range(K):
        k = int(np.argmin(np.where(active, sigma_diag, np.inf)))  # max post-filter SINR
        soft[k] = B[k] @ residual
        hard[k], bits[k] = demodulate_hard(soft[k], c)
        W_full[k] = B[k]
        position[k] = stage
        active[k] = False

        residual -= Hhat[:, k] * hard[k]
        if stage < K - 1:
            col = Sigma[:, k].copy()
            pivot = col[k]
            Sigma -= np.outer(col / pivot, col.conj())
            B -= np.outer(col / pivot, B[k])
            sigma_diag = Sigma.diagonal().real.copy()

    interference = position[None, :] >= position[:, None]
    np.fill_diagonal(interference, False)
    return DetectionResult(
        soft=soft,
        hard=hard,
        hard_bits=_flatten_bits(bits),
        combining=W_full,
        interference=interference,
    )


def _index_grid(M: int, K: int) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(M)] * K), indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, K)


def detect_ml(
    y: np.ndarray, Hhat: np.ndarray, D: np.ndarray, sigma2: float, c: Constellation
) -> DetectionResult:
    """Exhaustive maximum-likelihood search under the whitened metric.

    Minimizes (y - Hhat x)^H R^-1 (y - Hhat x) over all M^K symbol vectors;
    intended as a small-system oracle and guarded accordingly.
    """
    K = Hhat.shape[1]
    if c.order**K > ML_SEARCH_LIMIT:
        raise ValueError(f"ML search space {c.order}^{K} exceeds limit {ML_SEARCH_LIMIT}")
    r_inv = 1.0 / (np.asarray(D, dtype=float) + sigma2)
    grid = _index_grid(c.order, K)
    X = c.points[grid]  # (M^K, K)
    E = y[:, None] - Hhat @ X.T  # (L, M^K)
    metric = np.sum(np.abs(E) ** 2 * r_inv[:, None], axis=0)
    best = int(np.argmin(metric))
    hard = X[best]
    bits = c.bit_labels[grid[best]]
    return DetectionResult(soft=hard.copy(), hard=hard, hard_bits=_flatten_bits(bits))
