"""Network drops: AP/UE placement, pathloss, and correlated shadow fading.

A drop is a static snapshot of the network geometry together with the
large-scale fading matrix beta (L x K, linear scale) that every other
module consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np
import yaml

# Urban-microcell pathloss -30.5 - 36.7*log10(d / 1 m), shadow fading
# N(0, 4^2) dB with UE-side spatial correlation 4^2 * 2^(-delta / 9 m).
PATHLOSS_INTERCEPT_DB = -30.5
PATHLOSS_SLOPE_DB = 36.7
SHADOW_STD_DB = 4.0
SHADOW_DECORR_M = 9.0
MIN_DISTANCE_M = 1.0  # reference-distance clamp; the dB model diverges at d -> 0
COV_JITTER = 1e-9


@dataclass(frozen=True)
class SystemConfig:
    """Static system constants shared by all modules."""

    L: int = 100             # access points (single antenna each)
    K: int = 60              # user terminals
    tau: int = 30            # number of orthogonal pilots
    tau_c: int = 200         # coherence block length (channel uses)
    p: float = 10 ** 2.5     # uplink transmit power (linear)
    sigma2: float = 1.0      # noise power (linear)
    M: int = 4               # QAM order
    eta: float = 0.7         # damping weight of the iterative detector
    T_max: int = 10          # max detector iterations
    eps_conv: float = 1e-4   # detector convergence threshold
    area_side: float = 1000.0  # side of the square deployment area (m)
    seed: int = 0

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if self.K < 1:
            raise ValueError(f"K must be >= 1, got {self.K}")
        if not 1 <= self.tau <= self.tau_c:
            raise ValueError(f"need 1 <= tau <= tau_c, got tau={self.tau}, tau_c={self.tau_c}")
        m = self.M
        while m > 1 and m % 4 == 0:
            m //= 4
        if m != 1 or self.M < 4:
            raise ValueError(f"M must be a power of 4 (square QAM), got {self.M}")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if self.T_max < 1:
            raise ValueError(f"T_max must be >= 1, got {self.T_max}")
        if self.eps_conv <= 0:
            raise ValueError(f"eps_conv must be > 0, got {self.eps_conv}")
        if self.p <= 0:
            raise ValueError(f"p must be > 0, got {self.p}")
        if self.sigma2 <= 0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
        if self.area_side <= 0:
            raise ValueError(f"area_side must be > 0, got {self.area_side}")

    @property
    def bits_per_symbol(self) -> int:
        return int(round(np.log2(self.M)))


@dataclass(frozen=True)
class Geometry:
    """AP and UE coordinates in meters, within [0, area_side]^2."""

    ap_positions: np.ndarray  # (L, 2)
    ue_positions: np.ndarray  # (K, 2)

    def __post_init__(self):
        for name in ("ap_positions", "ue_positions"):
            pos = getattr(self, name)
            if pos.ndim != 2 or pos.shape[1] != 2:
                raise ValueError(f"{name} must have shape (n, 2), got {pos.shape}")


@dataclass(frozen=True)
class LargeScaleFading:
    """Linear large-scale coefficients and the dB shadow realizations behind them."""

    beta: np.ndarray       # (L, K), strictly positive, linear scale
    shadow_db: np.ndarray  # (L, K), shadow-fading term in dB

    def __post_init__(self):
        if self.beta.shape != self.shadow_db.shape:
            raise ValueError("beta and shadow_db must have matching shapes")
        if np.any(self.beta < 0):
            # the sampler always produces strictly positive gains; zero is
            # tolerated so degenerate-scale overrides can be constructed
            raise ValueError("beta must be nonnegative")


def load_config(path) -> SystemConfig:
    """Read a SystemConfig from a flat key-value YAML file.

    Keys must match SystemConfig field names; unknown keys are rejected.
    """
    with open(path) as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a flat key-value mapping")
    known = {f.name for f in fields(SystemConfig)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    return SystemConfig(**raw)


def place_entities(config: SystemConfig, rng: np.random.Generator) -> Geometry:
    """Drop L APs and K UEs i.i.d. uniformly over the square area."""
    ap = rng.uniform(0.0, config.area_side, size=(config.L, 2))
    ue = rng.uniform(0.0, config.area_side, size=(config.K, 2))
    return Geometry(ap_positions=ap, ue_positions=ue)


def pathloss_db(d):
    """Distance-dependent pathloss in dB (shadowing not included).

    Accepts a scalar or array of distances in meters; all entries must be > 0.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("pathloss_db requires d > 0 (co-located nodes must be clamped first)")
    return PATHLOSS_INTERCEPT_DB - PATHLOSS_SLOPE_DB * np.log10(d)


def shadowing_covariance(ue_positions: np.ndarray, std_db: float = SHADOW_STD_DB) -> np.ndarray:
    """K x K covariance (dB^2) of the shadowing seen from one AP.

    Entry (k, i) is std_db^2 * 2^(-delta_{k,i} / 9 m) with delta the UE-UE
    distance, so the diagonal is std_db^2. No jitter is added here; callers
    that factorize it are responsible for that.
    """
    diff = ue_positions[:, None, :] - ue_positions[None, :, :]
    delta = np.sqrt(np.sum(diff**2, axis=-1))
    return std_db**2 * np.exp2(-delta / SHADOW_DECORR_M)


def sample_large_scale(
    geometry: Geometry,
    config: SystemConfig,
    rng: np.random.Generator,
    shadow_std_db: float = SHADOW_STD_DB,
) -> LargeScaleFading:
    """Draw shadow fading and assemble the linear beta matrix.

    For each AP the K-vector of shadowing terms is a real zero-mean Gaussian
    with the covariance from shadowing_covariance; rows are independent
    across APs. AP-UE distances are clamped below at 1 m.
    """
    diff = geometry.ap_positions[:, None, :] - geometry.ue_positions[None, :, :]
    d = np.sqrt(np.sum(diff**2, axis=-1))
    d = np.maximum(d, MIN_DISTANCE_M)
    pl = pathloss_db(d)

    L, K = d.shape
    if shadow_std_db == 0.0:
        shadow = np.zeros((L, K))
    else:
        cov = shadowing_covariance(geometry.ue_positions, shadow_std_db)
        cov = cov + COV_JITTER * np.eye(K)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("shadowing covariance is not positive definite after jitter") from exc
        shadow = rng.standard_normal((L, K)) @ chol.T

    beta = 10.0 ** ((pl + shadow) / 10.0)
    return LargeScaleFading(beta=beta, shadow_db=shadow)


def unit_median_ue_power(lsf: LargeScaleFading) -> LargeScaleFading:
    """Rescale beta so the median UE's total gain summed over all APs is 1.

    With noise power 1 the transmit power then equals the median UE's
    aggregate received SNR, which is how the sweep harness interprets its
    SNR axis. The median is used because per-link means are dominated by
    the rare near-colocated AP-UE pairs and would make the operating point
    swing by >10 dB between drops.
    """
    return replace(lsf, beta=lsf.beta / np.median(lsf.beta.sum(axis=0)))
