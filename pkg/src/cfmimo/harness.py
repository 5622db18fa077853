"""Monte Carlo campaign driver: pilot-ratio/SNR sweeps, aggregation, CSV and plots.

All detectors in a trial see the same channel, estimate, and noise
realization, so per-cell comparisons are paired. Per-trial RNG streams are
derived from (seed, drop index, trial index), which makes every numeric
output independent of the worker count.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .channel import (
    assign_pilots,
    dft_pilot_book,
    mmse_estimate,
    received_data,
    sample_channel,
    transmit_pilots,
)
from .detectors import (
    SYMBOL_ENERGY,
    DetectorFailure,
    detect_ep,
    detect_ml,
    detect_mmse,
    detect_mmse_sic,
    detect_mrc,
)
from .metrics import TrialMetrics, ber, se, sinr_ep, sinr_linear
from .modem import build_constellation, modulate
from .scenario import SystemConfig, place_entities, sample_large_scale, unit_median_ue_power

CSV_HEADER = "detector,ratio,snr_db,ber,ber_ci95,sum_se,avg_iter,trials,elapsed_s"
DETECTOR_NAMES = ("mrc", "mmse", "sic", "ep", "ml")
DETECTOR_LABELS = {"mrc": "MRC", "mmse": "MMSE", "sic": "MMSE-SIC", "ep": "EP", "ml": "ML"}
ML_SEARCH_LIMIT = 2**20
_TRIAL_BLOCK = 200  # trials per worker task; fixed so chunking never depends on workers


@dataclass(frozen=True)
class SweepSpec:
    """Full description of one sweep campaign."""

    config: SystemConfig
    ratios: tuple = (0.5,)
    snrs_db: tuple = (25.0,)
    detectors: tuple = ("mrc", "mmse", "sic", "ep")
    trials: int = 200
    drops: int = 50
    resample_drop_per_trial: bool = False
    pilot_mode: str = "balanced"
    output_path: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.drops < 1:
            raise ValueError("drops must be >= 1")
        if not self.detectors:
            raise ValueError("detector set must be non-empty")
        unknown = set(self.detectors) - set(DETECTOR_NAMES)
        if unknown:
            raise ValueError(f"unknown detectors {sorted(unknown)}; choose from {DETECTOR_NAMES}")
        for r in self.ratios:
            tau = self.tau_for(r)
            if not 1 <= tau <= self.config.K:
                raise ValueError(f"ratio {r} maps to invalid pilot count {tau}")
        if "ml" in self.detectors and self.config.M ** self.config.K > ML_SEARCH_LIMIT:
            raise ValueError(
                f"ml detector enabled but M^K = {self.config.M}^{self.config.K} exceeds the search limit"
            )
        if self.pilot_mode not in ("iid", "balanced"):
            raise ValueError(f"unknown pilot mode {self.pilot_mode!r}")

    def tau_for(self, ratio: float) -> int:
        return int(min(max(round(ratio * self.config.K), 1), self.config.K))


@dataclass(frozen=True)
class SweepRow:
    """One (detector, ratio, snr) cell of aggregated results."""

    detector: str
    ratio: float
    snr_db: float
    ber: float
    ber_ci95: float
    sum_se: float
    avg_iter: float
    trials: int
    elapsed_s: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple
    failures: dict  # detector -> aborted-trial count over the whole sweep


@lru_cache(maxsize=None)
def _pilot_book(tau: int):
    return dft_pilot_book(tau)


def _run_mrc(y, Hhat, D, config, c):
    return detect_mrc(y, Hhat, c)


def _run_mmse(y, Hhat, D, config, c):
    return detect_mmse(y, Hhat, D, config.sigma2, c)


def _run_sic(y, Hhat, D, config, c):
    return detect_mmse_sic(y, Hhat, D, config.sigma2, c)


def _run_ep(y, Hhat, D, config, c):
    return detect_ep(y, Hhat, D, config.sigma2, c, config.eta, config.T_max, config.eps_conv)


def _run_ml(y, Hhat, D, config, c):
    return detect_ml(y, Hhat, D, config.sigma2, c)


_DETECTOR_FUNCS = {
    "mrc": _run_mrc,
    "mmse": _run_mmse,
    "sic": _run_sic,
    "ep": _run_ep,
    "ml": _run_ml,
}


def run_trial(lsf, config: SystemConfig, detectors, rng, pilot_mode: str = "balanced"):
    """Simulate one coherence block and run every enabled detector on it.

    RNG consumption order (fixed for reproducibility): pilot assignment,
    channel, pilot noise, data bits, data noise. Data symbols carry the same
    transmit power as the pilots; sqrt(p) is folded into the effective
    channel handed to the detectors so symbols stay unit-energy.

    Returns {detector: TrialMetrics | None}, None marking an aborted trial.
    """
    c = build_constellation(config.M)
    book = _pilot_book(config.tau)
    assignment = assign_pilots(config.K, config.tau, rng, mode=pilot_mode)
    H = sample_channel(lsf, rng)
    Z = transmit_pilots(H, assignment, book, config.p, config.sigma2, rng)
    realization = mmse_estimate(Z, H, lsf, assignment, book, config.p, config.sigma2)

    bits = rng.integers(0, 2, size=config.K * c.bits_per_symbol).astype(np.uint8)
    x = modulate(bits, c)
    root_p = np.sqrt(config.p)
    y = received_data(root_p * H, x, config.sigma2, rng)
    Hhat_eff = root_p * realization.Hhat
    D_eff = config.p * realization.D

    out = {}
    for name in detectors:
        t0 = time.perf_counter()
        try:
            res = _DETECTOR_FUNCS[name](y, Hhat_eff, D_eff, config, c)
        except DetectorFailure:
            out[name] = None
            continue
        elapsed = time.perf_counter() - t0

        errors, total = ber(res.hard_bits, bits)
        if name == "ep":
            s_shared = sinr_ep(res.v_obs_final)
            sinr = np.full(config.K, s_shared)
            sum_se = config.K * se(s_shared, config.tau, config.tau_c)
        elif res.combining is not None:
            # Every detector is scored by the same aggregate functional as
            # the iterative detector: per-UE residual variances 1/sinr_k feed
            # SINR = K / sum_k v_k, so the comparison is like-for-like.
            sinr = sinr_linear(
                res.combining, Hhat_eff, D_eff, config.sigma2,
                p=SYMBOL_ENERGY, interference=res.interference,
            )
            v_res = 1.0 / np.maximum(sinr, 1e-300)
            s_shared = sinr_ep(v_res)
            sum_se = config.K * se(s_shared, config.tau, config.tau_c)
        else:
            sinr = None
            sum_se = float("nan")
        out[name] = TrialMetrics(
            bit_errors=errors,
            bits_total=total,
            sinr=sinr,
            sum_se=sum_se,
            iterations=res.iterations,
            converged=res.converged,
            elapsed_s=elapsed,
        )
    return out


def _drop_lsf(config: SystemConfig, drop: int):
    rng = np.random.default_rng([config.seed, drop])
    geometry = place_entities(config, rng)
    return unit_median_ue_power(sample_large_scale(geometry, config, rng))


def _trial_block(args):
    config, lsf, detectors, pilot_mode, seed, drop, trial_indices, resample = args
    packed = []
    for ti in trial_indices:
        rng = np.random.default_rng([seed, drop, ti])
        if resample:
            geometry = place_entities(config, rng)
            lsf_t = unit_median_ue_power(sample_large_scale(geometry, config, rng))
        else:
            lsf_t = lsf
        metrics = run_trial(lsf_t, config, detectors, rng, pilot_mode)
        packed.append(
            {
                name: None
                if m is None
                else (m.bit_errors, m.bits_total, m.sum_se, m.iterations, m.elapsed_s)
                for name, m in metrics.items()
            }
        )
    return packed


class _Accumulator:
    __slots__ = ("errors", "bits", "se_sum", "iter_sum", "elapsed", "n_ok", "failures")

    def __init__(self):
        self.errors = 0
        self.bits = 0
        self.se_sum = 0.0
        self.iter_sum = 0
        self.elapsed = 0.0
        self.n_ok = 0
        self.failures = 0

    def add(self, packed):
        if packed is None:
            self.failures += 1
            return
        errors, bits, sum_se, iterations, elapsed = packed
        self.errors += errors
        self.bits += bits
        self.se_sum += sum_se
        self.iter_sum += iterations
        self.elapsed += elapsed
        self.n_ok += 1

    def row(self, detector, ratio, snr_db) -> SweepRow:
        if self.n_ok == 0 or self.bits == 0:
            ber_hat = ci = sum_se = avg_iter = float("nan")
        else:
            ber_hat = self.errors / self.bits
            ci = 1.96 * np.sqrt(ber_hat * (1.0 - ber_hat) / self.bits)
            sum_se = self.se_sum / self.n_ok
            avg_iter = self.iter_sum / self.n_ok
        return SweepRow(
            detector=detector,
            ratio=ratio,
            snr_db=snr_db,
            ber=float(ber_hat),
            ber_ci95=float(ci),
            sum_se=float(sum_se),
            avg_iter=float(avg_iter),
            trials=self.n_ok,
            elapsed_s=self.elapsed,
        )


def _check_writable(path):
    parent = Path(path).resolve().parent
    if not parent.is_dir() or not os.access(parent, os.W_OK):
        raise OSError(f"output path {path} is not writable")


def run_sweep(spec: SweepSpec, workers: int = 1) -> SweepResult:
    """Run the full (ratio, snr) grid and aggregate per-detector metrics.

    Trials are split evenly over `drops` scenario redraws (the same drops are
    reused for every grid cell). Results are reduced in task order, so the
    output is bit-identical for any worker count.
    """
    if spec.output_path is not None:
        _check_writable(spec.output_path)

    config = spec.config
    per_drop = [spec.trials // spec.drops] * spec.drops
    for i in range(spec.trials % spec.drops):
        per_drop[i] += 1
    drop_lsfs = [None] * spec.drops
    if not spec.resample_drop_per_trial:
        drop_lsfs = [
            _drop_lsf(config, d) if per_drop[d] > 0 else None for d in range(spec.drops)
        ]

    cells = []
    tasks = []
    task_cell = []
    for ratio in spec.ratios:
        for snr_db in spec.snrs_db:
            tau = spec.tau_for(ratio)
            p = config.sigma2 * 10.0 ** (snr_db / 10.0)
            cell_cfg = replace(config, tau=tau, p=p)
            cell_idx = len(cells)
            cells.append((ratio, snr_db))
            for d in range(spec.drops):
                if per_drop[d] == 0:
                    continue
                lsf = None if spec.resample_drop_per_trial else drop_lsfs[d]
                for start in range(0, per_drop[d], _TRIAL_BLOCK):
                    block = tuple(range(start, min(start + _TRIAL_BLOCK, per_drop[d])))
                    tasks.append(
                        (cell_cfg, lsf, spec.detectors, spec.pilot_mode,
                         config.seed, d, block, spec.resample_drop_per_trial)
                    )
                    task_cell.append(cell_idx)

    accs = [{name: _Accumulator() for name in spec.detectors} for _ in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_trial_block, tasks)
            for cell_idx, block_result in zip(task_cell, results):
                for trial in block_result:
                    for name, packed in trial.items():
                        accs[cell_idx][name].add(packed)
    else:
        for cell_idx, task in zip(task_cell, tasks):
            for trial in _trial_block(task):
                for name, packed in trial.items():
                    accs[cell_idx][name].add(packed)

    rows = []
    failures = {name: 0 for name in spec.detectors}
    for (ratio, snr_db), cell_accs in zip(cells, accs):
        for name in spec.detectors:
            acc = cell_accs[name]
            rows.append(acc.row(name, ratio, snr_db))
            failures[name] += acc.failures
    return SweepResult(rows=tuple(rows), failures=failures)


def emit_csv(result: SweepResult, path) -> None:
    """Write the sweep grid as CSV with a fixed header and a failure footer.

    Floats are written with shortest round-trip repr (no locale formatting).
    """
    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(
            f"{r.detector},{r.ratio},{r.snr_db},{r.ber},{r.ber_ci95},"
            f"{r.sum_se},{r.avg_iter},{r.trials},{r.elapsed_s}"
        )
    failure_txt = ",".join(f"{name}={count}" for name, count in result.failures.items())
    lines.append(f"# failures: {failure_txt}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path) -> SweepResult:
    """Parse a CSV produced by emit_csv back into a SweepResult."""
    rows = []
    failures = {}
    with open(path) as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected CSV header in {path}: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "failures:" in line:
                    body = line.split("failures:", 1)[1].strip()
                    if body:
                        for item in body.split(","):
                            name, count = item.split("=")
                            failures[name.strip()] = int(count)
                continue
            parts = line.split(",")
            rows.append(
                SweepRow(
                    detector=parts[0],
                    ratio=float(parts[1]),
                    snr_db=float(parts[2]),
                    ber=float(parts[3]),
                    ber_ci95=float(parts[4]),
                    sum_se=float(parts[5]),
                    avg_iter=float(parts[6]),
                    trials=int(parts[7]),
                    elapsed_s=float(parts[8]),
                )
            )
    return SweepResult(rows=tuple(rows), failures=failures)


def emit_plot(result: SweepResult, out_dir) -> list:
    """Render BER (log-y) and sum-SE line plots vs pilot-to-user ratio as SVG."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    snrs = sorted({r.snr_db for r in result.rows})
    detectors = []
    for r in result.rows:
        if r.detector not in detectors:
            detectors.append(r.detector)

    def series(detector, snr, field):
        pts = sorted(
            (r.ratio, getattr(r, field))
            for r in result.rows
            if r.detector == detector and r.snr_db == snr
        )
        return [p[0] for p in pts], [p[1] for p in pts]

    paths = []
    for field, fname, ylabel, logy in (
        ("ber", "ber_vs_ratio.svg", "uncoded BER", True),
        ("sum_se", "sum_se_vs_ratio.svg", "sum SE (bits/s/Hz)", False),
    ):
        fig, ax = plt.subplots(figsize=(6.0, 4.2))
        for det in detectors:
            for snr in snrs:
                x, ys = series(det, snr, field)
                if not x:
                    continue
                y = [v if (np.isfinite(v) and (not logy or v > 0)) else np.nan for v in ys]
                label = DETECTOR_LABELS.get(det, det)
                if len(snrs) > 1:
                    label += f", {snr:g} dB"
                ax.plot(x, y, marker="o", label=label)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("pilot-to-user ratio")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.4)
        ax.legend()
        fig.tight_layout()
        path = out_dir / fname
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def dump_scenario(config: SystemConfig, out_dir) -> list:
    """Write drop 0's geometry and beta matrix as CSV files for inspection."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([config.seed, 0])
    geometry = place_entities(config, rng)
    lsf = sample_large_scale(geometry, config, rng)

    paths = []
    for name, array, header in (
        ("scenario_aps.csv", geometry.ap_positions, "x_m,y_m"),
        ("scenario_ues.csv", geometry.ue_positions, "x_m,y_m"),
        ("scenario_beta.csv", lsf.beta, ",".join(f"ue{k}" for k in range(config.K))),
    ):
        path = out_dir / name
        np.savetxt(path, array, delimiter=",", header=header, comments="")
        paths.append(path)
    return paths
