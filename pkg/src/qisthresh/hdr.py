"""Multi-exposure HDR: duty-cycle stacks, inverse-variance fusion, dynamic-range curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adaptation import adapt_and_reconstruct
from .analytics import LN10, log_information_theta, oracle_threshold
from .forward import Kernel, SensorConfig, ThresholdMap, expose, sample_bits
from .reconstruction import ReconstructionResult, mle_reconstruct, psnr

DEFAULT_TAUS = (1.0, 0.2, 0.04, 0.008)
_SEED_STRIDE = 0x9E3779B97F4A7C15


def exposure_seed(seed: int, index: int) -> int:
    """Seed of exposure ``index``; depends on the position in the stack, not on tau."""
    return (int(seed) + index * _SEED_STRIDE) & 0xFFFFFFFFFFFFFFFF


def ev_ladder(tau0: float, evs) -> list[float]:
    """Duty cycles ``tau0 * 2**ev``, sorted decreasing."""
    taus = sorted((tau0 * 2.0**ev for ev in evs), reverse=True)
    if taus[0] > 1.0:
        raise ValueError("ladder exceeds tau = 1; lower tau0")
    return taus


# ---------------------------------------------------------------------------
# Exposure stacks
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Exposure:
    tau: float
    config: SensorConfig
    qmap: ThresholdMap
    result: ReconstructionResult
    frames: int


@dataclass(frozen=True)
class ExposureStack:
    radiance: np.ndarray
    exposures: tuple

    @property
    def taus(self) -> list[float]:
        return [e.tau for e in self.exposures]


def _check_taus(taus) -> list[float]:
    taus = [float(t) for t in taus]
    if not taus:
        raise ValueError("need at least one duty cycle")
    if any(not 0.0 < t <= 1.0 for t in taus):
        raise ValueError("duty cycles must lie in (0, 1]")
    if any(b >= a for a, b in zip(taus, taus[1:])):
        raise ValueError("duty cycles must be strictly decreasing")
    return taus


def simulate_stack(
    radiance,
    config: SensorConfig,
    taus=DEFAULT_TAUS,
    policy="adapted",
    granularity: int = 1,
    adapt_frames: int | None = None,
    kernel=Kernel.BOXCAR,
) -> ExposureStack:
    """Simulate and reconstruct one exposure per duty cycle.

    ``policy`` is ``"adapted"`` (bisection, remaining frames reconstructed),
    ``"oracle"`` (per-pixel oracle thresholds from the true radiance) or an
    integer uniform threshold.  Estimates are left unclipped and are
    radiance-referred, since the reconstruction divides by alpha * tau.
    """
    radiance = np.asarray(radiance, dtype=float)
    if radiance.ndim != 2 or np.any(~np.isfinite(radiance)) or np.any(radiance < 0):
        raise ValueError("radiance must be a finite, nonnegative 2-D array")
    exposures = []
    for i, tau in enumerate(_check_taus(taus)):
        cfg = config.replace(tau=tau, seed=exposure_seed(config.seed, i))
        if policy == "adapted":
            report, res = adapt_and_reconstruct(
                radiance, cfg, granularity, clip=math.inf, adapt_frames=adapt_frames, kernel=kernel
            )
            exposures.append(Exposure(tau, cfg, report.qmap, res, report.recon_frames))
            continue
        if policy == "oracle":
            qmap = ThresholdMap.per_pixel(oracle_threshold(radiance, cfg).q, cfg)
        else:
            q = int(policy)
            if not 1 <= q <= cfg.q_max:
                raise ValueError(f"uniform threshold {q} outside [1, {cfg.q_max}]")
            qmap = ThresholdMap.per_pixel(np.full(radiance.shape, q), cfg)
        theta = expose(radiance, cfg, kernel)
        cube = sample_bits(theta, qmap, cfg.T, cfg.seed)
        res = mle_reconstruct(cube, qmap, cfg, clip=math.inf)
        exposures.append(Exposure(tau, cfg, qmap, res, cfg.T))
    return ExposureStack(radiance, tuple(exposures))


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------
def tone_map(x, peak: float, decades: float = 4.0) -> np.ndarray:
    """Log tone curve: ``peak`` maps to 1, ``peak * 10**-decades`` and below to 0."""
    x = np.maximum(np.asarray(x, dtype=float), peak * 10.0**-decades)
    return np.clip(1.0 + np.log10(x / peak) / decades, 0.0, 1.0)


@dataclass(frozen=True)
class HdrResult:
    fused: np.ndarray
    weights: np.ndarray  # (exposure, row, col)
    fallback: np.ndarray
    exposures: tuple
    psnr_db: float | None = None


def fuse(stack: ExposureStack, decades: float = 4.0) -> HdrResult:
    """Inverse-variance fusion of the per-exposure ML estimates.

    The weight of exposure e is proportional to ``K T_e I_e(c_e)``, the
    inverse of its asymptotic variance, and is zero where the pixel
    saturated.  Pixels saturated in every exposure fall back to the
    exposure whose bit count is furthest from both ends, and are flagged.
    """
    logs, ests, margins = [], [], []
    for e in stack.exposures:
        cfg, res = e.config, e.result
        c_hat = res.raw_estimate
        theta = cfg.alpha * cfg.tau * c_hat / cfg.K
        log_i = 2.0 * math.log(cfg.alpha * cfg.tau / cfg.K) + log_information_theta(res.q_pixels, theta)
        log_w = log_i + math.log(cfg.K * e.frames)
        logs.append(np.where(res.stats.saturated, -np.inf, log_w))
        ests.append(c_hat)
        margins.append(np.minimum(res.stats.S, res.stats.n_bits - res.stats.S) / res.stats.n_bits)
    logs = np.stack(logs)
    ests = np.stack(ests)
    top = logs.max(axis=0)
    fallback = ~np.isfinite(top)
    with np.errstate(invalid="ignore"):
        w = np.exp(logs - np.where(fallback, 0.0, top))
    w = np.where(np.isfinite(logs), w, 0.0)
    pick = np.argmax(np.stack(margins), axis=0)
    w[:, fallback] = 0.0
    rows, cols = np.nonzero(fallback)
    w[pick[rows, cols], rows, cols] = 1.0
    w /= w.sum(axis=0, keepdims=True)
    fused = np.sum(w * ests, axis=0)
    peak = float(stack.radiance.max())
    score = None
    if peak > 0:
        score = psnr(tone_map(fused, peak, decades), tone_map(stack.radiance, peak, decades))
    return HdrResult(fused, w, fallback, stack.exposures, score)


# ---------------------------------------------------------------------------
# Analytic dynamic-range curves
# ---------------------------------------------------------------------------
def _policy_q(theta_e: np.ndarray, q_max: int, policy) -> np.ndarray:
    if policy == "oracle":
        return np.clip(np.floor(theta_e).astype(np.int64) + 1, 1, q_max)
    return np.full(theta_e.shape, int(policy), dtype=np.int64)


def dynamic_range_curve(config: SensorConfig, taus, policy, thetas) -> np.ndarray:
    """Best-exposure SNR (dB) at each full-duty exposure theta.

    Exposure e sees ``tau_e * theta``; its SNR for the radiance is
    ``10 log10(theta_e^2 I(theta_e) K T)``, which does not depend on tau
    beyond theta_e.  Degenerate points are ``-inf``.
    """
    thetas = np.asarray(thetas, dtype=float)
    best = np.full(thetas.shape, -np.inf)
    for tau in _check_taus(taus):
        th = tau * thetas
        q = _policy_q(th, config.q_max, policy)
        with np.errstate(divide="ignore"):
            log_snr = 2.0 * np.log(th) + log_information_theta(q, th) + math.log(config.K * config.T)
        best = np.maximum(best, 10.0 * log_snr / LN10)
    return best


def dynamic_range_db(thetas, snr_db, floor_db: float = 20.0) -> float:
    """``20 log10(theta_hi / theta_lo)`` over the exposures where SNR >= floor."""
    thetas = np.asarray(thetas, dtype=float)
    ok = np.asarray(snr_db) >= floor_db
    if not np.any(ok):
        return 0.0
    return 20.0 * math.log10(thetas[ok].max() / thetas[ok].min())


def dynamic_range_gain(config: SensorConfig, taus, baseline, thetas, floor_db: float = 20.0) -> float:
    """Dynamic range of the oracle policy minus that of ``baseline``."""
    dr = [
        dynamic_range_db(thetas, dynamic_range_curve(config, taus, p, thetas), floor_db)
        for p in ("oracle", baseline)
    ]
    return dr[0] - dr[1]


def default_theta_grid(lo: float = 1e-4, hi: float = 1e6, per_decade: int = 200) -> np.ndarray:
    n = int(round(math.log10(hi / lo) * per_decade)) + 1
    return np.logspace(math.log10(lo), math.log10(hi), n)
