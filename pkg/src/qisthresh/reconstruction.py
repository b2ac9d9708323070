"""Closed-form maximum-likelihood reconstruction from a bit cube."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .forward import BitCube, SensorConfig, ThresholdMap
from .special import psi_inverse


@dataclass(frozen=True)
class BlockStats:
    """Per-pixel bit counts over a kx x ky x T block.

    ``saturated_low`` marks blocks of all ones (gamma = 0) and
    ``saturated_high`` blocks of all zeros (gamma = 1).
    """

    S: np.ndarray
    n_bits: int

    @property
    def gamma(self) -> np.ndarray:
        return 1.0 - self.S / self.n_bits

    @property
    def saturated_low(self) -> np.ndarray:
        return self.S == self.n_bits

    @property
    def saturated_high(self) -> np.ndarray:
        return self.S == 0

    @property
    def saturated(self) -> np.ndarray:
        return self.saturated_low | self.saturated_high


@dataclass(frozen=True)
class ReconstructionResult:
    estimate: np.ndarray
    raw_estimate: np.ndarray
    stats: BlockStats
    q_pixels: np.ndarray
    psnr_db: float | None = None

    @property
    def saturation_mask(self) -> np.ndarray:
        return self.stats.saturated


def block_sums(bits: BitCube, config: SensorConfig) -> BlockStats:
    hj, wj = bits.jot_shape
    if hj % config.ky or wj % config.kx:
        raise ValueError(
            f"jot grid {hj}x{wj} is not a whole number of {config.ky}x{config.kx} pixel blocks"
        )
    per_frame = bits.bits.reshape(bits.T, hj // config.ky, config.ky, wj // config.kx, config.kx)
    S = per_frame.sum(axis=(0, 2, 4), dtype=np.int64)
    return BlockStats(S, config.K * bits.T)


def pixel_thresholds(qmap: ThresholdMap, config: SensorConfig, jot_shape) -> np.ndarray:
    """Threshold of each pixel block; raises if a pixel mixes thresholds."""
    q_jots = qmap.jot_map(jot_shape)
    hj, wj = jot_shape
    blocks = q_jots.reshape(hj // config.ky, config.ky, wj // config.kx, config.kx)
    q_pix = blocks[:, 0, :, 0]
    if np.any(blocks != q_pix[:, None, :, None]):
        raise ValueError("threshold map assigns more than one threshold to a pixel block")
    return q_pix


def invert_bit_density(q_pix: np.ndarray, S: np.ndarray, n_bits: int) -> np.ndarray:
    """theta-hat per pixel: psi_q^{-1} of the clamped zero-fraction 1 - S/n."""
    gamma = np.clip(1.0 - S / n_bits, 0.5 / n_bits, 1.0 - 0.5 / n_bits)
    out = np.empty(S.shape, dtype=float)
    pairs, inverse = np.unique(np.stack([q_pix.ravel(), S.ravel()]), axis=1, return_inverse=True)
    gam = gamma.ravel()
    firsts = np.zeros(pairs.shape[1], dtype=np.int64)
    firsts[inverse.ravel()] = np.arange(gam.size)
    values = np.array([psi_inverse(int(q), gam[i]) for q, i in zip(pairs[0], firsts)])
    out.ravel()[:] = values[inverse.ravel()]
    return out


def mle_reconstruct(
    bits: BitCube,
    qmap: ThresholdMap,
    config: SensorConfig,
    clip: float = 1.0,
    truth=None,
) -> ReconstructionResult:
    """Per-pixel ML estimate ``(K / (alpha tau)) * psi_q^{-1}(1 - S/(KT))``.

    Blocks of all ones or all zeros have no finite ML estimate; their bit
    density is clamped half a count inside (0, 1) and they are flagged in
    the result's saturation mask.  ``estimate`` is ``raw_estimate`` clipped
    to ``[0, clip]``.
    """
    stats = block_sums(bits, config)
    q_pix = pixel_thresholds(qmap, config, bits.jot_shape)
    if q_pix.max() > config.q_max:
        raise ValueError(f"threshold {q_pix.max()} exceeds q_max={config.q_max}")
    theta_hat = invert_bit_density(q_pix, stats.S, stats.n_bits)
    raw = (config.K / (config.alpha * config.tau)) * theta_hat
    est = np.clip(raw, 0.0, clip)
    score = None if truth is None else psnr(est, truth)
    return ReconstructionResult(est, raw, stats, q_pix, score)


def psnr(estimate, truth, peak: float = 1.0) -> float:
    """PSNR in dB; ``math.inf`` when the images are identical."""
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise ValueError(f"shape mismatch {estimate.shape} vs {truth.shape}")
    mse = float(np.mean((estimate - truth) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)
