"""Fisher information, SNR, oracle thresholds and bit-density statistics.

All quantities refer to one pixel observed through ``K*T`` i.i.d. bits with
``theta = alpha * tau * c / K`` photons per jot per frame.  Products of
``e^-theta``, ``theta^q`` and ``Gamma(q)`` are formed in the log domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

from .forward import SensorConfig
from .special import delta_admissible_set, psi, psi_inverse, psi_upper_tail

LN10 = math.log(10.0)


class DegenerateThresholdError(ValueError):
    """psi is 0 or 1 to machine precision, so the bits carry no information."""


def exposure(c, config: SensorConfig):
    return config.alpha * config.tau * np.asarray(c, dtype=float) / config.K


def _log_bernoulli_var(q, theta):
    """log(psi * (1 - psi)), -inf where degenerate."""
    p0 = np.asarray(psi(q, theta), dtype=float)
    p1 = np.asarray(psi_upper_tail(q, theta), dtype=float)
    with np.errstate(divide="ignore"):
        return np.log(p0) + np.log(p1)


def log_information_theta(q, theta):
    """log of the per-bit Fisher information about theta (nan-free, -inf if degenerate)."""
    q = np.asarray(q)
    theta = np.asarray(theta, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        num = -2.0 * theta + (2.0 * q - 2.0) * np.log(theta) - 2.0 * gammaln(q)
        out = num - _log_bernoulli_var(q, theta)
    return np.where(np.isfinite(out), out, -np.inf)


def _scalarize(out, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out)
    return out


def _raise_if_degenerate(log_val, what: str):
    if np.any(~np.isfinite(log_val)):
        raise DegenerateThresholdError(f"{what}: psi is 0 or 1 to machine precision")


def fisher_information(c, q, config: SensorConfig):
    """Fisher information about c carried by one bit."""
    theta = exposure(c, config)
    log_i = 2.0 * np.log(config.alpha * config.tau / config.K) + log_information_theta(q, theta)
    _raise_if_degenerate(log_i, "fisher_information")
    return _scalarize(np.exp(log_i), c, q)


def log_snr(c, q, config: SensorConfig):
    """Natural log of c^2 I_q(c) * K T; -inf where degenerate."""
    theta = exposure(c, config)
    with np.errstate(divide="ignore"):
        return 2.0 * np.log(theta) + log_information_theta(q, theta) + math.log(config.K * config.T)


def snr_db(c, q, config: SensorConfig):
    """Asymptotic SNR of the ML estimate, ``10 log10(c^2 I_q(c)) + 10 log10(KT)``."""
    val = log_snr(c, q, config)
    _raise_if_degenerate(val, "snr_db")
    return _scalarize(10.0 * val / LN10, c, q)


def snr_output_referred(theta, q, K: int, T: int, db: bool = False):
    """E[S] / sqrt(Var[S]) for the bit count S of one block."""
    p0 = np.asarray(psi(q, theta), dtype=float)
    p1 = np.asarray(psi_upper_tail(q, theta), dtype=float)
    if np.any((p0 == 0) | (p1 == 0)):
        raise DegenerateThresholdError("snr_output_referred: psi is 0 or 1")
    ratio = np.sqrt(K * T * p1 / p0)
    out = 20.0 * np.log10(ratio) if db else ratio
    return _scalarize(out, theta, q)


def snr_exposure_referred(theta, q, K: int, T: int, db: bool = False):
    """theta divided by the output noise referred back through d theta / d E[S]."""
    q = np.asarray(q)
    theta = np.asarray(theta, dtype=float)
    lv = _log_bernoulli_var(q, theta)
    _raise_if_degenerate(lv, "snr_exposure_referred")
    log_val = -theta + q * np.log(theta) - gammaln(q) + 0.5 * (math.log(K * T) - lv)
    out = 20.0 * log_val / LN10 if db else np.exp(log_val)
    return _scalarize(out, theta, q)


def snr_lower_bound(c, q, config: SensorConfig):
    """L_q(c) = 2 (ln 2 - theta + q ln theta - ln Gamma(q)), a lower bound on ln(c^2 I_q(c))."""
    theta = exposure(c, config)
    q = np.asarray(q)
    out = 2.0 * (math.log(2.0) - theta + q * np.log(theta) - gammaln(q))
    return _scalarize(out, c, q)


class OracleThreshold(NamedTuple):
    q: int | np.ndarray
    clamped: bool | np.ndarray


def oracle_threshold(c, config: SensorConfig) -> OracleThreshold:
    """``floor(theta) + 1`` clamped to [1, q_max]; ``clamped`` marks the cap."""
    theta = exposure(c, config)
    raw = np.floor(theta).astype(np.int64) + 1
    q = np.clip(raw, 1, config.q_max)
    clamped = raw != q
    if np.ndim(c) == 0:
        return OracleThreshold(int(q), bool(clamped))
    return OracleThreshold(q, clamped)


def exact_snr_argmax(c, config: SensorConfig, q_hi: int | None = None) -> int:
    """Integer q maximizing snr_db by exhaustive scan (degenerate q skipped)."""
    q_hi = q_hi or config.q_max
    qs = np.arange(1, q_hi + 1)
    vals = log_snr(c, qs, config)
    return int(qs[np.argmax(vals)])


def bit_density_moments(c, q, config: SensorConfig):
    """Mean and variance of the zero-fraction gamma = 1 - S/(KT)."""
    mean = psi(q, exposure(c, config))
    var = mean * psi_upper_tail(q, exposure(c, config)) / (config.K * config.T)
    return mean, var


def exact_estimate_moments(c, q: int, config: SensorConfig) -> tuple[float, float]:
    """E[c_hat] and E[(c_hat - c)^2] of the clamped ML estimate, by summing over S.

    S ~ Binomial(KT, 1 - psi); no sampling involved.
    """
    theta = float(exposure(c, config))
    n = config.K * config.T
    p_one = psi_upper_tail(q, theta)
    S = np.arange(n + 1)
    w = binom.pmf(S, n, p_one)
    gamma = np.clip(1.0 - S / n, 0.5 / n, 1.0 - 0.5 / n)
    scale = config.K / (config.alpha * config.tau)
    c_hat = np.array([scale * psi_inverse(q, g) if wi > 0 else 0.0 for g, wi in zip(gamma, w)])
    mean = float(np.sum(w * c_hat))
    mse = float(np.sum(w * (c_hat - c) ** 2))
    return mean, mse


def exact_snr_db(c, q: int, config: SensorConfig) -> float:
    """Finite-KT SNR ``10 log10(c^2 / MSE)`` of the clamped ML estimate."""
    _, mse = exact_estimate_moments(c, q, config)
    return 10.0 * math.log10(c * c / mse)


# ---------------------------------------------------------------------------
# Checkerboard (two-threshold) design
# ---------------------------------------------------------------------------
CRLB_PENALTY = 1e12
DEGENERATE_PSI = 1e-12


@dataclass(frozen=True)
class CheckerboardDesign:
    q1: int
    q2: int
    objective: float


def _checkerboard_fisher_term(q: int, c: np.ndarray, alpha: float, K: int) -> np.ndarray:
    """(alpha^2 / 2K) e^{-2 theta} theta^{2(q-1)} / (Gamma(q)^2 psi (1 - psi)); 0 if degenerate."""
    theta = alpha * c / K
    p0 = psi(q, theta)
    p1 = psi_upper_tail(q, theta)
    ok = (p0 > DEGENERATE_PSI) & (p1 > DEGENERATE_PSI)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_v = (
            2.0 * math.log(alpha) - math.log(2.0 * K) - 2.0 * theta
            + 2.0 * (q - 1) * np.log(theta) - 2.0 * gammaln(q) - np.log(p0) - np.log(p1)
        )
    return np.where(ok, np.exp(np.where(ok, log_v, 0.0)), 0.0)


def checkerboard_crlb(q1: int, q2: int, c, alpha: float, K: int) -> np.ndarray:
    """CRLB of c for a two-threshold checkerboard: inverse of the summed information.

    Points where neither threshold is informative get ``CRLB_PENALTY``.
    """
    c = np.asarray(c, dtype=float)
    info = _checkerboard_fisher_term(q1, c, alpha, K) + _checkerboard_fisher_term(q2, c, alpha, K)
    with np.errstate(divide="ignore"):
        bound = np.where(info > 0, 1.0 / info, np.inf)
    return np.minimum(bound, CRLB_PENALTY)


def checkerboard_objectives(config: SensorConfig, c_min: float, c_max: float, grid_step: float = 0.01):
    """Matrix J[q1-1, q2-1] of the trapezoid-integrated CRLB over [c_min, c_max]."""
    if not 0.0 < c_min < c_max:
        raise ValueError("need 0 < c_min < c_max")
    if grid_step <= 0:
        raise ValueError("grid_step must be positive")
    n = int(round((c_max - c_min) / grid_step))
    grid = np.linspace(c_min, c_min + n * grid_step, n + 1)
    qs = range(1, config.q_max + 1)
    terms = {q: _checkerboard_fisher_term(q, grid, config.alpha, config.K) for q in qs}
    J = np.empty((config.q_max, config.q_max))
    for q1 in qs:
        for q2 in qs:
            info = terms[q1] + terms[q2]
            with np.errstate(divide="ignore"):
                crlb = np.minimum(np.where(info > 0, 1.0 / info, np.inf), CRLB_PENALTY)
            J[q1 - 1, q2 - 1] = np.trapezoid(crlb, grid)
    return J


def checkerboard_design(config: SensorConfig, c_min: float, c_max: float, grid_step: float = 0.01):
    """Exhaustive argmin of the integrated checkerboard CRLB; returns q1 <= q2."""
    J = checkerboard_objectives(config, c_min, c_max, grid_step)
    i, j = np.unravel_index(np.argmin(J), J.shape)
    q1, q2 = sorted((int(i) + 1, int(j) + 1))
    return CheckerboardDesign(q1, q2, float(J[i, j]))


# ---------------------------------------------------------------------------
# Phase transition tables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PhaseRow:
    q: int
    e_chat_ratio: float
    bit_density: float
    snr_db: float
    admissible: bool


def phase_transition_curve(c: float, config: SensorConfig, q_range, delta: float = 2e-4):
    """Per-threshold expected estimate ratio, bit density, SNR and delta-set membership."""
    if c <= 0:
        raise ValueError("c must be positive")
    theta = float(exposure(c, config))
    q_set = delta_admissible_set(theta, delta, config.K, config.T, max(q_range))
    rows = []
    for q in q_range:
        mean, _ = exact_estimate_moments(c, q, config)
        val = float(log_snr(c, q, config))
        rows.append(
            PhaseRow(
                int(q),
                mean / c,
                float(psi_upper_tail(q, theta)),
                10.0 * val / LN10 if np.isfinite(val) else -math.inf,
                q in q_set,
            )
        )
    return rows
