"""Normalized upper incomplete Gamma function for integer shape.

``psi(q, theta)`` is the probability that a Poisson(theta) count stays below
the threshold ``q``, i.e. the probability that a jot reports a 0.  Everything
else in the package (bit statistics, ML inversion, Fisher information) is
built on top of it, so it is evaluated by the exact Poisson partial sum and
inverted with a bracketed Newton iteration.
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.special import gammaln

__all__ = [
    "AdmissibleSet",
    "psi",
    "psi_upper_tail",
    "psi_derivative",
    "psi_inverse",
    "q_admissible_set",
    "delta_admissible_set",
    "epsilon_from_delta",
]

# e^-theta is still a normal double below this; above it the sum runs in logs.
LOG_DOMAIN_THETA = 700.0
INVERSE_TOL = 1e-12
_MAX_NEWTON = 200


def _as_q_theta(q, theta, strict_theta: bool = False):
    q_arr = np.asarray(q)
    th_arr = np.asarray(theta, dtype=float)
    if q_arr.dtype.kind == "f":
        if not np.all(np.isfinite(q_arr)) or np.any(q_arr != np.round(q_arr)):
            raise ValueError("threshold q must be an integer")
    elif q_arr.dtype.kind not in "iub":
        raise ValueError("threshold q must be an integer")
    q_arr = q_arr.astype(np.int64)
    if np.any(q_arr < 1):
        raise ValueError("threshold q must be >= 1")
    if np.any(np.isnan(th_arr)):
        raise ValueError("theta must not be NaN")
    if strict_theta:
        if np.any(th_arr <= 0):
            raise ValueError("theta must be > 0")
    elif np.any(th_arr < 0):
        raise ValueError("theta must be >= 0")
    q_arr, th_arr = np.broadcast_arrays(q_arr, th_arr)
    return np.atleast_1d(q_arr), np.atleast_1d(th_arr)


def _scalar_or_array(out: np.ndarray, *inputs):
    if all(np.ndim(x) == 0 for x in inputs):
        return float(out[0])
    return out


def _psi_sum(q: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Poisson CDF at q-1, by term recurrence (log domain for huge theta)."""
    out = np.empty(theta.shape, dtype=float)
    direct = theta <= LOG_DOMAIN_THETA
    if np.any(direct):
        qd, td = q[direct], theta[direct]
        term = np.exp(-td)
        acc = term.copy()
        for k in range(1, int(qd.max())):
            term = term * td / k
            acc += np.where(k < qd, term, 0.0)
        out[direct] = acc
    if np.any(~direct):
        ql, tl = q[~direct], theta[~direct]
        log_t = np.log(tl)
        log_acc = -tl.copy()
        for k in range(1, int(ql.max())):
            log_term = k * log_t - tl - gammaln(k + 1.0)
            log_acc = np.where(k < ql, np.logaddexp(log_acc, log_term), log_acc)
        out[~direct] = np.exp(log_acc)
    return np.clip(out, 0.0, 1.0)


def _tail_sum(q: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Sum_{k>=q} theta^k e^-theta / k!, accurate when it is tiny."""
    out = np.zeros(theta.shape, dtype=float)
    pos = theta > 0
    if not np.any(pos):
        return out
    qq, tt = q[pos].astype(float), theta[pos]
    term = np.exp(qq * np.log(tt) - tt - gammaln(qq + 1.0))
    acc = term.copy()
    k = qq.copy()
    active = term > 0
    for _ in range(100_000):
        if not np.any(active):
            break
        k += 1.0
        term = np.where(active, term * tt / k, 0.0)
        acc += term
        # terms only decrease once k > theta; stop at relative machine precision
        active = active & ~((k > tt) & (term <= acc * 1e-18))
    out[pos] = acc
    return out


def _psi_scalar(q: int, theta: float) -> float:
    if theta > LOG_DOMAIN_THETA:
        return float(_psi_sum(np.array([q]), np.array([theta]))[0])
    term = math.exp(-theta)
    acc = term
    for k in range(1, q):
        term = term * theta / k
        acc += term
    return min(max(acc, 0.0), 1.0)


def psi(q, theta):
    """Normalized upper incomplete Gamma Psi_q(theta) for integer q >= 1.

    Equals ``sum_{k<q} theta^k e^-theta / k!``.  Accepts scalars or arrays
    (broadcast); returns a float for scalar input.
    """
    if isinstance(q, (int, np.integer)) and isinstance(theta, (int, float, np.floating)):
        if q >= 1 and theta >= 0:
            return _psi_scalar(int(q), float(theta))
    q_arr, th_arr = _as_q_theta(q, theta)
    return _scalar_or_array(_psi_sum(q_arr, th_arr), q, theta)


def psi_upper_tail(q, theta):
    """``1 - psi(q, theta)`` without cancellation when psi is close to 1."""
    q_arr, th_arr = _as_q_theta(q, theta)
    lower = _psi_sum(q_arr, th_arr)
    out = 1.0 - lower
    near_one = lower > 0.5
    if np.any(near_one):
        out[near_one] = _tail_sum(q_arr[near_one], th_arr[near_one])
    return _scalar_or_array(np.clip(out, 0.0, 1.0), q, theta)


def psi_derivative(q, theta):
    """d/dtheta Psi_q(theta) = -theta^(q-1) e^-theta / Gamma(q)."""
    if isinstance(q, (int, np.integer)) and isinstance(theta, (int, float, np.floating)):
        if q >= 1 and theta > 0:
            return -math.exp((q - 1) * math.log(theta) - theta - math.lgamma(q))
    q_arr, th_arr = _as_q_theta(q, theta, strict_theta=True)
    log_mag = (q_arr - 1) * np.log(th_arr) - th_arr - gammaln(q_arr.astype(float))
    return _scalar_or_array(-np.exp(log_mag), q, theta)


@lru_cache(maxsize=65536)
def _psi_inverse_cached(q: int, z: float) -> float:
    lo, hi = 0.0, q + 10.0 * math.sqrt(q) + 50.0
    while psi(q, hi) > z:
        lo, hi = hi, 2.0 * hi
        if hi > 1e300:
            raise RuntimeError(f"psi_inverse: bracket expansion failed (q={q}, z={z})")

    theta = min(max(float(q), lo), hi)
    if theta <= lo or theta >= hi:
        theta = 0.5 * (lo + hi)
    for _ in range(_MAX_NEWTON):
        f = psi(q, theta) - z
        if f == 0.0:
            return theta
        if f > 0.0:
            lo = theta
        else:
            hi = theta
        d = psi_derivative(q, theta)
        step = f / d if d != 0.0 else math.inf
        candidate = theta - step
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if abs(candidate - theta) <= 4.0 * np.finfo(float).eps * max(theta, 1e-300):
            theta = candidate
            if abs(psi(q, theta) - z) <= INVERSE_TOL:
                return theta
        theta = candidate
        if hi - lo <= 4.0 * np.finfo(float).eps * hi and abs(psi(q, theta) - z) <= INVERSE_TOL:
            return theta
    raise RuntimeError(f"psi_inverse did not converge (q={q}, z={z})")


def psi_inverse(q: int, z: float) -> float:
    """Return theta > 0 with ``|psi(q, theta) - z| <= 1e-12``.

    The root is bracketed (geometric expansion from ``[0, q + 10 sqrt(q) + 50]``)
    and refined by Newton steps that fall back to bisection whenever they
    leave the bracket.  Results are memoized, since reconstruction only ever
    inverts a finite set of bit densities.
    """
    if isinstance(q, bool) or int(q) != q or q < 1:
        raise ValueError("threshold q must be an integer >= 1")
    z = float(z)
    if not 0.0 < z < 1.0:
        raise ValueError("psi_inverse needs z strictly inside (0, 1)")
    return _psi_inverse_cached(int(q), z)


# ---------------------------------------------------------------------------
# Admissible threshold sets
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AdmissibleSet:
    """Contiguous integer interval ``[lo, hi]`` of thresholds, possibly empty.

    An empty set has ``lo = hi = None``; test with ``is_empty`` or ``bool()``.
    """

    lo: int | None
    hi: int | None
    epsilon: float

    @classmethod
    def empty(cls, epsilon: float) -> "AdmissibleSet":
        return cls(None, None, epsilon)

    @property
    def is_empty(self) -> bool:
        return self.lo is None

    def __bool__(self) -> bool:
        return not self.is_empty

    def __len__(self) -> int:
        return 0 if self.is_empty else self.hi - self.lo + 1

    def __iter__(self) -> Iterator[int]:
        if self.is_empty:
            return iter(())
        return iter(range(self.lo, self.hi + 1))

    def __contains__(self, q) -> bool:
        return not self.is_empty and self.lo <= q <= self.hi


def q_admissible_set(theta: float, epsilon: float, q_max: int) -> AdmissibleSet:
    """Thresholds q in [1, q_max] with ``epsilon <= psi(q, theta) <= 1 - epsilon``.

    Psi is increasing in q, so both edges are found by binary search.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValueError("epsilon must lie in (0, 1/2)")
    if theta < 0:
        raise ValueError("theta must be >= 0")
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    qs = range(1, int(q_max) + 1)
    lo_idx = bisect_left(qs, epsilon, key=lambda q: psi(q, theta))
    # upper edge uses the accurate complement: 1 - psi >= epsilon
    hi_idx = bisect_right(qs, -epsilon, key=lambda q: -psi_upper_tail(q, theta))
    if lo_idx >= hi_idx:
        return AdmissibleSet.empty(epsilon)
    return AdmissibleSet(qs[lo_idx], qs[hi_idx - 1], epsilon)


def epsilon_from_delta(delta: float, n_bits: int) -> float:
    """Band half-width ``1 - (delta/2)^(1/n_bits)`` for a KT-bit block."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if n_bits < 1:
        raise ValueError("n_bits must be >= 1")
    return -math.expm1(math.log(delta / 2.0) / n_bits)


def delta_admissible_set(theta: float, delta: float, K: int, T: int, q_max: int) -> AdmissibleSet:
    """Thresholds for which a KT-bit block saturates with probability < delta.

    For tiny blocks with delta near 1 the band width reaches 1/2 and the set
    is empty.
    """
    eps = epsilon_from_delta(delta, K * T)
    if eps >= 0.5:
        return AdmissibleSet.empty(eps)
    return q_admissible_set(theta, eps, q_max)
