"""Forward imaging model of a quanta image sensor.

Pipeline: a normalized intensity image ``c`` (H x W pixels) is spread onto a
jot grid of (H*ky) x (W*kx) jots by a synthesis kernel, scaled by the gain
``alpha`` and duty cycle ``tau``, and every jot in every frame reports 1 iff
its Poisson photon count reaches the local threshold.

Array conventions
-----------------
* images are 2-D float arrays indexed ``[row, col]``
* jot fields (exposure, thresholds) are 2-D arrays on the jot grid; the flat
  jot index ``m`` is row-major over that grid
* bit cubes are uint8 arrays of shape ``(T, H*ky, W*kx)``
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass

import numpy as np

from . import philox
from .special import LOG_DOMAIN_THETA, psi

__all__ = [
    "SensorConfig",
    "Kernel",
    "SynthesisOperator",
    "ThresholdMap",
    "BitCube",
    "build_kernel",
    "expose",
    "sample_bits",
    "sample_counts",
]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SensorConfig:
    """Sensor parameters.

    ``K = kx * ky`` jots oversample one pixel; ``tau`` scales exposure as an
    integration-time fraction.
    """

    alpha: float
    kx: int = 2
    ky: int = 2
    T: int = 25
    q_max: int = 16
    tau: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ValueError("alpha must be a positive finite number")
        for name in ("kx", "ky", "T", "q_max"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def K(self) -> int:
        return self.kx * self.ky

    def replace(self, **changes) -> "SensorConfig":
        return dataclasses.replace(self, **changes)

    def jot_shape(self, image_shape: tuple[int, int]) -> tuple[int, int]:
        h, w = image_shape
        return h * self.ky, w * self.kx


def default_gain(K: int, q_max: int) -> float:
    """Gain that maps c = 1 onto theta = q_max - 1 photons per jot."""
    return float(K * (q_max - 1))


# ---------------------------------------------------------------------------
# Synthesis kernels
# ---------------------------------------------------------------------------
class Kernel(enum.Enum):
    BOXCAR = "boxcar"
    LINEAR_BSPLINE = "linear-bspline"
    QUADRATIC_BSPLINE = "quadratic-bspline"
    CUBIC_BSPLINE = "cubic-bspline"

    @property
    def degree(self) -> int:
        return {"boxcar": 0, "linear-bspline": 1, "quadratic-bspline": 2, "cubic-bspline": 3}[
            self.value
        ]

    @classmethod
    def parse(cls, value) -> "Kernel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unsupported kernel {value!r}; choose one of {names}") from None


def bspline(x, degree: int) -> np.ndarray:
    """Centered cardinal B-spline of degree 1, 2 or 3."""
    a = np.abs(np.asarray(x, dtype=float))
    if degree == 1:
        return np.maximum(0.0, 1.0 - a)
    if degree == 2:
        return np.where(a < 0.5, 0.75 - a**2, np.where(a < 1.5, 0.5 * (1.5 - a) ** 2, 0.0))
    if degree == 3:
        return np.where(
            a < 1.0, 2.0 / 3.0 - a**2 + 0.5 * a**3, np.where(a < 2.0, (2.0 - a) ** 3 / 6.0, 0.0)
        )
    raise ValueError(f"no B-spline of degree {degree}")


def _interp_matrix(n: int, k: int, degree: int) -> np.ndarray:
    """(n*k) x n row-stochastic weights from pixel coefficients to jot centers.

    Pixel i is centered at i + 0.5, jot j at (j + 0.5) / k, in pixel units.
    Coefficients beyond the border repeat the edge value.
    """
    jot_x = (np.arange(n * k) + 0.5) / k
    reach = (degree + 1) // 2 + 1
    base = np.floor(jot_x).astype(int)
    W = np.zeros((n * k, n))
    rows = np.arange(n * k)
    for off in range(-reach, reach + 1):
        idx = base + off
        w = bspline(jot_x - (idx + 0.5), degree)
        np.add.at(W, (rows, np.clip(idx, 0, n - 1)), w)
    return W / W.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class SynthesisOperator:
    """The operator K*G: pixel image -> jot field, each output a convex combination.

    The exposure is ``alpha * tau / K`` times ``apply(c)``.  Boxcar is applied
    as a block replication and never materialized; B-splines are applied
    separably.
    """

    kernel: Kernel
    image_shape: tuple[int, int]
    kx: int
    ky: int

    def row_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis weight matrices ``(Wy, Wx)``; the 2-D operator is Wy (x) Wx."""
        h, w = self.image_shape
        d = self.kernel.degree
        if d == 0:
            return np.kron(np.eye(h), np.ones((self.ky, 1))), np.kron(np.eye(w), np.ones((self.kx, 1)))
        return _interp_matrix(h, self.ky, d), _interp_matrix(w, self.kx, d)

    def apply(self, image: np.ndarray) -> np.ndarray:
        image = np.asarray(image, dtype=float)
        if image.shape != tuple(self.image_shape):
            raise ValueError(f"image shape {image.shape} != operator shape {self.image_shape}")
        if self.kernel is Kernel.BOXCAR:
            return np.repeat(np.repeat(image, self.ky, axis=0), self.kx, axis=1)
        wy, wx = self.row_weights()
        return wy @ image @ wx.T

    def dense(self) -> np.ndarray:
        """Full (M x N) matrix, row-major on both grids.  Only for small tests."""
        wy, wx = self.row_weights()
        return np.kron(wy, wx)


def build_kernel(config: SensorConfig, kernel, image_shape) -> SynthesisOperator:
    h, w = (int(v) for v in image_shape)
    if h < 1 or w < 1:
        raise ValueError("image dimensions must be positive")
    return SynthesisOperator(Kernel.parse(kernel), (h, w), config.kx, config.ky)


def expose(image, config: SensorConfig, kernel=Kernel.BOXCAR) -> np.ndarray:
    """Mean photon count per jot per frame, ``alpha * tau * G c``."""
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    if not np.all(np.isfinite(image)) or np.any(image < 0):
        raise ValueError("image values must be finite and nonnegative")
    op = build_kernel(config, kernel, image.shape)
    theta = (config.alpha * config.tau / config.K) * op.apply(image)
    return np.maximum(theta, 0.0)


# ---------------------------------------------------------------------------
# Threshold maps and bit cubes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ThresholdMap:
    """Integer thresholds, one per ``block_h x block_w`` tile of jots."""

    block_w: int
    block_h: int
    q_values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q_values)
        if q.ndim != 2:
            raise ValueError("q_values must be a 2-D grid of blocks")
        if q.dtype.kind not in "iu":
            if np.any(q != np.round(q)):
                raise ValueError("thresholds must be integers")
            q = q.astype(np.int64)
        if np.any(q < 1):
            raise ValueError("thresholds must be >= 1")
        if self.block_w < 1 or self.block_h < 1:
            raise ValueError("block sizes must be positive")
        object.__setattr__(self, "q_values", q.astype(np.int64))

    @classmethod
    def uniform(cls, q: int, jot_shape, block_h: int = 1, block_w: int = 1) -> "ThresholdMap":
        hj, wj = jot_shape
        if hj % block_h or wj % block_w:
            raise ValueError("blocks must tile the jot grid exactly")
        return cls(block_w, block_h, np.full((hj // block_h, wj // block_w), int(q)))

    @classmethod
    def per_pixel(cls, q_pixels, config: SensorConfig) -> "ThresholdMap":
        """One threshold per pixel (a kx x ky jot block)."""
        return cls(config.kx, config.ky, np.asarray(q_pixels))

    @property
    def jot_shape(self) -> tuple[int, int]:
        return self.q_values.shape[0] * self.block_h, self.q_values.shape[1] * self.block_w

    def jot_map(self, jot_shape=None) -> np.ndarray:
        if jot_shape is not None and tuple(jot_shape) != self.jot_shape:
            raise ValueError(f"threshold map covers {self.jot_shape} jots, field has {tuple(jot_shape)}")
        return np.repeat(np.repeat(self.q_values, self.block_h, axis=0), self.block_w, axis=1)

    def max_q(self) -> int:
        return int(self.q_values.max())

    def check_range(self, q_max: int) -> None:
        if self.max_q() > q_max:
            raise ValueError(f"threshold {self.max_q()} exceeds q_max={q_max}")


@dataclass(frozen=True)
class BitCube:
    """Binary measurements, ``bits[t, row, col]`` on the jot grid."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 3:
            raise ValueError("bit cube must be (T, rows, cols)")
        if b.dtype != np.uint8:
            if not np.all((b == 0) | (b == 1)):
                raise ValueError("bit cube entries must be 0 or 1")
            b = b.astype(np.uint8)
        object.__setattr__(self, "bits", b)

    @property
    def T(self) -> int:
        return self.bits.shape[0]

    @property
    def M(self) -> int:
        return self.bits.shape[1] * self.bits.shape[2]

    @property
    def jot_shape(self) -> tuple[int, int]:
        return self.bits.shape[1], self.bits.shape[2]

    def frames(self, start: int, stop: int | None = None) -> "BitCube":
        return BitCube(self.bits[start:stop])


def _jot_index(jot_shape) -> np.ndarray:
    hj, wj = jot_shape
    return np.arange(hj * wj, dtype=np.uint64).reshape(hj, wj)


def sample_frame(theta: np.ndarray, q_jots: np.ndarray, seed: int, t: int) -> np.ndarray:
    """One frame of bits for frame index ``t`` (uint8, jot grid).

    Poisson counts are drawn by inversion from a counter-keyed uniform U, so
    ``Y >= q`` is exactly ``U >= psi(q, theta)``; the count itself is never
    needed.
    """
    u = philox.uniforms(seed, _jot_index(theta.shape), np.uint64(t))
    return (u >= psi(q_jots, theta)).astype(np.uint8)


def sample_bits(theta, qmap: ThresholdMap, T: int, seed: int, frames=None) -> BitCube:
    """Bit cube for frames ``range(T)`` (or the explicit ``frames`` indices)."""
    theta = np.asarray(theta, dtype=float)
    q_jots = qmap.jot_map(theta.shape)
    ts = range(T) if frames is None else frames
    zero = psi(q_jots, theta)  # P(bit == 0) per jot, shared by all frames
    index = _jot_index(theta.shape)
    planes = [
        (philox.uniforms(seed, index, np.uint64(t)) >= zero).astype(np.uint8) for t in ts
    ]
    if not planes:
        return BitCube(np.zeros((0,) + theta.shape, dtype=np.uint8))
    return BitCube(np.stack(planes))


def sample_counts(theta, seed: int, t: int) -> np.ndarray:
    """Poisson photon counts for frame ``t``, from the same uniforms as the bits.

    For every threshold q, ``sample_counts(...) >= q`` reproduces the bit
    that :func:`sample_frame` emits with the same seed and frame.
    """
    theta = np.asarray(theta, dtype=float)
    u = philox.uniforms(seed, _jot_index(theta.shape), np.uint64(t))
    counts = np.zeros(theta.shape, dtype=np.int64)
    small = theta <= LOG_DOMAIN_THETA
    # incremental CDF, same arithmetic as special._psi_sum
    term = np.exp(-np.where(small, theta, 0.0))
    cdf = np.clip(term, 0.0, 1.0)
    active = small & (u >= cdf)
    k = 0
    while np.any(active):
        counts += active
        k += 1
        term = term * theta / k
        cdf = np.clip(cdf + term, 0.0, 1.0)  # psi(k + 1, theta)
        active &= u >= cdf
    if np.any(~small):
        # bisect for the smallest k with u < psi(k + 1, theta)
        big = ~small
        tb, ub = theta[big], u[big]
        lo = np.zeros(tb.shape, dtype=np.int64)
        hi = np.ceil(tb + 40.0 * np.sqrt(tb) + 100.0).astype(np.int64)
        while True:
            short = ub >= psi(hi + 1, tb)
            if not np.any(short):
                break
            hi = np.where(short, 2 * hi, hi)
        while np.any(lo < hi):
            mid = (lo + hi) // 2
            below = ub < psi(mid + 1, tb)
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid + 1)
        counts[big] = lo
    return counts
