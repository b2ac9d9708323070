"""Threshold update schemes: bisection, Markov chain, conditional reset, checkerboard."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import philox
from .analytics import CheckerboardDesign, oracle_threshold
from .forward import BitCube, Kernel, SensorConfig, ThresholdMap, expose, sample_bits, sample_counts
from .reconstruction import ReconstructionResult, block_sums, mle_reconstruct, psnr
from .special import psi, psi_upper_tail

MIN_TOL = 0.02


def default_tol(block_bits: int) -> float:
    """``max(1/sqrt(bits per block per frame), 0.02)``."""
    return max(1.0 / math.sqrt(block_bits), MIN_TOL)


# ---------------------------------------------------------------------------
# Bisection
# ---------------------------------------------------------------------------
@dataclass
class BisectionState:
    """Per-block bracket [q_a, q_b] with probe q_m = ceil((q_a + q_b) / 2)."""

    q_a: np.ndarray
    q_b: np.ndarray
    q_m: np.ndarray
    converged: np.ndarray
    frames_consumed: int = 0
    noop_steps: int = 0

    @classmethod
    def initial(cls, shape, q_max: int) -> "BisectionState":
        if q_max < 2:
            raise ValueError("bisection needs q_max >= 2")
        q_a = np.ones(shape, dtype=np.int64)
        q_b = np.full(shape, q_max, dtype=np.int64)
        return cls(q_a, q_b, -((-(q_a + q_b)) // 2), np.zeros(shape, dtype=bool))

    def copy(self) -> "BisectionState":
        return BisectionState(
            self.q_a.copy(), self.q_b.copy(), self.q_m.copy(), self.converged.copy(),
            self.frames_consumed, self.noop_steps,
        )


def bisection_step(state: BisectionState, density, tol: float) -> BisectionState:
    """Update every unconverged block from the bit density measured at its q_m.

    ``density`` is the fraction of ones.  Too many ones means the threshold is
    too low, so the lower end moves up.  Blocks already converged are left
    alone; a step on a fully converged state counts in ``noop_steps``.
    """
    density = np.broadcast_to(np.asarray(density, dtype=float), state.q_m.shape)
    new = state.copy()
    if np.all(state.converged):
        new.noop_steps += 1
        return new
    new.frames_consumed += 1
    live = ~state.converged
    done = live & ((np.abs(density - 0.5) <= tol) | (state.q_b - state.q_a <= 1))
    move = live & ~done
    up = move & (density > 0.5)
    down = move & ~(density > 0.5)
    new.q_a = np.where(up, state.q_m, state.q_a)
    new.q_b = np.where(down, state.q_m, state.q_b)
    new.q_m = np.where(move, -((-(new.q_a + new.q_b)) // 2), state.q_m)
    new.converged = state.converged | done | (move & (new.q_b - new.q_a <= 1))
    return new


@dataclass
class AdaptationReport:
    qmap: ThresholdMap
    oracle_map: np.ndarray
    trace: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    adapt_frames: int = 0
    recon_frames: int = 0

    TRACE_HEADER = ["iteration", "block_id", "q_A", "q_B", "q_M", "bit_density", "converged"]


def _block_geometry(image_shape, config: SensorConfig, granularity: int):
    h, w = image_shape
    if granularity < 1:
        raise ValueError("block granularity must be >= 1 pixel")
    if h % granularity or w % granularity:
        raise ValueError(f"{h}x{w} image is not a whole number of {granularity}x{granularity} blocks")
    return (h // granularity, w // granularity), granularity * config.ky, granularity * config.kx


def block_oracle_map(image, config: SensorConfig, granularity: int) -> np.ndarray:
    """oracle_threshold of the block-mean ground truth."""
    image = np.asarray(image, dtype=float)
    (bh, bw), _, _ = _block_geometry(image.shape, config, granularity)
    means = image.reshape(bh, granularity, bw, granularity).mean(axis=(1, 3))
    return np.asarray(oracle_threshold(means, config).q)


def _block_density(plane: np.ndarray, block_h: int, block_w: int) -> np.ndarray:
    hj, wj = plane.shape
    return plane.reshape(hj // block_h, block_h, wj // block_w, block_w).mean(axis=(1, 3))


def run_bisection(
    image,
    config: SensorConfig,
    granularity: int = 1,
    adapt_frames: int | None = None,
    tol: float | None = None,
    kernel=Kernel.BOXCAR,
    accumulate: bool = False,
) -> AdaptationReport:
    """Adapt one threshold per ``granularity x granularity`` pixel block.

    Frame ``t`` of the adaptation phase is acquired under the current q_m map
    and drives one bisection step for all blocks at once.  The loop stops when
    every block has converged or the frame budget is spent.  With
    ``accumulate`` the density is pooled over all frames taken at the current
    q_m instead of using the newest frame only.
    """
    image = np.asarray(image, dtype=float)
    if adapt_frames is None:
        adapt_frames = min(math.ceil(math.log2(config.q_max)) + 1, config.T - 1)
    if adapt_frames < 1:
        raise ValueError("adaptation needs at least one frame")
    if adapt_frames > config.T:
        raise ValueError(f"adapt_frames={adapt_frames} exceeds T={config.T}")
    grid, block_h, block_w = _block_geometry(image.shape, config, granularity)
    tol = default_tol(block_h * block_w) if tol is None else float(tol)
    theta = expose(image, config, kernel)
    oracle = block_oracle_map(image, config, granularity)

    state = BisectionState.initial(grid, config.q_max)
    ones = np.zeros(grid)
    seen = np.zeros(grid)
    report = AdaptationReport(ThresholdMap(block_w, block_h, state.q_m), oracle)
    report.mse.append(float(np.mean((state.q_m - oracle) ** 2)))
    for t in range(adapt_frames):
        if np.all(state.converged):
            break
        qmap = ThresholdMap(block_w, block_h, state.q_m)
        plane = sample_bits(theta, qmap, 1, config.seed, frames=[t]).bits[0]
        d = _block_density(plane, block_h, block_w)
        if accumulate:
            ones += d
            seen += 1
            d = ones / seen
        q_before = state.q_m
        state = bisection_step(state, d, tol)
        if accumulate:
            reset = state.q_m != q_before
            ones[reset] = 0.0
            seen[reset] = 0.0
        for bid, row in enumerate(
            zip(state.q_a.ravel(), state.q_b.ravel(), state.q_m.ravel(), d.ravel(), state.converged.ravel())
        ):
            report.trace.append((t + 1, bid, int(row[0]), int(row[1]), int(row[2]), float(row[3]), bool(row[4])))
        report.mse.append(float(np.mean((state.q_m - oracle) ** 2)))
    report.qmap = ThresholdMap(block_w, block_h, state.q_m)
    report.adapt_frames = state.frames_consumed
    report.recon_frames = config.T - state.frames_consumed
    return report


def adapt_and_reconstruct(image, config: SensorConfig, granularity: int = 1, clip: float = 1.0, **kwargs):
    """Bisection on the first frames, ML reconstruction from the rest."""
    report = run_bisection(image, config, granularity, **kwargs)
    if report.recon_frames < 1:
        raise ValueError("no frames left for reconstruction")
    theta = expose(image, config, kwargs.get("kernel", Kernel.BOXCAR))
    frames = range(report.adapt_frames, config.T)
    cube = sample_bits(theta, report.qmap, len(frames), config.seed, frames=frames)
    return report, mle_reconstruct(cube, report.qmap, config, clip=clip, truth=image)


def analytic_bisection(theta: float, q_max: int, tol: float = MIN_TOL, max_steps: int = 64):
    """Bisection driven by exact densities ``1 - psi(q_m, theta)``; returns (q, steps)."""
    state = BisectionState.initial((), q_max)
    steps = 0
    while not state.converged and steps < max_steps:
        state = bisection_step(state, psi_upper_tail(int(state.q_m), theta), tol)
        steps += 1
    return int(state.q_m), steps


# ---------------------------------------------------------------------------
# Markov chain baseline
# ---------------------------------------------------------------------------
@dataclass
class MarkovState:
    """Threshold q and sub-state s in [0, 2^L) per chain."""

    q: np.ndarray
    s: np.ndarray
    L: int = 4
    beta: float = 0.25
    q_max: int = 16

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if self.L < 1:
            raise ValueError("L must be >= 1")

    @property
    def mid(self) -> int:
        return 1 << (self.L - 1)

    @classmethod
    def initial(cls, shape, q0: int, L: int = 4, beta: float = 0.25, q_max: int = 16) -> "MarkovState":
        return cls(np.full(shape, q0, dtype=np.int64), np.full(shape, 1 << (L - 1), dtype=np.int64), L, beta, q_max)


def markov_step(state: MarkovState, bit, u) -> MarkovState:
    """One bit per chain; ``u`` is a uniform deciding whether the chain moves.

    A one pushes the sub-state up and a zero pushes it down, each with
    probability 1 - beta.  Leaving [0, 2^L) moves q by one and recentres s.
    """
    bit = np.asarray(bit)
    moves = np.asarray(u) < 1.0 - state.beta
    s = state.s + np.where(moves, np.where(bit == 1, 1, -1), 0)
    over = s > (1 << state.L) - 1
    under = s < 0
    q = np.clip(state.q + over - under, 1, state.q_max)
    s = np.where(over | under, state.mid, s)
    return MarkovState(q, s, state.L, state.beta, state.q_max)


def run_markov(
    image,
    config: SensorConfig,
    major_iterations: int,
    L: int = 4,
    beta: float = 0.25,
    q0: int | None = None,
    kernel=Kernel.BOXCAR,
):
    """One chain per pixel, fed its K jot bits one at a time in raster order.

    Each jot's bit is produced under the threshold the chain holds at that
    moment.  K sequential updates form one major iteration (one frame).
    Returns (final q per pixel, MSE to the oracle map after each iteration).
    """
    image = np.asarray(image, dtype=float)
    theta = expose(image, config, kernel)
    h, w = image.shape
    q0 = (1 + config.q_max + 1) // 2 if q0 is None else q0
    state = MarkovState.initial((h, w), q0, L, beta, config.q_max)
    oracle = block_oracle_map(image, config, 1)
    index = np.arange(theta.size, dtype=np.uint64).reshape(theta.shape)
    mse = [float(np.mean((state.q - oracle) ** 2))]
    for t in range(major_iterations):
        u_bits = philox.uniforms(config.seed, index, np.uint64(t), philox.STREAM_BITS)
        u_move = philox.uniforms(config.seed, index, np.uint64(t), philox.STREAM_MARKOV)
        for dy in range(config.ky):
            for dx in range(config.kx):
                th = theta[dy:: config.ky, dx:: config.kx]
                bit = u_bits[dy:: config.ky, dx:: config.kx] >= psi(state.q, th)
                state = markov_step(state, bit.astype(np.uint8), u_move[dy:: config.ky, dx:: config.kx])
        mse.append(float(np.mean((state.q - oracle) ** 2)))
    return state.q, mse


# ---------------------------------------------------------------------------
# Conditional reset baseline
# ---------------------------------------------------------------------------
def reset_sequence(T: int, q_max: int, direction: str = "ascending") -> np.ndarray:
    t = np.arange(T)
    if direction == "ascending":
        return t % q_max + 1
    if direction == "descending":
        return q_max - t % q_max
    raise ValueError(f"direction must be 'ascending' or 'descending', got {direction!r}")


def conditional_reset_bits(theta, config: SensorConfig, direction: str = "ascending") -> BitCube:
    """Per-jot photon charge carried across frames and cleared when it fires."""
    theta = np.asarray(theta, dtype=float)
    qs = reset_sequence(config.T, config.q_max, direction)
    charge = np.zeros(theta.shape, dtype=np.int64)
    planes = []
    for t, q in enumerate(qs):
        charge += sample_counts(theta, config.seed, t)
        fired = charge >= q
        charge[fired] = 0
        planes.append(fired.astype(np.uint8))
    return BitCube(np.stack(planes))


def conditional_reset_reconstruct(
    image, config: SensorConfig, direction: str = "ascending", clip: float = 1.0, kernel=Kernel.BOXCAR
) -> ReconstructionResult:
    """Digital integration of the fired bits, weighted by their thresholds.

    Per pixel, ``sum_t q_t * (fraction of jots fired at t)`` is normalised by
    ``sum_t q_t`` (the value when every frame fires) and scaled by the largest
    threshold in the sequence, giving an exposure estimate in photons per jot
    per frame; c-hat = K theta-hat / (alpha tau).
    """
    image = np.asarray(image, dtype=float)
    theta = expose(image, config, kernel)
    cube = conditional_reset_bits(theta, config, direction)
    qs = reset_sequence(config.T, config.q_max, direction)
    hj, wj = cube.jot_shape
    per = cube.bits.reshape(config.T, hj // config.ky, config.ky, wj // config.kx, config.kx)
    fired = per.mean(axis=(2, 4))
    theta_hat = qs.max() * np.tensordot(qs, fired, axes=1) / qs.sum()
    raw = theta_hat * config.K / (config.alpha * config.tau)
    est = np.clip(raw, 0.0, clip)
    stats = block_sums(cube, config)
    q_pix = np.zeros(stats.S.shape, dtype=np.int64)  # no single threshold per pixel
    return ReconstructionResult(est, raw, stats, q_pix, psnr(est, image))


# ---------------------------------------------------------------------------
# Checkerboard maps
# ---------------------------------------------------------------------------
def checkerboard_map(design: CheckerboardDesign, pixel_shape, config: SensorConfig) -> ThresholdMap:
    """q1 where row + col is even, q2 elsewhere, one threshold per pixel."""
    h, w = pixel_shape
    parity = np.add.outer(np.arange(h), np.arange(w)) % 2
    return ThresholdMap.per_pixel(np.where(parity == 0, design.q1, design.q2), config)
