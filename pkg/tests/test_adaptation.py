import math

import numpy as np
import pytest

from qisthresh import adaptation as ad
from qisthresh.analytics import CheckerboardDesign
from qisthresh.corpus import default_corpus, ramp
from qisthresh.forward import SensorConfig, ThresholdMap, expose, sample_bits, sample_counts
from qisthresh.reconstruction import mle_reconstruct


def _cfg(**kw):
    base = dict(alpha=240.0, kx=4, ky=4, T=13, q_max=16, seed=0)
    base.update(kw)
    return SensorConfig(**base)


# ---------------------------------------------------------------------------
# Bisection step
# ---------------------------------------------------------------------------
def test_bisection_first_step_example():
    s = ad.BisectionState.initial((), 16)
    assert int(s.q_m) == 9
    s = ad.bisection_step(s, 0.9, 0.02)
    assert (int(s.q_a), int(s.q_b), int(s.q_m)) == (9, 16, 13)
    assert not s.converged and s.frames_consumed == 1


def test_bisection_low_density_moves_down():
    s = ad.bisection_step(ad.BisectionState.initial((), 16), 0.1, 0.02)
    assert (int(s.q_a), int(s.q_b), int(s.q_m)) == (1, 9, 5)


def test_bisection_converges_on_tolerance_and_noop():
    s = ad.bisection_step(ad.BisectionState.initial((2,), 16), np.array([0.51, 0.9]), 0.02)
    assert s.converged.tolist() == [True, False]
    assert s.q_m.tolist() == [9, 13]
    for _ in range(10):
        s = ad.bisection_step(s, 0.99, 0.02)
    assert s.converged.all()
    assert s.noop_steps > 0
    assert s.frames_consumed + s.noop_steps == 11


def test_bisection_needs_two_levels():
    with pytest.raises(ValueError):
        ad.BisectionState.initial((), 1)


def test_default_tol():
    assert ad.default_tol(16) == 0.25
    assert ad.default_tol(10_000) == ad.MIN_TOL


@pytest.mark.parametrize("theta", np.linspace(1.0, 15.0, 57))
def test_analytic_bisection_reaches_oracle(theta):
    q, steps = ad.analytic_bisection(theta, 16)
    assert abs(q - (math.floor(theta) + 1)) <= 1
    assert steps <= 4


# ---------------------------------------------------------------------------
# Bisection on images
# ---------------------------------------------------------------------------
def test_constant_image_gives_constant_map():
    cfg = _cfg(kx=2, ky=2, alpha=300.0, q_max=64, T=20)
    rep = ad.run_bisection(np.full((8, 8), 0.5), cfg, granularity=8, adapt_frames=8, tol=0.02)
    assert rep.qmap.q_values.shape == (1, 1)
    assert abs(int(rep.qmap.q_values[0, 0]) - 38) <= 2


def test_uniform_blocks_agree():
    cfg = _cfg(kx=8, ky=8, alpha=300.0, q_max=64, T=20)
    rep = ad.run_bisection(np.full((4, 4), 0.5), cfg, granularity=1, adapt_frames=8, tol=0.02)
    assert np.ptp(rep.qmap.q_values) <= 2


def test_mse_decreases_over_iterations():
    img = ramp(32)
    first, last = [], []
    for seed in range(5):
        rep = ad.run_bisection(img, _cfg(seed=seed, T=20), adapt_frames=8, tol=0.02)
        first.append(rep.mse[1])
        last.append(rep.mse[-1])
    assert np.mean(last) < np.mean(first)


def test_frame_accounting():
    cfg = _cfg()
    rep, res = ad.adapt_and_reconstruct(ramp(16), cfg)
    assert rep.adapt_frames + rep.recon_frames == cfg.T
    assert rep.adapt_frames <= math.ceil(math.log2(cfg.q_max)) + 1
    assert res.estimate.shape == (16, 16)
    with pytest.raises(ValueError):
        ad.run_bisection(ramp(16), cfg, adapt_frames=0)
    with pytest.raises(ValueError):
        ad.run_bisection(ramp(16), cfg, adapt_frames=cfg.T + 1)


def test_granularity_must_tile():
    with pytest.raises(ValueError):
        ad.run_bisection(ramp(16), _cfg(), granularity=3)


def test_trace_rows():
    rep = ad.run_bisection(ramp(8), _cfg(), granularity=4, adapt_frames=3)
    assert len(rep.trace) == 4 * len(rep.mse[1:])
    it, bid, qa, qb, qm, d, conv = rep.trace[0]
    assert it == 1 and bid == 0 and qa <= qm <= qb and 0 <= d <= 1


def test_adapted_beats_worst_uniform():
    cfg = _cfg(seed=3)
    img = ramp(32)
    _, res = ad.adapt_and_reconstruct(img, cfg)
    theta = expose(img, cfg)
    qmap = ThresholdMap.uniform(cfg.q_max, theta.shape)
    worst = mle_reconstruct(sample_bits(theta, qmap, cfg.T, cfg.seed), qmap, cfg, truth=img)
    assert res.psnr_db > worst.psnr_db + 3


# ---------------------------------------------------------------------------
# Markov chain
# ---------------------------------------------------------------------------
def test_markov_beta_one_never_moves():
    s = ad.MarkovState.initial((5,), 4, beta=1.0)
    for _ in range(50):
        s = ad.markov_step(s, np.ones(5, dtype=np.uint8), np.full(5, 0.3))
    assert s.q.tolist() == [4] * 5 and s.s.tolist() == [8] * 5


def test_markov_overflow_and_underflow():
    s = ad.MarkovState.initial((), 4, L=2, beta=0.25)
    for _ in range(2):
        s = ad.markov_step(s, 1, 0.0)
    assert int(s.q) == 5 and int(s.s) == s.mid
    for _ in range(3):
        s = ad.markov_step(s, 0, 0.0)
    assert int(s.q) == 4 and int(s.s) == s.mid


def test_markov_clamps_to_range():
    s = ad.MarkovState.initial((), 1, L=1, q_max=3)
    for _ in range(10):
        s = ad.markov_step(s, 0, 0.0)
    assert int(s.q) == 1


def test_markov_validation():
    with pytest.raises(ValueError):
        ad.MarkovState.initial((), 2, beta=0.0)
    with pytest.raises(ValueError):
        ad.MarkovState.initial((), 2, L=0)


def test_markov_drifts_toward_bright_oracle():
    cfg = _cfg(kx=2, ky=2, alpha=300.0, q_max=64, T=1)
    q, mse = ad.run_markov(np.full((16, 16), 0.5), cfg, major_iterations=60, q0=2, beta=0.25)
    assert q.mean() > 10
    assert mse[-1] < mse[0]


# ---------------------------------------------------------------------------
# Conditional reset
# ---------------------------------------------------------------------------
def test_reset_sequences():
    assert ad.reset_sequence(5, 3).tolist() == [1, 2, 3, 1, 2]
    assert ad.reset_sequence(5, 3, "descending").tolist() == [3, 2, 1, 3, 2]
    with pytest.raises(ValueError):
        ad.reset_sequence(3, 3, "sideways")


def test_conditional_reset_dark_image():
    res = ad.conditional_reset_reconstruct(np.zeros((4, 4)), _cfg())
    assert np.all(res.raw_estimate == 0)


def test_conditional_reset_saturation_ceiling():
    cfg = _cfg()
    res = ad.conditional_reset_reconstruct(np.ones((4, 4)), cfg.replace(alpha=1e5), clip=np.inf)
    # every frame fires, so the estimate is the largest threshold the sequence reaches
    ceiling = ad.reset_sequence(cfg.T, cfg.q_max).max() * cfg.K / (1e5 * cfg.tau)
    assert np.allclose(res.raw_estimate, ceiling)


def test_conditional_reset_charge_carries():
    cfg = _cfg(kx=1, ky=1, T=6, q_max=4)
    theta = np.full((20, 20), 0.9)
    bits = ad.conditional_reset_bits(theta, cfg).bits
    qs = ad.reset_sequence(cfg.T, cfg.q_max)
    counts = [sample_counts(theta, cfg.seed, t) for t in range(cfg.T)]
    for i in range(20):
        for j in range(20):
            charge = 0
            for t in range(cfg.T):
                charge += int(counts[t][i, j])
                fired = charge >= qs[t]
                assert bits[t, i, j] == fired
                if fired:
                    charge = 0


def test_conditional_reset_tracks_brightness():
    cfg = _cfg()
    img = ramp(32)
    res = ad.conditional_reset_reconstruct(img, cfg)
    assert np.corrcoef(res.estimate.ravel(), img.ravel())[0, 1] > 0.9


# ---------------------------------------------------------------------------
# Checkerboard
# ---------------------------------------------------------------------------
def test_checkerboard_map_layout():
    cfg = _cfg(kx=2, ky=2)
    m = ad.checkerboard_map(CheckerboardDesign(4, 12, 0.0), (2, 2), cfg)
    assert m.q_values.tolist() == [[4, 12], [12, 4]]
    assert m.jot_map().shape == (4, 4)
    same = ad.checkerboard_map(CheckerboardDesign(7, 7, 0.0), (3, 5), cfg)
    assert np.all(same.q_values == 7)


def test_checkerboard_below_adapted():
    cfg = _cfg()
    img = default_corpus()["ramp_diag"]
    theta = expose(img, cfg)
    cb = ad.checkerboard_map(CheckerboardDesign(1, 16, 0.0), img.shape, cfg)
    fixed = mle_reconstruct(sample_bits(theta, cb, cfg.T, cfg.seed), cb, cfg, truth=img)
    _, adapted = ad.adapt_and_reconstruct(img, cfg)
    assert adapted.psnr_db > fixed.psnr_db
