"""Corpus benchmark: mean and std of PSNR per threshold policy over seeds."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adaptation import adapt_and_reconstruct, conditional_reset_reconstruct
from .forward import SensorConfig, ThresholdMap, default_gain, expose, sample_bits
from .reconstruction import mle_reconstruct

BENCH_HEADER = ["method", "configuration", "mean_psnr_db", "std_psnr_db"]


@dataclass(frozen=True)
class Policy:
    method: str
    configuration: str
    kind: str
    value: object = None


def default_policies(config: SensorConfig) -> list[Policy]:
    """Uniform 1/5/10/q_max, conditional reset both ways, bisection at 1, k and 2k pixels."""
    k = config.kx
    policies = [Policy("uniform", f"q={q}", "uniform", q) for q in sorted({1, 5, 10, config.q_max})]
    policies += [Policy("conditional_reset", d, "reset", d) for d in ("ascending", "descending")]
    policies += [
        Policy("proposed", f"{g}x{g} pixels", "bisection", g) for g in (2 * k, k, 1)
    ]
    return policies


def bench_config(seed: int = 0) -> SensorConfig:
    """4x4 jots per pixel, 13 frames, q_max = 16, default gain."""
    return SensorConfig(alpha=default_gain(16, 16), kx=4, ky=4, T=13, q_max=16, seed=seed)


def run_policy(policy: Policy, image: np.ndarray, config: SensorConfig, adapt_frames=None) -> float:
    if policy.kind == "uniform":
        theta = expose(image, config)
        qmap = ThresholdMap.per_pixel(np.full(image.shape, int(policy.value)), config)
        cube = sample_bits(theta, qmap, config.T, config.seed)
        return mle_reconstruct(cube, qmap, config, truth=image).psnr_db
    if policy.kind == "reset":
        return conditional_reset_reconstruct(image, config, policy.value).psnr_db
    if policy.kind == "bisection":
        _, res = adapt_and_reconstruct(image, config, int(policy.value), adapt_frames=adapt_frames)
        return res.psnr_db
    raise ValueError(f"unknown policy kind {policy.kind!r}")


def _job(args):
    policies, image, config, adapt_frames = args
    return [run_policy(p, image, config, adapt_frames) for p in policies]


def run_bench(corpus: dict, config: SensorConfig, seeds, policies=None, adapt_frames=None, workers: int = 1):
    """PSNR per (policy, image, seed); returns (policies, array[policy, image, seed]).

    Seeds replace ``config.seed``.  Results do not depend on ``workers``.
    """
    policies = default_policies(config) if policies is None else policies
    names = sorted(corpus)
    seeds = list(seeds)
    jobs = [
        (policies, corpus[n], config.replace(seed=int(s)), adapt_frames) for n in names for s in seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_job, jobs))
    else:
        out = [_job(j) for j in jobs]
    scores = np.array(out).reshape(len(names), len(seeds), len(policies)).transpose(2, 0, 1)
    return policies, scores


def summarize(policies, scores) -> list[tuple]:
    """Rows (method, configuration, mean, std).

    The PSNR of an image is its mean over seeds; the std is taken over seeds
    of the corpus-mean PSNR.
    """
    rows = []
    for p, s in zip(policies, scores):
        per_seed = s.mean(axis=0)
        rows.append((p.method, p.configuration, float(s.mean()), float(per_seed.std())))
    return rows
