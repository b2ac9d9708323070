"""Built-in synthetic test images: ramps, step edges and Gaussian blobs in [0, 1]."""

from __future__ import annotations

import numpy as np

from . import philox

DEFAULT_SIZE = 32


def _grid(size: int):
    y, x = np.mgrid[0:size, 0:size]
    return (y + 0.5) / size, (x + 0.5) / size


def ramp(size: int = DEFAULT_SIZE, angle_deg: float = 0.0, lo: float = 0.02, hi: float = 1.0):
    y, x = _grid(size)
    a = np.deg2rad(angle_deg)
    t = x * np.cos(a) + y * np.sin(a)
    t = (t - t.min()) / (t.max() - t.min())
    return lo + (hi - lo) * t


def step_edge(size: int = DEFAULT_SIZE, levels=(0.1, 0.8), position: float = 0.5, vertical: bool = True):
    y, x = _grid(size)
    coord = x if vertical else y
    return np.where(coord < position, levels[0], levels[1]).astype(float)


def gaussian_blobs(size: int = DEFAULT_SIZE, n_blobs: int = 4, seed: int = 0, background: float = 0.05):
    """Sum of isotropic blobs with counter-keyed centres, widths and heights."""
    y, x = _grid(size)
    u = philox.uniforms(seed, np.arange(4 * n_blobs, dtype=np.uint64), np.uint64(0), philox.STREAM_CORPUS)
    u = u.reshape(n_blobs, 4)
    img = np.full((size, size), background)
    for cy, cx, sw, amp in u:
        sigma = 0.06 + 0.14 * sw
        img += (0.3 + 0.7 * amp) * np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * sigma**2))
    return np.clip(img, 0.0, 1.0)


def default_corpus(size: int = DEFAULT_SIZE) -> dict[str, np.ndarray]:
    """Named images covering smooth gradients, sharp edges and local peaks."""
    return {
        "ramp_h": ramp(size, 0.0),
        "ramp_diag": ramp(size, 45.0),
        "edge_v": step_edge(size, (0.1, 0.8), 0.5, True),
        "edge_h": step_edge(size, (0.6, 0.05), 0.375, False),
        "blobs_a": gaussian_blobs(size, 4, seed=1),
        "blobs_b": gaussian_blobs(size, 6, seed=2),
    }
