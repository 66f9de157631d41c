"""Ring-of-Gaussians toy data and mode-coverage scoring."""
from __future__ import annotations

import numpy as np


def ring_centers(modes: int = 8, radius: float = 2.0) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(modes) / modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def sample_ring(n: int, rng: np.random.Generator, modes: int = 8, radius: float = 2.0, std: float = 0.02) -> np.ndarray:
    centers = ring_centers(modes, radius)
    which = rng.integers(0, modes, size=n)
    return centers[which] + std * rng.standard_normal((n, 2))


def mode_coverage(samples, centers, std: float, n_sigma: float = 3.0, min_count: int = 1) -> dict:
    """Count mixture components with at least ``min_count`` samples within ``n_sigma * std``.

    Also reports the share of samples that fall near any center.
    """
    samples = np.asarray(samples, dtype=np.float64)
    d = np.linalg.norm(samples[:, None, :] - np.asarray(centers)[None, :, :], axis=2)
    near = d <= n_sigma * std
    counts = near.sum(axis=0)
    return {
        "covered": int((counts >= min_count).sum()),
        "modes": len(centers),
        "counts": counts.tolist(),
        "high_quality_fraction": float(near.any(axis=1).mean()),
    }
