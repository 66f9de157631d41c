"""PCA pre-reduction, exact t-SNE, and real-vs-generated overlap plots."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REAL_COLOR = "#2ca02c"
GENERATED_COLOR = "#8e44ad"


@dataclass(frozen=True)
class ProjectionConfig:
    pca_dims: int = 50
    perplexity: float = 30.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    exaggeration_iterations: int = 250
    learning_rate: float = 200.0
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionConfig":
        return cls(**d)


@dataclass
class Projection2D:
    points: np.ndarray
    labels: list = field(default_factory=list)
    kl_history: list = field(default_factory=list)


# -- PCA ---------------------------------------------------------------------


@dataclass
class PCAResult:
    reduced: np.ndarray
    components: np.ndarray
    mean: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.reduced @ self.components + self.mean


def pca(points, out_dims: int) -> PCAResult:
    """Project centered data on its top ``out_dims`` principal axes."""
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("PCA needs at least two points")
    if not 1 <= out_dims <= X.shape[1]:
        raise ValueError(f"out_dims must lie in [1, {X.shape[1]}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(Xc):
        raise ValueError("degenerate input: all points are identical")
    _, s, vt = np.linalg.svd(Xc, full_matrices=out_dims > min(Xc.shape))
    # deterministic sign: largest-magnitude loading of each axis is positive
    signs = np.sign(vt[np.arange(len(vt)), np.argmax(np.abs(vt), axis=1)])
    vt *= signs[:, None]
    var = np.zeros(len(vt))
    var[: len(s)] = s**2 / (X.shape[0] - 1)
    comps = vt[:out_dims]
    total = var.sum()
    return PCAResult(
        reduced=Xc @ comps.T,
        components=comps,
        mean=mean,
        explained_variance=var[:out_dims],
        explained_variance_ratio=var[:out_dims] / total,
    )


# -- t-SNE -------------------------------------------------------------------


def _sqdist(X: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def conditional_affinities(X, perplexity: float, tol: float = 1e-10, max_iter: int = 200):
    """Row-wise Gaussian affinities whose entropy (nats) equals ``log(perplexity)``.

    Returns ``(P, entropies)``; each row's precision is found by bisection.
    """
    D = _sqdist(np.asarray(X, dtype=np.float64))
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    H = np.zeros(n)
    for i in range(n):
        d = np.delete(D[i], i)
        d = d - d.min()
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            w = np.exp(-d * beta)
            s = w.sum()
            p = w / s
            h = np.log(s) + beta * np.dot(d, p)
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = p
        H[i] = h
    return P, H


def joint_affinities(X, perplexity: float) -> np.ndarray:
    P, _ = conditional_affinities(X, perplexity)
    P = (P + P.T) / (2.0 * P.shape[0])
    return P


def tsne(points, config: ProjectionConfig = ProjectionConfig(), labels=None) -> Projection2D:
    """Exact t-SNE to two dimensions, with PCA pre-reduction to ``config.pca_dims``.

    Gradient descent uses momentum 0.5 during early exaggeration and 0.8
    afterwards, with per-coordinate adaptive gains.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise ValueError("t-SNE needs at least four points")
    if not 0 < config.perplexity < (n - 1) / 3.0:
        raise ValueError(f"perplexity {config.perplexity} infeasible for {n} points (must be < {(n - 1) / 3:.2f})")
    if X.shape[1] > config.pca_dims:
        X = pca(X, config.pca_dims).reduced
    P = joint_affinities(X, config.perplexity)
    logP = np.log(np.where(P > 0, P, 1.0))

    rng = np.random.default_rng(config.seed)
    Y = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history = []
    for it in range(config.iterations):
        early = it < config.exaggeration_iterations
        exag = config.early_exaggeration if early else 1.0
        momentum = 0.5 if early else 0.8
        num = 1.0 / (1.0 + _sqdist(Y))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        np.fill_diagonal(Q, 0.0)
        kl_history.append(float(np.sum(P * (logP - np.log(np.where(Q > 0, Q, 1.0))))))
        W = (exag * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - config.learning_rate * gains * grad
        Y = Y + update
        Y = Y - Y.mean(axis=0)
    return Projection2D(points=Y, labels=list(labels) if labels is not None else [], kl_history=kl_history)


# -- overlap metrics -------------------------------------------------------------


def nn1_label_error(points, labels) -> float:
    """Leave-one-out 1-nearest-neighbour label error (0.5 means indistinguishable)."""
    Y = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    D = _sqdist(Y)
    np.fill_diagonal(D, np.inf)
    nearest = np.argmin(D, axis=1)
    return float(np.mean(labels[nearest] != labels))


def trustworthiness(high, low, k: int = 10) -> float:
    """How well the low-dim k-neighbourhoods respect high-dim ranks (1 is perfect)."""
    Xh = np.asarray(high, dtype=np.float64)
    Xl = np.asarray(low, dtype=np.float64)
    n = Xh.shape[0]
    if not 1 <= k < n / 2:
        raise ValueError("k must satisfy 1 <= k < n/2")
    Dh = _sqdist(Xh)
    Dl = _sqdist(Xl)
    np.fill_diagonal(Dh, np.inf)
    np.fill_diagonal(Dl, np.inf)
    order_h = np.argsort(Dh, axis=1, kind="stable")
    ranks = np.empty_like(order_h)
    rows = np.arange(n)[:, None]
    ranks[rows, order_h] = np.arange(1, n + 1)[None, :]
    nn_low = np.argsort(Dl, axis=1, kind="stable")[:, :k]
    r = ranks[rows, nn_low]
    penalty = np.sum(np.maximum(r - k, 0))
    return float(1.0 - 2.0 / (n * k * (2 * n - 3 * k - 1)) * penalty)


# -- rendering -----------------------------------------------------------------


def viewport_transform(points, size: int = 480, margin: int = 20):
    """Affine map from projection space to SVG pixels.

    ``px = margin + (x - xmin) * s`` and ``py = size - margin - (y - ymin) * s``
    with one uniform scale ``s = (size - 2 margin) / max(x range, y range)``.
    Returns ``(pixels, (xmin, ymin, s))``.
    """
    P = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(P) == 0:
        return P.copy(), (0.0, 0.0, 1.0)
    lo = P.min(axis=0)
    span = float((P.max(axis=0) - lo).max())
    s = (size - 2 * margin) / span if span > 0 else 1.0
    px = margin + (P[:, 0] - lo[0]) * s
    py = size - margin - (P[:, 1] - lo[1]) * s
    return np.stack([px, py], axis=1), (float(lo[0]), float(lo[1]), s)


def render_overlap(projection: Projection2D, path, size: int = 480, margin: int = 20, title: str = "") -> Path:
    """Scatter plot as SVG: real points green, generated points purple."""
    pts = np.asarray(projection.points, dtype=np.float64).reshape(-1, 2)
    labels = list(projection.labels) or ["real"] * len(pts)
    pix, _ = viewport_transform(pts, size, margin)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin - 6}" font-family="sans-serif" font-size="12">{title}</text>')
    for wanted, color in (("real", REAL_COLOR), ("generated", GENERATED_COLOR)):
        out.append(f'<g class="{wanted}" fill="{color}" fill-opacity="0.6">')
        for (x, y), lab in zip(pix, labels):
            if lab == wanted:
                out.append(f'<circle cx="{x:.6f}" cy="{y:.6f}" r="2.5"/>')
        out.append("</g>")
    out.append("</svg>")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(out) + "\n")
    return path


def write_points_csv(projection: Projection2D, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = list(projection.labels) or ["real"] * len(projection.points)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "label"])
        for (x, y), lab in zip(np.asarray(projection.points), labels):
            w.writerow([repr(float(x)), repr(float(y)), lab])
    return path
