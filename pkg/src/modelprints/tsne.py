"""Exact t-SNE for small embedding sets.

O(n^2) reference implementation: conditional Gaussian affinities with
per-point precision found by bisection to match the target perplexity,
symmetrized joint affinities, Student-t low-dimensional kernel, and
gradient descent with early exaggeration, momentum, and adaptive gains.
Deterministic for a fixed (input, config, seed).
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DataError, UsageError

__all__ = ["TsneConfig", "conditional_affinities", "joint_affinities", "kl_and_grad",
           "tsne", "tsne_export"]

MAX_POINTS_DEFAULT = 5000


def _squared_dists(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def conditional_affinities(points: np.ndarray, perplexity: float,
                           tol: float = 1e-9, max_iter: int = 100) -> np.ndarray:
    """Row-stochastic P(j|i) whose row entropies match log(perplexity)."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    d2 = _squared_dists(x)
    target = np.log(perplexity)
    p = np.zeros((n, n))
    for i in range(n):
        row = np.delete(d2[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(max_iter):
            w = np.exp(-beta * (row - row.min()))
            sw = w.sum()
            h = np.log(sw) + beta * float((w * (row - row.min())).sum()) / sw
            if abs(h - target) < tol:
                break
            if h > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
        w = np.exp(-beta * (row - row.min()))
        w /= w.sum()
        p[i, np.arange(n) != i] = w
    return p


def joint_affinities(points: np.ndarray, perplexity: float) -> np.ndarray:
    pc = conditional_affinities(points, perplexity)
    p = (pc + pc.T) / (2.0 * pc.shape[0])
    return np.maximum(p, 1e-12)


def kl_and_grad(p: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """KL(P || Q) and its exact gradient with respect to the 2-D layout y."""
    num = 1.0 / (1.0 + _squared_dists(y))
    np.fill_diagonal(num, 0.0)
    q = np.maximum(num / num.sum(), 1e-12)
    mask = ~np.eye(p.shape[0], dtype=bool)
    kl = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    pqn = (p - q) * num
    grad = 4.0 * (np.diag(pqn.sum(axis=1)) - pqn) @ y
    return kl, grad


class TsneConfig:
    def __init__(self, perplexity: float = 10.0, iterations: int = 500, seed: int = 0,
                 learning_rate: float = 200.0, early_exaggeration: float = 12.0,
                 exaggeration_iters: int = 100, max_points: int = MAX_POINTS_DEFAULT):
        self.perplexity = perplexity
        self.iterations = iterations
        self.seed = seed
        self.learning_rate = learning_rate
        self.early_exaggeration = early_exaggeration
        self.exaggeration_iters = exaggeration_iters
        self.max_points = max_points


def tsne(points, config: TsneConfig | None = None) -> np.ndarray:
    """Embed (n, d) points into 2-D. Returns (n, 2) coordinates."""
    cfg = config or TsneConfig()
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise DataError("shape-error", f"points must be (n, d), got {x.shape}")
    n = x.shape[0]
    if n > cfg.max_points:
        raise UsageError("too-many-points",
                         f"{n} points exceeds the exact-method bound {cfg.max_points}")
    if n < 4:
        raise DataError("bad-perplexity", f"need at least 4 points, got {n}")
    if not (0.0 < cfg.perplexity < (n - 1) / 3.0):
        raise DataError("bad-perplexity",
                        f"perplexity {cfg.perplexity} infeasible for n={n} (need < (n-1)/3)")
    p = joint_affinities(x, cfg.perplexity)
    rng = np.random.default_rng(cfg.seed)
    y = 1e-4 * rng.standard_normal((n, 2))
    update = np.zeros_like(y)
    gains = np.ones_like(y)
    for it in range(cfg.iterations):
        boost = cfg.early_exaggeration if it < cfg.exaggeration_iters else 1.0
        _, grad = kl_and_grad(np.maximum(p * boost, 1e-12), y)
        momentum = 0.5 if it < cfg.exaggeration_iters else 0.8
        same_sign = np.sign(grad) == np.sign(update)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - cfg.learning_rate * gains * grad
        y = y + update
        y = y - y.mean(axis=0)
    return y


def tsne_export(points, model_ids, image_ids, path: str,
                config: TsneConfig | None = None) -> np.ndarray:
    """Run t-SNE and write per-point rows (x, y, model_id, image_id)."""
    coords = tsne(points, config)
    if not (len(model_ids) == len(image_ids) == coords.shape[0]):
        raise DataError("shape-error", "points, model_ids, image_ids lengths differ")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "model_id", "image_id"])
        for (cx, cy), mid, iid in zip(coords, model_ids, image_ids):
            writer.writerow([f"{cx:.9g}", f"{cy:.9g}", str(mid), str(iid)])
    return coords
