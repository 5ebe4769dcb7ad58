"""Cluster-similarity metrics over feature embeddings.

The central quantity is the intra- to inter-class distance ratio

    R(A, B) = (E||a1 - a2|| + E||b1 - b2||) / (2 E||a - b||)

with intra-class expectations over unordered distinct pairs and the
cross-class expectation over all pairs. When A and B are the same point
multiset the ratio is 1 by definition (comparing a class with itself), and
it approaches 0 as clusters separate.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import DataError

__all__ = ["intra_distance", "cross_distance", "distance_ratio", "distance_ratio_matrix",
           "save_ratio_matrix_csv"]


def _as_points(x) -> np.ndarray:
    pts = np.asarray(x, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise DataError("shape-error", f"points must be (n, d), got {pts.shape}")
    return pts


def intra_distance(points) -> float:
    """Mean Euclidean distance over unordered distinct pairs within a class."""
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 2:
        raise DataError("undefined-intra-distance",
                        f"intra-class distance needs >= 2 points, got {n}")
    diff = pts[:, None, :] - pts[None, :, :]
    dists = np.sqrt((diff * diff).sum(axis=2))
    iu = np.triu_indices(n, k=1)
    return float(dists[iu].mean())


def cross_distance(a, b) -> float:
    """Mean Euclidean distance over all pairs (a, b)."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[1] != pb.shape[1]:
        raise DataError("shape-error", f"dimension mismatch: {pa.shape[1]} vs {pb.shape[1]}")
    diff = pa[:, None, :] - pb[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=2)).mean())


def _same_multiset(a: np.ndarray, b: np.ndarray) -> bool:
    if a.shape != b.shape:
        return False
    order_a = np.lexsort(a.T[::-1])
    order_b = np.lexsort(b.T[::-1])
    return bool(np.array_equal(a[order_a], b[order_b]))


def distance_ratio(a, b) -> float:
    """Intra- to inter-class distance ratio R(A, B).

    Exactly 1.0 when A and B hold the same points; symmetric; invariant
    under rigid motion and uniform positive scaling of all points.
    """
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape[0] < 2:
        raise DataError("undefined-intra-distance", "class A has fewer than 2 points")
    if pb.shape[0] < 2:
        raise DataError("undefined-intra-distance", "class B has fewer than 2 points")
    if _same_multiset(pa, pb):
        return 1.0
    # canonical argument order so R(A,B) == R(B,A) bit-for-bit
    if (pa.shape, pa.tobytes()) > (pb.shape, pb.tobytes()):
        pa, pb = pb, pa
    denom = 2.0 * cross_distance(pa, pb)
    return (intra_distance(pa) + intra_distance(pb)) / denom


def distance_ratio_matrix(groups: dict) -> tuple[list, np.ndarray]:
    """All pairwise R over a {model_id: points} mapping.

    Returns (ordered model ids, symmetric matrix with unit diagonal).
    """
    ids = list(groups)
    pts = {k: _as_points(groups[k]) for k in ids}
    for k in ids:
        if pts[k].shape[0] < 2:
            raise DataError("undefined-intra-distance", f"class {k} has fewer than 2 points")
    n = len(ids)
    mat = np.ones((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            r = distance_ratio(pts[ids[i]], pts[ids[j]])
            mat[i, j] = mat[j, i] = r
    return ids, mat


def save_ratio_matrix_csv(path: str, ids: list, mat: np.ndarray):
    """Heat-map friendly CSV: header row of ids, one labeled row per class."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id"] + [str(k) for k in ids])
        for i, k in enumerate(ids):
            writer.writerow([str(k)] + [f"{v:.9g}" for v in mat[i]])
