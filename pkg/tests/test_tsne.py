"""Exact t-SNE: affinity calibration, gradient oracle, embedding quality."""

import csv

import numpy as np
import pytest
from sklearn.metrics import silhouette_score

from modelprints.errors import DataError, UsageError
from modelprints.tsne import (
    TsneConfig,
    conditional_affinities,
    joint_affinities,
    kl_and_grad,
    tsne,
    tsne_export,
)


def blobs(n_per=20, d=10, sep=8.0, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n_per, d))
    b = rng.standard_normal((n_per, d))
    b[:, 0] += sep
    x = np.vstack([a, b])
    labels = np.array([0] * n_per + [1] * n_per)
    return x, labels


class TestAffinities:
    def test_rows_hit_target_perplexity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((25, 6))
        target = 8.0
        p = conditional_affinities(x, target)
        for i in range(25):
            row = p[i][p[i] > 0]
            entropy = -(row * np.log(row)).sum()
            assert abs(np.exp(entropy) - target) < 1e-5
        assert np.allclose(p.sum(axis=1), 1.0)
        assert np.all(np.diag(p) == 0.0)

    def test_joint_symmetric_and_normalized(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((15, 4))
        p = joint_affinities(x, 4.0)
        assert np.allclose(p, p.T)
        assert abs(p.sum() - 1.0) < 1e-9


class TestGradient:
    def test_matches_finite_differences_n12(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((12, 5))
        p = joint_affinities(x, 3.0)
        y = rng.standard_normal((12, 2)) * 0.5
        _, grad = kl_and_grad(p, y)
        h = 1e-6
        num = np.zeros_like(y)
        for i in range(12):
            for j in range(2):
                yp = y.copy(); yp[i, j] += h
                ym = y.copy(); ym[i, j] -= h
                num[i, j] = (kl_and_grad(p, yp)[0] - kl_and_grad(p, ym)[0]) / (2 * h)
        denom = max(np.abs(grad).max(), np.abs(num).max())
        assert np.abs(grad - num).max() / denom < 1e-3


class TestEmbedding:
    def test_kl_improves_over_init(self):
        x, _ = blobs(n_per=15, seed=3)
        cfg = TsneConfig(perplexity=5.0, iterations=300, seed=3)
        p = joint_affinities(x, cfg.perplexity)
        rng = np.random.default_rng(cfg.seed)
        y0 = 1e-4 * rng.standard_normal((x.shape[0], 2))
        kl0, _ = kl_and_grad(p, y0)
        y = tsne(x, cfg)
        kl1, _ = kl_and_grad(p, y - y.mean(axis=0))
        assert kl1 < kl0

    def test_blobs_silhouette(self):
        x, labels = blobs(n_per=20, seed=4)
        y = tsne(x, TsneConfig(perplexity=8.0, iterations=400, seed=4))
        assert silhouette_score(y, labels) > 0.5

    def test_deterministic_per_seed(self):
        x, _ = blobs(n_per=10, seed=5)
        cfg = TsneConfig(perplexity=4.0, iterations=120, seed=9)
        a = tsne(x, cfg)
        b = tsne(x, TsneConfig(perplexity=4.0, iterations=120, seed=9))
        assert np.array_equal(a, b)
        c = tsne(x, TsneConfig(perplexity=4.0, iterations=120, seed=10))
        assert not np.array_equal(a, c)

    def test_bad_perplexity(self):
        x, _ = blobs(n_per=6, seed=6)  # n = 12, bound (n-1)/3 ~ 3.67
        with pytest.raises(DataError) as exc:
            tsne(x, TsneConfig(perplexity=4.0))
        assert exc.value.code == "bad-perplexity"
        with pytest.raises(DataError):
            tsne(np.zeros((3, 2)), TsneConfig(perplexity=0.5))

    def test_point_bound(self):
        x = np.zeros((11, 2))
        with pytest.raises(UsageError):
            tsne(x, TsneConfig(perplexity=2.0, max_points=10))

    def test_export_csv(self, tmp_path):
        x, labels = blobs(n_per=8, seed=7)
        path = tmp_path / "tsne.csv"
        coords = tsne_export(x, [f"m{l}" for l in labels],
                             [f"img{i}" for i in range(16)], str(path),
                             TsneConfig(perplexity=4.0, iterations=100, seed=7))
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["x", "y", "model_id", "image_id"]
        assert len(rows) == 17
        assert abs(float(rows[1][0]) - coords[0, 0]) < 1e-6
        assert rows[1][2] == "m0"
