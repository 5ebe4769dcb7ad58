"""Embedding geometry: distance-ratio matrix and a t-SNE map.

Trains a small attributor, pulls penultimate-layer embeddings for the test
crops, and summarizes how tightly each model's crops cluster: the
intra/cross distance ratio R(A, B) is scale- and rotation-invariant, equals
1 when two point sets coincide, and drops toward 0 as clusters separate.
A t-SNE run on the same embeddings gives the matching 2-D picture.
"""

import tempfile

import numpy as np

from modelprints import (AttributorConfig, SourceImage, SplitConfig,
                         TsneConfig, ZooGrid, build_dataset, build_zoo,
                         distance_ratio_matrix, extract_embeddings,
                         train_attributor, tsne)
from modelprints.image import gaussian_blur
from modelprints.nn import OptimizerConfig, TrainSchedule


def make_sources(n=12, size=64, seed0=400):
    out = []
    for i in range(n):
        rng = np.random.default_rng(seed0 + i)
        img = gaussian_blur(rng.uniform(0.0, 1.0, (size, size, 3)), 2.0)
        img = np.clip(0.2 + 0.6 * img, 0.0, 1.0)
        out.append(SourceImage(f"img{i:03d}", f"mem/img{i:03d}.png", img))
    return out


def main():
    grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                   scales=(2, 4), losses=("l1", "vgg-adv"), seeds=(1,))
    zoo = build_zoo(grid, master_seed=31)
    out_dir = tempfile.mkdtemp(prefix="tsne-demo-")
    manifest = build_dataset(make_sources(), zoo, out_dir,
                             SplitConfig(train=6, val=2, test=4),
                             master_seed=31)

    cfg = AttributorConfig(crop=32, crops_per_image=4, test_crops_per_image=4,
                           channels=(12, 24), feature_dim=32,
                           optimizer=OptimizerConfig(learning_rate=0.01),
                           schedule=TrainSchedule(frozen_epochs=1,
                                                  finetune_epochs=20),
                           dtype="float32")
    ids = sorted(m.spec.model_id for m in zoo.models)
    bundle = train_attributor(manifest, ids, cfg, n_seeds=1)
    emb = extract_embeddings(bundle.classifiers[0], manifest, ids,
                             split="test", crop_size=cfg.crop)
    print(f"embeddings: {len(emb)} crops x {emb.dimension} dims, "
          f"{len(ids)} models")

    names, mat = distance_ratio_matrix(emb.by_model())
    print("\ndistance ratio R(A, B), diagonal is intra/self:")
    print("  " + "  ".join(f"{n.split('-', 2)[-1]:>12s}" for n in names))
    for name, row in zip(names, mat):
        cells = "  ".join(f"{v:12.3f}" for v in row)
        print(f"  {name.split('-', 2)[-1]:>12s} {cells}")
    off = mat[~np.eye(len(names), dtype=bool)]
    print(f"off-diagonal mean {off.mean():.3f} "
          f"(smaller = better separated)")

    emb2d = tsne(emb.vectors, TsneConfig(perplexity=4.0, iterations=300,
                                         seed=0))
    print("\nt-sne centroids per model:")
    for mid in ids:
        pts = emb2d[np.array(emb.model_ids) == mid]
        print(f"  {mid}: centroid ({pts[:, 0].mean():7.2f}, "
              f"{pts[:, 1].mean():7.2f}), spread {pts.std():.2f}")


if __name__ == "__main__":
    main()
