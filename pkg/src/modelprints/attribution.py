"""Learned model attribution over zoo-generated images.

Classifiers are trained on crops of generated images with the model identity
as the label, repeated across several classifier seeds. Evaluation aggregates
per-model accuracy into per-hyperparameter-value groups, 3-way seed-triplet
accuracy, feature-space distance-ratio matrices, and t-SNE exports.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, UsageError
from .image import CropPolicy, crop, load_png
from .manifest import Manifest
from .metrics import distance_ratio_matrix, save_ratio_matrix_csv
from .nn import (OptimizerConfig, TrainSchedule, batchless_norm, build_network,
                 conv2d, global_avg_pool, linear, load_checkpoint, maxpool,
                 relu, save_checkpoint, softmax_xent_spec, train_classifier)
from .tsne import TsneConfig
from .tsne import tsne_export as _tsne_export_csv
from .zoo import Zoo

__all__ = [
    "AttributorConfig",
    "AttributorBundle",
    "MeanStd",
    "EmbeddingSet",
    "AttributionReport",
    "TripletReport",
    "UnseenReport",
    "build_attributor_net",
    "load_crop_dataset",
    "train_attributor",
    "evaluate_grouped",
    "seed_triplet_eval",
    "extract_embeddings",
    "unseen_model_eval",
    "tsne_export",
    "save_attributor",
    "load_attributor",
    "format_attribution_report",
    "format_triplet_report",
    "save_grouped_csv",
    "save_confusion_csv",
    "save_triplet_csv",
]

GROUP_AXES = ("architecture", "dataset", "scale", "loss", "seed")

_TRAIN_CROP_STRIDE = 1000003
_TEST_CROP_OFFSET = 500009


@dataclass(frozen=True)
class AttributorConfig:
    crop: int = 64
    crops_per_image: int = 2
    test_crops_per_image: int = 4
    channels: tuple = (12, 24, 48)
    feature_dim: int = 128
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    dtype: str = "float64"

    def __post_init__(self):
        if self.crop < 8:
            raise UsageError("usage", f"crop must be >= 8, got {self.crop}")
        if self.crops_per_image < 1 or self.test_crops_per_image < 1:
            raise UsageError("usage", "crops per image must be >= 1")
        if len(self.channels) < 1:
            raise UsageError("usage", "need at least one conv stage")


@dataclass(frozen=True)
class MeanStd:
    mean: float
    std: float

    @staticmethod
    def of(values) -> "MeanStd":
        arr = np.asarray(values, dtype=np.float64)
        return MeanStd(float(arr.mean()), float(arr.std()))

    def fmt(self, scale: float = 100.0) -> str:
        return f"{self.mean * scale:.1f} ±{self.std * scale:.1f}"


class EmbeddingSet:
    """Feature vectors with (model_id, image_id) provenance."""

    def __init__(self, vectors: np.ndarray, model_ids, image_ids,
                 known_models=None):
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise DataError("shape-error", f"embedding array must be 2-D, got {vectors.shape}")
        if not (vectors.shape[0] == len(model_ids) == len(image_ids)):
            raise DataError("shape-error", "embedding provenance lengths differ")
        if known_models is not None:
            unknown = sorted(set(model_ids) - set(known_models))
            if unknown:
                raise DataError("no-such-model", f"unknown model ids {unknown[:3]}")
        self.vectors = vectors
        self.model_ids = list(model_ids)
        self.image_ids = list(image_ids)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return self.vectors.shape[0]

    def by_model(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        order = []
        for mid in self.model_ids:
            if mid not in out:
                out[mid] = None
                order.append(mid)
        for mid in order:
            idx = [i for i, m in enumerate(self.model_ids) if m == mid]
            out[mid] = self.vectors[idx]
        return out


@dataclass
class AttributionReport:
    class_ids: list
    per_seed_accuracy: list
    overall: MeanStd
    grouped: dict
    group_counts: dict
    group_correct: list
    confusion: np.ndarray
    test_counts: dict
    n_test: int


@dataclass
class TripletReport:
    per_triplet: dict
    per_pair: dict
    total: MeanStd
    per_seed_total: list
    excluded: list
    incomplete: list
    test_counts: dict


@dataclass
class UnseenReport:
    embeddings: EmbeddingSet
    model_ids: list
    matrix: np.ndarray
    group_means: dict


# ---------------------------------------------------------------------------
# Networks and datasets
# ---------------------------------------------------------------------------

def build_attributor_net(n_classes: int, cfg: AttributorConfig, seed: int):
    """Conv/norm/relu/pool stages, GAP, then a feature layer and class head."""
    specs = []
    for ch in cfg.channels:
        specs += [conv2d(ch), batchless_norm(), relu(), maxpool()]
    specs += [global_avg_pool(), linear(cfg.feature_dim), relu(),
              linear(n_classes), softmax_xent_spec()]
    dtype = np.dtype(cfg.dtype)
    return build_network(specs, (cfg.crop, cfg.crop, 3), seed=seed, dtype=dtype)


def _crop_stack(img: np.ndarray, cfg: AttributorConfig, base_seed: int,
                n: int, offset: int) -> list[np.ndarray]:
    policy = CropPolicy("random", cfg.crop)
    return [crop(img, policy, rng_seed=base_seed + _TRAIN_CROP_STRIDE * k + offset)
            for k in range(n)]


def load_crop_dataset(manifest: Manifest, model_ids, split: str,
                      cfg: AttributorConfig, purpose: str = "train"):
    """Crops + provenance for one split.

    Crop offsets derive from each row's crop_seed, so the sample set is a
    pure function of (manifest, config) and identical across classifier seeds.
    """
    if purpose not in ("train", "test"):
        raise UsageError("usage", f"unknown dataset purpose {purpose!r}")
    n = cfg.crops_per_image if purpose == "train" else cfg.test_crops_per_image
    offset = 0 if purpose == "train" else _TEST_CROP_OFFSET
    xs, mids, iids = [], [], []
    for model_id in model_ids:
        rows = manifest.rows(model_id=model_id, split=split)
        if not rows:
            raise DataError("empty-class",
                            f"model {model_id} has no {split} images")
        for rec in rows:
            img = load_png(manifest.generated_file(rec))
            for patch in _crop_stack(img, cfg, rec.crop_seed, n, offset):
                xs.append(np.asarray(patch, dtype=np.dtype(cfg.dtype)))
                mids.append(model_id)
                iids.append(rec.image_id)
    x = np.stack(xs)
    return x, mids, iids


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class AttributorBundle:
    classifiers: list
    seeds: list
    class_ids: list
    config: AttributorConfig
    train_image_ids: set
    curves: list = field(default_factory=list)

    def class_index(self, model_id: str) -> int:
        try:
            return self.class_ids.index(model_id)
        except ValueError:
            raise DataError("no-such-model", f"{model_id} not in class set")


def _warm_start_from(net, checkpoint_path: str):
    src = dict(load_checkpoint(checkpoint_path).state_arrays())
    for name, arr in net.state_arrays():
        if name in src and src[name].shape == arr.shape:
            arr[...] = src[name].astype(arr.dtype)


def train_attributor(manifest: Manifest, model_ids, cfg: AttributorConfig | None = None,
                     n_seeds: int = 3, seeds=None, warm_start: str | None = None,
                     log=None) -> AttributorBundle:
    """Train n_seeds classifiers with identical config and differing seeds."""
    cfg = cfg or AttributorConfig()
    class_ids = sorted(model_ids)
    if not class_ids:
        raise UsageError("usage", "empty model subset")
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    x, mids, iids = load_crop_dataset(manifest, class_ids, "train", cfg, "train")
    index = {mid: i for i, mid in enumerate(class_ids)}
    y = np.array([index[m] for m in mids], dtype=np.int64)
    classifiers, curves = [], []
    for seed in seeds:
        net = build_attributor_net(len(class_ids), cfg, seed=seed)
        if warm_start is not None:
            _warm_start_from(net, warm_start)
        schedule = replace(cfg.schedule, rng_seed=seed)
        curve = train_classifier(net, x, y, cfg.optimizer, schedule, log=log)
        classifiers.append(net)
        curves.append(curve)
        if log is not None:
            log(f"seed {seed}: final loss {curve[-1]:.4f}")
    return AttributorBundle(classifiers, seeds, class_ids, cfg,
                            train_image_ids=set(iids), curves=curves)


def save_attributor(bundle: AttributorBundle, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "class_ids": bundle.class_ids,
        "seeds": bundle.seeds,
        "train_image_ids": sorted(bundle.train_image_ids),
        "config": {
            "crop": bundle.config.crop,
            "crops_per_image": bundle.config.crops_per_image,
            "test_crops_per_image": bundle.config.test_crops_per_image,
            "channels": list(bundle.config.channels),
            "feature_dim": bundle.config.feature_dim,
            "dtype": bundle.config.dtype,
        },
    }
    tmp = os.path.join(out_dir, "attributor.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "attributor.json"))
    for seed, net in zip(bundle.seeds, bundle.classifiers):
        save_checkpoint(net, os.path.join(out_dir, f"attributor_seed{seed}.ckpt"))


def load_attributor(out_dir: str) -> AttributorBundle:
    meta_path = os.path.join(out_dir, "attributor.json")
    if not os.path.exists(meta_path):
        raise DataError("empty-corpus", f"no attributor bundle in {out_dir}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    cfg = AttributorConfig(crop=meta["config"]["crop"],
                           crops_per_image=meta["config"]["crops_per_image"],
                           test_crops_per_image=meta["config"]["test_crops_per_image"],
                           channels=tuple(meta["config"]["channels"]),
                           feature_dim=meta["config"]["feature_dim"],
                           dtype=meta["config"]["dtype"])
    nets = [load_checkpoint(os.path.join(out_dir, f"attributor_seed{seed}.ckpt"),
                            dtype=np.dtype(cfg.dtype))
            for seed in meta["seeds"]]
    return AttributorBundle(nets, meta["seeds"], meta["class_ids"], cfg,
                            train_image_ids=set(meta["train_image_ids"]))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def _forward_batched(net, x: np.ndarray, batch: int = 64) -> np.ndarray:
    outs = [net.forward(x[i:i + batch]) for i in range(0, x.shape[0], batch)]
    return np.concatenate(outs, axis=0)


def _check_no_leak(bundle: AttributorBundle, image_ids):
    leak = bundle.train_image_ids & set(image_ids)
    if leak:
        raise DataError("split-leak",
                        f"test images seen during training: {sorted(leak)[:5]}")


def evaluate_grouped(bundle: AttributorBundle, manifest: Manifest, zoo: Zoo,
                     split: str = "test") -> AttributionReport:
    """Per-hyperparameter-value accuracy, mean and stddev across seeds."""
    cfg = bundle.config
    x, mids, iids = load_crop_dataset(manifest, bundle.class_ids, split, cfg, "test")
    _check_no_leak(bundle, iids)
    y = np.array([bundle.class_index(m) for m in mids], dtype=np.int64)
    n_cls = len(bundle.class_ids)
    specs = {mid: zoo.model(mid).spec for mid in bundle.class_ids}

    preds = [np.argmax(_forward_batched(net, x), axis=1)
             for net in bundle.classifiers]
    confusion = np.zeros((n_cls, n_cls), dtype=np.int64)
    per_seed_acc, per_seed_groups = [], []
    counts_by_axis: dict[str, dict] = {ax: {} for ax in GROUP_AXES}
    for ax in GROUP_AXES:
        for mid in bundle.class_ids:
            val = specs[mid].hyperparameter(ax)
            counts_by_axis[ax][val] = counts_by_axis[ax].get(val, 0) + int(np.sum(y == bundle.class_index(mid)))

    for pred in preds:
        correct = pred == y
        per_seed_acc.append(float(correct.mean()))
        np.add.at(confusion, (y, pred), 1)
        groups: dict[str, dict] = {ax: {} for ax in GROUP_AXES}
        for ax in GROUP_AXES:
            for mid in bundle.class_ids:
                val = specs[mid].hyperparameter(ax)
                mask = y == bundle.class_index(mid)
                groups[ax][val] = groups[ax].get(val, 0) + int(np.sum(correct[mask]))
        per_seed_groups.append(groups)

    grouped: dict[str, dict] = {ax: {} for ax in GROUP_AXES}
    for ax in GROUP_AXES:
        for val, count in counts_by_axis[ax].items():
            accs = [g[ax][val] / count for g in per_seed_groups]
            grouped[ax][val] = MeanStd.of(accs)

    total = int(confusion.sum())
    overall = MeanStd(float(np.trace(confusion)) / total,
                      MeanStd.of(per_seed_acc).std)
    # prediction counts across seeds, so confusion row sums match exactly
    test_counts = {mid: int(np.sum(y == bundle.class_index(mid))) * len(preds)
                   for mid in bundle.class_ids}
    return AttributionReport(
        class_ids=list(bundle.class_ids),
        per_seed_accuracy=per_seed_acc,
        overall=overall,
        grouped=grouped,
        group_counts=counts_by_axis,
        group_correct=[g for g in per_seed_groups],
        confusion=confusion,
        test_counts=test_counts,
        n_test=x.shape[0],
    )


def _triplet_name(key) -> str:
    arch, dataset, scale, loss = key[0], key[1], key[2], key[3]
    return f"{arch}-{dataset}-{scale}x-{loss}"


def seed_triplet_eval(bundle: AttributorBundle, manifest: Manifest, zoo: Zoo,
                      split: str = "test", exclude=()) -> TripletReport:
    """3-way accuracy restricted to each seed triplet's class columns."""
    cfg = bundle.config
    exclude = list(exclude)
    class_set = set(bundle.class_ids)
    per_triplet: dict[str, MeanStd] = {}
    incomplete: list[str] = []
    test_counts: dict[str, int] = {}
    pair_correct: dict[tuple, list] = {}
    pair_count: dict[tuple, int] = {}
    total_correct = None
    total_count = 0

    for key, specs in zoo.seed_triplets().items():
        name = _triplet_name(key)
        if name in exclude:
            continue
        member_ids = [s.model_id for s in specs if s.model_id in class_set]
        if len(specs) < 3 or len(member_ids) < 3:
            incomplete.append(name)
            continue
        try:
            x, mids, iids = load_crop_dataset(manifest, member_ids, split, cfg, "test")
        except DataError as exc:
            if exc.code == "empty-class":
                incomplete.append(name)
                continue
            raise
        _check_no_leak(bundle, iids)
        cols = np.array([bundle.class_index(m) for m in member_ids])
        y_local = np.array([member_ids.index(m) for m in mids], dtype=np.int64)
        corrects = []
        for net in bundle.classifiers:
            logits = _forward_batched(net, x)[:, cols]
            pred = np.argmax(logits, axis=1)
            corrects.append(int(np.sum(pred == y_local)))
        n = x.shape[0]
        per_triplet[name] = MeanStd.of([c / n for c in corrects])
        test_counts[name] = n
        pair = (key[3], key[2])  # (loss, scale)
        pair_correct.setdefault(pair, [0] * len(bundle.classifiers))
        pair_count[pair] = pair_count.get(pair, 0) + n
        for i, c in enumerate(corrects):
            pair_correct[pair][i] += c
        if total_correct is None:
            total_correct = [0] * len(bundle.classifiers)
        for i, c in enumerate(corrects):
            total_correct[i] += c
        total_count += n

    if total_correct is None:
        raise DataError("incomplete-triplet", "no complete seed triplets to evaluate")
    per_pair = {pair: MeanStd.of([c / pair_count[pair] for c in cs])
                for pair, cs in pair_correct.items()}
    per_seed_total = [c / total_count for c in total_correct]
    return TripletReport(
        per_triplet=per_triplet,
        per_pair=per_pair,
        total=MeanStd.of(per_seed_total),
        per_seed_total=per_seed_total,
        excluded=exclude,
        incomplete=incomplete,
        test_counts=test_counts,
    )


# ---------------------------------------------------------------------------
# Embeddings, distance ratios, t-SNE
# ---------------------------------------------------------------------------

def extract_embeddings(net, manifest: Manifest, model_ids, split: str = "test",
                       crop_size: int | None = None, known_models=None) -> EmbeddingSet:
    """Features at the network's tap for one deterministic center crop."""
    size = crop_size if crop_size is not None else net.input_shape[0]
    policy = CropPolicy("center", size)
    vecs, mids, iids = [], [], []
    for model_id in sorted(model_ids):
        rows = manifest.rows(model_id=model_id, split=split)
        if not rows:
            raise DataError("empty-class", f"model {model_id} has no {split} images")
        batch = np.stack([np.asarray(crop(load_png(manifest.generated_file(r)), policy),
                                     dtype=net.dtype) for r in rows])
        feats = net.extract_features(batch)
        vecs.append(feats.reshape(feats.shape[0], -1))
        mids += [model_id] * len(rows)
        iids += [r.image_id for r in rows]
    return EmbeddingSet(np.concatenate(vecs, axis=0), mids, iids,
                        known_models=known_models)


def embedding_ratio_matrix(emb: EmbeddingSet):
    ids, mat = distance_ratio_matrix(emb.by_model())
    return ids, mat


def unseen_model_eval(bundle: AttributorBundle, manifest: Manifest, zoo: Zoo,
                      unseen_ids, split: str = "test") -> UnseenReport:
    """Distance-ratio analysis of models the classifier never saw."""
    unseen_ids = sorted(unseen_ids)
    overlap = sorted(set(unseen_ids) & set(bundle.class_ids))
    if overlap:
        raise DataError("not-unseen",
                        f"models present in the training subset: {overlap[:3]}")
    net = bundle.classifiers[0]
    emb = extract_embeddings(net, manifest, unseen_ids, split=split,
                             known_models=[m.spec.model_id for m in zoo.models])
    ids, mat = embedding_ratio_matrix(emb)
    group_means: dict[tuple, float] = {}
    specs = {mid: zoo.model(mid).spec for mid in ids}
    for ax in ("loss", "scale"):
        values = sorted({specs[m].hyperparameter(ax) for m in ids}, key=str)
        for val in values:
            members = [i for i, m in enumerate(ids)
                       if specs[m].hyperparameter(ax) == val]
            if len(members) < 2:
                continue
            pairs = [mat[i, j] for a, i in enumerate(members)
                     for j in members[a + 1:]]
            group_means[(ax, val)] = float(np.mean(pairs))
    return UnseenReport(embeddings=emb, model_ids=ids, matrix=mat,
                        group_means=group_means)


def tsne_export(emb: EmbeddingSet, path: str,
                config: TsneConfig | None = None) -> np.ndarray:
    return _tsne_export_csv(emb.vectors, emb.model_ids, emb.image_ids, path,
                            config=config)


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------

def format_attribution_report(report: AttributionReport) -> str:
    lines = [f"overall accuracy: {report.overall.fmt()} "
             f"({report.n_test} test crops, {len(report.class_ids)} classes)"]
    for ax in GROUP_AXES:
        lines.append(f"grouped by {ax}:")
        for val in sorted(report.grouped[ax], key=str):
            ms = report.grouped[ax][val]
            count = report.group_counts[ax][val]
            lines.append(f"  {ax}={val}: {ms.fmt()} (n={count})")
    return "\n".join(lines) + "\n"


def format_triplet_report(report: TripletReport) -> str:
    lines = [f"seed-triplet accuracy (3-way): {report.total.fmt()}"]
    for pair in sorted(report.per_pair, key=str):
        loss, scale = pair
        lines.append(f"  {loss} {scale}x: {report.per_pair[pair].fmt()}")
    for name in sorted(report.per_triplet):
        lines.append(f"  triplet {name}: {report.per_triplet[name].fmt()} "
                     f"(n={report.test_counts[name]})")
    if report.excluded:
        lines.append("excluded triplets: " + ", ".join(report.excluded))
    if report.incomplete:
        lines.append("incomplete triplets (skipped): " + ", ".join(report.incomplete))
    return "\n".join(lines) + "\n"


def save_grouped_csv(report: AttributionReport, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "mean_accuracy", "std", "count"])
        writer.writerow(["overall", "", f"{report.overall.mean:.6f}",
                         f"{report.overall.std:.6f}", report.n_test])
        for ax in GROUP_AXES:
            for val in sorted(report.grouped[ax], key=str):
                ms = report.grouped[ax][val]
                writer.writerow([ax, val, f"{ms.mean:.6f}", f"{ms.std:.6f}",
                                 report.group_counts[ax][val]])


def save_confusion_csv(report: AttributionReport, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\pred"] + report.class_ids)
        for mid, row in zip(report.class_ids, report.confusion):
            writer.writerow([mid] + [int(v) for v in row])


def save_triplet_csv(report: TripletReport, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["triplet", "mean_accuracy", "std", "count", "note"])
        writer.writerow(["total", f"{report.total.mean:.6f}",
                         f"{report.total.std:.6f}",
                         sum(report.test_counts.values()), ""])
        for name in sorted(report.per_triplet):
            ms = report.per_triplet[name]
            writer.writerow([name, f"{ms.mean:.6f}", f"{ms.std:.6f}",
                             report.test_counts[name], ""])
        for name in report.excluded:
            writer.writerow([name, "", "", "", "excluded"])
        for name in report.incomplete:
            writer.writerow([name, "", "", "", "incomplete"])
