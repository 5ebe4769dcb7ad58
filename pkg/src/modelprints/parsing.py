"""Hyperparameter parsers: classifiers that predict one model hyperparameter.

Each parser is trained with one hyperparameter value held out of training
(the "test hyperparameter value") and evaluated on the models carrying that
value, measuring generalization to unseen model families. Nonsensical
combinations (excluding a value of the axis being predicted, or excluding a
seed from the dataset parser, which never sees seeds past the first) are
rejected, mirroring the dash cells of the task grid.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .attribution import (AttributorConfig, MeanStd, _forward_batched,
                          build_attributor_net, load_crop_dataset)
from .errors import DataError, UsageError
from .manifest import Manifest
from .nn import load_checkpoint, save_checkpoint, train_classifier
from .zoo import Zoo

__all__ = [
    "PARSER_AXES",
    "ParserTask",
    "ParserSplit",
    "ParserBundle",
    "ParserReport",
    "make_split",
    "train_parser",
    "evaluate_parser",
    "default_task_grid",
    "save_task_grid",
    "load_task_grid",
    "save_parser",
    "load_parser",
    "format_parser_report",
    "save_parser_csv",
]

PARSER_AXES = ("scale", "loss", "architecture", "dataset")
EXCLUDE_AXES = PARSER_AXES + ("seed",)


@dataclass(frozen=True)
class ParserTask:
    predicted: str
    test_axis: str
    test_value: object

    def __post_init__(self):
        if self.predicted not in PARSER_AXES:
            raise UsageError("usage",
                             f"parsers predict one of {PARSER_AXES}, got {self.predicted!r}")
        if self.test_axis not in EXCLUDE_AXES:
            raise UsageError("usage", f"unknown exclusion axis {self.test_axis!r}")

    def name(self) -> str:
        return f"predict-{self.predicted}-exclude-{self.test_axis}-{self.test_value}"


@dataclass
class ParserSplit:
    task: ParserTask
    train_ids: list
    test_ids: list
    class_set: list
    chance_baseline: float


def _check_sensible(task: ParserTask):
    if task.test_axis == task.predicted:
        raise UsageError(
            "nonsensical-task",
            f"cannot hold out {task.test_axis}={task.test_value} and then "
            f"predict {task.predicted} for those same models")
    if task.predicted == "dataset" and task.test_axis == "seed":
        raise UsageError(
            "nonsensical-task",
            "dataset parsers drop models with seeds past the first (those "
            "seeds only exist for the first dataset), so no held-out-seed "
            "models remain to test on")


def make_split(zoo: Zoo, task: ParserTask) -> ParserSplit:
    """Train = models without the held-out value; test = models with it."""
    _check_sensible(task)
    specs = [m.spec for m in zoo.models]
    if task.predicted == "dataset":
        first_seed = min(s.seed for s in specs)
        specs = [s for s in specs if s.seed == first_seed]
    train = [s for s in specs if s.hyperparameter(task.test_axis) != task.test_value]
    test = [s for s in specs if s.hyperparameter(task.test_axis) == task.test_value]
    if not test:
        raise UsageError("nonsensical-task",
                         f"no models carry {task.test_axis}={task.test_value}")
    if not train:
        raise UsageError("nonsensical-task",
                         f"holding out {task.test_axis}={task.test_value} "
                         "leaves no training models")
    class_set = sorted({s.hyperparameter(task.predicted) for s in specs}, key=str)
    return ParserSplit(task=task,
                       train_ids=sorted(s.model_id for s in train),
                       test_ids=sorted(s.model_id for s in test),
                       class_set=class_set,
                       chance_baseline=1.0 / len(class_set))


@dataclass
class ParserBundle:
    classifiers: list
    seeds: list
    task: ParserTask
    class_set: list
    config: AttributorConfig
    train_image_ids: set
    train_model_ids: list
    curves: list = field(default_factory=list)


def train_parser(manifest: Manifest, zoo: Zoo, split: ParserSplit,
                 cfg: AttributorConfig | None = None, n_seeds: int = 3,
                 seeds=None, log=None) -> ParserBundle:
    """Same protocol as model attribution, labels = hyperparameter values."""
    cfg = cfg or AttributorConfig()
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    value_of = {mid: zoo.model(mid).spec.hyperparameter(split.task.predicted)
                for mid in split.train_ids}
    present = {value_of[mid] for mid in split.train_ids}
    missing = [v for v in split.class_set if v not in present]
    if missing:
        raise DataError("class-absent-in-train",
                        f"no training models with {split.task.predicted}={missing[0]}")
    x, mids, iids = load_crop_dataset(manifest, split.train_ids, "train", cfg, "train")
    index = {v: i for i, v in enumerate(split.class_set)}
    y = np.array([index[value_of[m]] for m in mids], dtype=np.int64)
    classifiers, curves = [], []
    for seed in seeds:
        net = build_attributor_net(len(split.class_set), cfg, seed=seed)
        schedule = replace(cfg.schedule, rng_seed=seed)
        curve = train_classifier(net, x, y, cfg.optimizer, schedule, log=log)
        classifiers.append(net)
        curves.append(curve)
    return ParserBundle(classifiers, seeds, split.task, list(split.class_set),
                        cfg, train_image_ids=set(iids),
                        train_model_ids=list(split.train_ids), curves=curves)


@dataclass
class ParserReport:
    task: ParserTask
    class_set: list
    chance_baseline: float
    accuracy: MeanStd
    per_seed_accuracy: list
    confusion: np.ndarray
    histograms: dict
    test_counts: dict
    out_of_class: list
    n_scored: int


def evaluate_parser(bundle: ParserBundle, manifest: Manifest, zoo: Zoo,
                    model_ids, split: str = "test") -> ParserReport:
    """Accuracy plus per-model prediction histograms.

    Models whose true value is outside the class set contribute histograms
    only; they are excluded from accuracy and confusion.
    """
    cfg = bundle.config
    class_set = bundle.class_set
    index = {v: i for i, v in enumerate(class_set)}
    k = len(class_set)
    histograms: dict[str, np.ndarray] = {}
    test_counts: dict[str, int] = {}
    out_of_class: list[str] = []
    confusion = np.zeros((k, k), dtype=np.int64)
    per_seed_correct = [0] * len(bundle.classifiers)
    n_scored = 0

    for model_id in sorted(model_ids):
        truth = zoo.model(model_id).spec.hyperparameter(bundle.task.predicted)
        x, _, iids = load_crop_dataset(manifest, [model_id], split, cfg, "test")
        leak = bundle.train_image_ids & set(iids)
        if leak:
            raise DataError("split-leak",
                            f"test images seen during training: {sorted(leak)[:5]}")
        hist = np.zeros(k, dtype=np.int64)
        for s, net in enumerate(bundle.classifiers):
            pred = np.argmax(_forward_batched(net, x), axis=1)
            np.add.at(hist, pred, 1)
            if truth in index:
                per_seed_correct[s] += int(np.sum(pred == index[truth]))
                np.add.at(confusion, (np.full(pred.shape, index[truth]), pred), 1)
        histograms[model_id] = hist
        test_counts[model_id] = x.shape[0] * len(bundle.classifiers)
        if truth in index:
            n_scored += x.shape[0]
        else:
            out_of_class.append(model_id)

    if n_scored == 0:
        per_seed_acc = [float("nan")] * len(bundle.classifiers)
        accuracy = MeanStd(float("nan"), float("nan"))
    else:
        per_seed_acc = [c / n_scored for c in per_seed_correct]
        accuracy = MeanStd(float(np.trace(confusion)) / int(confusion.sum()),
                           MeanStd.of(per_seed_acc).std)
    return ParserReport(task=bundle.task, class_set=list(class_set),
                        chance_baseline=1.0 / k, accuracy=accuracy,
                        per_seed_accuracy=per_seed_acc, confusion=confusion,
                        histograms=histograms, test_counts=test_counts,
                        out_of_class=out_of_class, n_scored=n_scored)


# ---------------------------------------------------------------------------
# Task grid
# ---------------------------------------------------------------------------

def default_task_grid(zoo: Zoo) -> list[dict]:
    """Full (predicted x excluded value) grid with dash cells marked.

    Columns: the last seed, the second dataset, two architectures, and the
    adversarial and plain losses, following the reference table's layout.
    """
    grid = zoo.grid
    columns = [("seed", grid.seeds[-1]),
               ("dataset", grid.datasets[1 % len(grid.datasets)]),
               ("architecture", grid.architectures[2 % len(grid.architectures)]),
               ("architecture", grid.architectures[1 % len(grid.architectures)]),
               ("loss", "vgg-adv"),
               ("loss", "l1")]
    cells = []
    for predicted in PARSER_AXES:
        for axis, value in columns:
            task = ParserTask(predicted, axis, value)
            try:
                _check_sensible(task)
                sensible = True
                reason = ""
            except UsageError as exc:
                sensible = False
                reason = exc.message
            cells.append({"predicted": predicted, "test_axis": axis,
                          "test_value": value, "sensible": sensible,
                          "reason": reason})
    return cells


def save_task_grid(cells: list[dict], path: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump({"format": "modelprints-parser-tasks", "version": 1,
                   "cells": cells}, fh, indent=1, sort_keys=True)
    os.replace(tmp, path)


def load_task_grid(path: str) -> list[dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "modelprints-parser-tasks":
        raise DataError("shape-error", f"{path}: not a parser task grid")
    return doc["cells"]


# ---------------------------------------------------------------------------
# Persistence and report output
# ---------------------------------------------------------------------------

def save_parser(bundle: ParserBundle, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "task": {"predicted": bundle.task.predicted,
                 "test_axis": bundle.task.test_axis,
                 "test_value": bundle.task.test_value},
        "class_set": bundle.class_set,
        "seeds": bundle.seeds,
        "train_image_ids": sorted(bundle.train_image_ids),
        "train_model_ids": bundle.train_model_ids,
        "config": {
            "crop": bundle.config.crop,
            "crops_per_image": bundle.config.crops_per_image,
            "test_crops_per_image": bundle.config.test_crops_per_image,
            "channels": list(bundle.config.channels),
            "feature_dim": bundle.config.feature_dim,
            "dtype": bundle.config.dtype,
        },
    }
    tmp = os.path.join(out_dir, "parser.json.tmp")
    with open(tmp, "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
    os.replace(tmp, os.path.join(out_dir, "parser.json"))
    for seed, net in zip(bundle.seeds, bundle.classifiers):
        save_checkpoint(net, os.path.join(out_dir, f"parser_seed{seed}.ckpt"))


def load_parser(out_dir: str) -> ParserBundle:
    meta_path = os.path.join(out_dir, "parser.json")
    if not os.path.exists(meta_path):
        raise DataError("empty-corpus", f"no parser bundle in {out_dir}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    cfg = AttributorConfig(crop=meta["config"]["crop"],
                           crops_per_image=meta["config"]["crops_per_image"],
                           test_crops_per_image=meta["config"]["test_crops_per_image"],
                           channels=tuple(meta["config"]["channels"]),
                           feature_dim=meta["config"]["feature_dim"],
                           dtype=meta["config"]["dtype"])
    task = ParserTask(**meta["task"])
    nets = [load_checkpoint(os.path.join(out_dir, f"parser_seed{seed}.ckpt"),
                            dtype=np.dtype(cfg.dtype))
            for seed in meta["seeds"]]
    return ParserBundle(nets, meta["seeds"], task, meta["class_set"], cfg,
                        train_image_ids=set(meta["train_image_ids"]),
                        train_model_ids=meta["train_model_ids"])


def rounded_histogram_percent(report: ParserReport, model_id: str) -> list[int]:
    hist = report.histograms[model_id]
    total = report.test_counts[model_id]
    return [int(round(100.0 * c / total)) for c in hist]


def format_parser_report(report: ParserReport) -> str:
    lines = [f"parser {report.task.name()}",
             f"classes: {', '.join(str(c) for c in report.class_set)} "
             f"(chance baseline {100.0 * report.chance_baseline:.1f}%)"]
    if np.isfinite(report.accuracy.mean):
        lines.append(f"accuracy: {report.accuracy.fmt()}")
    else:
        lines.append("accuracy: n/a (no in-class test models)")
    lines.append("prediction histograms (% per class, rounded):")
    for model_id in sorted(report.histograms):
        pct = rounded_histogram_percent(report, model_id)
        mark = "  [true value out of class set]" if model_id in report.out_of_class else ""
        lines.append(f"  {model_id}: {pct}{mark}")
    return "\n".join(lines) + "\n"


def save_parser_csv(report: ParserReport, path: str):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id"] + [str(c) for c in report.class_set] +
                        ["count", "note"])
        writer.writerow(["__accuracy__", f"{report.accuracy.mean:.6f}",
                         f"{report.accuracy.std:.6f}",
                         f"chance={report.chance_baseline:.6f}"] +
                        [""] * (len(report.class_set) - 1))
        for model_id in sorted(report.histograms):
            note = "true value out of class set" if model_id in report.out_of_class else ""
            writer.writerow([model_id] +
                            [int(c) for c in report.histograms[model_id]] +
                            [report.test_counts[model_id], note])
