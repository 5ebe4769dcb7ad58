"""Dataset construction and experiment orchestration."""

from __future__ import annotations

import csv
import json
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .attribution import (AttributorConfig, evaluate_grouped,
                          format_attribution_report, format_triplet_report,
                          save_attributor, save_confusion_csv,
                          save_grouped_csv, save_triplet_csv,
                          seed_triplet_eval, train_attributor,
                          unseen_model_eval)
from .errors import DataError, UsageError
from .image import corpus_stats, degrade, load_png, save_png
from .manifest import (Manifest, ManifestRecord, SourceImage, SplitConfig,
                       assign_splits, crop_seed_for, ingest_corpus,
                       load_manifest, save_manifest)
from .metrics import save_ratio_matrix_csv
from .nn import OptimizerConfig, TrainSchedule
from .parsing import (ParserTask, default_task_grid, evaluate_parser,
                      make_split, save_parser, save_parser_csv,
                      save_task_grid, train_parser)
from .prnu import (FingerprintDb, PrnuConfig, attribute_nearest,
                   build_fingerprint, prnu_seed_eval, residual,
                   save_fingerprint_db)
from .tsne import TsneConfig
from .zoo import Zoo, ZooGrid, build_zoo

__all__ = [
    "dataset_cardinality",
    "estimate_disk_budget",
    "build_dataset",
    "ExperimentConfig",
    "EXPERIMENTS",
    "experiment_config_to_dict",
    "experiment_config_from_dict",
    "save_experiment_config",
    "load_experiment_config",
    "require_artifact",
    "grouped_orderings",
    "run_experiment",
]


def dataset_cardinality(n_sources: int, n_models: int) -> int:
    """Expected number of manifest rows for a full build."""
    return n_sources * n_models


def estimate_disk_budget(sources: list[SourceImage], zoo: Zoo) -> dict:
    """Rough bytes-on-disk estimate before generation starts.

    PNG output for photographic content lands near 3 bytes/pixel; generated
    images keep the source pixel count (degrade then upsample by the same
    scale, up to rounding).
    """
    per_image = [img.image.shape[0] * img.image.shape[1] * 3 for img in sources]
    total_px_bytes = int(np.sum(per_image)) * len(zoo.models)
    return {
        "n_sources": len(sources),
        "n_models": len(zoo.models),
        "n_images": dataset_cardinality(len(sources), len(zoo.models)),
        "estimated_bytes": total_px_bytes,
        "estimated_mb": round(total_px_bytes / 1e6, 1),
    }


def build_dataset(sources: list[SourceImage], zoo: Zoo, out_dir: str,
                  split_config: SplitConfig | None = None,
                  master_seed: int = 0, log=None, jobs: int = 1) -> Manifest:
    """Run every zoo model over every source and write the manifest.

    Resumable: an existing generated PNG is kept as-is, so interrupting and
    restarting produces a manifest byte-identical to a clean run. Generation
    failures become status=failed rows and the build continues. jobs > 1
    generates a model's images on worker threads; rows are still appended in
    canonical order, so manifest bytes do not depend on jobs.
    """
    cfg = split_config if split_config is not None else SplitConfig()
    if not sources:
        raise DataError("empty-corpus", "no source images to build from")
    splits = assign_splits([s.image_id for s in sources], master_seed, cfg)
    budget = estimate_disk_budget(sources, zoo)
    if log is not None:
        log(f"disk budget: {budget['n_images']} images, "
            f"~{budget['estimated_mb']} MB")

    manifest = Manifest(master_seed, cfg, root=out_dir)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    ordered = sorted(sources, key=lambda s: s.image_id)
    n_failed = 0
    for model in sorted(zoo.models, key=lambda m: m.spec.model_id):
        model_id = model.spec.model_id
        model_dir = os.path.join(out_dir, "generated", model_id)
        os.makedirs(model_dir, exist_ok=True)

        def _generate(src, _model=model):
            try:
                low = degrade(src.image, _model.spec.scale)
                high = _model.generate(low)
                save_png(high, os.path.join(
                    out_dir, "generated", _model.spec.model_id,
                    src.image_id + ".png"))
                return src.image_id, None
            except Exception as exc:
                return src.image_id, str(exc)

        todo = [s for s in ordered
                if not os.path.exists(os.path.join(model_dir, s.image_id + ".png"))]
        if jobs > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_generate, todo))
        else:
            outcomes = [_generate(s) for s in todo]
        failures = {iid: err for iid, err in outcomes if err is not None}

        for src in ordered:
            rec = ManifestRecord(
                image_id=src.image_id,
                model_id=model_id,
                source_path=src.path,
                generated_path=os.path.join("generated", model_id,
                                            src.image_id + ".png"),
                split=splits[src.image_id],
                crop_seed=crop_seed_for(src.image_id, model_id, master_seed),
            )
            if src.image_id in failures:
                rec.status = "failed"
                rec.error = failures[src.image_id]
                rec.generated_path = ""
                n_failed += 1
            manifest.add(rec)
        save_manifest(manifest, manifest_path)
    if log is not None:
        log(f"built {len(manifest)} rows, {n_failed} failed")
    return manifest


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a full run needs, in one serializable object.

    All artifact locations hang off out_dir so that one config file names
    the whole experiment tree.
    """

    corpus_dir: str
    out_dir: str
    grid: ZooGrid = field(default_factory=ZooGrid)
    attributor: AttributorConfig = field(default_factory=AttributorConfig)
    prnu: PrnuConfig = field(default_factory=PrnuConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    master_seed: int = 0
    n_seeds: int = 3
    max_dim: int = 960

    @property
    def sources_dir(self) -> str:
        return os.path.join(self.out_dir, "sources")

    @property
    def dataset_dir(self) -> str:
        return os.path.join(self.out_dir, "dataset")

    @property
    def manifest_path(self) -> str:
        return os.path.join(self.dataset_dir, "manifest.jsonl")

    @property
    def zoo_listing_path(self) -> str:
        return os.path.join(self.out_dir, "zoo.json")

    @property
    def attributor_dir(self) -> str:
        return os.path.join(self.out_dir, "attributor")

    @property
    def fingerprint_path(self) -> str:
        return os.path.join(self.out_dir, "prnu", "fingerprints.fpdb")

    def parser_dir(self, task_name: str) -> str:
        return os.path.join(self.out_dir, "parsers", task_name)

    @property
    def reports_dir(self) -> str:
        return os.path.join(self.out_dir, "reports")

    @property
    def runs_dir(self) -> str:
        return os.path.join(self.out_dir, "runs")


_CONFIG_KEYS = frozenset(("corpus_dir", "out_dir", "grid", "attributor",
                          "prnu", "split", "tsne", "master_seed", "n_seeds",
                          "max_dim"))


def experiment_config_to_dict(cfg: ExperimentConfig) -> dict:
    grid = asdict(cfg.grid)
    for key in ("architectures", "datasets", "scales", "losses", "seeds"):
        grid[key] = list(grid[key])
    att = asdict(cfg.attributor)
    att["channels"] = list(att["channels"])
    return {
        "corpus_dir": cfg.corpus_dir,
        "out_dir": cfg.out_dir,
        "grid": grid,
        "attributor": att,
        "prnu": asdict(cfg.prnu),
        "split": asdict(cfg.split),
        "tsne": dict(vars(cfg.tsne)),
        "master_seed": cfg.master_seed,
        "n_seeds": cfg.n_seeds,
        "max_dim": cfg.max_dim,
    }


def experiment_config_from_dict(doc: dict) -> ExperimentConfig:
    unknown = sorted(set(doc) - _CONFIG_KEYS)
    if unknown:
        raise UsageError("bad-config",
                         f"unknown config keys: {', '.join(unknown)}")
    for key in ("corpus_dir", "out_dir"):
        if key not in doc:
            raise UsageError("bad-config", f"config needs {key!r}")
    kwargs: dict = {"corpus_dir": doc["corpus_dir"], "out_dir": doc["out_dir"]}
    try:
        if "grid" in doc:
            g = dict(doc["grid"])
            for key in ("architectures", "datasets", "losses"):
                if key in g:
                    g[key] = tuple(g[key])
            for key in ("scales", "seeds"):
                if key in g:
                    g[key] = tuple(int(v) for v in g[key])
            kwargs["grid"] = ZooGrid(**g)
        if "attributor" in doc:
            a = dict(doc["attributor"])
            if "optimizer" in a:
                a["optimizer"] = OptimizerConfig(**a["optimizer"])
            if "schedule" in a:
                a["schedule"] = TrainSchedule(**a["schedule"])
            if "channels" in a:
                a["channels"] = tuple(int(c) for c in a["channels"])
            kwargs["attributor"] = AttributorConfig(**a)
        if "prnu" in doc:
            kwargs["prnu"] = PrnuConfig(**doc["prnu"])
        if "split" in doc:
            kwargs["split"] = SplitConfig(**doc["split"])
        if "tsne" in doc:
            kwargs["tsne"] = TsneConfig(**doc["tsne"])
        for key in ("master_seed", "n_seeds", "max_dim"):
            if key in doc:
                kwargs[key] = int(doc[key])
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise UsageError("bad-config", str(exc))


def save_experiment_config(cfg: ExperimentConfig, path: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(experiment_config_to_dict(cfg), fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_experiment_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise UsageError("bad-config", f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError("bad-config", f"{path}: {exc}")
    if not isinstance(doc, dict):
        raise UsageError("bad-config", f"{path}: expected a JSON object")
    return experiment_config_from_dict(doc)


def require_artifact(path: str, produce_cmd: str):
    """Fatal, with the exact command that would create the artifact."""
    if not os.path.exists(path):
        raise DataError("missing-artifact",
                        f"{path} not found; produce it with: {produce_cmd}")


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

EXPERIMENTS = ("attribution", "seed-triplet", "unseen", "parsing", "prnu",
               "stats")


def _write_text(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _rel_reports(cfg: ExperimentConfig, paths: dict) -> dict:
    return {k: os.path.relpath(p, cfg.out_dir) for k, p in paths.items()}


def _load_built(cfg: ExperimentConfig, config_path: str):
    require_artifact(cfg.manifest_path,
                     f"modelprints dataset-build --config {config_path}")
    manifest = load_manifest(cfg.manifest_path)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    return manifest, zoo


def _model_images(manifest: Manifest, model_ids) -> dict:
    """model_id -> (train images, test images), decoded."""
    out = {}
    for mid in model_ids:
        train = [load_png(manifest.generated_file(r))
                 for r in manifest.rows(model_id=mid, split="train")]
        test = [load_png(manifest.generated_file(r))
                for r in manifest.rows(model_id=mid, split="test")]
        out[mid] = (train, test)
    return out


def grouped_orderings(report) -> list[dict]:
    """Qualitative ordering checks: adv >= plain loss, 4x >= 2x.

    Evaluated on the cross-seed mean and on every classifier seed
    separately (group_correct holds per-seed correct counts).
    """
    checks = []
    losses = report.grouped.get("loss", {})
    for adv in ("vgg-adv", "resnet-adv"):
        if adv in losses and "l1" in losses:
            checks.append(("loss", adv, "l1"))
    scales = report.grouped.get("scale", {})
    if 4 in scales and 2 in scales:
        checks.append(("scale", 4, 2))
    out = []
    for ax, hi, lo in checks:
        per_seed = []
        for g in report.group_correct:
            a = g[ax][hi] / report.group_counts[ax][hi]
            b = g[ax][lo] / report.group_counts[ax][lo]
            per_seed.append(bool(a >= b))
        out.append({
            "axis": ax,
            "upper": hi,
            "lower": lo,
            "upper_mean": float(report.grouped[ax][hi].mean),
            "lower_mean": float(report.grouped[ax][lo].mean),
            "holds_mean": bool(report.grouped[ax][hi].mean
                               >= report.grouped[ax][lo].mean),
            "holds_per_seed": per_seed,
        })
    return out


def _run_attribution(cfg: ExperimentConfig, log, config_path: str) -> dict:
    manifest, zoo = _load_built(cfg, config_path)
    ids = sorted(m.spec.model_id for m in zoo.models)
    bundle = train_attributor(manifest, ids, cfg.attributor,
                              n_seeds=cfg.n_seeds, log=log)
    save_attributor(bundle, cfg.attributor_dir)
    report = evaluate_grouped(bundle, manifest, zoo)
    orderings = grouped_orderings(report)
    lines = [format_attribution_report(report).rstrip("\n")]
    for chk in orderings:
        verdict = "holds" if chk["holds_mean"] else "violated"
        lines.append(f"ordering {chk['axis']} {chk['upper']} >= {chk['lower']}: "
                     f"{verdict} ({chk['upper_mean']:.3f} vs {chk['lower_mean']:.3f})")
    paths = {
        "text": os.path.join(cfg.reports_dir, "attribution.txt"),
        "grouped": os.path.join(cfg.reports_dir, "attribution_grouped.csv"),
        "confusion": os.path.join(cfg.reports_dir, "attribution_confusion.csv"),
    }
    _write_text(paths["text"], "\n".join(lines) + "\n")
    save_grouped_csv(report, paths["grouped"])
    save_confusion_csv(report, paths["confusion"])
    summary = {
        "overall_accuracy": float(report.overall.mean),
        "per_seed_accuracy": [float(a) for a in report.per_seed_accuracy],
        "n_classes": len(report.class_ids),
        "chance": 1.0 / len(report.class_ids),
        "orderings": orderings,
    }
    return {"report": report, "bundle": bundle,
            "reports": _rel_reports(cfg, paths), "summary": summary}


def _run_seed_triplet(cfg: ExperimentConfig, log, config_path: str) -> dict:
    manifest, zoo = _load_built(cfg, config_path)
    ids = sorted(m.spec.model_id for m in zoo.models)
    bundle = train_attributor(manifest, ids, cfg.attributor,
                              n_seeds=cfg.n_seeds, log=log)
    learned = seed_triplet_eval(bundle, manifest, zoo)
    images = _model_images(manifest, ids)
    baseline = prnu_seed_eval(zoo.specs(), images, cfg.prnu)

    lines = [format_triplet_report(learned).rstrip("\n"),
             f"prnu baseline (3-way): {baseline.total:.3f}"]
    for pair in sorted(baseline.per_group, key=str):
        loss, scale = pair
        lines.append(f"  {loss} {scale}x: {baseline.per_group[pair]:.3f}")
    better = learned.total.mean > baseline.total
    lines.append("ordering learned > prnu: "
                 f"{'holds' if better else 'violated'} "
                 f"({learned.total.mean:.3f} vs {baseline.total:.3f})")
    paths = {
        "text": os.path.join(cfg.reports_dir, "seed_triplet.txt"),
        "learned": os.path.join(cfg.reports_dir, "seed_triplet.csv"),
        "prnu": os.path.join(cfg.reports_dir, "seed_triplet_prnu.csv"),
    }
    _write_text(paths["text"], "\n".join(lines) + "\n")
    save_triplet_csv(learned, paths["learned"])
    with open(paths["prnu"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["triplet", "accuracy"])
        writer.writerow(["total", f"{baseline.total:.6f}"])
        for name in sorted(baseline.per_triplet):
            writer.writerow([name, f"{baseline.per_triplet[name]:.6f}"])
    summary = {
        "learned_triplet_accuracy": float(learned.total.mean),
        "prnu_triplet_accuracy": float(baseline.total),
        "learned_beats_prnu": bool(better),
    }
    return {"learned": learned, "prnu": baseline, "bundle": bundle,
            "reports": _rel_reports(cfg, paths), "summary": summary}


def _run_unseen(cfg: ExperimentConfig, log, config_path: str) -> dict:
    manifest, zoo = _load_built(cfg, config_path)
    if len(cfg.grid.seeds) < 2:
        raise UsageError("usage",
                         "unseen experiment needs a zoo grid with >= 2 seeds")
    held = cfg.grid.seeds[-1]
    unseen_ids = sorted(m.spec.model_id for m in zoo.models
                        if m.spec.seed == held)
    seen_ids = sorted(m.spec.model_id for m in zoo.models
                      if m.spec.seed != held)
    if not unseen_ids or not seen_ids:
        raise UsageError("usage",
                         f"holding out seed {held} leaves an empty side")
    bundle = train_attributor(manifest, seen_ids, cfg.attributor,
                              n_seeds=cfg.n_seeds, log=log)
    report = unseen_model_eval(bundle, manifest, zoo, unseen_ids)

    lines = [f"unseen models (seed {held} held out): {len(unseen_ids)}",
             f"embedding dimension: {report.embeddings.dimension}"]
    for (ax, val) in sorted(report.group_means, key=str):
        lines.append(f"  mean ratio within {ax}={val}: "
                     f"{report.group_means[(ax, val)]:.4f}")
    paths = {
        "text": os.path.join(cfg.reports_dir, "unseen.txt"),
        "ratio": os.path.join(cfg.reports_dir, "unseen_ratio.csv"),
    }
    _write_text(paths["text"], "\n".join(lines) + "\n")
    save_ratio_matrix_csv(paths["ratio"], report.model_ids, report.matrix)
    summary = {
        "held_out_seed": int(held),
        "n_unseen": len(unseen_ids),
        "group_means": {f"{ax}={val}": float(v)
                        for (ax, val), v in report.group_means.items()},
    }
    return {"report": report, "bundle": bundle,
            "reports": _rel_reports(cfg, paths), "summary": summary}


def _format_parsing_grid(results: list[dict]) -> str:
    columns: list[tuple] = []
    for res in results:
        col = (res["test_axis"], res["test_value"])
        if col not in columns:
            columns.append(col)
    by_cell = {(r["predicted"], (r["test_axis"], r["test_value"])): r
               for r in results}
    rows = []
    for predicted in dict.fromkeys(r["predicted"] for r in results):
        cells = [predicted]
        chance = ""
        for col in columns:
            res = by_cell[(predicted, col)]
            if res["status"] == "dash":
                cells.append("-")
            elif res["status"] == "skipped":
                cells.append("n/a")
            elif res["accuracy"] is None:
                cells.append("out-of-class")
            else:
                cells.append(f"{100 * res['accuracy']:.1f} "
                             f"±{100 * res['std']:.1f}")
                chance = f"{100 * res['chance']:.1f}"
        cells.append(chance)
        rows.append(cells)
    header = ["predicted"] + [f"{a}={v}" for a, v in columns] + ["chance"]
    widths = [max(len(str(row[i])) for row in [header] + rows)
              for i in range(len(header))]
    out = []
    for row in [header] + rows:
        out.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(out) + "\n"


def _run_parsing(cfg: ExperimentConfig, log, config_path: str) -> dict:
    manifest, zoo = _load_built(cfg, config_path)
    cells = default_task_grid(zoo)
    grid_path = os.path.join(cfg.reports_dir, "parser_tasks.json")
    save_task_grid(cells, grid_path)
    paths = {"tasks": grid_path}
    results = []
    done: dict[str, dict] = {}
    for cell in cells:
        entry = {k: cell[k] for k in ("predicted", "test_axis", "test_value")}
        if not cell["sensible"]:
            entry["status"] = "dash"
            entry["reason"] = cell["reason"]
            results.append(entry)
            continue
        task = ParserTask(cell["predicted"], cell["test_axis"],
                          cell["test_value"])
        name = task.name()
        if name in done:
            results.append(dict(done[name]))
            continue
        try:
            split = make_split(zoo, task)
        except UsageError as exc:
            entry["status"] = "skipped"
            entry["reason"] = exc.message
            done[name] = entry
            results.append(dict(entry))
            continue
        if log is not None:
            log(f"parser {name}: {len(split.train_ids)} train models, "
                f"{len(split.test_ids)} test models")
        bundle = train_parser(manifest, zoo, split, cfg.attributor,
                              n_seeds=cfg.n_seeds, log=log)
        save_parser(bundle, cfg.parser_dir(name))
        report = evaluate_parser(bundle, manifest, zoo, split.test_ids)
        csv_path = os.path.join(cfg.reports_dir, f"parser_{name}.csv")
        save_parser_csv(report, csv_path)
        paths[name] = csv_path
        entry["status"] = "ok"
        nan = math.isnan(report.accuracy.mean)
        entry["accuracy"] = None if nan else float(report.accuracy.mean)
        entry["std"] = None if nan else float(report.accuracy.std)
        entry["chance"] = float(report.chance_baseline)
        done[name] = entry
        results.append(dict(entry))
    table = _format_parsing_grid(results)
    paths["table"] = os.path.join(cfg.reports_dir, "parsing.txt")
    _write_text(paths["table"], table)
    summary = {"cells": results,
               "n_trained": sum(1 for e in done.values()
                                if e["status"] == "ok")}
    return {"results": results, "table": table,
            "reports": _rel_reports(cfg, paths), "summary": summary}


def _run_prnu(cfg: ExperimentConfig, log, config_path: str) -> dict:
    manifest, zoo = _load_built(cfg, config_path)
    ids = sorted(m.spec.model_id for m in zoo.models)
    images = _model_images(manifest, ids)
    db = FingerprintDb(cfg.prnu)
    for mid in ids:
        train_imgs = images[mid][0]
        if not train_imgs:
            raise DataError("no-residuals", f"no train images for {mid}")
        db.add(build_fingerprint(
            [residual(im, cfg.prnu) for im in train_imgs], mid))
    os.makedirs(os.path.dirname(cfg.fingerprint_path), exist_ok=True)
    save_fingerprint_db(db, cfg.fingerprint_path)

    per_model = {}
    correct_total, count_total = 0, 0
    for mid in ids:
        hits = sum(attribute_nearest(img, db)[0][0] == mid
                   for img in images[mid][1])
        per_model[mid] = (int(hits), len(images[mid][1]))
        correct_total += int(hits)
        count_total += len(images[mid][1])
    if count_total == 0:
        raise DataError("empty-class", "no test images in manifest")
    top1 = correct_total / count_total
    triplet = prnu_seed_eval(zoo.specs(), images, cfg.prnu)

    lines = [f"prnu top-1 accuracy: {top1:.3f} "
             f"({count_total} test images, {len(ids)} fingerprints)",
             f"prnu seed-triplet accuracy: {triplet.total:.3f}"]
    paths = {
        "text": os.path.join(cfg.reports_dir, "prnu.txt"),
        "per_model": os.path.join(cfg.reports_dir, "prnu.csv"),
        "db": cfg.fingerprint_path,
    }
    _write_text(paths["text"], "\n".join(lines) + "\n")
    with open(paths["per_model"], "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model_id", "correct", "count", "accuracy"])
        writer.writerow(["total", correct_total, count_total, f"{top1:.6f}"])
        for mid in ids:
            hits, count = per_model[mid]
            writer.writerow([mid, hits, count, f"{hits / count:.6f}"])
    summary = {"top1_accuracy": float(top1),
               "triplet_accuracy": float(triplet.total),
               "n_fingerprints": len(ids)}
    return {"db": db, "per_model": per_model, "triplet": triplet,
            "reports": _rel_reports(cfg, paths), "summary": summary}


def _run_stats(cfg: ExperimentConfig, log, config_path: str) -> dict:
    if not os.path.isdir(cfg.corpus_dir):
        raise DataError("missing-artifact",
                        f"{cfg.corpus_dir} is not a directory; point "
                        "corpus_dir at a folder of PNG images")
    sources = ingest_corpus(cfg.corpus_dir, max_dim=cfg.max_dim, log=log)
    stats = corpus_stats([s.image for s in sources])
    rows = [
        ("image_count", str(stats.image_count)),
        ("mean_pixels_per_image", f"{stats.mean_ppi:.1f}"),
        ("png_bpp_mean", f"{stats.bpp_png_mean:.6f}"),
        ("png_bpp_std", f"{stats.bpp_png_std:.6f}"),
        ("entropy_bits_mean", f"{stats.entropy_mean:.6f}"),
        ("entropy_bits_std", f"{stats.entropy_std:.6f}"),
    ]
    paths = {"stats": os.path.join(cfg.reports_dir, "corpus_stats.csv")}
    tmp = paths["stats"] + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
    os.replace(tmp, paths["stats"])
    summary = {k: float(v) for k, v in asdict(stats).items()}
    return {"stats": stats, "reports": _rel_reports(cfg, paths),
            "summary": summary}


_EXPERIMENT_FNS = {
    "attribution": _run_attribution,
    "seed-triplet": _run_seed_triplet,
    "unseen": _run_unseen,
    "parsing": _run_parsing,
    "prnu": _run_prnu,
    "stats": _run_stats,
}


def run_experiment(config: ExperimentConfig, experiment: str, log=None,
                   config_path: str = "config.json") -> dict:
    """Execute one named experiment end to end and write its run record.

    Reports are deterministic functions of the config; the run record adds
    wall time and library versions on top.
    """
    if experiment not in EXPERIMENTS:
        raise UsageError("usage",
                         f"unknown experiment {experiment!r}; valid names: "
                         + ", ".join(EXPERIMENTS))
    started = time.time()
    os.makedirs(config.reports_dir, exist_ok=True)
    os.makedirs(config.runs_dir, exist_ok=True)
    result = _EXPERIMENT_FNS[experiment](config, log, config_path)
    record = {
        "format": "modelprints-run",
        "version": 1,
        "experiment": experiment,
        "config": experiment_config_to_dict(config),
        "seeds": {"master_seed": config.master_seed,
                  "classifier_seeds": list(range(config.n_seeds))},
        "versions": {"python": platform.python_version(),
                     "numpy": np.__version__,
                     "modelprints": __version__},
        "wall_time_s": round(time.time() - started, 3),
        "reports": result["reports"],
        "summary": result["summary"],
    }
    record_path = os.path.join(config.runs_dir, f"{experiment}.json")
    tmp = record_path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(record, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, record_path)
    result["record"] = record
    result["record_path"] = record_path
    return result
