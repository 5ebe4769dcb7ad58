"""Command-line front end: one JSON config file drives every subcommand."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .attribution import (embedding_ratio_matrix, evaluate_grouped,
                          extract_embeddings, format_attribution_report,
                          format_triplet_report, load_attributor,
                          save_attributor, save_confusion_csv,
                          save_grouped_csv, save_triplet_csv,
                          seed_triplet_eval, train_attributor, tsne_export)
from .errors import DataError, DivergedError, UsageError
from .image import load_png, save_png
from .manifest import ingest_corpus, load_manifest
from .metrics import save_ratio_matrix_csv
from .parsing import (PARSER_AXES, ParserTask, evaluate_parser,
                      format_parser_report, load_parser, make_split,
                      save_parser, save_parser_csv, train_parser)
from .pipeline import (ExperimentConfig, build_dataset,
                       load_experiment_config, require_artifact,
                       run_experiment)
from .prnu import (FingerprintDb, attribute_nearest, build_fingerprint,
                   load_fingerprint_db, residual, save_fingerprint_db)
from .zoo import build_zoo

__all__ = ["main", "build_arg_parser"]

PROG = "modelprints"


def _warn(message: str):
    print(message, file=sys.stderr)


def _atomic_json(doc: dict, path: str):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _load_manifest_or_fail(cfg: ExperimentConfig, config_path: str):
    require_artifact(cfg.manifest_path,
                     f"{PROG} dataset-build --config {config_path}")
    return load_manifest(cfg.manifest_path)


def _load_attributor_or_fail(cfg: ExperimentConfig, config_path: str):
    require_artifact(os.path.join(cfg.attributor_dir, "attributor.json"),
                     f"{PROG} attr-train --config {config_path}")
    return load_attributor(cfg.attributor_dir)


def _parse_exclusion(text: str):
    if "=" not in text:
        raise UsageError("usage",
                         f"--exclude expects AXIS=VALUE, got {text!r}")
    axis, value = text.split("=", 1)
    if axis in ("seed", "scale"):
        try:
            value = int(value)
        except ValueError:
            raise UsageError("usage", f"{axis} value must be an integer")
    return axis, value


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_ingest(args, cfg: ExperimentConfig):
    sources = ingest_corpus(cfg.corpus_dir, max_dim=cfg.max_dim, log=_warn)
    os.makedirs(cfg.sources_dir, exist_ok=True)
    for src in sources:
        save_png(src.image, os.path.join(cfg.sources_dir,
                                         src.image_id + ".png"))
    print(f"ingested {len(sources)} sources -> {cfg.sources_dir}")


def _cmd_zoo_build(args, cfg: ExperimentConfig):
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    doc = {
        "format": "modelprints-zoo",
        "version": 1,
        "master_seed": cfg.master_seed,
        "models": [{
            "model_id": m.spec.model_id,
            "architecture": m.spec.architecture,
            "dataset": m.spec.dataset,
            "scale": m.spec.scale,
            "loss": m.spec.loss,
            "seed": m.spec.seed,
            "kind": m.spec.kind,
        } for m in sorted(zoo.models, key=lambda m: m.spec.model_id)],
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    _atomic_json(doc, cfg.zoo_listing_path)
    print(f"zoo: {len(zoo.models)} models -> {cfg.zoo_listing_path}")


def _cmd_dataset_build(args, cfg: ExperimentConfig):
    sources = ingest_corpus(cfg.corpus_dir, max_dim=cfg.max_dim, log=_warn)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    jobs = 1 if args.deterministic else max(1, args.jobs)
    manifest = build_dataset(sources, zoo, cfg.dataset_dir,
                             split_config=cfg.split,
                             master_seed=cfg.master_seed, log=print,
                             jobs=jobs)
    model_ids = manifest.model_ids()
    counts = manifest.split_counts(model_ids[0]) if model_ids else {}
    print(f"manifest: {len(manifest)} rows -> {cfg.manifest_path}")
    print("per-model splits: " + ", ".join(f"{k}={v}"
                                           for k, v in sorted(counts.items())))


def _cmd_attr_train(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    ids = sorted(m.spec.model_id for m in zoo.models)
    bundle = train_attributor(manifest, ids, cfg.attributor,
                              n_seeds=cfg.n_seeds, log=print)
    save_attributor(bundle, cfg.attributor_dir)
    print(f"attributor: {len(bundle.classifiers)} seeds x "
          f"{len(bundle.class_ids)} classes -> {cfg.attributor_dir}")


def _cmd_attr_eval(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    bundle = _load_attributor_or_fail(cfg, args.config)
    report = evaluate_grouped(bundle, manifest, zoo)
    print(format_attribution_report(report), end="")
    os.makedirs(cfg.reports_dir, exist_ok=True)
    save_grouped_csv(report, os.path.join(cfg.reports_dir,
                                          "attribution_grouped.csv"))
    save_confusion_csv(report, os.path.join(cfg.reports_dir,
                                            "attribution_confusion.csv"))
    try:
        triplets = seed_triplet_eval(bundle, manifest, zoo)
    except DataError as exc:
        if exc.code != "incomplete-triplet":
            raise
        print(f"seed triplets skipped: {exc.message}")
    else:
        print(format_triplet_report(triplets), end="")
        save_triplet_csv(triplets, os.path.join(cfg.reports_dir,
                                                "seed_triplet.csv"))
    print(f"reports -> {cfg.reports_dir}")


def _cmd_attr_tsne(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    bundle = _load_attributor_or_fail(cfg, args.config)
    emb = extract_embeddings(bundle.classifiers[0], manifest,
                             bundle.class_ids, split="test")
    os.makedirs(cfg.reports_dir, exist_ok=True)
    path = os.path.join(cfg.reports_dir, "tsne.csv")
    tsne_export(emb, path, cfg.tsne)
    print(f"tsne: {len(emb)} points -> {path}")


def _cmd_attr_ratio(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    bundle = _load_attributor_or_fail(cfg, args.config)
    emb = extract_embeddings(bundle.classifiers[0], manifest,
                             bundle.class_ids, split="test")
    ids, mat = embedding_ratio_matrix(emb)
    os.makedirs(cfg.reports_dir, exist_ok=True)
    path = os.path.join(cfg.reports_dir, "embedding_ratio.csv")
    save_ratio_matrix_csv(path, ids, mat)
    print(f"ratio matrix {len(ids)}x{len(ids)} -> {path}")


def _cmd_fingerprint_build(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    db = FingerprintDb(cfg.prnu)
    for mid in sorted(manifest.model_ids()):
        rows = manifest.rows(model_id=mid, split="train")
        if not rows:
            raise DataError("no-residuals", f"no train rows for {mid}")
        res = [residual(load_png(manifest.generated_file(r)), cfg.prnu)
               for r in rows]
        db.add(build_fingerprint(res, mid))
    os.makedirs(os.path.dirname(cfg.fingerprint_path), exist_ok=True)
    save_fingerprint_db(db, cfg.fingerprint_path)
    print(f"fingerprints: {len(db.fingerprints)} models -> "
          f"{cfg.fingerprint_path}")


def _cmd_fingerprint_attribute(args, cfg: ExperimentConfig):
    require_artifact(cfg.fingerprint_path,
                     f"{PROG} fingerprint-build --config {args.config}")
    db = load_fingerprint_db(cfg.fingerprint_path)
    if args.image is not None:
        ranking = attribute_nearest(load_png(args.image), db)
        for mid, dist in ranking[:5]:
            print(f"{mid}  {dist:.6f}")
        return
    manifest = _load_manifest_or_fail(cfg, args.config)
    correct, total = 0, 0
    for mid in sorted(manifest.model_ids()):
        for rec in manifest.rows(model_id=mid, split="test"):
            top = attribute_nearest(load_png(manifest.generated_file(rec)),
                                    db)[0][0]
            correct += int(top == mid)
            total += 1
    if total == 0:
        raise DataError("empty-class", "no test rows in manifest")
    print(f"prnu top-1 accuracy: {correct / total:.3f} "
          f"on {total} test images")


def _cmd_parse_train(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    axis, value = _parse_exclusion(args.exclude)
    task = ParserTask(args.predict, axis, value)
    split = make_split(zoo, task)
    bundle = train_parser(manifest, zoo, split, cfg.attributor,
                          n_seeds=cfg.n_seeds, log=print)
    out = cfg.parser_dir(task.name())
    save_parser(bundle, out)
    print(f"parser {task.name()}: classes "
          f"{[str(c) for c in split.class_set]} -> {out}")


def _cmd_parse_eval(args, cfg: ExperimentConfig):
    manifest = _load_manifest_or_fail(cfg, args.config)
    zoo = build_zoo(cfg.grid, cfg.master_seed)
    axis, value = _parse_exclusion(args.exclude)
    task = ParserTask(args.predict, axis, value)
    parser_dir = cfg.parser_dir(task.name())
    require_artifact(os.path.join(parser_dir, "parser.json"),
                     f"{PROG} parse-train --config {args.config} "
                     f"--predict {args.predict} --exclude {args.exclude}")
    bundle = load_parser(parser_dir)
    split = make_split(zoo, task)
    report = evaluate_parser(bundle, manifest, zoo, split.test_ids)
    print(format_parser_report(report), end="")
    os.makedirs(cfg.reports_dir, exist_ok=True)
    path = os.path.join(cfg.reports_dir, f"parser_{task.name()}.csv")
    save_parser_csv(report, path)
    print(f"report -> {path}")


def _cmd_stats(args, cfg: ExperimentConfig):
    result = run_experiment(cfg, "stats", log=_warn, config_path=args.config)
    for key, value in sorted(result["summary"].items()):
        print(f"{key}: {value:.4f}" if isinstance(value, float)
              else f"{key}: {value}")
    print(f"run record -> {result['record_path']}")


def _cmd_run(args, cfg: ExperimentConfig):
    result = run_experiment(cfg, args.experiment, log=print,
                            config_path=args.config)
    for name in sorted(result["reports"]):
        print(f"report {name}: "
              f"{os.path.join(cfg.out_dir, result['reports'][name])}")
    print(f"run record -> {result['record_path']}")


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

_COMMANDS = [
    ("ingest", _cmd_ingest, "normalize a source corpus into the output tree"),
    ("zoo-build", _cmd_zoo_build, "materialize the synthetic model zoo listing"),
    ("dataset-build", _cmd_dataset_build,
     "generate every (source, model) image and write the manifest"),
    ("attr-train", _cmd_attr_train, "train the attribution classifiers"),
    ("attr-eval", _cmd_attr_eval,
     "grouped accuracy and seed-triplet reports for a trained attributor"),
    ("attr-tsne", _cmd_attr_tsne, "export a t-SNE embedding of test features"),
    ("attr-ratio", _cmd_attr_ratio,
     "export the pairwise embedding distance-ratio matrix"),
    ("fingerprint-build", _cmd_fingerprint_build,
     "build noise-residual fingerprints from the train split"),
    ("fingerprint-attribute", _cmd_fingerprint_attribute,
     "attribute an image (or the test split) to the nearest fingerprint"),
    ("parse-train", _cmd_parse_train,
     "train a hyperparameter parser with one value held out"),
    ("parse-eval", _cmd_parse_eval, "evaluate a trained hyperparameter parser"),
    ("stats", _cmd_stats, "corpus statistics report"),
    ("run", _cmd_run, "run one named experiment end to end"),
]


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="model fingerprint extraction, attribution, and parsing")
    sub = parser.add_subparsers(dest="command", required=True,
                                metavar="command")
    for name, func, help_text in _COMMANDS:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=True,
                        help="JSON experiment config file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
        sp.add_argument("--deterministic", action="store_true",
                        help="force serial generation (outputs are "
                             "deterministic either way)")
        sp.add_argument("--jobs", type=int, default=1,
                        help="worker threads for dataset generation")
        sp.set_defaults(func=func)
        if name == "fingerprint-attribute":
            sp.add_argument("--image", default=None,
                            help="attribute one PNG instead of the test split")
        if name in ("parse-train", "parse-eval"):
            sp.add_argument("--predict", required=True, choices=PARSER_AXES,
                            help="hyperparameter to predict")
            sp.add_argument("--exclude", required=True, metavar="AXIS=VALUE",
                            help="held-out hyperparameter value, e.g. seed=3")
        if name == "run":
            sp.add_argument("--experiment", required=True,
                            help="experiment name (see pipeline.EXPERIMENTS)")
    return parser


def main(argv=None) -> int:
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        cfg = load_experiment_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, master_seed=args.seed)
        args.func(args, cfg)
    except UsageError as exc:
        print(f"error[{exc.code}]: {exc.message}", file=sys.stderr)
        return 1
    except DivergedError as exc:
        print(f"error[{exc.code}]: {exc.message}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"error[{exc.code}]: {exc.message}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
