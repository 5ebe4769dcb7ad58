"""Dataset manifest: source ingestion, generation bookkeeping, splits.

The manifest is a line-delimited JSON file with a version header line.
Split assignment is a pure function of (image_id, master seed): image ids
are ranked by a salted hash and the first train/val/test count slots taken
in order, so the same source image lands in the same split for every model
and a resumed build reproduces the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .image import bicubic_resample, gaussian_blur, load_png, save_png

__all__ = [
    "SplitConfig",
    "ManifestRecord",
    "Manifest",
    "SourceImage",
    "assign_splits",
    "ingest_corpus",
    "save_manifest",
    "load_manifest",
]

_MANIFEST_FORMAT = "modelprints-manifest"
_MANIFEST_VERSION = 1
_RECORD_KEYS = ("image_id", "model_id", "source_path", "generated_path",
                "split", "crop_seed", "status", "error")


@dataclass(frozen=True)
class SplitConfig:
    train: int = 800
    val: int = 100
    test: int = 100

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or self.train + self.val + self.test == 0:
            raise UsageError("usage", f"bad split sizes {self}")

    @property
    def total(self) -> int:
        return self.train + self.val + self.test


@dataclass
class ManifestRecord:
    image_id: str
    model_id: str
    source_path: str
    generated_path: str
    split: str
    crop_seed: int
    status: str = "ok"
    error: str = ""

    def to_json(self) -> str:
        d = {k: getattr(self, k) for k in _RECORD_KEYS}
        return json.dumps(d, sort_keys=True)


def _hash_rank(image_id: str, master_seed: int) -> str:
    return hashlib.sha256(f"{image_id}|{master_seed}".encode()).hexdigest()


def assign_splits(image_ids, master_seed: int, cfg: SplitConfig) -> dict[str, str]:
    """Deterministic split per image id; leftover ids land in 'extra'."""
    id_list = list(image_ids)
    ids = sorted(set(id_list))
    if len(ids) != len(id_list):
        raise DataError("split-leak", "duplicate image ids in source list")
    if len(ids) < cfg.total:
        raise UsageError("usage",
                         f"{len(ids)} sources cannot fill splits totalling {cfg.total}")
    ranked = sorted(ids, key=lambda i: (_hash_rank(i, master_seed), i))
    out = {}
    for pos, image_id in enumerate(ranked):
        if pos < cfg.train:
            out[image_id] = "train"
        elif pos < cfg.train + cfg.val:
            out[image_id] = "val"
        elif pos < cfg.total:
            out[image_id] = "test"
        else:
            out[image_id] = "extra"
    return out


def crop_seed_for(image_id: str, model_id: str, master_seed: int) -> int:
    digest = hashlib.sha256(f"crop|{image_id}|{model_id}|{master_seed}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


class Manifest:
    """Rows are stored with generated paths relative to ``root`` so that a
    resumed build and a clean build serialize to identical bytes."""

    def __init__(self, master_seed: int, split_config: SplitConfig,
                 records: list[ManifestRecord] | None = None, root: str = "."):
        self.master_seed = master_seed
        self.split_config = split_config
        self.root = root
        self.records: list[ManifestRecord] = []
        self._seen: set[tuple[str, str]] = set()
        for rec in records or []:
            self.add(rec)

    def generated_file(self, rec: ManifestRecord) -> str:
        return os.path.join(self.root, rec.generated_path)

    def add(self, rec: ManifestRecord):
        key = (rec.image_id, rec.model_id)
        if key in self._seen:
            raise DataError("split-leak", f"duplicate manifest row {key}")
        self._seen.add(key)
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def rows(self, model_id: str | None = None, split: str | None = None,
             status: str = "ok") -> list[ManifestRecord]:
        out = []
        for rec in self.records:
            if model_id is not None and rec.model_id != model_id:
                continue
            if split is not None and rec.split != split:
                continue
            if status is not None and rec.status != status:
                continue
            out.append(rec)
        return out

    def model_ids(self) -> list[str]:
        seen = []
        for rec in self.records:
            if rec.model_id not in seen:
                seen.append(rec.model_id)
        return seen

    def split_counts(self, model_id: str) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.rows(model_id=model_id):
            counts[rec.split] = counts.get(rec.split, 0) + 1
        return counts

    def check_disjoint(self, train_split: str = "train", test_split: str = "test"):
        train_ids = {r.image_id for r in self.records if r.split == train_split}
        test_ids = {r.image_id for r in self.records if r.split == test_split}
        leak = train_ids & test_ids
        if leak:
            raise DataError("split-leak", f"images in both splits: {sorted(leak)[:5]}")


def save_manifest(manifest: Manifest, path: str):
    """Canonical row order and key order, written atomically."""
    header = {
        "format": _MANIFEST_FORMAT,
        "version": _MANIFEST_VERSION,
        "master_seed": manifest.master_seed,
        "splits": asdict(manifest.split_config),
    }
    rows = sorted(manifest.records, key=lambda r: (r.model_id, r.image_id))
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in rows:
            fh.write(rec.to_json() + "\n")
    os.replace(tmp, path)


def load_manifest(path: str) -> Manifest:
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise DataError("empty-corpus", f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != _MANIFEST_FORMAT:
        raise DataError("shape-error", f"{path}: not a manifest")
    if header.get("version") != _MANIFEST_VERSION:
        raise DataError("shape-error", f"{path}: unsupported version {header.get('version')}")
    manifest = Manifest(int(header["master_seed"]), SplitConfig(**header["splits"]),
                        root=os.path.dirname(os.path.abspath(path)))
    for line in lines[1:]:
        d = json.loads(line)
        manifest.add(ManifestRecord(**{k: d[k] for k in _RECORD_KEYS}))
    return manifest


@dataclass
class SourceImage:
    image_id: str
    path: str
    image: np.ndarray = field(repr=False)


def ingest_corpus(directory: str, max_dim: int = 960, min_dim: int = 16,
                  log=None) -> list[SourceImage]:
    """Load a directory of PNGs, capped at max_dim on the largest side.

    Oversized images are resized (Gaussian blur then bicubic); smaller images
    pass through untouched (never enlarged). Undecodable files are skipped
    with a warning; an empty result is fatal. Ordering is stable by filename.
    """
    if not os.path.isdir(directory):
        raise DataError("empty-corpus", f"{directory} is not a directory")
    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))
    out: list[SourceImage] = []
    for name in names:
        path = os.path.join(directory, name)
        try:
            img = load_png(path)
        except Exception as exc:  # undecodable: skip, warn, continue
            if log is not None:
                log(f"warning: skipping undecodable {name}: {exc}")
            continue
        h, w = img.shape[:2]
        if min(h, w) < min_dim:
            if log is not None:
                log(f"warning: skipping {name}: {h}x{w} below minimum {min_dim}")
            continue
        if max(h, w) > max_dim:
            ratio = max(h, w) / max_dim
            img = gaussian_blur(img, ratio / 2.0)
            img = bicubic_resample(img, max_dim / max(h, w))
        out.append(SourceImage(os.path.splitext(name)[0], path, img))
    if not out:
        raise DataError("empty-corpus", f"no usable PNG images in {directory}")
    return out
