"""Synthetic model zoo: parameterized upsamplers with controllable fingerprints.

Each zoo model is a deterministic generator Image(LR) -> Image(HR) whose
output statistics depend on its spec:

- architecture picks the interpolation family (bicubic, lanczos,
  edge-directed, learned-kernel, nonlocal-average);
- loss picks the post-process: L1-analog models stay smooth, adv-analog
  models get scale-proportional sharpening plus a seeded oriented
  high-frequency texture field (the stand-in for GAN hallucination);
- seed rotates the texture orientation and jitters kernels;
- dataset applies a subtle palette/contrast transfer.

The knobs are engineered so loss-analog and scale dominate the output
statistics while dataset and seed stay subtle, giving the attribution and
parsing pipelines signal with a known ordering.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, UsageError
from .image import (
    bicubic_resample,
    gaussian_blur,
    lanczos_resample,
    to_grayscale,
)

__all__ = [
    "ARCHITECTURES",
    "LOSSES",
    "SCALES",
    "ModelSpec",
    "ZooGrid",
    "SynthKnobs",
    "ZooModel",
    "Zoo",
    "build_zoo",
    "generate",
    "mean_abs_laplacian",
    "save_zoo_description",
    "load_zoo_description",
    "conv2d_same",
]

ARCHITECTURES = ("bicubic", "lanczos", "edge-directed", "learned-kernel", "nonlocal-average")
LOSSES = ("l1", "vgg-adv", "resnet-adv")
SCALES = (2, 4)

_ZOO_FORMAT = "modelprints-zoo"
_ZOO_VERSION = 1

# interleaved with the 60-degree seed steps; adjacent list neighbours get
# distant slots so common two-arch grids stay separable
_ARCH_BASE_ANGLE = {
    "bicubic": 0.0,
    "lanczos": 24.0,
    "edge-directed": 48.0,
    "learned-kernel": 12.0,
    "nonlocal-average": 36.0,
}


@dataclass(frozen=True)
class ModelSpec:
    architecture: str
    dataset: str
    scale: int
    loss: str
    seed: int
    kind: str = "synthetic"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise UsageError("usage", f"unknown architecture {self.architecture!r}")
        if self.loss not in LOSSES:
            raise UsageError("usage", f"unknown loss {self.loss!r}")
        if self.scale not in SCALES:
            raise UsageError("usage", f"scale must be one of {SCALES}, got {self.scale}")
        if self.kind not in ("synthetic", "trained-sr"):
            raise UsageError("usage", f"unknown kind {self.kind!r}")

    @property
    def model_id(self) -> str:
        return f"{self.architecture}-{self.dataset}-{self.scale}x-{self.loss}-s{self.seed}"

    @property
    def is_adv(self) -> bool:
        return self.loss != "l1"

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(d["architecture"], d["dataset"], int(d["scale"]),
                         d["loss"], int(d["seed"]), d.get("kind", "synthetic"))

    def hyperparameter(self, axis: str):
        if axis not in ("architecture", "dataset", "scale", "loss", "seed"):
            raise UsageError("usage", f"unknown hyperparameter axis {axis!r}")
        return getattr(self, axis)


@dataclass(frozen=True)
class ZooGrid:
    architectures: tuple = ARCHITECTURES
    datasets: tuple = ("default", "alt")
    scales: tuple = SCALES
    losses: tuple = LOSSES
    seeds: tuple = (1, 2, 3)
    subset_rule: str = "paper"  # keep spec iff seed == seeds[0] or dataset == datasets[0]

    def combinations(self):
        for arch in self.architectures:
            for ds in self.datasets:
                for scale in self.scales:
                    for loss in self.losses:
                        for seed in self.seeds:
                            yield ModelSpec(arch, ds, scale, loss, seed)

    def specs(self) -> list[ModelSpec]:
        combos = list(self.combinations())
        if not combos:
            raise UsageError("usage", "empty zoo grid")
        if self.subset_rule == "all":
            return combos
        if self.subset_rule == "paper":
            first_seed, first_ds = self.seeds[0], self.datasets[0]
            return [s for s in combos if s.seed == first_seed or s.dataset == first_ds]
        raise UsageError("usage", f"unknown subset rule {self.subset_rule!r}")


@dataclass(frozen=True)
class SynthKnobs:
    """Every procedural signal strength in one place, for tuning in tests."""

    tile_size: int = 512
    texture_amp_2x: float = 0.030
    texture_amp_4x: float = 0.065
    texture_lock_frac: float = 0.1         # rest rides at a per-image offset
    sharpen_base: float = 0.10            # adv sharpening = base * (scale / 2)
    orient_step_deg: float = 60.0          # per-seed texture rotation
    orient_jitter_deg: float = 5.0
    band_center: float = 0.22              # cycles/px for vgg-adv
    band_center_resnet: float = 0.33
    band_center_jitter: float = 0.03       # per-model radial offset
    band_sigma: float = 0.06
    band_angle_sigma_deg: float = 12.0
    oriented_weight: float = 0.75
    hash_weight: float = 0.25
    mask_floor: float = 0.35
    scale_band_amp: float = 1.0            # relative to texture_amp_2x; seed-free
    scale_band_center_2x: float = 0.12
    scale_band_center_4x: float = 0.42     # clear of both adv texture bands
    scale_band_sigma: float = 0.05
    l1_blur_sigma: float = 0.5
    l1_jitter_amp: float = 0.008           # scaled by (scale / 2)^2
    kernel_jitter: float = 0.03
    edge_gain: float = 0.6
    nonlocal_mix: float = 0.15
    dataset_strength: float = 1.0

    def texture_amp(self, scale: int) -> float:
        return self.texture_amp_2x if scale == 2 else self.texture_amp_4x


def _model_rng(master_seed: int, spec: ModelSpec, stream: str) -> np.random.Generator:
    digest = hashlib.sha256(f"{master_seed}|{spec.model_id}|{stream}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def _tag_rng(tag: str) -> np.random.Generator:
    digest = hashlib.sha256(f"dataset-transfer|{tag}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def conv2d_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Small same-size 2-D convolution with reflect padding, per channel."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    squeeze = img.ndim == 2
    x = img[:, :, None] if squeeze else img
    xp = np.pad(x, ((ph, ph), (pw, pw), (0, 0)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(0, 1))
    out = np.tensordot(windows, kernel, axes=([3, 4], [0, 1]))
    return out[:, :, 0] if squeeze else out


_LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


def mean_abs_laplacian(img: np.ndarray) -> float:
    """High-frequency energy proxy: mean absolute Laplacian of the luma."""
    g = to_grayscale(img) if img.ndim == 3 else img
    return float(np.abs(conv2d_same(g, _LAPLACIAN)).mean())


def _oriented_bandpass_filter(size: int, theta_deg: float, center: float,
                              sigma_r: float, sigma_theta_deg: float) -> np.ndarray:
    f = np.fft.fftfreq(size)
    fx = f[None, :]
    fy = f[:, None]
    fr = np.sqrt(fx * fx + fy * fy)
    radial = np.exp(-0.5 * ((fr - center) / sigma_r) ** 2)
    angle = np.arctan2(fy, fx)
    # orientations are symmetric under 180 degrees
    delta = np.angle(np.exp(2j * (angle - np.deg2rad(theta_deg)))) / 2.0
    angular = np.exp(-0.5 * (delta / np.deg2rad(sigma_theta_deg)) ** 2)
    filt = radial * angular
    filt[0, 0] = 0.0
    return filt


def _radial_bandpass_filter(size: int, center: float, sigma_r: float) -> np.ndarray:
    f = np.fft.fftfreq(size)
    fr = np.sqrt(f[None, :] ** 2 + f[:, None] ** 2)
    filt = np.exp(-0.5 * ((fr - center) / sigma_r) ** 2)
    filt[0, 0] = 0.0
    return filt


def _highpass_filter(size: int, cutoff: float = 0.15) -> np.ndarray:
    f = np.fft.fftfreq(size)
    fr = np.sqrt(f[None, :] ** 2 + f[:, None] ** 2)
    filt = 1.0 - np.exp(-0.5 * (fr / cutoff) ** 2)
    filt[0, 0] = 0.0
    return filt


def _filtered_noise(rng: np.random.Generator, size: int, filt: np.ndarray) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    out = np.fft.ifft2(np.fft.fft2(noise) * filt).real
    return out / (out.std() + 1e-12)


def _tile_to(tile: np.ndarray, h: int, w: int) -> np.ndarray:
    th, tw = tile.shape
    reps = (int(np.ceil(h / th)), int(np.ceil(w / tw)))
    return np.tile(tile, reps)[:h, :w]


class ZooModel:
    """A spec plus its deterministic generator."""

    def __init__(self, spec: ModelSpec, master_seed: int, knobs: SynthKnobs,
                 generator=None, provenance: dict | None = None):
        self.spec = spec
        self.master_seed = master_seed
        self.knobs = knobs
        self._texture_tile = None
        self._scale_tile = None
        self._kernel = None
        self._generator = generator
        self.provenance = provenance or {"type": "procedural", "master_seed": master_seed}

    @property
    def model_id(self) -> str:
        return self.spec.model_id

    def texture_tile(self) -> np.ndarray:
        """Position-anchored texture field shared by all outputs of this model."""
        if self._texture_tile is None:
            k = self.knobs
            rng = _model_rng(self.master_seed, self.spec, "texture")
            theta = (_ARCH_BASE_ANGLE[self.spec.architecture]
                     + k.orient_step_deg * ((self.spec.seed - 1) % 3)
                     + k.orient_jitter_deg * rng.uniform(-1.0, 1.0))
            center = k.band_center_resnet if self.spec.loss == "resnet-adv" else k.band_center
            center = center + k.band_center_jitter * rng.uniform(-1.0, 1.0)
            filt = _oriented_bandpass_filter(k.tile_size, theta, center,
                                             k.band_sigma, k.band_angle_sigma_deg)
            oriented = _filtered_noise(rng, k.tile_size, filt)
            hashfield = _filtered_noise(rng, k.tile_size, _highpass_filter(k.tile_size))
            tile = k.oriented_weight * oriented + k.hash_weight * hashfield
            self._texture_tile = tile / (tile.std() + 1e-12)
        return self._texture_tile

    def scale_tile(self) -> np.ndarray:
        """Isotropic band tile keyed by (arch, scale, loss) but not seed.

        Models that differ only by seed or dataset share this component, the
        way retrained real models share systematic artifacts; it is what lets
        hyperparameter parsers generalize across held-out seeds.
        """
        if self._scale_tile is None:
            k = self.knobs
            key = (f"{self.master_seed}|scale-band|{self.spec.architecture}"
                   f"|{self.spec.scale}x|{self.spec.loss}")
            digest = hashlib.sha256(key.encode()).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
            center = (k.scale_band_center_2x if self.spec.scale == 2
                      else k.scale_band_center_4x)
            filt = _radial_bandpass_filter(k.tile_size, center, k.scale_band_sigma)
            self._scale_tile = _filtered_noise(rng, k.tile_size, filt)
        return self._scale_tile

    def learned_kernel(self) -> np.ndarray:
        if self._kernel is None:
            rng = _model_rng(self.master_seed, self.spec, "kernel")
            t = np.array([0.1, 0.6, 1.0, 0.6, 0.1])
            base = np.outer(t, t)
            jitter = rng.standard_normal((5, 5)) * self.knobs.kernel_jitter
            jitter = (jitter + jitter[::-1, ::-1]) / 2.0  # keep it symmetric-ish
            kern = base + jitter
            self._kernel = kern / kern.sum()
        return self._kernel

    def _seed_jitter_kernel(self) -> np.ndarray:
        rng = _model_rng(self.master_seed, self.spec, "l1-jitter")
        kern = rng.standard_normal((3, 3))
        return kern - kern.mean()  # zero-sum: no DC shift on any image

    def _base_upsample(self, lr: np.ndarray) -> np.ndarray:
        s = self.spec.scale
        arch = self.spec.architecture
        if arch == "bicubic":
            return bicubic_resample(lr, s)
        if arch == "lanczos":
            return lanczos_resample(lr, s)
        if arch == "edge-directed":
            up = bicubic_resample(lr, s)
            g = to_grayscale(up) if up.ndim == 3 else up
            gy, gx = np.gradient(g)
            gm = np.sqrt(gx * gx + gy * gy)
            q = np.quantile(gm, 0.8) + 1e-8
            w = np.clip(gm / q, 0.0, 1.0)
            detail = up - gaussian_blur(up, 0.7)
            w3 = w[:, :, None] if up.ndim == 3 else w
            return up + self.knobs.edge_gain * w3 * detail
        if arch == "learned-kernel":
            rep = lr.repeat(s, axis=0).repeat(s, axis=1)
            return conv2d_same(rep, self.learned_kernel())
        if arch == "nonlocal-average":
            up = bicubic_resample(lr, s)
            m = self.knobs.nonlocal_mix
            return (1.0 - m) * up + m * gaussian_blur(up, 1.0)
        raise UsageError("usage", f"unknown architecture {arch!r}")

    def _content_offset(self, up: np.ndarray) -> tuple[int, int]:
        """Texture anchors to image content, not the pixel grid."""
        digest = hashlib.sha256(self.model_id.encode()
                                + np.ascontiguousarray(up).tobytes()).digest()
        t = self.knobs.tile_size
        return (int.from_bytes(digest[:4], "little") % t,
                int.from_bytes(digest[4:8], "little") % t)

    def _loss_postprocess(self, up: np.ndarray) -> np.ndarray:
        k = self.knobs
        s = self.spec.scale
        if not self.spec.is_adv:
            out = gaussian_blur(up, k.l1_blur_sigma)
            if k.l1_jitter_amp > 0:
                out = out + (k.l1_jitter_amp * (s / 2.0) ** 2
                             * conv2d_same(out, self._seed_jitter_kernel()))
            return out
        sharp = up + k.sharpen_base * (s / 2.0) * (up - gaussian_blur(up, 1.0))
        h, w = sharp.shape[:2]
        src = self.texture_tile()
        lock = float(np.clip(k.texture_lock_frac, 0.0, 1.0))
        if lock >= 1.0:
            tile = _tile_to(src, h, w)
        else:
            dy, dx = self._content_offset(up)
            tile = (lock * _tile_to(src, h, w)
                    + (1.0 - lock) * _tile_to(np.roll(src, (-dy, -dx), (0, 1)), h, w))
            tile = tile / np.sqrt(lock * lock + (1.0 - lock) ** 2)
        g = to_grayscale(sharp) if sharp.ndim == 3 else sharp
        gy, gx = np.gradient(g)
        gm = np.sqrt(gx * gx + gy * gy)
        q = np.quantile(gm, 0.8) + 1e-8
        mask = k.mask_floor + (1.0 - k.mask_floor) * np.clip(gm / q, 0.0, 1.0)
        bump = k.texture_amp(s) * mask * tile
        if k.scale_band_amp > 0:
            band = _tile_to(self.scale_tile(), h, w)
            bump = bump + k.texture_amp_2x * k.scale_band_amp * mask * band
        if sharp.ndim == 3:
            bump = bump[:, :, None]
        return sharp + bump

    def _dataset_transfer(self, img: np.ndarray) -> np.ndarray:
        tag = self.spec.dataset
        if tag == "default" or self.knobs.dataset_strength == 0:
            return img
        rng = _tag_rng(tag)
        gammas = 1.0 + 0.06 * rng.uniform(-1.0, 1.0, size=3) * self.knobs.dataset_strength
        gains = 1.0 + 0.03 * rng.uniform(-1.0, 1.0, size=3) * self.knobs.dataset_strength
        contrast = 1.0 + 0.05 * rng.uniform(-1.0, 1.0) * self.knobs.dataset_strength
        out = np.clip(img, 0.0, 1.0)
        if out.ndim == 3:
            out = (out ** gammas) * gains
        else:
            out = (out ** gammas[0]) * gains[0]
        return (out - 0.5) * contrast + 0.5

    def generate(self, lr: np.ndarray) -> np.ndarray:
        if self._generator is not None:
            out = self._generator(lr)
        else:
            up = self._base_upsample(np.asarray(lr, dtype=np.float64))
            out = self._dataset_transfer(self._loss_postprocess(up))
            out = np.clip(out, 0.0, 1.0)
        s = self.spec.scale
        want = (lr.shape[0] * s, lr.shape[1] * s)
        if out.shape[:2] != want:
            raise DataError("shape-error",
                            f"{self.model_id}: output {out.shape[:2]} != input x scale {want}")
        return out


class Zoo:
    def __init__(self, models: list[ZooModel], grid: ZooGrid, master_seed: int,
                 knobs: SynthKnobs):
        self.models = models
        self.grid = grid
        self.master_seed = master_seed
        self.knobs = knobs
        self.by_id = {m.model_id: m for m in models}

    def __len__(self):
        return len(self.models)

    def model(self, model_id: str) -> ZooModel:
        if model_id not in self.by_id:
            raise DataError("no-such-model", f"unknown model {model_id!r}")
        return self.by_id[model_id]

    def specs(self) -> list[ModelSpec]:
        return [m.spec for m in self.models]

    def seed_triplets(self) -> dict[tuple, list[ModelSpec]]:
        """Group specs by everything except seed; values sorted by seed."""
        groups: dict[tuple, list[ModelSpec]] = {}
        for spec in self.specs():
            key = (spec.architecture, spec.dataset, spec.scale, spec.loss, spec.kind)
            groups.setdefault(key, []).append(spec)
        return {k: sorted(v, key=lambda s: s.seed) for k, v in groups.items()}


def build_zoo(grid: ZooGrid | None = None, master_seed: int = 0,
              knobs: SynthKnobs | None = None) -> Zoo:
    grid = grid or ZooGrid()
    knobs = knobs or SynthKnobs()
    specs = grid.specs()
    seen = set()
    for spec in specs:
        if spec in seen:
            raise DataError("duplicate-model", f"duplicate spec {spec.model_id}")
        seen.add(spec)
    models = [ZooModel(spec, master_seed, knobs) for spec in specs]
    return Zoo(models, grid, master_seed, knobs)


def generate(model: ZooModel, lr: np.ndarray) -> np.ndarray:
    return model.generate(lr)


def save_zoo_description(zoo: Zoo, path: str):
    """Human-readable versioned listing of every model and its provenance."""
    doc = {
        "format": _ZOO_FORMAT,
        "version": _ZOO_VERSION,
        "master_seed": zoo.master_seed,
        "grid": asdict(zoo.grid),
        "knobs": asdict(zoo.knobs),
        "models": [{"model_id": m.model_id, **m.spec.to_dict(), "provenance": m.provenance}
                   for m in zoo.models],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_zoo_description(path: str) -> Zoo:
    """Rebuild a zoo from its description (synthetic models are procedural)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != _ZOO_FORMAT:
        raise DataError("shape-error", f"{path}: not a zoo description")
    if doc.get("version") != _ZOO_VERSION:
        raise DataError("shape-error", f"{path}: unsupported zoo version {doc.get('version')}")
    grid_d = doc["grid"]
    grid = ZooGrid(tuple(grid_d["architectures"]), tuple(grid_d["datasets"]),
                   tuple(grid_d["scales"]), tuple(grid_d["losses"]),
                   tuple(grid_d["seeds"]), grid_d["subset_rule"])
    knobs = SynthKnobs(**doc["knobs"])
    zoo = build_zoo(grid, doc["master_seed"], knobs)
    listed = [m["model_id"] for m in doc["models"]]
    if listed != [m.model_id for m in zoo.models]:
        raise DataError("duplicate-model", f"{path}: model list does not match grid")
    return zoo
