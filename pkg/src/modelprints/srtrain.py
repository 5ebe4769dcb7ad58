"""Trainable SR models and the composite perceptual + adversarial loss.

The composite loss is

    l = l_percep + adv_weight * l_adv
    l_percep = MSE(phi(HR), phi(SR))      phi: feature extractor
    l_adv    = -log D(SR)                 D: discriminator with sigmoid output

Gradients flow through phi and D back to the SR image; their weights stay
frozen. Training alternates discriminator and generator steps 1:1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DivergedError
from .image import degrade
from .nn import (
    Network,
    OptimizerConfig,
    build_network,
    conv2d,
    global_avg_pool,
    linear,
    make_optimizer,
    maxpool,
    relu,
    save_checkpoint,
    sigmoid,
    upsample,
)
from .zoo import ModelSpec, ZooModel

__all__ = [
    "FeatureExtractor",
    "IdentityExtractor",
    "resnet_style_perceptual",
    "LossSpec",
    "composite_loss",
    "perceptual_distance",
    "build_sr_generator",
    "build_discriminator",
    "SrTrainConfig",
    "train_sr_model",
]


class FeatureExtractor:
    """phi: forward a network up to a tap layer, with input gradients."""

    def __init__(self, net: Network, tap: str):
        names = [lay.name for lay in net.layers]
        if tap not in names:
            raise DataError("no-such-layer", f"feature tap {tap!r} not in {names}")
        self.net = net
        self.tap = tap
        self._slice = net.layers[:names.index(tap) + 1]

    def features(self, x: np.ndarray) -> np.ndarray:
        out = np.asarray(x, dtype=self.net.dtype)
        for lay in self._slice:
            out = lay.forward(out)
        return out

    def features_and_pullback(self, x: np.ndarray):
        feats = self.features(x)

        def pullback(dfeats: np.ndarray) -> np.ndarray:
            dy = dfeats
            for lay in reversed(self._slice):
                dy = lay.backward(dy)
            return dy

        return feats, pullback


class IdentityExtractor:
    """phi = identity; turns the perceptual term into plain MSE(sr, hr)."""

    def features(self, x):
        return np.asarray(x, dtype=np.float64)

    def features_and_pullback(self, x):
        return self.features(x), lambda d: d


def resnet_style_perceptual(net: Network, tap: str) -> FeatureExtractor:
    """Perceptual phi tapping a mid-depth layer; distance is mean squared L2."""
    return FeatureExtractor(net, tap)


def perceptual_distance(extractor, a: np.ndarray, b: np.ndarray) -> float:
    fa = extractor.features(_batched(a)[0])
    fb = extractor.features(_batched(b)[0])
    diff = fa - fb
    return float(np.mean(diff * diff))


@dataclass
class LossSpec:
    kind: str = "l1"
    adv_weight: float = 1e-3
    perceptual: object | None = None
    discriminator: Network | None = None

    def __post_init__(self):
        if self.kind not in ("l1", "composite"):
            raise DataError("shape-error", f"unknown loss kind {self.kind!r}")
        if self.adv_weight < 0:
            raise DataError("shape-error", "adv_weight must be >= 0")
        if self.kind == "composite" and (self.perceptual is None or self.discriminator is None):
            raise DataError("shape-error", "composite loss needs both phi and a discriminator")


def _batched(img: np.ndarray):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 3:
        return arr[None], True
    if arr.ndim == 4:
        return arr, False
    raise DataError("shape-error", f"expected (H,W,C) or (N,H,W,C), got {arr.shape}")


def _adv_term(disc: Network, sr: np.ndarray):
    probs = disc.forward(sr)
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise DataError("invalid-discriminator-output",
                        f"D output outside (0,1): min {probs.min():.3g} max {probs.max():.3g}")
    p = np.clip(probs, 1e-12, 1.0)
    l_adv = float(-np.log(p).mean())
    dp = -1.0 / (p * p.size)
    dsr = disc.backward(dp)
    return l_adv, dsr


def composite_loss(spec: LossSpec, sr: np.ndarray, hr: np.ndarray):
    """Loss value and gradient with respect to sr.

    Returns (loss, grad_sr, parts) where parts carries the percep and adv
    components so the decomposition l = l_percep + adv_weight * l_adv can
    be checked exactly.
    """
    sr_b, squeeze = _batched(sr)
    hr_b, _ = _batched(hr)
    if sr_b.shape != hr_b.shape:
        raise DataError("shape-error", f"sr {sr_b.shape} vs hr {hr_b.shape}")
    if spec.kind == "l1":
        diff = sr_b - hr_b
        loss = float(np.mean(np.abs(diff)))
        grad = np.sign(diff) / diff.size
        parts = {"l1": loss}
    else:
        f_hr = spec.perceptual.features(hr_b)
        f_sr, pullback = spec.perceptual.features_and_pullback(sr_b)
        fdiff = f_sr - f_hr
        l_percep = float(np.mean(fdiff * fdiff))
        grad = pullback((2.0 / fdiff.size) * fdiff)
        spec.discriminator.zero_grads()
        l_adv, d_adv = _adv_term(spec.discriminator, sr_b)
        loss = l_percep + spec.adv_weight * l_adv
        grad = grad + spec.adv_weight * d_adv
        parts = {"percep": l_percep, "adv": l_adv}
    if squeeze:
        grad = grad[0]
    return loss, grad, parts


def build_sr_generator(scale: int, channels: int = 12, seed: int = 0) -> Network:
    """Small SR CNN: 3 conv layers, pixel-replication upsample, output conv."""
    specs = [conv2d(channels), relu(), conv2d(channels), relu(), conv2d(channels), relu(),
             upsample(scale), conv2d(3)]
    return build_network(specs, (8, 8, 3), seed=seed, feature_tap=None)


def build_discriminator(seed: int = 0, channels: int = 8) -> Network:
    """3-layer discriminator (2 conv + linear) with sigmoid probability output."""
    specs = [conv2d(channels), relu(), maxpool(2), conv2d(2 * channels), relu(), maxpool(2),
             global_avg_pool(), linear(1), sigmoid()]
    return build_network(specs, (16, 16, 3), seed=seed, feature_tap=None)


@dataclass
class SrTrainConfig:
    patch: int = 16                    # HR patch side; divisible by 4 and scale
    steps: int = 200
    steps_per_epoch: int = 50
    batch_size: int = 8
    learning_rate: float = 0.002
    lr_decay: float = 1.0              # final-step lr multiplier, exponential ramp
    rng_seed: int = 0

    def step_lr(self, step: int) -> float:
        if self.lr_decay == 1.0 or self.steps < 2:
            return self.learning_rate
        return self.learning_rate * self.lr_decay ** (step / (self.steps - 1))


def _sample_patches(images, patch: int, batch: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty((batch, patch, patch, 3), dtype=np.float64)
    for b in range(batch):
        img = images[int(rng.integers(len(images)))]
        h, w = img.shape[:2]
        if h < patch or w < patch:
            raise DataError("crop-too-large", f"image {h}x{w} smaller than patch {patch}")
        y = int(rng.integers(h - patch + 1))
        x = int(rng.integers(w - patch + 1))
        tile = img[y:y + patch, x:x + patch]
        out[b] = tile[:, :, None].repeat(3, axis=2) if tile.ndim == 2 else tile
    return out


def train_sr_model(spec: ModelSpec, train_images, loss_spec: LossSpec,
                   config: SrTrainConfig | None = None,
                   checkpoint_path: str | None = None) -> tuple[ZooModel, list[float]]:
    """Train a small SR network for one zoo spec; returns (model, loss curve).

    Deterministic per (spec.seed, config.rng_seed). For the composite loss,
    discriminator and generator steps alternate 1:1 with the discriminator
    trained on real-vs-generated patches.
    """
    cfg = config or SrTrainConfig()
    if not train_images:
        raise DataError("empty-corpus", "no training images")
    scale = spec.scale
    gen = build_sr_generator(scale, seed=1000 * spec.seed + cfg.rng_seed)
    opt_gen = make_optimizer(OptimizerConfig(learning_rate=cfg.learning_rate,
                                             batch_size=cfg.batch_size))
    disc = loss_spec.discriminator
    opt_disc = make_optimizer(OptimizerConfig(learning_rate=cfg.learning_rate,
                                              batch_size=cfg.batch_size)) if disc else None
    rng = np.random.default_rng(cfg.rng_seed + 7919 * spec.seed)
    curve: list[float] = []
    acc, seen = 0.0, 0
    for step in range(cfg.steps):
        hr = _sample_patches(train_images, cfg.patch, cfg.batch_size, rng)
        lr = np.stack([degrade(im, scale) for im in hr])
        if disc is not None:
            # discriminator step on real vs current generator output
            sr_detached = gen.forward(lr)
            disc.zero_grads()
            for target, batch_imgs in ((1.0, hr), (0.0, np.clip(sr_detached, 0.0, 1.0))):
                probs = disc.forward(batch_imgs)
                if np.any(probs < 0.0) or np.any(probs > 1.0):
                    raise DataError("invalid-discriminator-output",
                                    "discriminator must end in a sigmoid")
                p = np.clip(probs, 1e-12, 1.0 - 1e-12)
                dpdl = 0.5 * (p - target) / (p * (1.0 - p) * p.size)
                disc.backward(dpdl)
            opt_disc.step([(lay.params[k], lay.grads[k])
                           for lay in disc.trainable_layers() for k in lay.params],
                          lr=cfg.step_lr(step))
        gen.zero_grads()
        sr = gen.forward(lr)
        loss, grad_sr, _ = composite_loss(loss_spec, sr, hr)
        if not np.isfinite(loss):
            raise DivergedError(f"non-finite SR loss at step {step}",
                                epoch=step // cfg.steps_per_epoch)
        gen.backward(grad_sr)
        opt_gen.step([(lay.params[k], lay.grads[k])
                      for lay in gen.trainable_layers() for k in lay.params],
                     lr=cfg.step_lr(step))
        acc += loss
        seen += 1
        if seen == cfg.steps_per_epoch or step == cfg.steps - 1:
            curve.append(acc / seen)
            acc, seen = 0.0, 0
    if checkpoint_path:
        save_checkpoint(gen, checkpoint_path)

    def generator(lr_img, _net=gen, _scale=scale):
        out = _net.forward(np.asarray(lr_img, dtype=np.float64)[None])[0]
        return np.clip(out, 0.0, 1.0)

    provenance = {"type": "trained-sr", "checkpoint": checkpoint_path or "",
                  "loss": loss_spec.kind, "steps": cfg.steps}
    model = ZooModel(spec, master_seed=cfg.rng_seed, knobs=None,
                     generator=generator, provenance=provenance)
    return model, curve
