"""Acceptance gate: one test per numbered criterion.

Every test prints exactly one "[criterion N] name: PASS/FAIL" line (echoed
to the real stdout when pytest captures output) and asserts the same
condition. Derived numbers are checked against in-test oracles: central
finite differences for gradients, an all-pairs brute force for distance
ratios, scikit-learn's silhouette for cluster quality, and OpenCV's PNG
encoder for compression rates.

Training runs use desk-scale configs (float32, short schedules, raised
learning rate). The protocol defaults themselves (Adamax at 5e-4, 3 frozen
plus 15 finetune epochs) are asserted as defaults in the unit suites.
"""

import sys
import time

import numpy as np
import pytest

from modelprints.attribution import (AttributorConfig, evaluate_grouped,
                                     seed_triplet_eval, train_attributor)
from modelprints.errors import UsageError
from modelprints.image import (bicubic_resample, degrade, gaussian_blur,
                               grayscale_entropy, load_png,
                               png_bits_per_pixel)
from modelprints.manifest import SourceImage, SplitConfig
from modelprints.metrics import distance_ratio
from modelprints.nn import (OptimizerConfig, TrainSchedule, batchless_norm,
                            build_network, conv2d, global_avg_pool, linear,
                            maxpool, relu, sigmoid, softmax_xent, upsample)
from modelprints.parsing import ParserTask, evaluate_parser, make_split, train_parser
from modelprints.pipeline import build_dataset, grouped_orderings
from modelprints.prnu import (FingerprintDb, PrnuConfig, attribute_nearest,
                              build_fingerprint, prnu_seed_eval, residual)
from modelprints.srtrain import (LossSpec, build_discriminator,
                                 composite_loss, resnet_style_perceptual)
from modelprints.tsne import TsneConfig, joint_affinities, kl_and_grad, tsne
from modelprints.zoo import Zoo, ZooGrid, build_zoo


def report(n, name, ok, detail=""):
    line = f"[criterion {n}] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f"  ({detail})"
    print(line)
    if sys.stdout is not sys.__stdout__ and sys.__stdout__ is not None:
        print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def natural_image(seed, size):
    rng = np.random.default_rng(seed)
    img = gaussian_blur(rng.uniform(0.0, 1.0, size=(size, size, 3)), 2.0)
    ramp = np.linspace(0.0, 0.3, size)[:, None, None]
    return np.clip(0.2 + 0.6 * img + ramp, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Criterion 1: gradient correctness via central finite differences
# ---------------------------------------------------------------------------

def central_diff(f, arr, h=1e-6):
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def max_rel_err(a, b):
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return float(np.max(np.abs(a - b) / scale))


def check_layer(spec, in_shape, x, seed=0):
    """Finite-difference both the input and every parameter gradient."""
    net = build_network([spec], in_shape, seed=seed, feature_tap=None)
    lay = net.layers[0]
    rng = np.random.default_rng(seed + 100)
    wt = rng.standard_normal(lay.forward(x).shape)

    def loss():
        return float(np.sum(wt * lay.forward(x)))

    errs = []
    fd_x = central_diff(loss, x)
    lay.zero_grads()
    lay.forward(x)
    dx = lay.backward(wt)
    errs.append(max_rel_err(dx, fd_x))
    for pname in sorted(lay.params):
        fd_p = central_diff(loss, lay.params[pname])
        errs.append(max_rel_err(lay.grads[pname], fd_p))
    return max(errs)


def test_criterion_1_gradients():
    started = time.time()
    rng = np.random.default_rng(11)
    # kink-free inputs: keep relu/sigmoid activations away from 0 and
    # maxpool entries distinct so +-h never changes the selection
    away = lambda shape: (rng.uniform(0.15, 1.2, shape)
                          * rng.choice([-1.0, 1.0], shape))
    distinct = lambda shape: ((rng.permutation(int(np.prod(shape)))
                               .reshape(shape) / np.prod(shape)) + 0.01)
    errs = {
        "conv2d": check_layer(conv2d(4), (5, 5, 3),
                              rng.standard_normal((2, 5, 5, 3))),
        "linear": check_layer(linear(6), (7,), rng.standard_normal((3, 7))),
        "relu": check_layer(relu(), (4, 4, 2), away((2, 4, 4, 2))),
        "sigmoid": check_layer(sigmoid(), (4, 4, 2), away((2, 4, 4, 2))),
        "maxpool": check_layer(maxpool(2), (4, 4, 2), distinct((2, 4, 4, 2))),
        "global-avg-pool": check_layer(global_avg_pool(), (3, 3, 4),
                                       rng.standard_normal((2, 3, 3, 4))),
        "batchless-norm": check_layer(batchless_norm(), (4, 4, 3),
                                      rng.standard_normal((2, 4, 4, 3))),
        "upsample": check_layer(upsample(2), (3, 3, 2),
                                rng.standard_normal((2, 3, 3, 2))),
    }

    # composite network: all layer kinds chained, gradient through the stack
    specs = [conv2d(4), batchless_norm(), relu(), maxpool(2), conv2d(5),
             sigmoid(), upsample(2), global_avg_pool(), linear(6)]
    net = build_network(specs, (6, 6, 3), seed=3, feature_tap=None)
    x = rng.standard_normal((2, 6, 6, 3))
    wt = rng.standard_normal(net.forward(x).shape)
    fd_x = central_diff(lambda: float(np.sum(wt * net.forward(x))), x)
    net.zero_grads()
    net.forward(x)
    errs["stack"] = max_rel_err(net.backward(wt), fd_x)

    # softmax cross-entropy head
    logits = rng.standard_normal((4, 5))
    labels = np.array([0, 3, 2, 2])
    _, dlogits, _ = softmax_xent(logits, labels)
    fd_l = central_diff(lambda: softmax_xent(logits, labels)[0], logits)
    errs["softmax-xent"] = max_rel_err(dlogits, fd_l)

    # composite training loss: perceptual + weighted adversarial term
    phi_net = build_network([conv2d(4), relu(), conv2d(6), relu(), maxpool(2)],
                            (8, 8, 3), seed=5, feature_tap=None)
    spec = LossSpec(kind="composite", adv_weight=1e-2,
                    perceptual=resnet_style_perceptual(phi_net, "conv2d2"),
                    discriminator=build_discriminator(seed=6, channels=4))
    sr = 0.5 + 0.1 * rng.standard_normal((8, 8, 3))
    hr = 0.5 + 0.1 * rng.standard_normal((8, 8, 3))
    _, grad, _ = composite_loss(spec, sr, hr)
    fd_sr = central_diff(lambda: composite_loss(spec, sr, hr)[0], sr)
    errs["composite-loss"] = max_rel_err(grad, fd_sr)

    # plain l1 branch, entries kept away from the |.| kink
    sr1 = hr + 0.2 * rng.choice([-1.0, 1.0], hr.shape)
    l1 = LossSpec(kind="l1")
    _, grad1, _ = composite_loss(l1, sr1, hr)
    fd1 = central_diff(lambda: composite_loss(l1, sr1, hr)[0], sr1)
    errs["l1-loss"] = max_rel_err(grad1, fd1)

    elapsed = time.time() - started
    worst = max(errs, key=errs.get)
    ok = max(errs.values()) < 1e-3 and elapsed < 60.0
    report(1, "gradient correctness", ok,
           f"worst {worst} rel err {errs[worst]:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 2: distance-ratio oracle equivalence and invariances
# ---------------------------------------------------------------------------

def brute_force_ratio(a, b):
    def intra(p):
        d = [np.linalg.norm(p[i] - p[j])
             for i in range(len(p)) for j in range(i + 1, len(p))]
        return float(np.mean(d))

    cross = float(np.mean([np.linalg.norm(x - y) for x in a for y in b]))
    return (intra(a) + intra(b)) / (2.0 * cross)


def random_rotation(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def test_criterion_2_distance_ratio():
    rng = np.random.default_rng(22)
    worst_brute = worst_inv = 0.0
    exact_self = True
    for _ in range(50):
        d = int(rng.integers(1, 9))
        a = rng.standard_normal((int(rng.integers(2, 31)), d)) * rng.uniform(0.5, 3.0)
        b = rng.standard_normal((int(rng.integers(2, 31)), d)) + rng.uniform(-2, 2)
        r = distance_ratio(a, b)
        worst_brute = max(worst_brute, abs(r - brute_force_ratio(a, b)))
        exact_self &= distance_ratio(a, a.copy()) == 1.0
        exact_self &= distance_ratio(a, a[rng.permutation(len(a))]) == 1.0
        # rigid motion (rotation + translation) and positive scaling
        rot = random_rotation(rng, d)
        shift = rng.standard_normal(d)
        worst_inv = max(worst_inv,
                        abs(distance_ratio(a @ rot.T + shift, b @ rot.T + shift) - r),
                        abs(distance_ratio(3.7 * a, 3.7 * b) - r))
    ok = worst_brute <= 1e-9 and exact_self and worst_inv <= 1e-9
    report(2, "distance ratio vs brute force", ok,
           f"max |R - oracle| {worst_brute:.1e}, max invariance drift {worst_inv:.1e}")


# ---------------------------------------------------------------------------
# Criterion 3: noise-residual fingerprint pipeline on planted patterns
# ---------------------------------------------------------------------------

def test_criterion_3_prnu_pipeline():
    started = time.time()
    size, n_sources, n_train, n_test = 64, 5, 50, 50
    coords = np.arange(size)
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    freqs = [(29, 2), (2, 29), (23, 23), (31, 11), (11, 31)]
    patterns = [np.cos(2.0 * np.pi * (fx * xx + fy * yy) / size)
                for fx, fy in freqs]
    # distinct-frequency cosines over a full period grid are orthogonal
    gram = np.array([[float(np.sum(p * q)) for q in patterns] for p in patterns])
    assert np.allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-9)

    rng = np.random.default_rng(33)

    def make_image(which):
        content = gaussian_blur(rng.uniform(0.2, 0.8, (size, size)), 3.0)
        return np.clip(content + 0.02 * patterns[which]
                       + 0.01 * rng.standard_normal((size, size)), 0.0, 1.0)

    config = PrnuConfig(crop_size=size)
    db = FingerprintDb(config)
    for k in range(n_sources):
        res = [residual(make_image(k), config) for _ in range(n_train)]
        db.add(build_fingerprint(res, f"source-{k}"))
    correct = sum(attribute_nearest(make_image(k), db)[0][0] == f"source-{k}"
                  for k in range(n_sources) for _ in range(n_test))
    accuracy = correct / (n_sources * n_test)
    elapsed = time.time() - started
    ok = accuracy >= 0.95 and elapsed < 120.0
    report(3, "prnu planted-pattern attribution", ok,
           f"top-1 {accuracy:.3f} on {n_sources * n_test} images, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criteria 4-6 share a 36-model zoo with a built dataset
# ---------------------------------------------------------------------------

ACCEPT_CFG = AttributorConfig(crop=64, crops_per_image=3,
                              test_crops_per_image=4, channels=(12, 24),
                              feature_dim=64,
                              optimizer=OptimizerConfig(learning_rate=0.01),
                              schedule=TrainSchedule(1, 20), dtype="float32")


@pytest.fixture(scope="module")
def zoo36(tmp_path_factory):
    started = time.time()
    grid = ZooGrid(architectures=("bicubic", "lanczos"), datasets=("default",),
                   scales=(2, 4), losses=("l1", "vgg-adv", "resnet-adv"),
                   seeds=(1, 2, 3))
    zoo = build_zoo(grid, master_seed=77)
    assert len(zoo.models) == 36
    sources = [SourceImage(f"img{i:03d}", f"mem/img{i:03d}.png",
                           natural_image(500 + i, 96)) for i in range(8)]
    out = tmp_path_factory.mktemp("accept36")
    manifest = build_dataset(sources, zoo, str(out), SplitConfig(5, 1, 2),
                             master_seed=77)
    return {"zoo": zoo, "manifest": manifest,
            "build_s": time.time() - started}


@pytest.fixture(scope="module")
def attributor36(zoo36):
    started = time.time()
    ids = sorted(m.spec.model_id for m in zoo36["zoo"].models)
    bundle = train_attributor(zoo36["manifest"], ids, ACCEPT_CFG, n_seeds=3)
    return {"bundle": bundle, "train_s": time.time() - started}


def test_criterion_4_attribution_ordering(zoo36, attributor36):
    started = time.time()
    report_ = evaluate_grouped(attributor36["bundle"], zoo36["manifest"],
                               zoo36["zoo"])
    elapsed = (zoo36["build_s"] + attributor36["train_s"]
               + time.time() - started)
    orderings = grouped_orderings(report_)
    per_seed_ok = all(all(chk["holds_per_seed"]) for chk in orderings)
    chance = 1.0 / 36.0
    margin = report_.overall.mean / chance
    ok = (per_seed_ok and margin >= 5.0 and elapsed < 1800.0)
    detail = (f"overall {report_.overall.fmt()}, {margin:.1f}x chance; " +
              "; ".join(f"{c['axis']} {c['upper']}>={c['lower']} "
                        f"{['-', '+'][all(c['holds_per_seed'])]}"
                        for c in orderings) +
              f"; {elapsed:.0f}s end to end")
    report(4, "attribution ordering on 36-model zoo", ok, detail)


def test_criterion_5_seed_triplets(zoo36, attributor36):
    learned = seed_triplet_eval(attributor36["bundle"], zoo36["manifest"],
                                zoo36["zoo"])
    adv = [name for name in learned.per_triplet if not name.endswith("-l1")]
    assert len(adv) == 8  # 2 arch x 2 scales x 2 adv losses
    learned_adv = float(np.mean([learned.per_triplet[n].mean for n in adv]))

    ids = sorted(m.spec.model_id for m in zoo36["zoo"].models)
    manifest = zoo36["manifest"]
    images = {mid: ([load_png(manifest.generated_file(r))
                     for r in manifest.rows(model_id=mid, split="train")],
                    [load_png(manifest.generated_file(r))
                     for r in manifest.rows(model_id=mid, split="test")])
              for mid in ids}
    baseline = prnu_seed_eval(zoo36["zoo"].specs(), images,
                              PrnuConfig(crop_size=64))
    prnu_adv = float(np.mean([acc for name, acc in baseline.per_triplet.items()
                              if "-adv" in name]))
    ok = learned_adv > 0.90 and learned_adv > prnu_adv
    report(5, "seed-triplet distinction, learned vs prnu", ok,
           f"learned {learned_adv:.3f} vs prnu {prnu_adv:.3f} on adv triplets")


def test_criterion_6_parsing_contrast(zoo36):
    manifest, zoo = zoo36["manifest"], zoo36["zoo"]
    easy = make_split(zoo, ParserTask("scale", "seed", 3))
    easy_bundle = train_parser(manifest, zoo, easy, ACCEPT_CFG, n_seeds=3)
    easy_rep = evaluate_parser(easy_bundle, manifest, zoo, easy.test_ids)

    hard = make_split(zoo, ParserTask("scale", "loss", "l1"))
    assert all("-l1-" not in mid for mid in hard.train_ids)
    hard_bundle = train_parser(manifest, zoo, hard, ACCEPT_CFG, n_seeds=3)
    hard_rep = evaluate_parser(hard_bundle, manifest, zoo, hard.test_ids)

    rejected = 0
    for predicted, axis, value in (("scale", "scale", 2),
                                   ("loss", "loss", "l1"),
                                   ("dataset", "seed", 2)):
        with pytest.raises(UsageError) as err:
            make_split(zoo, ParserTask(predicted, axis, value))
        rejected += err.value.code == "nonsensical-task"

    chance = easy_rep.chance_baseline
    ok = (easy_rep.accuracy.mean >= 0.95
          and abs(hard_rep.accuracy.mean - chance) <= 0.10
          and rejected == 3)
    report(6, "parsing easy/hard contrast", ok,
           f"seed-held-out {easy_rep.accuracy.fmt()}, adv->l1 "
           f"{hard_rep.accuracy.fmt()} vs chance {100 * chance:.0f}%, "
           f"{rejected}/3 nonsensical cells rejected")


# ---------------------------------------------------------------------------
# Criterion 7: dataset plumbing
# ---------------------------------------------------------------------------

def test_criterion_7_dataset_plumbing(tmp_path):
    grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                   scales=(2, 4), losses=("l1", "vgg-adv", "resnet-adv"),
                   seeds=(1, 2))
    zoo = build_zoo(grid, master_seed=9)
    assert len(zoo.models) == 12
    sources = [SourceImage(f"img{i:03d}", f"mem/img{i:03d}.png",
                           natural_image(700 + i, 48)) for i in range(20)]
    split = SplitConfig(16, 2, 2)

    clean = build_dataset(sources, zoo, str(tmp_path / "clean"), split,
                          master_seed=9)
    rows_ok = len(clean) == 240
    counts_ok = all(clean.split_counts(m.spec.model_id)
                    == {"train": 16, "val": 2, "test": 2}
                    for m in zoo.models)

    # interrupted build: five models, then resume with the full zoo
    partial = Zoo(zoo.models[:5], grid, 9, zoo.knobs)
    build_dataset(sources, partial, str(tmp_path / "resumed"), split,
                  master_seed=9)
    build_dataset(sources, zoo, str(tmp_path / "resumed"), split,
                  master_seed=9)
    resumed_bytes = (tmp_path / "resumed" / "manifest.jsonl").read_bytes()
    clean_bytes = (tmp_path / "clean" / "manifest.jsonl").read_bytes()
    resume_ok = resumed_bytes == clean_bytes

    # degrade = gaussian blur (sigma s/2) then bicubic downsample, bit-exact
    img = natural_image(71, 48)
    degrade_ok = all(
        np.array_equal(degrade(img, s),
                       bicubic_resample(gaussian_blur(img, s / 2.0), 1.0 / s))
        for s in (2, 4))

    ok = rows_ok and counts_ok and resume_ok and degrade_ok
    report(7, "dataset plumbing", ok,
           f"rows {len(clean)}, splits exact {counts_ok}, "
           f"resume byte-identical {resume_ok}, degrade bit-exact {degrade_ok}")


# ---------------------------------------------------------------------------
# Criterion 8: t-SNE gradient, cluster quality, determinism
# ---------------------------------------------------------------------------

def test_criterion_8_tsne():
    rng = np.random.default_rng(88)
    pts = rng.standard_normal((12, 4))
    p = joint_affinities(pts, perplexity=3.0)
    y = rng.standard_normal((12, 2))
    _, grad = kl_and_grad(p, y)
    fd = central_diff(lambda: kl_and_grad(p, y)[0], y)
    grad_err = max_rel_err(grad, fd)

    blob_a = rng.standard_normal((30, 10))
    blob_b = rng.standard_normal((30, 10)) + 8.0
    blobs = np.vstack([blob_a, blob_b])
    labels = np.array([0] * 30 + [1] * 30)
    cfg = TsneConfig(perplexity=10.0, iterations=400, seed=2)
    emb = tsne(blobs, cfg)
    from sklearn.metrics import silhouette_score
    sil = float(silhouette_score(emb, labels))
    deterministic = np.array_equal(emb, tsne(blobs, TsneConfig(
        perplexity=10.0, iterations=400, seed=2)))

    ok = grad_err < 1e-3 and sil > 0.5 and deterministic
    report(8, "t-sne gradient and clustering", ok,
           f"grad rel err {grad_err:.2e}, silhouette {sil:.3f}, "
           f"deterministic {deterministic}")


# ---------------------------------------------------------------------------
# Criterion 9: corpus statistics against a reference encoder
# ---------------------------------------------------------------------------

def test_criterion_9_corpus_stats():
    entropy_const = grayscale_entropy(np.full((32, 32), 0.5))
    uniform = (np.repeat(np.arange(256), 4).reshape(32, 32) / 255.0)
    entropy_uniform = grayscale_entropy(uniform)

    import cv2
    rng = np.random.default_rng(99)
    worst_gap = 0.0
    for i in range(6):
        gray = rng.integers(0, 256, (96, 96), dtype=np.uint8)
        color = rng.integers(0, 256, (96, 96, 3), dtype=np.uint8)
        for arr in (gray, color):
            ours = png_bits_per_pixel(arr / 255.0)
            okflag, buf = cv2.imencode(".png", arr)
            assert okflag
            ref = 8.0 * len(buf) / (96 * 96)
            worst_gap = max(worst_gap, abs(ours - ref) / ref)

    ok = (entropy_const == 0.0 and entropy_uniform == 8.0
          and worst_gap <= 0.10)
    report(9, "corpus statistics", ok,
           f"entropy const {entropy_const}, uniform {entropy_uniform}, "
           f"max bpp gap {100 * worst_gap:.1f}%")
