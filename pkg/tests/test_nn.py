"""Gradient checks and training-loop contracts for the network engine.

Every layer's backward pass is verified against central finite differences
(h = 1e-4) in float64, relative error < 1e-3.
"""

import numpy as np
import pytest

from modelprints.errors import DataError, DivergedError, ToolkitError, UsageError
from modelprints.nn import (
    LayerSpec,
    Network,
    OptimizerConfig,
    TrainSchedule,
    batchless_norm,
    bce_loss,
    build_network,
    conv2d,
    global_avg_pool,
    l1_loss,
    linear,
    load_checkpoint,
    maxpool,
    mse_loss,
    relu,
    save_checkpoint,
    sigmoid,
    softmax_xent,
    softmax_xent_spec,
    train_classifier,
    upsample,
)
from modelprints.nn.layers import make_layer

H = 1e-4


def numeric_grad(f, x, h=H):
    """Central finite differences of scalar f() with respect to array x."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, n):
    denom = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), 1e-6)
    return np.abs(a - n).max(initial=0.0) / denom


def check_layer_grads(layer, x, tol=1e-3, seed=0):
    """FD-check dx and every parameter gradient of a single layer."""
    rng = np.random.default_rng(seed)
    proj = rng.standard_normal(layer.forward(x.copy()).shape)

    def scalar():
        return float(np.sum(proj * layer.forward(x)))

    layer.zero_grads()
    layer.forward(x)
    dx = layer.backward(proj.copy())
    analytic_params = {k: layer.grads[k].copy() for k in layer.params}

    assert rel_err(dx, numeric_grad(scalar, x)) < tol, layer.name
    for k, param in layer.params.items():
        num = numeric_grad(scalar, param)
        assert rel_err(analytic_params[k], num) < tol, f"{layer.name}/{k}"


def build_single(spec, in_shape, seed=0):
    layer, out_shape = make_layer(spec, "probe", in_shape, np.random.default_rng(seed))
    return layer, out_shape


class TestLayerGradients:
    def test_conv2d(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            layer, _ = build_single(conv2d(3, kernel=3), (5, 6, 2), seed)
            check_layer_grads(layer, rng.standard_normal((2, 5, 6, 2)), seed=seed)

    def test_conv2d_kernel5(self):
        rng = np.random.default_rng(7)
        layer, _ = build_single(conv2d(2, kernel=5), (6, 6, 3), 7)
        check_layer_grads(layer, rng.standard_normal((1, 6, 6, 3)), seed=7)

    def test_relu(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((2, 4, 4, 3))
        x[np.abs(x) < 0.05] = 0.1  # keep away from the kink
        layer, _ = build_single(relu(), (4, 4, 3))
        check_layer_grads(layer, x)

    def test_sigmoid(self):
        rng = np.random.default_rng(2)
        layer, _ = build_single(sigmoid(), (3, 3, 2))
        check_layer_grads(layer, rng.standard_normal((2, 3, 3, 2)))

    def test_maxpool(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            # distinct values with gaps far above h, so FD never flips the argmax
            x = rng.permuted(np.arange(2 * 6 * 4 * 2, dtype=float)).reshape(2, 6, 4, 2) * 0.1
            layer, _ = build_single(maxpool(2), (6, 4, 2), seed)
            check_layer_grads(layer, x, seed=seed)

    def test_global_avg_pool(self):
        rng = np.random.default_rng(3)
        layer, _ = build_single(global_avg_pool(), (4, 5, 3))
        check_layer_grads(layer, rng.standard_normal((2, 4, 5, 3)))

    def test_linear(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            layer, _ = build_single(linear(4), (6,), seed)
            check_layer_grads(layer, rng.standard_normal((3, 6)), seed=seed)

    def test_batchless_norm(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            layer, _ = build_single(batchless_norm(), (4, 5, 3), seed)
            check_layer_grads(layer, 0.5 * rng.standard_normal((2, 4, 5, 3)), seed=seed)

    def test_upsample(self):
        rng = np.random.default_rng(4)
        layer, _ = build_single(upsample(2), (3, 4, 2))
        check_layer_grads(layer, rng.standard_normal((2, 3, 4, 2)))


class TestLossGradients:
    def test_softmax_xent_matches_manual(self):
        rng = np.random.default_rng(0)
        logits = rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, size=5)
        loss, _, probs = softmax_xent(logits, labels)
        manual = 0.0
        for i in range(5):
            e = np.exp(logits[i] - logits[i].max())
            p = e / e.sum()
            assert np.allclose(probs[i], p)
            manual -= np.log(p[labels[i]])
        assert abs(loss - manual / 5) < 1e-12

    def test_softmax_xent_grad(self):
        rng = np.random.default_rng(1)
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, size=4)
        _, dlogits, _ = softmax_xent(logits, labels)
        num = numeric_grad(lambda: softmax_xent(logits, labels)[0], logits)
        assert rel_err(dlogits, num) < 1e-3

    def test_mse_grad(self):
        rng = np.random.default_rng(2)
        pred = rng.standard_normal((3, 4, 4, 2))
        target = rng.standard_normal((3, 4, 4, 2))
        _, dpred = mse_loss(pred, target)
        num = numeric_grad(lambda: mse_loss(pred, target)[0], pred)
        assert rel_err(dpred, num) < 1e-3

    def test_l1_grad(self):
        rng = np.random.default_rng(3)
        pred = rng.standard_normal((2, 5, 5, 1))
        target = pred + np.where(rng.standard_normal(pred.shape) > 0, 0.5, -0.5)
        _, dpred = l1_loss(pred, target)
        num = numeric_grad(lambda: l1_loss(pred, target)[0], pred)
        assert rel_err(dpred, num) < 1e-3

    def test_bce_grad(self):
        rng = np.random.default_rng(4)
        probs = rng.uniform(0.1, 0.9, size=(6, 1))
        labels = rng.integers(0, 2, size=(6, 1)).astype(float)
        _, dprobs = bce_loss(probs, labels)
        num = numeric_grad(lambda: bce_loss(probs, labels)[0], probs)
        assert rel_err(dprobs, num) < 1e-3

    def test_bce_rejects_out_of_range(self):
        with pytest.raises(DataError) as exc:
            bce_loss(np.array([0.2, 1.3]), np.array([1.0, 0.0]))
        assert exc.value.code == "invalid-discriminator-output"


class TestWholeNetworkGradients:
    def test_every_weight_on_small_net(self):
        """All weights of a conv/pool/linear classifier vs finite differences."""
        specs = [conv2d(4), relu(), maxpool(2), global_avg_pool(), linear(3), softmax_xent_spec()]
        net = build_network(specs, (8, 8, 3), seed=11)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 8, 8, 3))
        y = rng.integers(0, 3, size=2)

        def scalar():
            return softmax_xent(net.forward(x), y)[0]

        net.zero_grads()
        _, dlogits, _ = softmax_xent(net.forward(x), y)
        net.backward(dlogits)
        for lay, pname, param in net.parameters():
            analytic = lay.grads[pname].copy()
            num = numeric_grad(scalar, param)
            assert rel_err(analytic, num) < 1e-3, f"{lay.name}/{pname}"

    def test_input_gradient_through_deep_stack(self):
        specs = [conv2d(3), batchless_norm(), relu(), conv2d(2), sigmoid(),
                 maxpool(2), global_avg_pool(), linear(2)]
        net = build_network(specs, (6, 6, 2), seed=5, feature_tap=None)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 6, 6, 2))
        proj = rng.standard_normal((2, 2))

        def scalar():
            return float(np.sum(proj * net.forward(x)))

        net.zero_grads()
        net.forward(x)
        dx = net.backward(proj.copy())
        assert rel_err(dx, numeric_grad(scalar, x)) < 1e-3


class TestBuildAndShapes:
    def test_shape_error_names_layer(self):
        specs = [conv2d(4), linear(3)]
        with pytest.raises(ToolkitError) as exc:
            build_network(specs, (8, 8, 3))
        assert exc.value.code == "shape-error"
        assert "linear1" in str(exc.value)

    def test_maxpool_divisibility(self):
        with pytest.raises(ToolkitError) as exc:
            build_network([maxpool(2)], (7, 8, 3))
        assert exc.value.code == "shape-error"

    def test_unknown_kind(self):
        with pytest.raises(ToolkitError) as exc:
            build_network([LayerSpec("dropout")], (8, 8, 3))
        assert exc.value.code == "shape-error"

    def test_head_must_be_last(self):
        with pytest.raises(ToolkitError):
            build_network([softmax_xent_spec(), linear(2)], (4,))

    def test_output_shape_tracking(self):
        specs = [conv2d(6), maxpool(2), upsample(2), maxpool(4), global_avg_pool(), linear(5)]
        net = build_network(specs, (16, 16, 3))
        assert net.output_shape == (5,)
        out = net.forward(np.zeros((2, 16, 16, 3)))
        assert out.shape == (2, 5)

    def test_seeded_init_deterministic(self):
        specs = [conv2d(4), relu(), global_avg_pool(), linear(2)]
        a = build_network(specs, (8, 8, 3), seed=9)
        b = build_network(specs, (8, 8, 3), seed=9)
        c = build_network(specs, (8, 8, 3), seed=10)
        for (_, _, pa), (_, _, pb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa, pb)
        assert any(not np.array_equal(pa, pc)
                   for (_, _, pa), (_, _, pc) in zip(a.parameters(), c.parameters()))


class TestFeatures:
    def _net(self):
        specs = [conv2d(4), relu(), global_avg_pool(), linear(3), softmax_xent_spec()]
        return build_network(specs, (8, 8, 3), seed=0)

    def test_auto_tap_is_pre_head(self):
        net = self._net()
        assert net.feature_tap == "global-avg-pool1"
        x = np.random.default_rng(0).standard_normal((2, 8, 8, 3))
        feats = net.extract_features(x)
        assert feats.shape == (2, 4)

    def test_missing_tap(self):
        net = self._net()
        net.feature_tap = None
        with pytest.raises(DataError) as exc:
            net.extract_features(np.zeros((1, 8, 8, 3)))
        assert exc.value.code == "no-feature-tap"

    def test_bad_tap_name(self):
        net = self._net()
        net.feature_tap = "conv2d9"
        with pytest.raises(DataError) as exc:
            net.extract_features(np.zeros((1, 8, 8, 3)))
        assert exc.value.code == "no-feature-tap"

    def test_no_such_layer(self):
        with pytest.raises(DataError) as exc:
            self._net().layer("missing")
        assert exc.value.code == "no-such-layer"


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        specs = [conv2d(4), batchless_norm(), relu(), maxpool(2),
                 global_avg_pool(), linear(3), softmax_xent_spec()]
        net = build_network(specs, (8, 8, 3), seed=3)
        path = str(tmp_path / "net.ckpt")
        save_checkpoint(net, path)
        loaded = load_checkpoint(path)
        assert loaded.loss == "softmax-xent"
        assert loaded.feature_tap == net.feature_tap
        x = np.random.default_rng(1).standard_normal((2, 8, 8, 3))
        # weights round-trip through float32, so compare at that precision
        assert np.allclose(loaded.forward(x), net.forward(x), atol=1e-5)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(DataError):
            load_checkpoint(str(path))


def toy_problem(n=48, seed=0):
    """Two classes separated by channel mean, learnable in a few epochs."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 8, 8, 2)) * 0.3
    y = rng.integers(0, 2, size=n)
    x[y == 1, :, :, 0] += 1.0
    return x, y


class TestTraining:
    def _net(self, seed=0):
        specs = [conv2d(4), relu(), global_avg_pool(), linear(2), softmax_xent_spec()]
        return build_network(specs, (8, 8, 2), seed=seed)

    def test_loss_decreases(self):
        x, y = toy_problem()
        net = self._net()
        curve = train_classifier(net, x, y, OptimizerConfig(learning_rate=0.01, batch_size=16),
                                 TrainSchedule(frozen_epochs=1, finetune_epochs=6, rng_seed=0))
        assert len(curve) == 7
        assert curve[-1] < curve[0]
        assert (net.predict_classes(x) == y).mean() > 0.9

    def test_deterministic_training(self):
        x, y = toy_problem()
        curves, finals = [], []
        for _ in range(2):
            net = self._net(seed=4)
            curves.append(train_classifier(net, x, y, OptimizerConfig(),
                                           TrainSchedule(2, 2, rng_seed=7)))
            finals.append([p.copy() for _, _, p in net.parameters()])
        assert curves[0] == curves[1]
        for pa, pb in zip(*finals):
            assert np.array_equal(pa, pb)

    def test_frozen_phase_keeps_body_bitwise(self):
        x, y = toy_problem()
        net = self._net(seed=2)
        before = {f"{lay.name}/{k}": lay.params[k].copy()
                  for lay in net.layers for k in lay.params}
        train_classifier(net, x, y, OptimizerConfig(),
                         TrainSchedule(frozen_epochs=2, finetune_epochs=0, rng_seed=1))
        for lay in net.layers:
            for k in lay.params:
                key = f"{lay.name}/{k}"
                if lay.name == "linear1":
                    assert not np.array_equal(lay.params[k], before[key]) or k == "b"
                else:
                    assert np.array_equal(lay.params[k], before[key]), key

    def test_divergence_raises_with_epoch(self):
        x, y = toy_problem(n=8)
        x[0, 0, 0, 0] = np.inf
        net = self._net()
        with pytest.raises(DivergedError) as exc, np.errstate(invalid="ignore", over="ignore"):
            train_classifier(net, x, y, OptimizerConfig(batch_size=8),
                             TrainSchedule(1, 1, rng_seed=0))
        assert exc.value.code == "diverged"
        assert exc.value.epoch == 0

    def test_schedule_validation(self):
        with pytest.raises(UsageError):
            TrainSchedule(0, 0)
        with pytest.raises(UsageError):
            OptimizerConfig(algorithm="adam")
        with pytest.raises(UsageError):
            OptimizerConfig(learning_rate=-1.0)
        with pytest.raises(UsageError):
            OptimizerConfig(batch_size=0)

    def test_defaults_match_protocol(self):
        cfg = OptimizerConfig()
        assert cfg.algorithm == "adamax"
        assert cfg.learning_rate == 0.0005
        assert cfg.batch_size == 16
        sched = TrainSchedule()
        assert sched.frozen_epochs == 3
        assert sched.finetune_epochs == 15


class TestAdamax:
    def test_first_step_is_signlike(self):
        cfg = OptimizerConfig(learning_rate=0.1)
        from modelprints.nn.optim import Adamax
        opt = Adamax(cfg)
        p = np.array([1.0, -2.0])
        g = np.array([0.5, -0.25])
        opt.step([(p, g)])
        # first step: m/(1-b1) = g, u = |g|, so update ~= lr * sign(g)
        assert np.allclose(p, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)

    def test_infinity_norm_memory(self):
        cfg = OptimizerConfig(learning_rate=0.1, beta1=0.0)
        from modelprints.nn.optim import Adamax
        opt = Adamax(cfg)
        p = np.array([0.0])
        opt.step([(p, np.array([10.0]))])
        first = abs(p[0])
        p2 = np.array([0.0])
        opt2 = Adamax(cfg)
        opt2.step([(p2, np.array([10.0]))])
        opt2.step([(p2, np.array([0.1]))])
        # second step divides by the decayed max |g|, not the tiny new one
        second = abs(p2[0] - (-first))
        expected = 0.1 * 0.1 / (0.999 * 10.0 + cfg.epsilon)
        assert abs(second - expected) < 1e-9
