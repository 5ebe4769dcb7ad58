"""Synthetic zoo: cardinality, determinism, and engineered signal contracts."""

import numpy as np
import pytest

from modelprints.errors import DataError, UsageError
from modelprints.image import gaussian_blur
from modelprints.zoo import (
    ARCHITECTURES,
    LOSSES,
    ModelSpec,
    SynthKnobs,
    ZooGrid,
    build_zoo,
    generate,
    load_zoo_description,
    mean_abs_laplacian,
    save_zoo_description,
)


def probe_image(seed=0, size=48):
    """Smooth natural-ish probe: blurred noise plus a gentle ramp."""
    rng = np.random.default_rng(seed)
    img = gaussian_blur(rng.uniform(0.0, 1.0, size=(size, size, 3)), 2.0)
    ramp = np.linspace(0.0, 0.3, size)[:, None, None]
    return np.clip(0.2 + 0.6 * img + ramp, 0.0, 1.0)


class TestGrid:
    def test_small_grid_cardinality(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                       scales=(2, 4), losses=LOSSES, seeds=(1,))
        assert len(build_zoo(grid)) == 6

    def test_paper_subsetting_360_to_180(self):
        grid = ZooGrid(architectures=ARCHITECTURES,
                       datasets=("default", "alt", "alt2", "alt3"),
                       scales=(2, 4), losses=LOSSES, seeds=(1, 2, 3))
        assert len(list(grid.combinations())) == 360
        specs = grid.specs()
        assert len(specs) == 180
        assert all(s.seed == 1 or s.dataset == "default" for s in specs)

    def test_default_grid(self):
        zoo = build_zoo()
        # 5 arch x 2 datasets x 2 scales x 3 losses x 3 seeds = 360 combos,
        # subset rule keeps seed=1 or dataset=default
        assert len(zoo) == 120

    def test_duplicate_model_rejected(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default", "default"),
                       scales=(2,), losses=("l1",), seeds=(1,))
        with pytest.raises(DataError) as exc:
            build_zoo(grid)
        assert exc.value.code == "duplicate-model"

    def test_empty_grid_rejected(self):
        with pytest.raises(UsageError):
            build_zoo(ZooGrid(architectures=()))

    def test_bad_spec_values(self):
        with pytest.raises(UsageError):
            ModelSpec("srcnn", "default", 2, "l1", 1)
        with pytest.raises(UsageError):
            ModelSpec("bicubic", "default", 3, "l1", 1)
        with pytest.raises(UsageError):
            ModelSpec("bicubic", "default", 2, "mse", 1)


class TestGenerate:
    def test_scale_contract(self):
        zoo = build_zoo(ZooGrid(architectures=ARCHITECTURES, datasets=("default",),
                                scales=(2, 4), losses=("l1", "vgg-adv"), seeds=(1,)))
        lr = probe_image(0, 16)
        for model in zoo.models:
            out = generate(model, lr)
            s = model.spec.scale
            assert out.shape == (16 * s, 16 * s, 3), model.model_id
            assert out.min() >= 0.0 and out.max() <= 1.0
        odd = probe_image(1, 13)[:11, :13]
        m2 = zoo.model("bicubic-default-2x-l1-s1")
        assert generate(m2, odd).shape == (22, 26, 3)

    def test_constant_through_l1_models(self):
        zoo = build_zoo(ZooGrid(architectures=ARCHITECTURES, datasets=("default",),
                                scales=(2,), losses=("l1",), seeds=(1,)))
        lr = np.full((12, 12, 3), 0.5)
        for model in zoo.models:
            out = generate(model, lr)
            assert np.ptp(out) < 1e-9, model.model_id
            assert abs(out.mean() - 0.5) < 1e-9, model.model_id

    def test_determinism_across_builds(self):
        grid = ZooGrid(architectures=("learned-kernel",), datasets=("default",),
                       scales=(2,), losses=("vgg-adv",), seeds=(1,))
        lr = probe_image(2, 20)
        a = generate(build_zoo(grid, master_seed=5).models[0], lr)
        b = generate(build_zoo(grid, master_seed=5).models[0], lr)
        c = generate(build_zoo(grid, master_seed=6).models[0], lr)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_changes_adv_outputs(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                       scales=(2,), losses=("vgg-adv",), seeds=(1, 2))
        zoo = build_zoo(grid)
        m1, m2 = zoo.models
        diffs = []
        for i in range(10):
            lr = probe_image(10 + i, 20)
            diffs.append(np.abs(generate(m1, lr) - generate(m2, lr)).mean())
        assert all(d > 0 for d in diffs)

    def test_adv_has_higher_hf_energy(self):
        grid = ZooGrid(architectures=("bicubic", "edge-directed"), datasets=("default",),
                       scales=(2, 4), losses=("l1", "vgg-adv"), seeds=(1,))
        zoo = build_zoo(grid)
        for arch in ("bicubic", "edge-directed"):
            for scale in (2, 4):
                l1_m = zoo.model(f"{arch}-default-{scale}x-l1-s1")
                adv_m = zoo.model(f"{arch}-default-{scale}x-vgg-adv-s1")
                for p in range(3):
                    lr = probe_image(20 + p, 24)
                    assert (mean_abs_laplacian(generate(adv_m, lr))
                            > mean_abs_laplacian(generate(l1_m, lr))), (arch, scale, p)

    def test_texture_tiles_depend_on_seed_not_run(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                       scales=(2,), losses=("vgg-adv",), seeds=(1, 2))
        zoo = build_zoo(grid, master_seed=3)
        t1 = zoo.models[0].texture_tile()
        t2 = zoo.models[1].texture_tile()
        again = build_zoo(grid, master_seed=3).models[0].texture_tile()
        assert np.array_equal(t1, again)
        corr = np.corrcoef(t1.ravel(), t2.ravel())[0, 1]
        assert abs(corr) < 0.2

    def test_dataset_transfer_is_subtle_but_present(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default", "alt"),
                       scales=(2,), losses=("l1",), seeds=(1,), subset_rule="all")
        zoo = build_zoo(grid)
        lr = probe_image(3, 20)
        a = generate(zoo.model("bicubic-default-2x-l1-s1"), lr)
        b = generate(zoo.model("bicubic-alt-2x-l1-s1"), lr)
        diff = np.abs(a - b).mean()
        assert 0.0 < diff < 0.05


class TestZooDescription:
    def test_round_trip(self, tmp_path):
        grid = ZooGrid(architectures=("bicubic", "lanczos"), datasets=("default",),
                       scales=(2,), losses=("l1", "vgg-adv"), seeds=(1, 2))
        zoo = build_zoo(grid, master_seed=11, knobs=SynthKnobs(texture_amp_2x=0.02))
        path = str(tmp_path / "zoo.json")
        save_zoo_description(zoo, path)
        loaded = load_zoo_description(path)
        assert [m.model_id for m in loaded.models] == [m.model_id for m in zoo.models]
        assert loaded.knobs.texture_amp_2x == 0.02
        lr = probe_image(4, 16)
        assert np.array_equal(generate(loaded.models[-1], lr),
                              generate(zoo.models[-1], lr))

    def test_rejects_non_zoo_file(self, tmp_path):
        path = tmp_path / "not_zoo.json"
        path.write_text("{}")
        with pytest.raises(DataError):
            load_zoo_description(str(path))

    def test_unknown_model_lookup(self):
        zoo = build_zoo(ZooGrid(architectures=("bicubic",), datasets=("default",),
                                scales=(2,), losses=("l1",), seeds=(1,)))
        with pytest.raises(DataError):
            zoo.model("nope")

    def test_seed_triplets_grouping(self):
        grid = ZooGrid(architectures=("bicubic",), datasets=("default",),
                       scales=(2, 4), losses=("l1", "vgg-adv"), seeds=(1, 2, 3))
        triplets = build_zoo(grid).seed_triplets()
        assert len(triplets) == 4
        for specs in triplets.values():
            assert [s.seed for s in specs] == [1, 2, 3]
