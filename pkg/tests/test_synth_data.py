import numpy as np
import pytest

from rienhance.errors import ConfigError, InfeasibleSeparation
from rienhance.recognizability import UNLABELED
from rienhance.synth_data import SPLITS, SynthConfig, generate, ui_labels


@pytest.fixture(scope="module")
def ds():
    return generate(SynthConfig(seed=0))


class TestConfig:
    def test_defaults_match_toy_setup(self):
        c = SynthConfig()
        assert c.num_classes == 8 and c.hard_class_ids == (1, 4, 6)

    @pytest.mark.parametrize("kw", [
        {"num_classes": 1}, {"hard_class_ids": (8,)}, {"ui_pull": 1.5}, {"hard_fraction": -0.1},
        {"instances_per_class": 2}, {"noise_easy": -1.0}, {"split_fractions": (0.5, 0.5, 0.0)},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            SynthConfig(**kw)

    def test_dict_round_trip(self):
        c = SynthConfig(seed=4, hard_class_ids=(0, 2))
        assert SynthConfig.from_dict(c.to_dict()) == c
        with pytest.raises(ConfigError):
            SynthConfig.from_dict({"colour": 1})


class TestGenerate:
    def test_deterministic(self, ds):
        again = generate(SynthConfig(seed=0))
        for name in ("inputs", "labels", "is_hard", "split", "ids", "ui_inputs"):
            np.testing.assert_array_equal(getattr(ds, name), getattr(again, name))

    def test_different_seeds_differ(self, ds):
        assert not np.array_equal(ds.inputs, generate(SynthConfig(seed=1)).inputs)

    def test_counts(self, ds):
        s = ds.summary()
        assert s["labeled"] == 400 and s["ui"] == 200 and s["classes"] == 8
        assert s["train"] + s["gallery"] + s["probe"] == 400
        assert np.bincount(ds.labels).tolist() == [50] * 8

    def test_hard_only_in_hard_classes(self, ds):
        assert set(np.unique(ds.labels[ds.is_hard])) == {1, 4, 6}
        assert ds.is_hard.sum() == 3 * 40

    def test_hard_inputs_closer_to_ui_direction(self, ds):
        cos = ds.inputs @ ds.ui_direction
        assert cos[ds.is_hard].mean() > cos[~ds.is_hard].mean()

    def test_class_directions_separated(self, ds):
        dirs = np.vstack([ds.class_directions, ds.ui_direction])
        g = dirs @ dirs.T
        np.fill_diagonal(g, -1.0)
        assert g.max() <= np.cos(np.deg2rad(60.0)) + 1e-12

    def test_splits_partition_each_class(self, ds):
        assert len(set(ds.ids)) == ds.ids.size
        for c in range(8):
            in_c = ds.labels == c
            assert {s for s in ds.split[in_c]} == set(SPLITS)
        assert set(ds.split) == set(SPLITS)

    def test_ui_unlabeled(self, ds):
        assert np.all(ui_labels(ds) == UNLABELED)

    def test_random_encoder_already_separates(self, ds):
        # a random linear-tanh map keeps hard inputs nearer the UI cloud
        rng = np.random.default_rng(11)
        w1, w2 = rng.normal(size=(64, 32)) / np.sqrt(32), rng.normal(size=(16, 64)) / 8

        def enc(x):
            v = np.tanh(x @ w1.T) @ w2.T
            return v / np.linalg.norm(v, axis=1, keepdims=True)

        u = enc(ds.ui_inputs).mean(axis=0)
        u /= np.linalg.norm(u)
        d_ui = 1 - enc(ds.inputs) @ u
        assert d_ui[~ds.is_hard].mean() > d_ui[ds.is_hard].mean()

    def test_infeasible_separation(self):
        with pytest.raises(InfeasibleSeparation):
            generate(SynthConfig(num_classes=6, dim=2, hard_class_ids=(1,), min_angle_deg=80.0, max_retries=200))
