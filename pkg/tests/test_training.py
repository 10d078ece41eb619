import numpy as np
import pytest

from metricverify.backbone import Backbone, BackboneConfig, extract_feature, flip_input
from metricverify.config import Settings
from metricverify.evaluation import relative_error_reduction
from metricverify.exceptions import ConfigurationError, DimensionError, TrainingError
from metricverify.losses import LossConfig
from metricverify.pipeline import FrozenCosine, run_pipeline, shifted, split_holdout
from metricverify.sampling import MiningConfig, make_eval_pairs, synth_identities
from metricverify.tensor import RngStream
from metricverify.training import (
    SWEEP_AXES,
    SweepRow,
    SweepTable,
    TrainConfig,
    run_sweep,
    train_backbone,
    train_joint,
    train_verifier,
)
from metricverify.verifier import VerifierConfig


def tiny_settings(**overrides):
    base = {"data.ids": "12", "data.per_id": "8", "data.dim": "8", "data.holdout": "3",
            "data.eval_pairs": "60", "backbone.hidden_widths": "12", "backbone.bottleneck": "4",
            "verifier.kernel_count": "4", "verifier.hidden_width": "8", "verifier.depth": "3",
            "train.steps": "60", "train.batch_size": "8"}
    base.update(overrides)
    return Settings.load(None, base)


@pytest.fixture(scope="module")
def ds():
    return synth_identities(12, 8, 8, 0.2, RngStream(0, "data"))


def same_arrays(xs, ys):
    return all(np.array_equal(x, y) for x, y in zip(xs, ys, strict=True))


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [{"batch_size": 3}, {"batch_size": 0}, {"lr": 0.0}, {"steps": -1}, {"joint_weight": -1},
               {"mining": "sometimes"}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)

    def test_backbone_config(self):
        with pytest.raises(ConfigurationError):
            BackboneConfig(8, 1)
        with pytest.raises(ConfigurationError):
            BackboneConfig(8, 4, bottleneck=1)


class TestBackbone:
    def test_loss_oracle(self):
        finals = []
        for seed in range(10):
            data = synth_identities(10, 20, 16, 0.1, RngStream(seed, "data"))
            _, curve = train_backbone(data, BackboneConfig(16, 10), TrainConfig(steps=2000, seed=seed))
            finals.append(curve.loss[-1])
        assert sum(v < 0.1 for v in finals) >= 8

    def test_zero_steps(self, ds):
        backbone, curve = train_backbone(ds, BackboneConfig(8, 12), TrainConfig(steps=0, seed=4))
        init = Backbone.init(BackboneConfig(8, 12), RngStream(4, "init"))
        assert curve.loss == []
        assert same_arrays(backbone.parameter_arrays(), init.parameter_arrays())

    def test_class_count_checked(self, ds):
        with pytest.raises(ConfigurationError):
            train_backbone(ds, BackboneConfig(8, 5), TrainConfig(steps=1))

    def test_head_stays_normalized(self, ds):
        backbone, _ = train_backbone(ds, BackboneConfig(8, 12), TrainConfig(steps=50))
        assert backbone.head.rows_are_unit()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts_with_last_good(self, ds):
        with pytest.raises(TrainingError) as info:
            train_backbone(ds, BackboneConfig(8, 12), TrainConfig(batch_size=8, lr=1e200, steps=50))
        good = info.value.last_good
        assert isinstance(good, Backbone)
        assert all(np.all(np.isfinite(a)) for a in good.parameter_arrays())


@pytest.fixture(scope="module")
def backbone():
    return Backbone.init(BackboneConfig(6, 3, bottleneck=4), RngStream(0, "init"))


@pytest.fixture(scope="module")
def setup():
    data = synth_identities(12, 8, 4, 0.3, RngStream(0, "data"))
    train, test = split_holdout(data, 3)
    pairs = make_eval_pairs(test, 40, RngStream(0, "eval"))
    return train, pairs, VerifierConfig(4, kernel_count=4, hidden_width=6)


class TestExtract:
    def test_identity_flip_duplicates(self, backbone):
        f = extract_feature(backbone, np.arange(6.0), flip="identity")
        assert f.shape == (8,)
        np.testing.assert_array_equal(f[:4], f[4:])

    def test_involution_swaps_halves(self, backbone):
        x = np.random.default_rng(0).normal(size=(5, 6))
        f = extract_feature(backbone, x)
        g = extract_feature(backbone, flip_input(x))
        np.testing.assert_array_equal(f[:, :4], g[:, 4:])
        np.testing.assert_array_equal(f[:, 4:], g[:, :4])

    def test_dimension_mismatch(self, backbone):
        with pytest.raises(DimensionError):
            extract_feature(backbone, np.zeros(5))


class TestVerifierTraining:
    def _run(self, ds, **kw):
        tc = TrainConfig(batch_size=8, steps=kw.pop("steps", 30), seed=kw.pop("seed", 0), **kw)
        return train_verifier(ds, VerifierConfig(8, depth=3, kernel_count=3, hidden_width=6), tc)

    def test_deterministic(self, ds):
        a, ca = self._run(ds)
        b, cb = self._run(ds)
        assert same_arrays(a.parameter_arrays(), b.parameter_arrays())
        assert ca.loss == cb.loss

    def test_seed_matters(self, ds):
        a, _ = self._run(ds, seed=0)
        b, _ = self._run(ds, seed=1)
        assert not same_arrays(a.parameter_arrays(), b.parameter_arrays())

    def test_focal_diverges_after_first_step(self, ds):
        a, ca = self._run(ds, steps=2)
        b, cb = self._run(ds, steps=2, loss=LossConfig("focal"))
        assert not same_arrays(a.parameter_arrays(), b.parameter_arrays())

    def test_auto_mining_recorded(self, ds):
        _, curve = self._run(ds, mining="auto")
        assert isinstance(curve.mining, MiningConfig)
        assert all(0 < r <= 1 for r in curve.retention)
        assert min(curve.retention) < 1

    def test_drained_mining_raises(self, ds):
        with pytest.raises(TrainingError, match="positive"):
            self._run(ds, mining=MiningConfig(1e300, 1e300))

    def test_dimension_checked(self, ds):
        with pytest.raises(ConfigurationError):
            train_verifier(ds, VerifierConfig(5), TrainConfig(steps=1))


class TestJoint:
    def _configs(self):
        return BackboneConfig(8, 12, hidden_widths=(12,), bottleneck=4), VerifierConfig(
            8, depth=3, kernel_count=3, hidden_width=6)

    def test_zero_weight_matches_backbone_training(self, ds):
        bcfg, vcfg = self._configs()
        tc = TrainConfig(batch_size=8, steps=40, joint_weight=0.0, seed=3)
        joint, _, _ = train_joint(ds, bcfg, vcfg, tc)
        staged, _ = train_backbone(ds, bcfg, tc)
        assert same_arrays(joint.parameter_arrays(), staged.parameter_arrays())

    def test_positive_weight_changes_backbone(self, ds):
        bcfg, vcfg = self._configs()
        joint, _, _ = train_joint(ds, bcfg, vcfg, TrainConfig(batch_size=8, steps=5, seed=3))
        staged, _ = train_backbone(ds, bcfg, TrainConfig(batch_size=8, steps=5, seed=3))
        assert not same_arrays(joint.parameter_arrays(), staged.parameter_arrays())

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_keeps_both_models(self, ds):
        bcfg, vcfg = self._configs()
        with pytest.raises(TrainingError) as info:
            train_joint(ds, bcfg, vcfg, TrainConfig(batch_size=8, lr=1e200, steps=50))
        backbone, verifier = info.value.last_good
        for arr in backbone.parameter_arrays() + verifier.parameter_arrays():
            assert np.all(np.isfinite(arr))

    def test_verifier_width_checked(self, ds):
        bcfg, _ = self._configs()
        with pytest.raises(ConfigurationError):
            train_joint(ds, bcfg, VerifierConfig(4), TrainConfig(steps=1))


class TestSweep:
    @pytest.mark.parametrize("axis, n_rows", [("depth", 4), ("layer_kind", 3), ("kernels", 3)])
    def test_table_shape(self, setup, axis, n_rows):
        train, pairs, base = setup
        table = run_sweep(axis, base, TrainConfig(batch_size=8, steps=20), train, pairs)
        assert [r.variant for r in table.rows] == [name for name, _ in SWEEP_AXES[axis]]
        lines = table.to_text().splitlines()
        assert len(lines) == n_rows + 1
        assert lines[1].split()[-1] == "--"
        base_err = table.rows[0].error_rate
        for r in table.rows[1:]:
            if base_err:
                assert r.reduction == relative_error_reduction(base_err, r.error_rate)

    def test_failed_variant_marked(self, setup):
        train, pairs, base = setup
        tc = TrainConfig(batch_size=8, steps=5, mining=MiningConfig(1e300, 1e300))
        table = run_sweep("kernels", base, tc, train, pairs)
        assert all(r.status.startswith("failed") for r in table.rows)
        assert "failed" in table.to_text()

    def test_text_layout(self):
        table = SweepTable("depth", [SweepRow("3 layers", 0.2), SweepRow("5 layers", 0.1, 50.0),
                                     SweepRow("7 layers", 0.0, 100.0)])
        rows = [line.split() for line in table.to_text().splitlines()[1:]]
        assert rows == [["3", "layers", "20.00", "--"], ["5", "layers", "10.00", "50.00"],
                        ["7", "layers", "0.00", "100.00"]]

    def test_unknown_axis(self, setup):
        train, pairs, base = setup
        with pytest.raises(ConfigurationError):
            run_sweep("width", base, TrainConfig(steps=1), train, pairs)


class TestPipeline:
    def test_holdout_split(self, ds):
        train, test = split_holdout(ds, 3)
        for k in ds.ids:
            np.testing.assert_array_equal(np.concatenate([train.identities[k], test.identities[k]]),
                                          ds.identities[k])
            assert len(test.identities[k]) == 3

    def test_holdout_too_large(self, ds):
        with pytest.raises(ConfigurationError):
            split_holdout(ds, 7)

    def test_report_bytes_deterministic(self):
        a = run_pipeline(tiny_settings()).report_text()
        b = run_pipeline(tiny_settings()).report_text()
        assert a == b
        assert "[cosine]" in a and "[verifier]" in a

    def test_joint_pipeline_runs(self):
        result = run_pipeline(tiny_settings(), joint=True)
        assert 0 <= result.classifier.error_rate <= 1
        assert result.classifier.baseline == "cosine_10fold"

    def test_frozen_cosine(self):
        data = synth_identities(20, 6, 8, 0.3, RngStream(0, "data"))
        pairs = make_eval_pairs(data, 100, RngStream(0, "eval"))
        frozen = FrozenCosine.fit(pairs)
        rep = frozen.evaluate(pairs)
        assert rep.thresholds == [frozen.threshold]
        # a pure rescaling leaves cosine scores unchanged once the mean scales too
        scaled = FrozenCosine(frozen.mean * 2, frozen.threshold).decide(shifted(pairs, 2.0, 0.0))
        np.testing.assert_array_equal(scaled, frozen.decide(pairs))


@pytest.mark.slow
def test_joint_matches_two_stage_at_desk_scale():
    wins = 0
    for seed in range(10):
        s = Settings.load(None, {"train.seed": str(seed)})
        staged = run_pipeline(s).classifier.error_rate
        joint = run_pipeline(s, joint=True).classifier.error_rate
        wins += joint <= staged + 0.02
    assert wins >= 7
