"""Optimizer pieces, augmentation, and short end-to-end training runs."""

import numpy as np
import pytest

from dp3df.data_synth import DegradeParams, make_dataset
from dp3df.errors import ContractViolation, TrainingDiverged
from dp3df.filters import FilterGeometry
from dp3df.losses import LossWeights
from dp3df.predictor import PredictorConfig
from dp3df.trainer import (
    OptimizerState,
    TrainConfig,
    adam_step,
    augment,
    clip_grad_norm,
    cosine_lr,
    load_checkpoint,
    train,
)


class TestAdam:
    def test_zero_grads_leave_weights(self):
        w = {"a": np.ones(4, dtype=np.float32)}
        g = {"a": np.zeros(4, dtype=np.float32)}
        state = OptimizerState.for_weights(w)
        adam_step(w, g, state, lr=0.1)
        np.testing.assert_array_equal(w["a"], np.ones(4, dtype=np.float32))
        assert state.step == 1

    def test_first_step_magnitude(self):
        """With constant unit gradient the first update is exactly -lr (up to eps)."""
        w = {"a": np.array([0.0])}
        g = {"a": np.array([1.0])}
        state = OptimizerState.for_weights(w)
        adam_step(w, g, state, lr=0.01)
        assert w["a"][0] == pytest.approx(-0.01, abs=1e-9)

    def test_converges_on_quadratic(self):
        """100 steps on f(w) = w^2 from w=1 with lr 0.1 reach |w| < 0.05."""
        w = {"a": np.array([1.0])}
        state = OptimizerState.for_weights(w)
        for _ in range(100):
            g = {"a": 2.0 * w["a"]}
            adam_step(w, g, state, lr=0.1)
        assert abs(w["a"][0]) < 0.05

    def test_nan_grad_aborts_with_name(self):
        w = {"theta": np.ones(2, dtype=np.float32)}
        g = {"theta": np.array([np.nan, 0.0], dtype=np.float32)}
        state = OptimizerState.for_weights(w)
        with pytest.raises(TrainingDiverged, match="theta"):
            adam_step(w, g, state, lr=0.1)


class TestCosineLr:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 4e-4) == pytest.approx(4e-4)
        assert cosine_lr(100, 100, 4e-4) == pytest.approx(0.0, abs=1e-12)
        assert cosine_lr(50, 100, 4e-4) == pytest.approx(2e-4)

    def test_monotone_decay(self):
        vals = [cosine_lr(s, 200, 1.0) for s in range(201)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestAugment:
    def _pair(self, rng, r=2):
        clip = rng.random((3, 4, 4, 3), dtype=np.float32)
        target = rng.random((8, 8, 3), dtype=np.float32)
        return clip, target

    def test_identity_draw_unchanged(self):
        class FakeRng:
            def integers(self, *a, **k):
                return 0

            def random(self):
                return 0.9  # > 0.5: no flip

        rng = np.random.default_rng(0)
        clip, target = self._pair(rng)
        c2, t2 = augment(clip, target, FakeRng())
        np.testing.assert_array_equal(c2, clip)
        np.testing.assert_array_equal(t2, target)

    def test_two_quarter_turns_equal_half_turn(self):
        rng = np.random.default_rng(1)
        clip, _ = self._pair(rng)
        once = np.rot90(clip, 1, axes=(1, 2))
        twice = np.rot90(once, 1, axes=(1, 2))
        np.testing.assert_array_equal(twice, np.rot90(clip, 2, axes=(1, 2)))

    def test_transform_commutes_with_coordinate_scaling(self):
        """Augmenting the pair keeps low-res pixel (i,j) aligned with the
        high-res block (r*i, r*j)."""
        r = 2
        rng = np.random.default_rng(2)
        clip = rng.random((3, 4, 4, 3), dtype=np.float32)
        target = np.repeat(np.repeat(clip[1], r, axis=0), r, axis=1)  # aligned by construction
        for seed in range(10):
            c2, t2 = augment(clip, target, np.random.default_rng(seed))
            np.testing.assert_array_equal(
                t2, np.repeat(np.repeat(c2[1], r, axis=0), r, axis=1))


class TestGradClip:
    def test_norm_above_limit_rescaled(self):
        g = {"a": np.full(4, 10.0, dtype=np.float32)}
        norm = clip_grad_norm(g, 1.0)
        assert norm == pytest.approx(20.0)
        assert np.linalg.norm(g["a"]) == pytest.approx(1.0, rel=1e-5)

    def test_norm_below_limit_untouched(self):
        g = {"a": np.array([0.3, 0.4], dtype=np.float32)}
        clip_grad_norm(g, 10.0)
        np.testing.assert_array_equal(g["a"], np.array([0.3, 0.4], dtype=np.float32))


def tiny_train_config(steps=40, seed=0, ablation="none", threads=1):
    geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
    return TrainConfig(
        predictor=PredictorConfig(geometry=geom, levels=1, channels=(8,),
                                  blocks_per_level=1, ablation=ablation),
        total_steps=steps, batch=2, patch=16, seed=seed, threads=threads,
    )


@pytest.fixture(scope="module")
def tiny_records(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    params = DegradeParams(r=2, exposure=0.3, gamma=1.5, read_noise=0.005,
                           shot_noise=0.02, seed=0)
    return make_dataset(2, 5, (24, 24), params, str(root), seed=5)


class TestTrain:
    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ContractViolation, match="empty"):
            train(tiny_train_config(), [], str(tmp_path))

    def test_single_sample_overfit(self, tmp_path):
        """500 steps on one clip drive total loss below 10% of its start."""
        params = DegradeParams(r=2, exposure=0.3, gamma=1.5, read_noise=0.0,
                               shot_noise=0.0, seed=0)
        recs = make_dataset(1, 1, (16, 16), params, str(tmp_path / "ds"), seed=7)
        cfg = tiny_train_config(steps=500)
        result = train(cfg, recs, str(tmp_path / "run"))
        assert result.final_losses["total"] < 0.1 * result.first_losses["total"]

    def test_deterministic_across_runs_and_threads(self, tiny_records, tmp_path):
        r1 = train(tiny_train_config(seed=3, threads=1), tiny_records, str(tmp_path / "a"))
        r2 = train(tiny_train_config(seed=3, threads=1), tiny_records, str(tmp_path / "b"))
        r4 = train(tiny_train_config(seed=3, threads=4), tiny_records, str(tmp_path / "c"))
        csv1 = open(r1.loss_csv_path, "rb").read()
        assert csv1 == open(r2.loss_csv_path, "rb").read()
        assert csv1 == open(r4.loss_csv_path, "rb").read()
        ck1 = open(r1.checkpoint_path, "rb").read()
        assert ck1 == open(r2.checkpoint_path, "rb").read()
        assert ck1 == open(r4.checkpoint_path, "rb").read()

    def test_loss_csv_layout(self, tiny_records, tmp_path):
        result = train(tiny_train_config(steps=5), tiny_records, str(tmp_path / "run"))
        lines = open(result.loss_csv_path).read().strip().splitlines()
        assert lines[0] == "step,loss_r,loss_s,loss_e,total"
        assert len(lines) == 6
        first = lines[1].split(",")
        assert first[0] == "0" and len(first) == 5
        for cell in first[1:]:
            assert np.isfinite(float(cell))

    def test_no_residual_checkpoint_has_no_head(self, tiny_records, tmp_path):
        result = train(tiny_train_config(steps=3, ablation="no_residual"),
                       tiny_records, str(tmp_path / "run"))
        weights, state = load_checkpoint(result.checkpoint_path)
        assert not any(k.startswith("rhead.") for k in weights)
        assert not any(k.startswith("rhead.") for k in state.m)

    def test_checkpoint_restores_optimizer_state(self, tiny_records, tmp_path):
        result = train(tiny_train_config(steps=4), tiny_records, str(tmp_path / "run"))
        weights, state = load_checkpoint(result.checkpoint_path)
        assert state.step == 4
        assert weights.keys() == state.m.keys() == state.v.keys()

    def test_patch_not_divisible_rejected(self):
        geom = FilterGeometry(r=2, k_h=3, k_w=3, k_t=3, t_frames=3)
        with pytest.raises(ContractViolation, match="patch"):
            TrainConfig(predictor=PredictorConfig(geometry=geom, levels=3,
                                                  channels=(8, 8, 8)),
                        patch=20)
