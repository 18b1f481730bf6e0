"""Optimizer math, dataset batching, and the run harness at toy scale."""

import numpy as np
import pytest

from udhf2.config import RunConfig
from udhf2.errors import ConfigError
from udhf2.tensor import Parameter
from udhf2.train import (AdamW, _batch_indices, cd_dataset, evaluate,
                         seg_dataset, train_stage1, train_stage2)


def tiny_cfg(**kw):
    cfg = RunConfig()
    cfg.channels = (8, 8, 8, 8)
    cfg.blocks_per_stage = 1
    cfg.points = 4
    cfg.num_scenes = 2
    cfg.batch_size = 2
    cfg.steps = 3
    cfg.stage2_steps = 2
    cfg.diffusion_steps = 4
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg.validate()


class TestAdamW:
    def test_first_step_matches_hand_computation(self):
        p = Parameter(np.array([1.0, -2.0], dtype=np.float64))
        p.grad = np.array([0.5, -1.0])
        opt = AdamW([p], lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8,
                    weight_decay=0.0)
        opt.step()
        # bias-corrected m̂ = g, v̂ = g²; update = g/(|g|+eps) = ±1
        np.testing.assert_allclose(p.data, [1.0 - 0.1, -2.0 + 0.1], atol=1e-6)

    def test_decoupled_weight_decay(self):
        p = Parameter(np.array([10.0], dtype=np.float64))
        p.grad = np.array([0.0])
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step()
        # zero gradient: only the decay term moves the weight
        np.testing.assert_allclose(p.data, [10.0 - 0.1 * 0.5 * 10.0], atol=1e-9)

    def test_none_grad_is_skipped(self):
        p = Parameter(np.array([3.0], dtype=np.float64))
        opt = AdamW([p], lr=0.1, weight_decay=0.5)
        opt.step()
        np.testing.assert_array_equal(p.data, [3.0])

    def test_two_steps_track_reference(self):
        rng = np.random.default_rng(0)
        w0 = rng.normal(size=5)
        grads = [rng.normal(size=5), rng.normal(size=5)]
        p = Parameter(w0.copy())
        opt = AdamW([p], lr=0.01, beta1=0.9, beta2=0.99, eps=1e-8,
                    weight_decay=0.1)
        m = np.zeros(5)
        v = np.zeros(5)
        w = w0.copy()
        for t, g in enumerate(grads, start=1):
            p.grad = g.copy()
            opt.step()
            m = 0.9 * m + 0.1 * g
            v = 0.99 * v + 0.01 * g * g
            mh = m / (1 - 0.9 ** t)
            vh = v / (1 - 0.99 ** t)
            w = w - 0.01 * (mh / (np.sqrt(vh) + 1e-8) + 0.1 * w)
        np.testing.assert_allclose(p.data, w, atol=1e-12)

    def test_zero_grad_clears(self):
        p = Parameter(np.ones(2))
        p.grad = np.ones(2)
        AdamW([p], lr=0.1).zero_grad()
        assert p.grad is None


class TestBatching:
    def test_rotation_covers_dataset(self):
        seen = []
        for step in range(4):
            seen.extend(_batch_indices(step, 2, 8).tolist())
        assert sorted(seen) == list(range(8))

    def test_wraps_past_end(self):
        np.testing.assert_array_equal(_batch_indices(3, 3, 8), [1, 2, 3])

    def test_batch_larger_than_dataset(self):
        np.testing.assert_array_equal(_batch_indices(0, 4, 3), [0, 1, 2, 0])


class TestDatasets:
    def test_seg_dataset_shapes_and_determinism(self):
        cfg = tiny_cfg()
        a_images, a_labels, a_hwc = seg_dataset(cfg)
        b_images, b_labels, _ = seg_dataset(cfg)
        assert a_images.shape == (2, 3, 64, 64)
        assert a_labels.shape == (2, 64, 64)
        assert a_hwc.shape == (2, 64, 64, 3)
        np.testing.assert_array_equal(a_images, b_images)
        np.testing.assert_array_equal(a_labels, b_labels)

    def test_seed_changes_scenes(self):
        a = seg_dataset(tiny_cfg())[0]
        b = seg_dataset(tiny_cfg(seed=1))[0]
        assert np.abs(a - b).max() > 0

    def test_cd_dataset_shapes(self):
        im1, im2, masks, hwc1, hwc2 = cd_dataset(tiny_cfg())
        assert im1.shape == im2.shape == (2, 3, 64, 64)
        assert masks.shape == (2, 64, 64)
        assert set(np.unique(masks)) <= {0, 1}


class TestHarness:
    def test_stage1_writes_artifacts(self, tmp_path):
        cfg = tiny_cfg()
        net, info = train_stage1(cfg, "seg", tmp_path)
        assert (tmp_path / "stage1.ckpt").exists()
        assert (tmp_path / "config.txt").read_text().startswith("seed=0")
        log = (tmp_path / "stage1_log.csv").read_text().strip().split("\n")
        assert log[0] == "step,loss,lr"
        assert len(log) == 1 + cfg.steps
        assert info["steps"] == cfg.steps
        assert 0.0 <= info["score"] <= 1.0

    def test_unknown_task_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="task"):
            train_stage1(tiny_cfg(), "detection", tmp_path)

    def test_training_is_deterministic(self, tmp_path):
        cfg = tiny_cfg()
        train_stage1(cfg, "seg", tmp_path / "a")
        train_stage1(cfg, "seg", tmp_path / "b")
        a = (tmp_path / "a" / "stage1.ckpt").read_bytes()
        b = (tmp_path / "b" / "stage1.ckpt").read_bytes()
        assert a == b
        assert ((tmp_path / "a" / "stage1_log.csv").read_text()
                == (tmp_path / "b" / "stage1_log.csv").read_text())

    def test_stage2_requires_stage1_checkpoint(self, tmp_path):
        with pytest.raises(ConfigError, match="stage-1"):
            train_stage2(tiny_cfg(), "seg", tmp_path, tmp_path / "none.ckpt")

    def test_stage2_respects_disable_flag(self, tmp_path):
        cfg = tiny_cfg(disable_mudm=True)
        with pytest.raises(ConfigError, match="disable"):
            train_stage2(cfg, "seg", tmp_path, tmp_path / "whatever.ckpt")

    def test_full_pipeline_seg(self, tmp_path):
        cfg = tiny_cfg()
        train_stage1(cfg, "seg", tmp_path)
        train_stage2(cfg, "seg", tmp_path, tmp_path / "stage1.ckpt")
        assert (tmp_path / "stage2.ckpt").exists()
        res = evaluate(cfg, "seg", tmp_path / "eval", tmp_path / "stage1.ckpt",
                       tmp_path / "stage2.ckpt", with_refine=True)
        assert res["report"].task == "seg"
        assert res["refined_report"] is not None
        assert (tmp_path / "eval" / "metrics.txt").exists()
        assert (tmp_path / "eval" / "refined_metrics.txt").exists()
        assert (tmp_path / "eval" / "pred_000.pgm").exists()
        assert (tmp_path / "eval" / "refined_001.pgm").exists()

    def test_full_pipeline_cd(self, tmp_path):
        cfg = tiny_cfg()
        train_stage1(cfg, "cd", tmp_path)
        train_stage2(cfg, "cd", tmp_path, tmp_path / "stage1.ckpt")
        res = evaluate(cfg, "cd", tmp_path / "eval", tmp_path / "stage1.ckpt",
                       tmp_path / "stage2.ckpt", with_refine=True)
        assert res["report"].task == "cd"
        assert res["refined_report"] is not None

    def test_refined_eval_needs_stage2(self, tmp_path):
        cfg = tiny_cfg()
        train_stage1(cfg, "seg", tmp_path)
        with pytest.raises(ConfigError, match="stage-2"):
            evaluate(cfg, "seg", tmp_path / "eval", tmp_path / "stage1.ckpt",
                     with_refine=True)

    def test_early_stop_on_target(self, tmp_path):
        # a target of epsilon is reached at the first evaluation
        cfg = tiny_cfg(steps=60, stage1_target=1e-9)
        _, info = train_stage1(cfg, "seg", tmp_path)
        assert info["steps"] == 25
