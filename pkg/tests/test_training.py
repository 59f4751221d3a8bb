"""
Toy Training Tests
==================

Learning-rate schedule, both optimizers, the zero-rate identity, the
non-finite guard and loss traces.
"""

import json

import numpy as np
import pytest

from geodet.config.settings import load_run_config
from geodet.core.detection_head import DetectorConfig, GeoDetector
from geodet.core.exceptions import NonFiniteError, TrainingError, ValidationError
from geodet.models.scene_models import SceneSpec
from geodet.services.scene_generator import generate_segmented_scene, generate_suite, load_suite
from geodet.services.sweep_service import evaluate_trained
from geodet.services.training_service import (
    SGD, AdamW, create_optimizer, poly_lr, trace_path_for, train_toy, write_trace
)
from tests.conftest import random_annotation, random_cloud


@pytest.fixture
def suite_scenes(suite_dir):
    return load_suite(suite_dir)[1]


class TestSchedule:
    """Test the polynomial learning-rate decay."""

    def test_starts_at_base_rate(self):
        assert poly_lr(0.01, 0, 100, 0.9) == 0.01

    def test_decays_monotonically(self):
        rates = [poly_lr(0.01, t, 10, 0.9) for t in range(10)]
        assert all(a > b for a, b in zip(rates, rates[1:]))
        assert rates[-1] == pytest.approx(0.01 * 0.1 ** 0.9)

    def test_zero_power_is_constant(self):
        assert poly_lr(0.5, 7, 10, 0.0) == 0.5


class TestOptimizers:
    """Test single optimizer steps."""

    def test_sgd_step(self, tiny_detector):
        params = tiny_detector.init_params(1)
        grads = params.zeros_like()
        grads["gating.raw"] = np.ones(4)
        before = params["gating.raw"].copy()
        SGD(weight_decay=0.0).step(params, grads, 0.1)
        np.testing.assert_allclose(params["gating.raw"], before - 0.1)

    def test_adamw_first_step_moves_by_lr(self, tiny_detector):
        """Test the bias-corrected first step has magnitude lr for every non-zero gradient."""
        params = tiny_detector.init_params(1)
        grads = params.zeros_like()
        grads["gating.raw"] = np.array([2.0, -3.0, 0.5, -0.1])
        before = params["gating.raw"].copy()
        AdamW(weight_decay=0.0).step(params, grads, 0.01)
        np.testing.assert_allclose(params["gating.raw"] - before, -0.01 * np.sign(grads["gating.raw"]), rtol=1e-6)

    def test_weight_decay_is_decoupled(self, tiny_detector):
        params = tiny_detector.init_params(1)
        before = params["backbone.w1"].copy()
        AdamW(weight_decay=0.5).step(params, params.zeros_like(), 0.1)
        np.testing.assert_allclose(params["backbone.w1"], before * (1.0 - 0.05))

    @pytest.mark.parametrize("optimizer_class", [SGD, AdamW])
    def test_frozen_parameters_untouched(self, tiny_detector, optimizer_class):
        optimizer = optimizer_class(weight_decay=0.5, frozen=["gating.raw"])
        params = tiny_detector.init_params(1)
        grads = params.zeros_like()
        grads["gating.raw"] = np.ones(4)
        grads["backbone.b1"] = np.ones(6)
        before = params.copy()
        optimizer.step(params, grads, 0.1)
        np.testing.assert_array_equal(params["gating.raw"], before["gating.raw"])
        assert not np.array_equal(params["backbone.b1"], before["backbone.b1"])

    def test_factory(self, quick_run_config):
        assert isinstance(create_optimizer(quick_run_config), AdamW)
        assert isinstance(create_optimizer(quick_run_config.with_overrides(optimizer="sgd")), SGD)


class TestTrainToy:
    """Test the training loop."""

    def test_zero_learning_rate_keeps_params(self, suite_scenes, quick_run_config):
        detector = GeoDetector(DetectorConfig.from_run_config(quick_run_config, num_classes=2))
        params = detector.init_params(quick_run_config.seed)
        result = train_toy(suite_scenes, quick_run_config, lr=0.0)
        assert result.params.equals(params)
        assert len(result.trace.epochs) == quick_run_config.epochs
        # nothing moves, so every epoch sees the same loss
        totals = {entry.total for entry in result.trace.epochs}
        assert len(totals) == 1

    def test_trace_is_finite(self, suite_scenes, quick_run_config):
        result = train_toy(suite_scenes, quick_run_config)
        assert [entry.epoch for entry in result.trace.epochs] == [1, 2, 3]
        assert all(np.isfinite(entry.total) for entry in result.trace.epochs)
        assert result.trace.epochs[0].lr == quick_run_config.lr
        assert result.class_names == ["class_0", "class_1"]

    @pytest.mark.parametrize("optimizer", ["adamw", "sgd"])
    def test_deterministic(self, suite_scenes, quick_run_config, optimizer):
        config = quick_run_config.with_overrides(optimizer=optimizer)
        first = train_toy(suite_scenes, config)
        second = train_toy(suite_scenes, config)
        assert first.params.equals(second.params)
        assert first.trace == second.trace

    def test_accepts_cloud_annotation_pairs(self, rng, quick_run_config):
        scenes = [(random_cloud(rng, 30), random_annotation(rng, 2)) for _ in range(2)]
        result = train_toy(scenes, quick_run_config.with_overrides(epochs=2))
        assert [scene.scene_id for scene in result.scenes] == ["scene_000", "scene_001"]

    def test_accepts_segmented_triples(self, small_spec, quick_run_config):
        scene = generate_segmented_scene(small_spec)
        result = train_toy([scene], quick_run_config.with_overrides(epochs=1))
        np.testing.assert_array_equal(result.scenes[0].labels.ids, scene[2].ids)

    def test_epoch_callback(self, suite_scenes, quick_run_config):
        seen = []
        train_toy(suite_scenes, quick_run_config, on_epoch=seen.append)
        assert [entry.epoch for entry in seen] == [1, 2, 3]

    def test_empty_scene_list(self, quick_run_config):
        with pytest.raises(ValidationError):
            train_toy([], quick_run_config)

    def test_mixed_class_lists(self, rng, quick_run_config):
        scenes = [(random_cloud(rng, 20), random_annotation(rng, 1, 2)),
                  (random_cloud(rng, 20), random_annotation(rng, 1, 3))]
        with pytest.raises(ValidationError):
            train_toy(scenes, quick_run_config)

    @pytest.mark.parametrize("optimizer", ["adamw", "sgd"])
    def test_gate_frozen_without_channel_gating(self, suite_scenes, quick_run_config, optimizer):
        """Test the ablated gate keeps its initial values even under weight decay."""
        config = quick_run_config.with_overrides(use_dcg=False, weight_decay=0.5, optimizer=optimizer)
        initial = GeoDetector(DetectorConfig.from_run_config(config, num_classes=2)).init_params(config.seed)
        result = train_toy(suite_scenes, config)
        np.testing.assert_array_equal(result.params["gating.raw"], initial["gating.raw"])
        assert not np.array_equal(result.params["backbone.w1"], initial["backbone.w1"])

    def test_negative_learning_rate(self, suite_scenes, quick_run_config):
        with pytest.raises(TrainingError):
            train_toy(suite_scenes, quick_run_config, lr=-1.0)

    def test_non_finite_parameters_abort(self, suite_scenes, quick_run_config):
        """Test a NaN starting parameter is reported with the epoch it surfaced in."""
        detector = GeoDetector(DetectorConfig.from_run_config(quick_run_config, num_classes=2))
        params = detector.init_params(quick_run_config.seed)
        params["class_head.b2"] = np.full(3, np.nan)
        with pytest.raises(NonFiniteError) as info:
            train_toy(suite_scenes, quick_run_config, params=params)
        assert info.value.details["epoch"] == 1
        assert info.value.details["step"] == 0

    def test_exploding_learning_rate_is_caught(self, suite_scenes, quick_run_config):
        config = quick_run_config.with_overrides(optimizer="sgd", epochs=50)
        with pytest.raises(NonFiniteError):
            train_toy(suite_scenes, config, lr=1e300)

    def test_loss_decreases(self, suite_scenes, quick_run_config):
        result = train_toy(suite_scenes, quick_run_config.with_overrides(epochs=30, lr=0.003))
        assert result.trace.final < result.trace.initial

    @pytest.mark.slow
    def test_overfits_small_suite(self, suite_scenes, quick_run_config):
        """Test the loss drops by half on three scenes given enough epochs."""
        config = quick_run_config.with_overrides(epochs=300, channels=16, hidden=32, layers=2)
        result = train_toy(suite_scenes, config, lr=0.003)
        assert result.trace.final <= 0.5 * result.trace.initial


class TestOverfit:
    """Test default training memorizes fixed-seed segmented suites."""

    @pytest.mark.slow
    def test_default_config_on_ten_scenes(self, tmp_path):
        generate_suite(10, SceneSpec(object_count=(2, 4), seed=7), seed=7, out_dir=tmp_path / "suite")
        _, scenes = load_suite(tmp_path / "suite")
        config = load_run_config()
        assert config.epochs == 500
        result = train_toy(scenes, config)
        report = evaluate_trained(result)
        assert report.map25 >= 0.9
        assert report.map50 >= 0.7
        assert result.trace.final < 0.1 * result.trace.initial

    @pytest.mark.slow
    def test_default_config_on_one_scene(self, tmp_path):
        generate_suite(1, SceneSpec(seed=7), seed=7, out_dir=tmp_path / "suite")
        _, scenes = load_suite(tmp_path / "suite")
        result = train_toy(scenes, load_run_config())
        assert len(result.trace.epochs) == 500
        assert result.trace.final < 0.1 * result.trace.initial


class TestTraceFiles:
    """Test loss trace output."""

    def test_trace_path(self):
        assert trace_path_for("out/run.json").name == "run.trace.json"

    def test_write_trace(self, tmp_path, suite_scenes, quick_run_config):
        result = train_toy(suite_scenes, quick_run_config)
        path = write_trace(tmp_path / "nested" / "run.trace.json", result.trace)
        document = json.loads(path.read_text())
        assert document["optimizer"] == "adamw"
        assert len(document["epochs"]) == 3
