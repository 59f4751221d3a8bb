"""
Sweep, Detection and Trace Service Tests
========================================
"""

import json

import pytest

from geodet.core.detection_head import TRACE_STAGES, DetectorConfig
from geodet.core.exceptions import ConfigurationError, ValidationError
from geodet.models.detection_models import SceneAnnotation
from geodet.services.checkpoint_service import Checkpoint
from geodet.services.detection_service import DetectionService
from geodet.services.scene_generator import load_suite
from geodet.services.sweep_service import (
    MODULE_SETTINGS, TABLE_COLUMNS, cmd_sweep, config_for, evaluate_trained, write_sweep
)
from geodet.services.trace_service import cmd_pipeline_trace
from geodet.services.training_service import train_toy


@pytest.fixture
def suite_scenes(suite_dir):
    return load_suite(suite_dir)[1]


@pytest.fixture
def trained(suite_scenes, quick_run_config):
    return train_toy(suite_scenes, quick_run_config)


class TestConfigFor:
    """Test sweep value mapping."""

    def test_numeric(self, quick_run_config):
        assert config_for(quick_run_config, "alpha", "1.5").alpha == 1.5
        assert config_for(quick_run_config, "beta", 0.3).beta == 0.3

    def test_distance(self, quick_run_config):
        assert config_for(quick_run_config, "distance", "manhattan").distance_metric == "manhattan"

    @pytest.mark.parametrize("value", list(MODULE_SETTINGS))
    def test_modules(self, quick_run_config, value):
        config = config_for(quick_run_config, "modules", value)
        assert (config.use_gal, config.use_dcg) == (MODULE_SETTINGS[value]["use_gal"],
                                                    MODULE_SETTINGS[value]["use_dcg"])

    @pytest.mark.parametrize("param,value", [
        ("alpha", "abc"), ("alpha", "-1"), ("distance", "chebyshev"), ("modules", "attention"), ("gamma", 1),
    ])
    def test_invalid(self, quick_run_config, param, value):
        with pytest.raises(ConfigurationError):
            config_for(quick_run_config, param, value)


class TestCmdSweep:
    """Test sweeps end to end on a tiny suite."""

    def test_rows_per_value(self, suite_scenes, quick_run_config):
        report = cmd_sweep(quick_run_config.with_overrides(epochs=2), "alpha", ["1.0", "2.0"], suite_scenes)
        assert [row.value for row in report.rows] == ["1.0", "2.0"]
        assert all(row.ok for row in report.rows)
        for row in report.rows:
            assert 0.0 <= row.best_map25 <= 1.0
            assert row.final_loss > 0

    def test_bad_value_recorded_not_raised(self, suite_scenes, quick_run_config):
        report = cmd_sweep(quick_run_config.with_overrides(epochs=1), "alpha", ["-3", "2.0"], suite_scenes)
        assert not report.rows[0].ok
        assert report.rows[0].error["error"] == "ConfigurationError"
        assert report.rows[1].ok

    def test_trials_use_consecutive_seeds(self, suite_scenes, quick_run_config):
        report = cmd_sweep(quick_run_config.with_overrides(epochs=1), "modules", ["gal+dcg"], suite_scenes,
                           trials=2)
        row = report.rows[0]
        assert row.trials == 2
        assert row.best_map25 >= row.mean_map25

    def test_argument_checks(self, suite_scenes, quick_run_config):
        with pytest.raises(ConfigurationError):
            cmd_sweep(quick_run_config, "gamma", ["1"], suite_scenes)
        with pytest.raises(ConfigurationError):
            cmd_sweep(quick_run_config, "alpha", [], suite_scenes)
        with pytest.raises(ConfigurationError):
            cmd_sweep(quick_run_config, "alpha", ["1"], suite_scenes, trials=0)

    def test_write_outputs(self, tmp_path, suite_scenes, quick_run_config):
        report = cmd_sweep(quick_run_config.with_overrides(epochs=1), "distance", ["euclidean"], suite_scenes)
        json_path, csv_path = write_sweep(report, tmp_path / "sweep.json")
        assert json.loads(json_path.read_text())["param"] == "distance"
        header = csv_path.read_text().splitlines()[0]
        assert header.split(",") == TABLE_COLUMNS

    @pytest.mark.slow
    @pytest.mark.parametrize("param,values", [
        ("alpha", ["1.0", "1.5", "2.0", "2.5", "3.0"]),
        ("beta", ["0.3", "0.4", "0.5", "0.6", "0.7"]),
        ("distance", ["euclidean", "manhattan", "mahalanobis"]),
        ("modules", ["none", "gal", "dcg", "gal+dcg"]),
    ])
    def test_full_grids(self, suite_scenes, quick_run_config, param, values):
        report = cmd_sweep(quick_run_config.with_overrides(epochs=20), param, values, suite_scenes)
        assert all(row.ok for row in report.rows)
        assert len(report.to_frame()) == len(values)


class TestDetectionService:
    """Test inference over a suite."""

    def test_detect_all_in_scene_order(self, suite_scenes, trained):
        checkpoint = Checkpoint(config=trained.detector.config, class_names=trained.class_names,
                                params=trained.params)
        document = DetectionService(checkpoint, workers=1).detect_all(suite_scenes)
        assert [r.scene_id for r in document.scenes] == ["scene_000", "scene_001", "scene_002"]
        threaded = DetectionService(checkpoint, workers=3).detect_all(suite_scenes)
        assert threaded == document

    def test_class_list_mismatch(self, suite_scenes, trained):
        checkpoint = Checkpoint(config=trained.detector.config, class_names=trained.class_names,
                                params=trained.params)
        scene = suite_scenes[0]
        scene.annotation = SceneAnnotation(class_names=["x", "y"], boxes=[])
        with pytest.raises(ValidationError):
            DetectionService(checkpoint).detect_scene(scene)

    def test_evaluate_trained(self, trained):
        report = evaluate_trained(trained)
        assert report.num_scenes == 3
        assert report.defined


class TestPipelineTrace:
    """Test per-stage traces."""

    def test_all_stages_in_order(self, suite_scenes, quick_run_config):
        trace = cmd_pipeline_trace(suite_scenes[0], quick_run_config)
        assert trace.stage_names == list(TRACE_STAGES)
        assert trace.num_points == len(suite_scenes[0].cloud)
        weights = trace.stages[TRACE_STAGES.index("weights")]
        assert weights.max == pytest.approx(1.0)
        assert weights.min == pytest.approx(0.1353352832366127)
        fused = trace.stages[TRACE_STAGES.index("fused")]
        assert fused.shape == [trace.num_superpoints, 2 * quick_run_config.channels]

    def test_with_checkpoint(self, suite_scenes, trained, quick_run_config):
        checkpoint = Checkpoint(config=trained.detector.config, class_names=trained.class_names,
                                params=trained.params)
        trace = cmd_pipeline_trace(suite_scenes[1], quick_run_config, checkpoint=checkpoint)
        assert trace.channels == trained.detector.config.channels

    def test_deterministic(self, suite_scenes, quick_run_config):
        assert cmd_pipeline_trace(suite_scenes[0], quick_run_config) == \
            cmd_pipeline_trace(suite_scenes[0], quick_run_config)

    def test_ablated_weights_are_uniform(self, suite_scenes, quick_run_config):
        trace = cmd_pipeline_trace(suite_scenes[0], quick_run_config.with_overrides(use_gal=False))
        weights = trace.stages[TRACE_STAGES.index("weights")]
        assert weights.min == weights.max == 1.0

    def test_detector_config_fields(self):
        assert "use_gal" in DetectorConfig().to_dict()
