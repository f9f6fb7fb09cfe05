"""Shared fixtures, tiny model builders, and the acceptance summary hook."""

import re

import numpy as np
import pytest

from adaseg.data import SynthConfig, Video, generate_synthetic
from adaseg.model import ModelConfig, SegmentationModel, StageConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def tiny_model_config(input_dim=5, num_classes=3, num_stages=2, layers=2,
                      filters=4, da_stages=(2,), segment_count=2) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        stage=StageConfig(num_classes=num_classes, layers=layers, filters=filters),
        num_stages=num_stages,
        da_stages=da_stages,
        segment_count=segment_count,
    )


def tiny_model(seed=0, **kwargs) -> SegmentationModel:
    return SegmentationModel(tiny_model_config(**kwargs), seed=seed)


def random_video(rng, vid="v", frames=12, dim=5, num_classes=3) -> Video:
    labels = rng.integers(num_classes, size=frames)
    features = rng.normal(size=(frames, dim)).astype(np.float32)
    return Video(vid=vid, features=features, labels=labels.astype(np.int64))


def tiny_corpus(seed=0, **overrides):
    defaults = dict(num_classes=3, feature_dim=6, source_videos=3, target_videos=2,
                    script_length=4, duration_min=4, duration_max=8,
                    noise_scale=0.4, class_mean_scale=1.5, shift_angle=0.5,
                    shift_bias=0.5, duration_factor=1.2)
    defaults.update(overrides)
    return generate_synthetic(SynthConfig(**defaults), seed=seed)


# one pass/fail line per acceptance criterion at the end of every run

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results: dict[tuple[int, str], bool] = {}
    for outcome, ok in (("passed", True), ("failed", False), ("error", False)):
        for report in terminalreporter.stats.get(outcome, []):
            match = _CRITERION.search(getattr(report, "nodeid", ""))
            if match:
                key = (int(match.group(1)), match.group(2))
                results[key] = results.get(key, True) and ok
    if not results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for (number, name), ok in sorted(results.items()):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number} ({name.replace('_', ' ')}): {status}")
