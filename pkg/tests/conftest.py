import os
from dataclasses import replace

import numpy as np
import pytest

from gaugecnn.dataset import make_angle_grid
from gaugecnn.harness import DESK_CONFIG, PipelineConfig, remember, run_pipeline
from gaugecnn.imaging import make_default_glyph
from gaugecnn.network import ModelConfig, load_model

# A config small enough to train in about a second; used wherever the
# behaviour under test does not depend on model capacity.
SMALL_MODEL = ModelConfig(conv1_filters=8, conv2_filters=16, dense_units=32, epochs=5, learning_rate=1e-2)
SMALL_CONFIG = PipelineConfig(glyph_width=32, glyph_height=32, max_angle=30.0, step=6.0,
                              num_train_copies=10, model=SMALL_MODEL)


@pytest.fixture(scope="session")
def glyph64():
    return make_default_glyph(64, 64)


@pytest.fixture(scope="session")
def grid90():
    return make_angle_grid(90, 3)


@pytest.fixture(scope="session")
def small_config():
    return SMALL_CONFIG


@pytest.fixture(scope="session")
def pipeline_cache():
    """Reports of deterministic pipeline runs, keyed by config."""
    return {}


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory, pipeline_cache):
    """The desk configuration trained once per session: (report, model)."""
    out = tmp_path_factory.mktemp("desk")
    config = replace(DESK_CONFIG, output_dir=str(out))
    report = run_pipeline(config)
    model = load_model(os.path.join(str(out), "model.gnm"))
    remember(pipeline_cache, config, report, model)
    return report, model


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria append one line each; they are repeated in the
# terminal summary so the verdicts show up without -s.
CRITERIA_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
