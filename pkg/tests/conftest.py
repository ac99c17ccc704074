#  OpenSSCR: Open self-supervised counterfactual reasoning for iterative image editing.
#  Copyright (C) 2020  The OpenSSCR developers
#
#  This program is free software: you can redistribute it and/or modify
#  it under the terms of the GNU General Public License as published by
#  the Free Software Foundation, either version 3 of the License, or
#  (at your option) any later version.
#
#  This program is distributed in the hope that it will be useful,
#  but WITHOUT ANY WARRANTY; without even the implied warranty of
#  MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
#  GNU General Public License for more details.
#
#  You should have received a copy of the GNU General Public License
#  along with this program.  If not, see <https://www.gnu.org/licenses/>.
import importlib.util
import sys

from pathlib import Path

import matplotlib
import pytest

matplotlib.use('Agg')

# Runs the tests against the source tree when the package is not installed.
ROOT = Path(__file__).resolve().parents[1]
try:
    import sscr  # noqa: F401
except ImportError:
    spec = importlib.util.spec_from_file_location('sscr', ROOT / 'src' / '__init__.py',
                                                  submodule_search_locations=[str(ROOT / 'src')])
    module = importlib.util.module_from_spec(spec)
    sys.modules['sscr'] = module
    spec.loader.exec_module(module)

from sscr.config import DatasetConfig, ExperimentConfig
from sscr.dataset import generate_episodes
from sscr.editor import EditorConfig
from sscr.explainer import ExplainerConfig
from sscr.training import TrainConfig


def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='Run the slow training tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long running training test')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skip = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope='session')
def episodes():
    return generate_episodes(40, seed=7)


@pytest.fixture
def editor_config():
    return EditorConfig(embedding_dim=8, instruction_dim=8, history_dim=8, image_feature_dim=8, cell_channels=4,
                        generator_hidden=(16,), discriminator_hidden=8)


@pytest.fixture
def explainer_config():
    return ExplainerConfig(embedding_dim=8, instruction_dim=8, history_dim=8, cell_channels=4, feature_dim=8,
                           memory_dim=8, decoder_dim=8, epochs=1, batch_size=8)


@pytest.fixture
def experiment_config(tmp_path, editor_config, explainer_config):
    """Configuration of a run small enough to go through the whole pipeline in seconds."""
    return ExperimentConfig(dataset=DatasetConfig(n_train=8, n_val=4, n_test=4, zero_shot_pool=80),
                            editor=editor_config, explainer=explainer_config,
                            train=TrainConfig(epochs=1, batch_size=4, cf_iterations=2, cf_batch_size=4,
                                              checkpoint_every=1),
                            out=str(tmp_path / 'runs'), seeds=[0], fractions=[1.0, 0.5],
                            cf_iteration_sweep=[0, 1, 2], render_count=2, use_tqdm=False)
