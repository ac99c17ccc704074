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
from .config import ExperimentConfig, load_config
from .dataset import Episode, generate_episodes, load_episodes, make_split, save_episodes
from .editor import EditorConfig, IterativeEditor, OracleEditor
from .experiment import Experiment, run_name
from .explainer import ExplainerConfig, IterativeExplainer
from .instructions import Instruction, Vocabulary, intervene, parse, synthesize, tokenize
from .metrics import MetricsReport, evaluate_scenes, explainer_quality, f1, relsim
from .scene import ObjectSpec, ParsedEdit, Relation, Scene, apply_edit, detect, render, scene_graph
from .summary import summarize
from .training import Mode, TrainConfig, counterfactual_phase, evaluate_checkpoint, train_editor_ctc
