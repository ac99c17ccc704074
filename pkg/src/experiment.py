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
import json
import logging

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from astropy.io.fits import HDUList, PrimaryHDU, Card
from matplotlib.axes import Axes
from matplotlib.gridspec import GridSpec
from matplotlib.pyplot import close, figure, subplot

from .cfstep import CounterfactualStep
from .config import ExperimentConfig
from .datastep import DataStep
from .dataset import Episode
from .editor import IterativeEditor
from .editorstep import EditorStep
from .evalstep import EvalStep
from .explainer import IterativeExplainer
from .explainerstep import ExplainerStep
from .metrics import ExplainerQuality, MetricsReport
from .renderstep import RenderStep
from .step import MissingArtifactError
from .training import CounterfactualLoss, Mode

ARTIFACT_DIRECTORIES = ('data', 'checkpoints', 'reports', 'curves', 'renders')


def run_name(mode: Union[Mode, str], fraction: float, seed: int, cf_loss: Union[CounterfactualLoss, str] = 'explainer',
             zero_shot: bool = False, sweep: bool = False) -> str:
    """Run name, e.g. 'sscr-f050-s1'.

    sscr runs with the discriminator loss end with '-d', zero-shot runs with '-zs', and runs that
    sweep the counterfactual iteration cap with '-sweep'.
    """
    mode = Mode(mode)
    name = f"{mode.value}-f{int(round(100 * fraction)):03d}-s{seed}"
    if mode == Mode.SSCR and CounterfactualLoss(cf_loss) == CounterfactualLoss.DISCRIMINATOR:
        name += '-d'
    return name + ('-zs' if zero_shot else '') + ('-sweep' if sweep else '')


def archive_config(config: ExperimentConfig):
    """Writes the configuration into every artifact directory."""
    for d in ARTIFACT_DIRECTORIES:
        path = Path(config.out) / d
        path.mkdir(parents=True, exist_ok=True)
        config.save(path / 'config.json')


class Experiment:
    """A single run: one editor mode, training data fraction, and seed.

    The run takes its mode, seed, fraction, and zero-shot flag from the configuration. Its steps are
    registered at construction and run in order; the results end up in the artifact directories
    under `config.out` and in the run summary `reports/<name>.fits`.

    Parameters
    ----------
    config: ExperimentConfig
        Experiment configuration.
    sweep: sequence of int, optional
        Counterfactual iteration caps to score on the validation split.
    """

    def __init__(self, config: ExperimentConfig, sweep: Optional[Sequence[int]] = None):
        self.config: ExperimentConfig = config
        self.mode: Mode = Mode(config.train.mode)
        self.seed: int = config.seed
        self.fraction: float = config.fraction
        self.zero_shot: bool = config.zero_shot
        self.use_tqdm: bool = config.use_tqdm
        self.sweep: Optional[List[int]] = list(sweep) if sweep else None
        self.name: str = self.run_name(self.mode, bool(self.sweep))
        self.logger = logging.getLogger(f"experiment:{self.name}")

        out = Path(config.out)
        self.checkpoint_dir: Path = out / 'checkpoints'
        self.report_dir: Path = out / 'reports'
        self.curve_dir: Path = out / 'curves'
        self.render_dir: Path = out / 'renders'
        for d in (self.checkpoint_dir, self.report_dir, self.curve_dir, self.render_dir):
            d.mkdir(parents=True, exist_ok=True)

        self.splits: Dict[str, List[Episode]] = {}
        self.explainer: Optional[IterativeExplainer] = None
        self.editor: Optional[IterativeEditor] = None
        self.curves: Optional[pd.DataFrame] = None
        self.report: Optional[MetricsReport] = None
        self.pre_cf_report: Optional[MetricsReport] = None

        self._steps = []
        self.initialize_steps()

    def run_name(self, mode: Mode, sweep: bool = False) -> str:
        return run_name(mode, self.fraction, self.seed, self.config.train.cf_loss, self.zero_shot, sweep)

    @property
    def explainer_name(self) -> str:
        return f"explainer-f{int(round(100 * self.fraction)):03d}-s{self.seed}" + ('-zs' if self.zero_shot else '')

    @property
    def editor_name(self) -> str:
        """Name of the checkpoint the editor training ends in."""
        return self.name + ('-pre-cf' if self.mode == Mode.SSCR else '')

    @property
    def cf_iterations(self) -> int:
        """Counterfactual iterations of the kept editor."""
        if self.cf is not None and self.cf.done:
            return self.cf.chosen
        return max(self.sweep) if self.sweep else self.config.train.cf_iterations

    @property
    def explainer_quality(self) -> Optional[ExplainerQuality]:
        if not self.mode.uses_explainer:
            return None
        path = self.report_dir / f"{self.explainer_name}.json"
        if not path.exists():
            return None
        with open(path) as f:
            return ExplainerQuality(**json.load(f))

    def metadata(self, **kwargs) -> Dict:
        d = {'run': self.name, 'mode': self.mode.value, 'fraction': self.fraction, 'seed': self.seed,
             'zero_shot': self.zero_shot}
        d.update(kwargs)
        return d

    def register_step(self, step):
        self._steps.append(step)
        return step

    def initialize_steps(self):
        """Initialize the pipeline steps.

        Returns
        -------
        None
        """
        self.data = self.register_step(DataStep(self))
        self.explainer_step = self.register_step(ExplainerStep(self)) if self.mode.uses_explainer else None
        self.editor_step = self.register_step(EditorStep(self))
        if self.mode == Mode.SSCR:
            self.pre_cf_eval = self.register_step(EvalStep(self, 'pre-cf'))
            self.cf = self.register_step(CounterfactualStep(self, self.sweep))
        else:
            self.pre_cf_eval, self.cf = None, None
        self.final_eval = self.register_step(EvalStep(self, 'final'))
        self.render = RenderStep(self)

    def run(self):
        """Run all the steps in the pipeline and save the run summary.

        Returns
        -------
        None
        """
        for step in self._steps:
            step()
        self.save_fits(self.report_dir)
        self.save_report()

    def pretrain_explainer(self):
        self.data()
        if self.explainer_step is None:
            raise ValueError("The baseline mode does not use an explainer")
        self.explainer_step()

    def load_editor(self):
        path = self.checkpoint_dir / f"{self.name}.fits"
        if not path.exists():
            raise MissingArtifactError(f"Missing editor checkpoint {path}, run 'train' first")
        self.editor = IterativeEditor.load(path)
        self.logger.info(f"Loaded the editor from {path}")

    def evaluate(self) -> MetricsReport:
        """Scores the archived final checkpoint of the run on the test split."""
        self.data()
        self.load_editor()
        self.final_eval()
        return self.report

    def render_examples(self):
        self.data()
        self.load_editor()
        self.render()

    # FITS output
    # ===========
    def save_fits(self, savedir: Union[Path, str]):
        """Save the run summary into a FITS file.

        Parameters
        ----------
        savedir: Path or str
            Directory to save the summary in.

        Returns
        -------
        None
        """
        hdul = self._create_fits()
        hdul.writeto(Path(savedir) / f"{self.name}.fits", overwrite=True)

    def _create_fits(self):
        hdul = HDUList(PrimaryHDU())
        h = hdul[0].header
        h.append(Card('name', self.name))
        self._cf_add_setup_info(hdul)
        self._cf_add_pipeline_steps(hdul)
        return hdul

    def _cf_add_setup_info(self, hdul: HDUList):
        c = self.config
        h = hdul[0].header
        h.append(Card('COMMENT', '======================'))
        h.append(Card('COMMENT', '   Experiment setup   '))
        h.append(Card('COMMENT', '======================'))
        h.append(Card('seed', self.seed, 'Run seed'), bottom=True)
        h.append(Card('dseed', c.dataset.seed, 'Dataset generation seed'), bottom=True)
        h.append(Card('nturns', c.dataset.n_turns, 'Turns per episode'), bottom=True)
        h.append(Card('grid', c.editor.grid, 'Scene grid size'), bottom=True)
        h.append(Card('imsize', c.editor.image_size, 'Image size [px]'), bottom=True)
        h.append(Card('batch', c.train.batch_size, 'Editor batch size'), bottom=True)
        h.append(Card('lr_g', c.editor.lr_G_from_L_G, 'Generator learning rate from L_G'), bottom=True)
        h.append(Card('lr_e', c.editor.lr_G_from_L_E, 'Generator learning rate from L_E'), bottom=True)
        h.append(Card('lr_d', c.editor.lr_D, 'Discriminator learning rate'), bottom=True)

    def _cf_add_pipeline_steps(self, hdul: HDUList):
        for step in self._steps:
            step.add_to_fits(hdul)

    # Plotting
    # ========
    def save_report(self):
        fig = self.plot_report()
        fig.savefig(self.curve_dir / f"{self.name}.svg")
        close(fig)

    def plot_report(self):
        def sb(*nargs, **kwargs) -> Axes:
            return subplot(*nargs, **kwargs)

        has_cf = self.cf is not None and self.cf.done
        fig = figure(figsize=(10, 4 if not has_cf else 7))
        gs = GridSpec(2 if has_cf else 1, 1, figure=fig, hspace=0.4)

        atr = sb(gs[0])
        self.editor_step.plot_losses(atr)
        atr.text(0.02, 1, 'Editor training', va='center', transform=atr.transAxes, size=11,
                 bbox=dict(facecolor='w'))

        if has_cf:
            acf = sb(gs[1])
            self.cf.plot_losses(acf)
            acf.text(0.02, 1, 'Counterfactual phase', va='center', transform=acf.transAxes, size=11,
                     bbox=dict(facecolor='w'))
        fig.suptitle(self.name)
        return fig
