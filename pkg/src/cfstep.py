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
from dataclasses import replace
from typing import Dict, List, Optional, Sequence

import pandas as pd

from astropy.io.fits import Card, HDUList
from matplotlib.pyplot import close, setp

from .editor import IterativeEditor
from .parameters import ParameterStore
from .plots import bplot
from .step import Step
from .training import counterfactual_phase, evaluate_checkpoint

SWEEP_COLUMNS = ['iterations', 'precision', 'recall', 'f1', 'relsim']


class CounterfactualStep(Step):
    """Runs the counterfactual reasoning phase on the trained editor.

    With a sweep, the phase runs up to the largest iteration cap and the editor is scored on the
    validation split whenever the iteration count reaches a cap of the sweep. The run keeps the
    parameters of the cap with the best validation F1, the smallest such cap on ties.
    """
    name = "counterfactual"
    title = "Counterfactual phase"

    def __init__(self, experiment, sweep: Optional[Sequence[int]] = None):
        super().__init__(experiment)
        self.sweep: List[int] = sorted(set(sweep)) if sweep else []
        self.iterations: int = experiment.config.train.cf_iterations
        self.chosen: int = self.iterations
        self.curves: Optional[pd.DataFrame] = None
        self.sweep_results: Optional[pd.DataFrame] = None
        self._sweep_rows: List = []
        self._best: Optional[Dict[str, ParameterStore]] = None
        self._checksums = {}

    def _score(self, iterations: int, editor: IterativeEditor):
        if iterations in self.sweep:
            ex = self.experiment
            r = evaluate_checkpoint(editor, ex.splits['val'], 'val', ex.config.train.max_detection_error)
            self._sweep_rows.append({'iterations': iterations, 'precision': r.precision, 'recall': r.recall,
                                     'f1': r.f1, 'relsim': r.relsim})
            self.logger.info(f"{iterations:4d} iterations: validation F1 {r.f1:.4f}, RelSim {r.relsim:.4f}")
            if self._best is None or r.f1 > max(row['f1'] for row in self._sweep_rows[:-1]):
                self.chosen = iterations
                self._best = {n: s.copy() for n, s in editor.stores.items()}

    def __call__(self):
        self.start()
        ex = self.experiment
        if self.sweep:
            self.iterations = max(self.sweep)
        self.chosen = self.iterations
        config = replace(ex.config.train, cf_iterations=self.iterations)

        before = {'discriminator': ex.editor.stores['discriminator'].checksum()}
        if ex.explainer is not None:
            before.update({f'explainer/{n}': c for n, c in ex.explainer.checksums().items()})

        self.logger.info(f"Running {self.iterations} counterfactual iterations with the {config.cf_loss.value} loss")
        self.curves = counterfactual_phase(ex.editor, ex.explainer, ex.splits['train'], config, ex.seed, ex.use_tqdm,
                                           self._score if self.sweep else None, len(ex.curves))

        after = {'discriminator': ex.editor.stores['discriminator'].checksum()}
        if ex.explainer is not None:
            after.update({f'explainer/{n}': c for n, c in ex.explainer.checksums().items()})
        assert before == after, "The counterfactual phase changed the discriminator or the explainer"
        self._checksums = after

        if self._best is not None:
            for n, store in self._best.items():
                ex.editor.stores[n].load_state(store)
            self.logger.info(f"Keeping the editor after {self.chosen} of {self.iterations} iterations")

        ex.editor.save(ex.checkpoint_dir / f"{ex.name}.fits", ex.metadata(epoch=config.epochs,
                                                                         cf_iterations=self.chosen))
        ex.curves = pd.concat([ex.curves, self.curves], ignore_index=True) if len(ex.curves) else self.curves
        ex.curves.to_csv(ex.curve_dir / f"{ex.name}.csv", index=False)
        if self.sweep:
            self.sweep_results = pd.DataFrame(self._sweep_rows, columns=SWEEP_COLUMNS)
            self.sweep_results.to_csv(ex.report_dir / f"{ex.name}.csv", index=False)
            fig = self.plot_sweep()
            fig.savefig(ex.curve_dir / f"{ex.name}-caps.svg")
            close(fig)
        self.done = True

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            ex = self.experiment
            h = hdul[0].header
            self._add_banner(hdul)
            h.append(Card('cf_loss', ex.config.train.cf_loss.value, 'Counterfactual loss source'), bottom=True)
            h.append(Card('cf_iter', self.chosen, 'Counterfactual iterations of the kept editor'), bottom=True)
            h.append(Card('cf_run', self.iterations, 'Counterfactual iterations run'), bottom=True)
            h.append(Card('cf_lr', ex.config.editor.lr_counterfactual, 'Counterfactual learning rate'), bottom=True)
            h.append(Card('cf_p', ex.config.train.intervention_p, 'Token intervention probability'), bottom=True)
            if len(self.curves):
                h.append(Card('cf_final', self.curves["L'_E"].iloc[-1], 'Final counterfactual loss'), bottom=True)
            h.append(Card('cf_csd', self._checksums['discriminator'][:16],
                          'Discriminator checksum after the counterfactual phase'), bottom=True)
            if self.sweep_results is not None and len(self.sweep_results):
                h.append(Card('sw_f1', self.sweep_results.f1.max(), 'Best validation F1 of the sweep'), bottom=True)

    @bplot
    def plot_losses(self, ax=None):
        ax.plot(self.curves.iteration, self.curves["L'_E"], c='k')
        setp(ax, xlabel='Iteration', ylabel="$L'_E$" if self.experiment.config.train.cf_loss.value == 'explainer'
             else "$-\\log D$")
        ax.autoscale(axis='x', tight=True)

    @bplot
    def plot_sweep(self, ax=None):
        s = self.sweep_results
        ax.plot(s.iterations, s.f1, 'o-', label='F1')
        ax.plot(s.iterations, s.relsim, 's-', label='RelSim')
        best = s.f1.idxmax()
        ax.axvline(s.iterations[best], alpha=0.15, c='orangered', ls='-', lw=10, zorder=-100)
        ax.legend(loc='lower right')
        setp(ax, xlabel='Counterfactual iterations', ylabel='Validation score')
