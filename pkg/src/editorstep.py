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
from typing import Optional

import numpy as np
import pandas as pd

from astropy.io.fits import Card, HDUList
from matplotlib.pyplot import setp

from .editor import IterativeEditor
from .plots import bplot
from .step import Step
from .training import CURVE_COLUMNS, INIT_EDITOR, Mode, train_editor_ctc


class EditorStep(Step):
    """Trains the iterative editor with the adversarial and, unless in baseline mode, cross-task consistency losses.

    The editor training of an sscr run is identical to the ctc run with the same seed and data
    fraction, so an sscr run reuses the ctc checkpoint when it exists.
    """
    name = "editor"
    title = "Editor training"

    def __init__(self, experiment):
        super().__init__(experiment)
        self.editor: Optional[IterativeEditor] = None
        self.curves: Optional[pd.DataFrame] = None
        self.reused: Optional[str] = None

    def _save_epoch(self, epoch: int, editor: IterativeEditor):
        ex = self.experiment
        if epoch % ex.config.train.checkpoint_every == 0 or epoch == ex.config.train.epochs:
            editor.save(ex.checkpoint_dir / f"{ex.editor_name}-e{epoch:03d}.fits", ex.metadata(epoch=epoch))

    def __call__(self):
        self.start()
        ex = self.experiment
        mode = ex.mode
        path = ex.checkpoint_dir / f"{ex.editor_name}.fits"
        shared = ex.checkpoint_dir / f"{ex.run_name(Mode.CTC)}.fits"

        if mode == Mode.SSCR and shared.exists():
            self.logger.info(f"Reusing the ctc editor from {shared}")
            self.editor = IterativeEditor.load(shared)
            self.reused = shared.stem
            curves = ex.curve_dir / f"{shared.stem}.csv"
            self.curves = pd.read_csv(curves) if curves.exists() else pd.DataFrame(columns=CURVE_COLUMNS)
        else:
            self.logger.info(f"Training the editor in {mode.value} mode on {len(ex.splits['train'])} episodes")
            self.editor = IterativeEditor(ex.config.editor, [ex.seed, INIT_EDITOR])
            self.curves = train_editor_ctc(self.editor, ex.explainer, ex.splits['train'], ex.config.train, ex.seed,
                                           ex.use_tqdm, self._save_epoch)
        self.editor.save(path, ex.metadata(epoch=ex.config.train.epochs))
        self.curves.to_csv(ex.curve_dir / f"{ex.name}.csv", index=False)

        ex.editor = self.editor
        ex.curves = self.curves
        self.done = True

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            ex = self.experiment
            h = hdul[0].header
            self._add_banner(hdul)
            h.append(Card('mode', ex.mode.value, 'Editor training mode'), bottom=True)
            h.append(Card('epochs', ex.config.train.epochs, 'Number of training epochs'), bottom=True)
            h.append(Card('niter', len(self.curves), 'Number of training iterations'), bottom=True)
            h.append(Card('reused', self.reused or '', 'Checkpoint reused instead of training'), bottom=True)
            if len(self.curves):
                last = self.curves[self.curves.epoch == self.curves.epoch.max()]
                for column, key in (('L_G', 'l_g'), ('L_D', 'l_d'), ('L_E', 'l_e'), ('L_R', 'l_r')):
                    value = last[column].mean()
                    if np.isfinite(value):
                        h.append(Card(key, value, f'Mean {column} over the last epoch'), bottom=True)
            for store, checksum in self.editor.checksums().items():
                h.append(Card(f'cs_{store[:5]}', checksum[:16], f'{store} checksum'), bottom=True)

    @bplot
    def plot_losses(self, ax=None):
        c = self.curves
        ax.plot(c.iteration, c.L_G, label='$L_G$')
        ax.plot(c.iteration, c.L_D, label='$L_D$')
        if c.L_E.notna().any():
            ax.plot(c.iteration, c.L_E, label='$L_E$')
        ax.legend(loc='upper right')
        setp(ax, xlabel='Iteration', ylabel='Loss')
        ax.autoscale(axis='x', tight=True)
