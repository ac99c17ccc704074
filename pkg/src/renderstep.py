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
from typing import List, Sequence

import numpy as np

from astropy.io.fits import Card, HDUList
from matplotlib.pyplot import close
from numpy import ndarray

from .dataset import Episode, make_batch
from .editor import IterativeEditor
from .instructions import Instruction
from .plots import plot_strip
from .scene import save_png, write_ppm
from .step import Step
from .tensor import no_grad
from .training import COUNTERFACTUAL, counterfactual_instructions, phase_rng


def counterfactual_frames(editor: IterativeEditor, episode: Episode,
                          instructions: Sequence[Instruction]) -> ndarray:
    """Counterfactual outputs V'_t of one episode, each edited from the ground-truth previous image."""
    batch = make_batch([episode], editor.vocabulary, editor.config.image_size)
    frames = []
    with no_grad():
        h = editor.initial_history(1)
        for t, instruction in enumerate(instructions):
            hc = editor.encode_history(editor.encode_instruction([instruction]), h)
            frames.append(editor.generate(batch.images[:, t], hc).values[0])
            h = editor.encode_history(editor.encode_ids(batch.ids[:, t], batch.mask[:, t]), h)
    return np.stack(frames)


class RenderStep(Step):
    """Writes per-episode PNG strips of the instructions, the predicted images, and the ground truth.

    A second strip per episode shows an intervened instruction sequence and the counterfactual
    outputs of the editor. The final predicted image of every episode is also written on its own,
    as PNG and as binary PPM.
    """
    name = "render"
    title = "Renders"

    def __init__(self, experiment):
        super().__init__(experiment)
        self.files: List[str] = []

    def __call__(self):
        self.start()
        ex = self.experiment
        episodes = ex.splits['test'][:ex.config.render_count]
        root = ex.render_dir / ex.name
        root.mkdir(parents=True, exist_ok=True)
        rng = phase_rng(ex.seed, COUNTERFACTUAL)

        predicted = ex.editor.rollout([e.instructions for e in episodes]) if episodes else []
        for episode, frames in zip(episodes, predicted):
            captions = [str(i) for i in episode.instructions]
            truth = make_batch([episode], ex.editor.vocabulary, ex.config.editor.image_size).images[0]
            fig = plot_strip(captions, [frames[1:], truth[1:]], ['Predicted', 'Truth'], f'{episode.id}  {ex.name}')
            fig.savefig(root / f'{episode.id}.png')
            close(fig)
            self.files.append(f'{episode.id}.png')

            cf = counterfactual_instructions([episode], rng, ex.config.train.intervention_p)[0]
            fig = plot_strip([str(i) for i in cf], [counterfactual_frames(ex.editor, episode, cf), truth[:-1]],
                             ['Counterfactual', 'Previous'], f'{episode.id}  counterfactual')
            fig.savefig(root / f'{episode.id}-cf.png')
            close(fig)
            self.files.append(f'{episode.id}-cf.png')

            save_png(frames[-1], root / f'{episode.id}-final.png')
            write_ppm(frames[-1], root / f'{episode.id}-final.ppm')
        self.logger.info(f"Wrote {len(self.files)} render strips and {len(episodes)} final images to {root}")
        self.done = True

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            h = hdul[0].header
            self._add_banner(hdul)
            h.append(Card('nrender', len(self.files), 'Number of render strips'), bottom=True)
