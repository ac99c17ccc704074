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
from typing import List, Optional

from astropy.io.fits import Card, HDUList

from .explainer import IterativeExplainer, pretrain, transcribe
from .metrics import ExplainerQuality, explainer_quality
from .step import Step
from .training import INIT_EXPLAINER, PRETRAIN_EXPLAINER


class ExplainerStep(Step):
    """Pretrains the iterative explainer on the run's training split, or loads it if already pretrained.

    Explainers are shared by all the runs with the same seed and training data, so the checkpoint
    name leaves out the editor mode.
    """
    name = "explainer"
    title = "Iterative explainer"

    def __init__(self, experiment):
        super().__init__(experiment)
        self.explainer: Optional[IterativeExplainer] = None
        self.quality: Optional[ExplainerQuality] = None
        self.perplexities: List[float] = []
        self.loaded: bool = False

    def __call__(self):
        self.start()
        ex = self.experiment
        path = ex.checkpoint_dir / f"{ex.explainer_name}.fits"
        report = ex.report_dir / f"{ex.explainer_name}.json"

        if path.exists():
            self.logger.info(f"Loading the pretrained explainer from {path}")
            self.explainer = IterativeExplainer.load(path)
            self.loaded = True
            assert self.explainer.frozen
        else:
            self.logger.info(f"Pretraining the explainer on {len(ex.splits['train'])} episodes")
            self.explainer = IterativeExplainer(ex.config.explainer, [ex.seed, INIT_EXPLAINER])
            self.perplexities = pretrain(self.explainer, ex.splits['train'], [ex.seed, PRETRAIN_EXPLAINER],
                                         ex.use_tqdm)
            self.explainer.save(path, {'fraction': ex.fraction, 'seed': ex.seed, 'zero_shot': ex.zero_shot})

        self.quality = explainer_quality(*transcribe(self.explainer, ex.splits['val']))
        self.quality.to_json(report)
        self.logger.info(f"Validation BLEU {self.quality.bleu:.4f}, PPL {self.quality.ppl:.4f}, "
                         f"token accuracy {self.quality.token_accuracy:.4f}")
        ex.explainer = self.explainer
        self.done = True

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            h = hdul[0].header
            self._add_banner(hdul)
            h.append(Card('e_loaded', self.loaded, 'Explainer loaded from an earlier run'), bottom=True)
            if self.perplexities:
                h.append(Card('e_tppl', self.perplexities[-1], 'Final training perplexity'), bottom=True)
            h.append(Card('e_bleu', self.quality.bleu, 'Validation BLEU-4'), bottom=True)
            h.append(Card('e_ppl', self.quality.ppl, 'Validation perplexity'), bottom=True)
            h.append(Card('e_acc', self.quality.token_accuracy, 'Validation token accuracy'), bottom=True)
            for kind, value in self.quality.type_accuracy.items():
                h.append(Card(f'e_a_{kind[:3]}', value, f'Validation {kind} token accuracy'), bottom=True)
