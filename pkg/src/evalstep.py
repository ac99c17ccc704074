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

from astropy.io.fits import Card, HDUList

from .metrics import MetricsReport
from .step import Step
from .training import Mode, evaluate_checkpoint


class EvalStep(Step):
    """Scores the editor on the test split by rolling it out over whole episodes.

    The 'pre-cf' stage scores an sscr run before its counterfactual phase, the 'final' stage scores
    the finished run.
    """
    name = "eval"

    def __init__(self, experiment, stage: str = 'final', split: str = 'test'):
        super().__init__(experiment)
        assert stage in ('pre-cf', 'final')
        self.stage = stage
        self.split = split
        self.title = 'Pre-cf evaluation' if stage == 'pre-cf' else 'Evaluation'
        self.report: Optional[MetricsReport] = None

    @property
    def basename(self) -> str:
        return self.experiment.name + ('-pre-cf' if self.stage == 'pre-cf' else '')

    def start(self):
        super().start()
        self.logger = self.logger.getChild(self.stage)

    def __call__(self):
        self.start()
        ex = self.experiment
        episodes = ex.splits[self.split]
        reads = sum(e.intermediate_reads for e in episodes)
        checkpoint = ex.editor_name if self.stage == 'pre-cf' else ex.name
        sscr = ex.mode == Mode.SSCR
        quality = ex.explainer_quality

        self.report = evaluate_checkpoint(ex.editor, episodes, self.split, ex.config.train.max_detection_error,
                                          stage=self.stage, zero_shot=ex.zero_shot, seed=ex.seed,
                                          checkpoint=f"{checkpoint}.fits", mode=ex.mode.value, fraction=ex.fraction,
                                          cf_loss=ex.config.train.cf_loss.value if sscr else None,
                                          cf_iterations=(0 if self.stage == 'pre-cf' else ex.cf_iterations) if sscr else None,
                                          bleu=quality.bleu if quality else None,
                                          ppl=quality.ppl if quality else None, sweep=bool(ex.sweep))
        assert sum(e.intermediate_reads for e in episodes) == reads, "Evaluation read intermediate ground truth"

        self.report.to_json(ex.report_dir / f"{self.basename}.json")
        self.report.to_csv(ex.report_dir / f"{self.basename}-episodes.csv")
        self.logger.info(f"F1 {self.report.f1:.4f}, RelSim {self.report.relsim:.4f}")
        if self.stage == 'final':
            ex.report = self.report
        else:
            ex.pre_cf_report = self.report
        self.done = True

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            h = hdul[0].header
            p = 'p_' if self.stage == 'pre-cf' else ''
            self._add_banner(hdul)
            h.append(Card(f'{p}split', self.split, 'Evaluation split'), bottom=True)
            h.append(Card(f'{p}neps', self.report.n_episodes, 'Number of evaluated episodes'), bottom=True)
            h.append(Card(f'{p}prec', self.report.precision, 'Object precision'), bottom=True)
            h.append(Card(f'{p}rec', self.report.recall, 'Object recall'), bottom=True)
            h.append(Card(f'{p}f1', self.report.f1, 'Object F1'), bottom=True)
            h.append(Card(f'{p}relsim', self.report.relsim, 'Relational similarity'), bottom=True)
