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
"""Editor training with cross-task consistency, the counterfactual phase, and checkpoint evaluation."""
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from numpy import ndarray
from tqdm.auto import tqdm

from .dataset import Episode, decoder_targets, iterate_batches, make_batch
from .editor import IterativeEditor, OracleEditor, loss_D, loss_G
from .explainer import IterativeExplainer
from .instructions import Instruction, intervene
from .metrics import MetricsReport, evaluate_scenes
from .parameters import adam_step
from .scene import detect
from .tensor import Tensor, add, backward, log_sigmoid, mean, mul, no_grad, sub

logger = getLogger("training")

CURVE_COLUMNS = ['iteration', 'phase', 'epoch', 'L_G', 'L_D', 'L_E', 'L_R', "L'_E"]

# Independent random streams of a run, keyed by phase.
INIT_EDITOR, TRAIN_EDITOR, COUNTERFACTUAL, INIT_EXPLAINER, PRETRAIN_EXPLAINER = range(1, 6)


class MissingExplainerError(RuntimeError):
    pass


class Mode(str, Enum):
    BASELINE = 'baseline'
    CTC = 'ctc'
    SSCR = 'sscr'

    @classmethod
    def _missing_(cls, value):
        if value == 'ctc-only':
            return cls.CTC
        return None

    @property
    def uses_explainer(self) -> bool:
        return self != Mode.BASELINE


class CounterfactualLoss(str, Enum):
    EXPLAINER = 'explainer'
    DISCRIMINATOR = 'discriminator'


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    mode: Mode = Mode.SSCR
    cf_iterations: int = 200
    cf_batch_size: int = 16
    cf_loss: CounterfactualLoss = CounterfactualLoss.EXPLAINER
    intervention_p: float = 0.5
    recon_weight: float = 1.0
    checkpoint_every: int = 10
    max_detection_error: float = 0.02

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.cf_loss = CounterfactualLoss(self.cf_loss)
        if min(self.epochs, self.batch_size, self.cf_batch_size) <= 0 or self.cf_iterations < 0:
            raise ValueError("Epochs, batch sizes, and the counterfactual iterations must be positive")
        if not 0.0 < self.intervention_p <= 1.0:
            raise ValueError(f"The intervention probability must be in (0, 1], got {self.intervention_p}")
        if self.recon_weight < 0.0:
            raise ValueError(f"The reconstruction weight must be non-negative, got {self.recon_weight}")


def phase_rng(seed: int, phase: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase])


def wrong_instructions(episodes: Sequence[Episode], pool: Sequence[Episode],
                       rng: np.random.Generator) -> List[List[Instruction]]:
    """Instructions borrowed from other episodes of the pool at the same turn index."""
    wrong = []
    for e in episodes:
        turns = []
        for t in range(len(e)):
            for _ in range(16):
                other = pool[rng.integers(len(pool))]
                if other.id != e.id and other.turns[t].instruction != e.turns[t].instruction:
                    break
            turns.append(other.turns[t].instruction)
        wrong.append(turns)
    return wrong


def reconstruction_loss(v: Tensor, target: ndarray) -> Tensor:
    """Summed squared pixel error of the predicted images, averaged over the batch."""
    d = sub(v, target)
    return mul(mean(mul(d, d)), d.values.size / v.shape[0])


def _generator_step(editor: IterativeEditor, lr: float):
    editor.stores['discriminator'].zero_grad()
    for store in editor.generator_stores:
        adam_step(store, lr)


def train_editor_ctc(editor: IterativeEditor, explainer: Optional[IterativeExplainer], episodes: Sequence[Episode],
                     config: TrainConfig, seed: int = 0, use_tqdm: bool = True,
                     on_epoch: Optional[Callable[[int, IterativeEditor], None]] = None) -> pd.DataFrame:
    """Trains the editor adversarially, with the cross-task consistency loss unless in baseline mode.

    Every batch makes one generator update and one discriminator update. The generator sees the
    ground-truth previous image at every turn and minimises -L_G + w L_E + λ L_R, with the L_E weight w
    the ratio of the L_E and L_G learning rates and L_R the squared pixel error against the ground-truth
    image, weighted by `recon_weight`. The discriminator maximises L_D on detached generator
    outputs, with wrong pairs made of real images and histories whose current instruction comes from
    another episode.

    Parameters
    ----------
    editor: IterativeEditor
        Editor to train.
    explainer: IterativeExplainer or None
        Frozen pretrained explainer, required unless the mode is baseline.
    episodes: sequence of Episode
        Training episodes.
    config: TrainConfig
        Training configuration.
    seed: int
        Run seed.
    use_tqdm: bool
        Show a progress bar over the epochs.
    on_epoch: callable, optional
        Called with the epoch number and the editor after every epoch.

    Returns
    -------
        Loss curve with one row per batch.
    """
    mode = Mode(config.mode)
    if mode.uses_explainer and explainer is None:
        raise MissingExplainerError(f"Mode '{mode.value}' needs a pretrained explainer")
    if mode.uses_explainer and not explainer.frozen:
        raise MissingExplainerError("The explainer must be pretrained and frozen before editor training")

    ec = editor.config
    w_le = ec.lr_G_from_L_E / ec.lr_G_from_L_G
    rng = phase_rng(seed, TRAIN_EDITOR)
    rows, iteration = [], 0
    for epoch in tqdm(range(config.epochs), desc=f'Training the editor ({mode.value})', leave=False,
                      disable=not use_tqdm):
        for episodes_b in iterate_batches(episodes, config.batch_size, rng):
            batch = make_batch(episodes_b, editor.vocabulary, ec.image_size)
            b = len(batch)

            # Generator and encoders
            h = editor.initial_history(b)
            he = explainer.histories(batch.ids, batch.mask) if mode.uses_explainer else None
            fake_logits, fakes, hs, le, lrec = [], [], [], Tensor(0.0), Tensor(0.0)
            for t in range(batch.n_turns):
                h = editor.encode_history(editor.encode_ids(batch.ids[:, t], batch.mask[:, t]), h)
                v = editor.generate(batch.images[:, t], h)
                fake_logits.append(editor.discriminate(v, h))
                if mode.uses_explainer:
                    le = add(le, explainer.loss(v, batch.images[:, t], he[t], batch.targets[:, t],
                                                batch.target_mask[:, t]))
                if config.recon_weight > 0.0:
                    lrec = add(lrec, reconstruction_loss(v, batch.images[:, t + 1]))
                fakes.append(v.values)
                hs.append(h.values)
            lg = loss_G(fake_logits)
            backward(add(add(mul(lg, -1.0), mul(le, w_le)), mul(lrec, config.recon_weight)))
            _generator_step(editor, ec.lr_G_from_L_G)

            # Discriminator
            wrong = wrong_instructions(episodes_b, episodes, rng)
            real_logits, fake_logits, wrong_logits = [], [], []
            with no_grad():
                hw = []
                for t in range(batch.n_turns):
                    h_prev = Tensor(hs[t - 1]) if t > 0 else editor.initial_history(b)
                    hw.append(editor.encode_history(editor.encode_instruction([i[t] for i in wrong]), h_prev))
            for t in range(batch.n_turns):
                real_logits.append(editor.discriminate(batch.images[:, t + 1], Tensor(hs[t])))
                fake_logits.append(editor.discriminate(fakes[t], Tensor(hs[t])))
                wrong_logits.append(editor.discriminate(batch.images[:, t + 1], hw[t]))
            ld = loss_D(real_logits, fake_logits, wrong_logits)
            backward(mul(ld, -1.0))
            adam_step(editor.stores['discriminator'], ec.lr_D)

            rows.append({'iteration': iteration, 'phase': 'editor', 'epoch': epoch, 'L_G': lg.item(),
                         'L_D': ld.item(), 'L_E': le.item() if mode.uses_explainer else np.nan,
                         'L_R': lrec.item() if config.recon_weight > 0.0 else np.nan, "L'_E": np.nan})
            iteration += 1

        last = pd.DataFrame([r for r in rows if r['epoch'] == epoch])
        logger.info(f"Epoch {epoch + 1}/{config.epochs}: L_G {last.L_G.mean():.4f}, L_D {last.L_D.mean():.4f}"
                    + (f", L_E {last.L_E.mean():.4f}" if mode.uses_explainer else '')
                    + (f", L_R {last.L_R.mean():.4f}" if config.recon_weight > 0.0 else ''))
        if on_epoch is not None:
            on_epoch(epoch + 1, editor)
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def counterfactual_instructions(episodes: Sequence[Episode], rng: np.random.Generator,
                                p: float = 0.5) -> List[List[Instruction]]:
    """Fresh type-preserving interventions on every instruction of a batch."""
    return [[intervene(i, rng, p) for i in e.instructions] for e in episodes]


def counterfactual_phase(editor: IterativeEditor, explainer: IterativeExplainer, episodes: Sequence[Episode],
                         config: TrainConfig, seed: int = 0, use_tqdm: bool = True,
                         on_iteration: Optional[Callable[[int, IterativeEditor], None]] = None,
                         first_iteration: int = 0) -> pd.DataFrame:
    """Trains the generator side on counterfactual instructions.

    Each iteration draws a batch of episodes and intervenes on all of its instructions. For every
    turn, the counterfactual history h'_t folds the intervened instruction into the real history
    h_{t-1}, and the generator edits the ground-truth previous image into V'_t. Only the generator
    side is updated; the discriminator and the explainer stay untouched.

    With the explainer loss source, the loss is the reconstruction loss of the intervened
    instruction from (V'_t, O_{t-1}, h_{t-1}). With the discriminator source, it is the
    non-saturating generator loss -log D([V'_t, h'_t]).

    Parameters
    ----------
    editor: IterativeEditor
        Trained editor.
    explainer: IterativeExplainer
        Frozen explainer; required for the explainer loss source.
    episodes: sequence of Episode
        Training episodes whose instructions are intervened on.
    config: TrainConfig
        Uses `cf_iterations`, `cf_batch_size`, `cf_loss`, and `intervention_p`.
    seed: int
        Run seed.
    use_tqdm: bool
        Show a progress bar.
    on_iteration: callable, optional
        Called with the number of completed iterations and the editor, also once before the first
        iteration.
    first_iteration: int
        Iteration number of the first row of the returned curve.

    Returns
    -------
        Loss curve with one row per iteration.
    """
    source = CounterfactualLoss(config.cf_loss)
    if source == CounterfactualLoss.EXPLAINER and (explainer is None or not explainer.frozen):
        raise MissingExplainerError("The counterfactual phase needs a pretrained and frozen explainer")

    ec = editor.config
    rng = phase_rng(seed, COUNTERFACTUAL)
    rows = []
    if on_iteration is not None:
        on_iteration(0, editor)
    for i in tqdm(range(config.cf_iterations), desc='Counterfactual reasoning', leave=False, disable=not use_tqdm):
        chosen = rng.choice(len(episodes), size=min(config.cf_batch_size, len(episodes)), replace=False)
        episodes_b = [episodes[j] for j in chosen]
        batch = make_batch(episodes_b, editor.vocabulary, ec.image_size)
        b = len(batch)
        cf = counterfactual_instructions(episodes_b, rng, config.intervention_p)

        he = explainer.histories(batch.ids, batch.mask) if source == CounterfactualLoss.EXPLAINER else None
        h = editor.initial_history(b)
        loss = Tensor(0.0)
        for t in range(batch.n_turns):
            turn = [c[t] for c in cf]
            hc = editor.encode_history(editor.encode_instruction(turn), h)
            vc = editor.generate(batch.images[:, t], hc)
            if source == CounterfactualLoss.EXPLAINER:
                targets, mask = decoder_targets(turn, editor.vocabulary)
                loss = add(loss, explainer.loss(vc, batch.images[:, t], he[t], targets, mask))
            else:
                loss = add(loss, mul(mean(log_sigmoid(editor.discriminate(vc, hc))), -1.0))
            with no_grad():
                h = editor.encode_history(editor.encode_ids(batch.ids[:, t], batch.mask[:, t]), h)
        backward(loss)
        _generator_step(editor, ec.lr_counterfactual)
        rows.append({'iteration': first_iteration + i, 'phase': f'counterfactual-{source.value}', 'epoch': np.nan,
                     'L_G': np.nan, 'L_D': np.nan, 'L_E': np.nan, 'L_R': np.nan, "L'_E": loss.item()})
        if on_iteration is not None:
            on_iteration(i + 1, editor)
    if rows:
        final = rows[-1]["L'_E"]
        logger.info(f"Counterfactual phase ({source.value}): {config.cf_iterations} iterations, final loss {final:.4f}")
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def rollout_scenes(editor: Union[IterativeEditor, OracleEditor], episodes: Sequence[Episode],
                   max_error: float = 0.02, batch_size: int = 64) -> Tuple[list, ndarray]:
    """Rolls the editor out over whole episodes and detects the final scenes.

    Only the instructions of the episodes are read.
    """
    scenes, finals = [], []
    for episodes_b in iterate_batches(episodes, batch_size):
        frames = editor.rollout([e.instructions for e in episodes_b])
        for e, f in zip(episodes_b, frames):
            scenes.append(detect(f[-1], e.grid, max_error))
            finals.append(f[-1])
    return scenes, np.array(finals)


def evaluate_checkpoint(editor: Union[IterativeEditor, OracleEditor], episodes: Sequence[Episode],
                        split: str = 'test', max_error: float = 0.02, **metadata) -> MetricsReport:
    """Scores the final predicted image of every episode against its final ground-truth scene."""
    predicted, _ = rollout_scenes(editor, episodes, max_error)
    report = evaluate_scenes(predicted, [e.final_scene for e in episodes], [e.id for e in episodes],
                             split=split, **metadata)
    logger.info(f"Evaluation on {len(episodes)} {split} episodes: P {report.precision:.4f}, "
                f"R {report.recall:.4f}, F1 {report.f1:.4f}, RelSim {report.relsim:.4f}")
    return report
