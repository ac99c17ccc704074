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
"""Editing and explanation metrics.

Editing is scored on the final image of an episode: object F1 over detected object identities,
and RelSim, the object recall times the fraction of ground-truth scene-graph edges recovered.
Explanation is scored with corpus BLEU-4, perplexity, and token accuracy.
"""
import json
import math

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu

from .instructions import TokenType, Vocabulary
from .scene import Scene, SceneGraph, scene_graph


class EmptyCorpusError(ValueError):
    pass


def match_counts(predicted: Scene, truth: Scene) -> Tuple[int, int, int]:
    """True positives, predicted count, and true count of object identities."""
    p, t = predicted.specs, truth.specs
    return len(p & t), len(p), len(t)


def precision_recall_f1(tp: int, npred: int, ntrue: int) -> Tuple[float, float, float]:
    precision = tp / npred if npred else 0.0
    recall = tp / ntrue if ntrue else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1


def f1(predicted: Scene, truth: Scene) -> Tuple[float, float, float]:
    """Precision, recall, and F1 of the object identities of a predicted scene, positions ignored."""
    return precision_recall_f1(*match_counts(predicted, truth))


def relsim(gt: SceneGraph, pred: SceneGraph, recall: float) -> float:
    """recall × |E_pred ∩ E_gt| / |E_gt|, and the recall itself when the truth has no edges."""
    if not gt.edges:
        return recall
    return recall * len(gt.edges & pred.edges) / len(gt.edges)


@dataclass
class MetricsReport:
    """Editing metrics of one evaluation run.

    The corpus precision, recall, and F1 are micro averages over all episodes; RelSim is the mean of
    the per-episode values.
    """
    precision: float
    recall: float
    f1: float
    relsim: float
    n_episodes: int
    split: str = 'test'
    stage: str = 'final'
    zero_shot: bool = False
    seed: Optional[int] = None
    checkpoint: Optional[str] = None
    mode: Optional[str] = None
    fraction: Optional[float] = None
    cf_loss: Optional[str] = None
    cf_iterations: Optional[int] = None
    bleu: Optional[float] = None
    ppl: Optional[float] = None
    sweep: bool = False
    episodes: Optional[List[Dict]] = field(default=None, repr=False)

    def to_dict(self, episodes: bool = True) -> Dict:
        d = asdict(self)
        if not episodes:
            d.pop('episodes')
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    def to_json(self, path: Union[Path, str], episodes: bool = True):
        with open(path, 'w') as f:
            json.dump(self.to_dict(episodes), f, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path: Union[Path, str]) -> 'MetricsReport':
        with open(path) as f:
            return cls(**json.load(f))

    def to_csv(self, path: Union[Path, str]):
        """Writes the per-episode breakdown as CSV."""
        pd.DataFrame(self.episodes or []).to_csv(path, index=False)


def evaluate_scenes(predicted: Sequence[Scene], truth: Sequence[Scene], ids: Optional[Sequence[str]] = None,
                    **metadata) -> MetricsReport:
    """Scores predicted final scenes against the ground-truth final scenes.

    Parameters
    ----------
    predicted: sequence of Scene
        Scenes detected in the final predicted images.
    truth: sequence of Scene
        Ground-truth final scenes.
    ids: sequence of str, optional
        Episode ids for the per-episode breakdown.
    metadata
        Report metadata fields (split, seed, checkpoint, mode, ...).

    Returns
    -------
        MetricsReport with the corpus metrics and the per-episode breakdown.
    """
    if len(predicted) != len(truth):
        raise ValueError(f"{len(predicted)} predicted scenes for {len(truth)} ground-truth scenes")
    ids = ids if ids is not None else [str(i) for i in range(len(truth))]
    rows, counts = [], np.zeros(3, dtype=int)
    for i, p, t in zip(ids, predicted, truth):
        c = match_counts(p, t)
        counts += c
        precision, recall, f = precision_recall_f1(*c)
        rows.append({'id': i, 'precision': precision, 'recall': recall, 'f1': f,
                     'relsim': relsim(scene_graph(t), scene_graph(p), recall)})
    precision, recall, f = precision_recall_f1(*counts)
    rs = float(np.mean([r['relsim'] for r in rows])) if rows else 0.0
    return MetricsReport(precision, recall, f, rs, len(rows), episodes=rows, **metadata)


# Explanation quality
# ===================
@dataclass
class ExplainerQuality:
    bleu: float
    ppl: float
    token_accuracy: float
    type_accuracy: Dict[str, float]

    def to_dict(self) -> Dict:
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    def to_json(self, path: Union[Path, str]):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def explainer_quality(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                      token_log_probs: Optional[Sequence[float]] = None) -> ExplainerQuality:
    """Corpus BLEU-4, perplexity, and token accuracy of explainer transcriptions.

    Parameters
    ----------
    hypotheses: sequence of token lists
        Greedy transcriptions.
    references: sequence of token lists
        Reference instructions, one per hypothesis.
    token_log_probs: sequence of float, optional
        Natural-log probabilities the explainer assigns to the reference tokens; perplexity is
        exp(-mean). Without them the perplexity is NaN.

    Returns
    -------
        ExplainerQuality. Token accuracy counts the reference positions whose token the hypothesis
        reproduces at the same position; the per-type accuracies split it by token type.
    """
    if len(hypotheses) == 0:
        raise EmptyCorpusError("Cannot score an empty explanation corpus")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses for {len(references)} references")

    bleu = corpus_bleu([[list(r)] for r in references], [list(h) for h in hypotheses],
                       smoothing_function=SmoothingFunction().method2)

    types = Vocabulary().types
    hits, totals = {}, {}
    for h, r in zip(hypotheses, references):
        for i, token in enumerate(r):
            kind = types.get(token, TokenType.FILLER).value
            totals[kind] = totals.get(kind, 0) + 1
            hits[kind] = hits.get(kind, 0) + int(i < len(h) and h[i] == token)
    ntokens = sum(totals.values())
    accuracy = sum(hits.values()) / ntokens if ntokens else 0.0
    type_accuracy = {k: hits[k] / totals[k] for k in sorted(totals)}

    if token_log_probs is None or len(token_log_probs) == 0:
        ppl = float('nan')
    else:
        ppl = float(np.exp(-np.mean(token_log_probs)))
    return ExplainerQuality(float(bleu), ppl, accuracy, type_accuracy)
