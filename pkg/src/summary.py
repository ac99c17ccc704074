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
"""Aggregation of run reports into summary tables and directional verdicts."""
import json

from dataclasses import dataclass, field
from logging import getLogger
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from matplotlib.pyplot import close
from scipy.stats import binomtest

from .metrics import EmptyCorpusError
from .plots import plot_summary

logger = getLogger("summary")

KEYS = ['zero_shot', 'stage', 'label', 'fraction']
LABELS = {'baseline': 'baseline', 'ctc': 'ctc-only', 'sscr': 'sscr'}


@dataclass
class Verdict:
    claim: str
    passed: bool
    detail: str

    def __str__(self):
        return f"{self.claim}: {'PASS' if self.passed else 'FAIL'} ({self.detail})"


@dataclass
class Summary:
    table: Optional[pd.DataFrame]
    verdicts: List[Verdict] = field(default_factory=list)
    cf_gain: Optional[pd.DataFrame] = None
    scarcity: Optional[pd.DataFrame] = None
    sweeps: Optional[pd.DataFrame] = None


def read_reports(report_dir: Union[Path, str]) -> pd.DataFrame:
    """Reads the editing reports of a report directory into a table, one row per report.

    Reports of iteration-cap sweep runs are left out, their scores live in the sweep tables.
    """
    rows = []
    for path in sorted(Path(report_dir).glob('*.json')):
        with open(path) as f:
            d = json.load(f)
        if 'f1' not in d or d.get('sweep'):
            continue
        d.pop('episodes', None)
        d['file'] = path.name
        rows.append(d)
    if not rows:
        raise EmptyCorpusError(f"No editing reports found in {report_dir}")
    df = pd.DataFrame(rows)
    df['cf_loss'] = df['cf_loss'].fillna('')
    df['label'] = [LABELS.get(m, str(m)) + ({'explainer': ' (E)', 'discriminator': ' (D)'}.get(c, '') if m == 'sscr' else '')
                   for m, c in zip(df['mode'], df['cf_loss'])]
    return df.sort_values(KEYS + ['seed', 'file']).reset_index(drop=True)


def aggregate(reports: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation of the metrics over seeds."""
    g = reports.groupby(KEYS, sort=True, dropna=False)
    table = g[['precision', 'recall', 'f1', 'relsim']].agg(['mean', 'std'])
    table.columns = [f'{m}_{s}' for m, s in table.columns]
    table['n_seeds'] = g.size()
    return table.reset_index()


def sign_test(a: pd.DataFrame, b: pd.DataFrame, metric: str, claim: str) -> Optional[Verdict]:
    """One-sided sign test of `a > b` over the runs paired by seed and fraction.

    The claim passes when the mean paired difference is positive and more pairs favour `a` than `b`.
    Returns None when there are no pairs.
    """
    pairs = a.merge(b, on=['seed', 'fraction'], suffixes=('_a', '_b'))
    if len(pairs) == 0:
        return None
    d = (pairs[f'{metric}_a'] - pairs[f'{metric}_b']).to_numpy()
    wins, losses = int((d > 0).sum()), int((d < 0).sum())
    p = binomtest(wins, wins + losses, 0.5, alternative='greater').pvalue if wins + losses > 0 else 1.0
    name = 'F1' if metric == 'f1' else 'RelSim'
    return Verdict(claim, bool(d.mean() > 0 and wins > losses),
                   f"{name} {d.mean():+.4f}, {wins}/{len(d)} pairs, sign test p = {p:.3f}")


def _select(reports: pd.DataFrame, label: str, stage: str = 'final', zero_shot: bool = False) -> pd.DataFrame:
    return reports[(reports.label == label) & (reports.stage == stage) & (reports.zero_shot == zero_shot)]


def mode_verdicts(reports: pd.DataFrame) -> List[Verdict]:
    """Paired sign tests of the mode ordering, pooled over fractions and, with several fractions, per fraction."""
    verdicts = []
    claims = (('sscr (E)', 'ctc-only', 'SSCR > CTC-only'), ('ctc-only', 'baseline', 'CTC-only > baseline'),
              ('sscr (E)', 'baseline', 'SSCR > baseline'))
    if len(reports) < 2:
        return verdicts
    for zero_shot in (False, True):
        tag = ' (zero-shot)' if zero_shot else ''
        for a, b, claim in claims:
            for metric in ('f1', 'relsim'):
                suffix = '' if metric == 'f1' else ' [RelSim]'
                v = sign_test(_select(reports, a, zero_shot=zero_shot), _select(reports, b, zero_shot=zero_shot),
                              metric, claim + tag + suffix)
                if v is not None:
                    verdicts.append(v)
    seen = reports[~reports.zero_shot.astype(bool)]
    fractions = sorted(seen.fraction.unique(), reverse=True)
    if len(fractions) < 2:
        return verdicts
    for fraction in fractions:
        at = seen[np.isclose(seen.fraction, fraction)]
        for a, b, claim in claims[:2]:
            v = sign_test(_select(at, a), _select(at, b), 'f1', f'{claim} ({fraction:.0%} data)')
            if v is not None:
                verdicts.append(v)
    return verdicts


def scarcity_resilience(reports: pd.DataFrame) -> Tuple[Optional[pd.DataFrame], List[Verdict]]:
    """F1 drop from the largest to the smallest training data fraction per mode."""
    final = reports[(reports.stage == 'final') & ~reports.zero_shot.astype(bool)]
    fractions = sorted(final.fraction.unique())
    if len(fractions) < 2:
        return None, []
    lo, hi = fractions[0], fractions[-1]
    rows = []
    for label, g in final.groupby('label', sort=True):
        f_hi, f_lo = g[np.isclose(g.fraction, hi)].f1.mean(), g[np.isclose(g.fraction, lo)].f1.mean()
        if np.isfinite(f_hi) and np.isfinite(f_lo):
            rows.append({'label': label, 'f1_high': f_hi, 'f1_low': f_lo, 'drop': f_hi - f_lo})
    table = pd.DataFrame(rows, columns=['label', 'f1_high', 'f1_low', 'drop'])
    verdicts = []
    drops = dict(zip(table.label, table['drop']))
    if 'sscr (E)' in drops and 'baseline' in drops:
        verdicts.append(Verdict(f'SSCR F1 drop < baseline F1 drop ({hi:.0%} to {lo:.0%} data)',
                                bool(drops['sscr (E)'] < drops['baseline']),
                                f"{drops['sscr (E)']:.4f} vs {drops['baseline']:.4f}"))
    return table, verdicts


def counterfactual_gain(reports: pd.DataFrame) -> Tuple[Optional[pd.DataFrame], List[Verdict]]:
    """Metric change of the counterfactual phase per loss source, paired by run."""
    sscr = reports[reports['mode'] == 'sscr']
    pre, final = sscr[sscr.stage == 'pre-cf'], sscr[sscr.stage == 'final']
    keys = ['label', 'seed', 'fraction', 'zero_shot']
    pairs = final.merge(pre, on=keys, suffixes=('', '_pre'))
    if len(pairs) == 0:
        return None, []
    pairs['f1_gain'] = pairs.f1 - pairs.f1_pre
    pairs['relsim_gain'] = pairs.relsim - pairs.relsim_pre
    table = (pairs.groupby(['zero_shot', 'label', 'fraction'], sort=True)
             [['f1_pre', 'f1', 'f1_gain', 'relsim_pre', 'relsim', 'relsim_gain']].mean().reset_index())
    table['label'] = table.label.str.replace('sscr', 'w/ SSCR')
    verdicts = []
    gains = table[~table.zero_shot.astype(bool)].groupby('label').relsim_gain.mean()
    if 'w/ SSCR (E)' in gains:
        verdicts.append(Verdict('Counterfactual phase (E) improves RelSim', bool(gains['w/ SSCR (E)'] > 0),
                                f"gain {gains['w/ SSCR (E)']:+.4f}"))
    if 'w/ SSCR (D)' in gains:
        verdicts.append(Verdict('Counterfactual phase (D) does not improve RelSim', bool(gains['w/ SSCR (D)'] <= 0),
                                f"gain {gains['w/ SSCR (D)']:+.4f}"))
    return table, verdicts


def iteration_sweeps(report_dir: Path) -> Tuple[Optional[pd.DataFrame], List[Verdict]]:
    files = sorted(report_dir.glob('*-sweep.csv'))
    if not files:
        return None, []
    sweeps = pd.concat([pd.read_csv(f).assign(run=f.name[:-len('-sweep.csv')]) for f in files], ignore_index=True)
    mean = sweeps.groupby('iterations', sort=True)[['f1', 'relsim']].mean().reset_index()
    verdicts = []
    if len(mean) >= 3:
        best = int(mean.f1.idxmax())
        verdicts.append(Verdict('Validation F1 peaks at an interior iteration cap',
                                bool(mean.f1.iloc[0] < mean.f1.iloc[best] and mean.f1.iloc[-1] < mean.f1.iloc[best]),
                                f"best cap {int(mean.iterations.iloc[best])}, F1 {mean.f1.iloc[best]:.4f}"))
    return mean, verdicts


def _markdown(df: pd.DataFrame) -> str:
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return '' if np.isnan(v) else f'{v:.4f}'
        return str(v)
    lines = ['| ' + ' | '.join(df.columns) + ' |', '|' + '---|' * len(df.columns)]
    lines.extend('| ' + ' | '.join(fmt(v) for v in row) + ' |' for row in df.itertuples(index=False))
    return '\n'.join(lines)


def summarize(report_dir: Union[Path, str], plot: bool = True) -> Summary:
    """Summarizes all the editing reports of a report directory.

    Writes `summary.csv` with the per-mode means and standard deviations over seeds and
    `summary.md` with the tables and the directional verdicts, and plots the metrics against the
    training data fraction. A directory holding only iteration-cap sweeps gets the sweep table and
    its verdict.

    Parameters
    ----------
    report_dir: Path or str
        Directory holding the MetricsReport JSON files.
    plot: bool
        Write the summary point plots.

    Returns
    -------
        Summary
    """
    report_dir = Path(report_dir)
    sweeps, sweep_verdicts = iteration_sweeps(report_dir)
    try:
        reports = read_reports(report_dir)
    except EmptyCorpusError:
        if sweeps is None:
            raise
        reports = None

    table, scarcity, gain, verdicts = None, None, None, []
    sections = ['# Summary', '']
    if reports is not None:
        table = aggregate(reports)
        verdicts = mode_verdicts(reports)
        scarcity, v = scarcity_resilience(reports)
        verdicts.extend(v)
        gain, v = counterfactual_gain(reports)
        verdicts.extend(v)
        table.to_csv(report_dir / 'summary.csv', index=False, float_format='%.6f')
        sections += [f'{len(reports)} reports.', '', '## Editing metrics', '', _markdown(table)]
    if scarcity is not None:
        sections += ['', '## Data scarcity', '', _markdown(scarcity)]
    if gain is not None:
        sections += ['', '## Counterfactual loss source', '', _markdown(gain)]
    verdicts.extend(sweep_verdicts)
    if sweeps is not None:
        sections += ['', '## Counterfactual iterations', '', _markdown(sweeps)]
    if verdicts:
        sections += ['', '## Verdicts', ''] + [f'- {v}' for v in verdicts]
    (report_dir / 'summary.md').write_text('\n'.join(sections) + '\n')

    if plot and reports is not None:
        final = reports[reports.stage == 'final']
        if final.fraction.nunique() > 1:
            for metric in ('f1', 'relsim'):
                fig = plot_summary(final[~final.zero_shot.astype(bool)], metric)
                fig.savefig(report_dir / f'summary-{metric}.svg')
                close(fig)
    for v in verdicts:
        logger.info(str(v))
    return Summary(table, verdicts, gain, scarcity, sweeps)
