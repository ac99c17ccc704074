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
from functools import wraps
from textwrap import fill
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
import seaborn as sb

from matplotlib.figure import Figure
from matplotlib.pyplot import setp, subplots
from numpy import ndarray


def bplot(plotf: Callable):
    @wraps(plotf)
    def wrapper(self, ax=None, *args, **kwargs):
        if ax is None:
            fig, ax = subplots(1, 1)
        else:
            fig, ax = None, ax
        try:
            plotf(self, ax, **kwargs)
        except ValueError:
            pass
        return fig

    return wrapper


def plot_strip(captions: Sequence[str], rows: Sequence[ndarray], row_labels: Sequence[str],
               title: Optional[str] = None) -> Figure:
    """Plots image rows over editing turns, one column per turn.

    Parameters
    ----------
    captions: sequence of str
        Column captions, usually the instruction of each turn.
    rows: sequence of ndarray
        Image rows, each with shape (T, P, P, 3).
    row_labels: sequence of str
        Label of each row.
    title: str, optional
        Figure title.
    """
    nrows, ncols = len(rows), len(captions)
    fig, axs = subplots(nrows, ncols, figsize=(2.2 * ncols, 2.4 * nrows + 0.4), squeeze=False)
    for i, (row, label) in enumerate(zip(rows, row_labels)):
        for j in range(ncols):
            ax = axs[i, j]
            ax.imshow(np.clip(row[j], 0.0, 1.0), interpolation='nearest')
            setp(ax, xticks=[], yticks=[])
            if i == 0:
                ax.set_title(fill(captions[j], 18), size=8)
        axs[i, 0].set_ylabel(label)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return fig


def plot_summary(table: pd.DataFrame, metric: str = 'f1') -> Figure:
    """Point plot of a metric against the training data fraction, one line per run label."""
    fig, ax = subplots(1, 1, figsize=(5, 4))
    sb.pointplot(data=table, x='fraction', y=metric, hue='label', dodge=0.2, errorbar='sd', ax=ax)
    setp(ax, xlabel='Training data fraction', ylabel=metric.upper() if metric == 'f1' else 'RelSim')
    fig.tight_layout()
    return fig
