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
from logging import getLogger
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward

logger = getLogger("gradcheck")


def check_gradients(f: Callable[[], Tensor], inputs: Sequence[Tensor], samples: int = 100, h: float = 1e-5,
                    floor: float = 1e-3, seed: int = 0) -> float:
    """Compares backward gradients against central finite differences.

    Parameters
    ----------
    f: callable
        Function without arguments that recomputes a scalar loss from the current values of `inputs`.
    inputs: sequence of Tensor
        Tensors with `requires_grad=True` whose elements are sampled.
    samples: int
        Number of randomly chosen elements to sample.
    h: float
        Finite difference step.
    floor: float
        Lower limit for the relative error denominator, keeps round-off noise on vanishing
        gradients from dominating.
    seed: int
        Seed for choosing the sampled elements.

    Returns
    -------
        Maximum relative error over the samples.
    """
    for t in inputs:
        t.zero_grad()
    backward(f())
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    sizes = np.array([t.values.size for t in inputs], dtype=float)
    worst = 0.0
    for _ in range(samples):
        i = rng.choice(len(inputs), p=sizes / sizes.sum())
        j = rng.integers(inputs[i].values.size)
        flat = inputs[i].values.reshape(-1)
        x0 = flat[j]
        flat[j] = x0 + h
        fp = f().item()
        flat[j] = x0 - h
        fm = f().item()
        flat[j] = x0
        numeric = (fp - fm) / (2 * h)
        a = analytic[i].reshape(-1)[j]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    logger.debug(f"Maximum relative gradient error {worst:.3e} over {samples} samples")
    return worst
