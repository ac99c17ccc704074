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
"""Reusable model blocks built on the tensor primitives.

Each block registers its parameters in a `ParameterStore` under a common prefix and reads them back
from the store on every call, so loading a checkpoint into the store updates the block.
"""
from typing import Tuple

import numpy as np

from numpy import ndarray
from numpy.random import Generator

from .parameters import ParameterStore
from .tensor import (Tensor, ShapeError, add, attention, concat, embedding, gru_step, matmul, mul, relu,
                     reshape, transpose)


def uniform_init(rng: Generator, fan_in: int, shape: Tuple[int, ...]) -> ndarray:
    """Uniform initialisation in [-sqrt(1/fan_in), sqrt(1/fan_in)]."""
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape)


def patchify(images: Tensor, cell: int) -> Tensor:
    """Splits (B, P, P, 3) images into (B, K*K, cell*cell*3) row-major cell patches."""
    b, p = images.shape[0], images.shape[1]
    if images.ndim != 4 or p % cell != 0 or images.shape[2] != p:
        raise ShapeError('patchify', images.shape, (cell, cell), 'image side must be a multiple of the cell size')
    k = p // cell
    x = reshape(images, (b, k, cell, k, cell, images.shape[3]))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, k * k, cell * cell * images.shape[3]))


def unpatchify(patches: Tensor, cell: int, channels: int = 3) -> Tensor:
    """Inverse of `patchify`."""
    b, n = patches.shape[0], patches.shape[1]
    k = int(round(np.sqrt(n)))
    x = reshape(patches, (b, k, k, cell, cell, channels))
    x = transpose(x, (0, 1, 3, 2, 4, 5))
    return reshape(x, (b, k * cell, k * cell, channels))


def cell_positions(grid: int) -> ndarray:
    """One-hot (row, column) codes of the grid cells in patch order, shape (K*K, 2K)."""
    codes = np.zeros((grid * grid, 2 * grid))
    for y in range(grid):
        for x in range(grid):
            codes[y * grid + x, y] = 1.0
            codes[y * grid + x, grid + x] = 1.0
    return codes


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, n_in: int, n_out: int, rng: Generator):
        self.store = store
        self.prefix = prefix
        self.n_in = n_in
        self.n_out = n_out
        store.add(f"{prefix}.w", uniform_init(rng, n_in, (n_in, n_out)))
        store.add(f"{prefix}.b", np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_in:
            raise ShapeError(f'linear {self.prefix}', x.shape, (self.n_in, self.n_out))
        return add(matmul(x, self.store[f"{self.prefix}.w"]), self.store[f"{self.prefix}.b"])


class GRUCell:
    def __init__(self, store: ParameterStore, prefix: str, n_in: int, n_hidden: int, rng: Generator):
        self.store = store
        self.prefix = prefix
        self.n_in = n_in
        self.n_hidden = n_hidden
        store.add(f"{prefix}.wx", uniform_init(rng, n_hidden, (n_in, 3 * n_hidden)))
        store.add(f"{prefix}.wh", uniform_init(rng, n_hidden, (n_hidden, 3 * n_hidden)))
        store.add(f"{prefix}.bx", np.zeros(3 * n_hidden))
        store.add(f"{prefix}.bh", np.zeros(3 * n_hidden))

    def __call__(self, x: Tensor, h: Tensor) -> Tensor:
        s, p = self.store, self.prefix
        return gru_step(x, h, s[f"{p}.wx"], s[f"{p}.wh"], s[f"{p}.bx"], s[f"{p}.bh"])


class BiGRUEncoder:
    """Bidirectional recurrent encoder of padded token id sequences.

    The encoding is the concatenation of the final forward and backward states, so its size is
    twice the hidden size. Padding positions leave the running state untouched.
    """

    def __init__(self, store: ParameterStore, prefix: str, vocabulary_size: int, embedding_dim: int,
                 n_hidden: int, rng: Generator):
        self.store = store
        self.prefix = prefix
        self.n_hidden = n_hidden
        store.add(f"{prefix}.embedding", rng.normal(0.0, 1.0, size=(vocabulary_size, embedding_dim)))
        self.forward_cell = GRUCell(store, f"{prefix}.forward", embedding_dim, n_hidden, rng)
        self.backward_cell = GRUCell(store, f"{prefix}.backward", embedding_dim, n_hidden, rng)

    @property
    def output_dim(self) -> int:
        return 2 * self.n_hidden

    def __call__(self, ids: ndarray, mask: ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=int)
        mask = np.asarray(mask, dtype=np.float64)
        b, n = ids.shape
        e = embedding(self.store[f"{self.prefix}.embedding"], ids)

        def run(cell, steps):
            h = Tensor(np.zeros((b, self.n_hidden)))
            for i in steps:
                m = mask[:, i:i + 1]
                hn = cell(e[:, i, :], h)
                h = add(mul(hn, m), mul(h, 1.0 - m))
            return h

        hf = run(self.forward_cell, range(n))
        hb = run(self.backward_cell, reversed(range(n)))
        return concat([hf, hb], axis=-1)


class CellEncoder:
    """Per-cell image features: a convolution with kernel and stride equal to the cell size."""

    def __init__(self, store: ParameterStore, prefix: str, cell: int, channels: int, rng: Generator):
        self.cell = cell
        self.channels = channels
        self.linear = Linear(store, prefix, cell * cell * 3, channels, rng)

    def __call__(self, images: Tensor) -> Tuple[Tensor, Tensor]:
        """Returns the raw patches (B, K*K, cell*cell*3) and the cell features (B, K*K, C)."""
        patches = patchify(images, self.cell)
        return patches, relu(self.linear(patches))


class SelfAttention:
    """Single-head self-attention with a residual connection."""

    def __init__(self, store: ParameterStore, prefix: str, dim: int, rng: Generator):
        self.query = Linear(store, f"{prefix}.query", dim, dim, rng)
        self.key = Linear(store, f"{prefix}.key", dim, dim, rng)
        self.value = Linear(store, f"{prefix}.value", dim, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return add(x, attention(self.query(x), self.key(x), self.value(x)))
