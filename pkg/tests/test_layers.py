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
import numpy as np
import pytest

from sscr import tensor as T
from sscr.gradcheck import check_gradients
from sscr.layers import BiGRUEncoder, Linear, SelfAttention, cell_positions, patchify, unpatchify
from sscr.parameters import ParameterStore
from sscr.tensor import ShapeError, Tensor


def test_patchify_inverts_unpatchify():
    images = Tensor(np.random.default_rng(0).random((2, 16, 16, 3)))
    patches = patchify(images, 4)
    assert patches.shape == (2, 16, 48)
    np.testing.assert_array_equal(unpatchify(patches, 4).values, images.values)


def test_patches_are_row_major_cells():
    images = np.zeros((1, 8, 8, 3))
    images[0, 4:8, 0:4] = 1.0
    patches = patchify(Tensor(images), 4).values
    assert patches[0, 2].min() == 1.0
    assert patches[0, [0, 1, 3]].max() == 0.0


def test_patchify_rejects_misaligned_images():
    with pytest.raises(ShapeError):
        patchify(Tensor(np.zeros((1, 10, 10, 3))), 4)


def test_cell_positions_are_row_column_one_hots():
    codes = cell_positions(3)
    assert codes.shape == (9, 6)
    np.testing.assert_array_equal(codes.sum(1), 2.0)
    assert codes[5, 1] == 1.0 and codes[5, 3 + 2] == 1.0


def test_linear_checks_its_input_size():
    layer = Linear(ParameterStore('s'), 'l', 3, 2, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        layer(Tensor(np.zeros((4, 5))))


def test_bigru_ignores_padding():
    encoder = BiGRUEncoder(ParameterStore('s'), 'enc', 10, 4, 3, np.random.default_rng(0))
    ids = np.array([[3, 4, 5, 0, 0], [6, 7, 0, 0, 0]])
    mask = (ids != 0).astype(float)
    short = encoder(ids[:, :3], mask[:, :3]).values
    long = encoder(ids, mask).values
    assert long.shape == (2, 6)
    np.testing.assert_allclose(long, short, atol=1e-14)


def test_bigru_gradients():
    store = ParameterStore('s')
    encoder = BiGRUEncoder(store, 'enc', 10, 4, 3, np.random.default_rng(1))
    ids = np.array([[3, 4, 5, 2], [6, 7, 1, 0]])
    mask = (ids != 0).astype(float)
    w = Tensor(np.random.default_rng(2).normal(size=(2, 6)))
    inputs = [t for _, t in store.items()]
    assert check_gradients(lambda: T.sum(T.mul(encoder(ids, mask), w)), inputs, samples=100) < 1e-4


def test_self_attention_gradients():
    store = ParameterStore('s')
    block = SelfAttention(store, 'att', 4, np.random.default_rng(3))
    x = Tensor(np.random.default_rng(4).normal(size=(2, 5, 4)), requires_grad=True)
    w = Tensor(np.random.default_rng(5).normal(size=(2, 5, 4)))
    inputs = [x] + [t for _, t in store.items()]
    assert check_gradients(lambda: T.sum(T.mul(block(x), w)), inputs, samples=100) < 1e-4
