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
"""The GAN-based iterative editor.

A bidirectional recurrent encoder turns the instruction of a turn into d_t, a recurrent history
cell folds it into h_t, and the generator G paints the next image from the previous image and
h_t. The discriminator D scores (image, history) pairs.
"""
from dataclasses import asdict, dataclass
from logging import getLogger
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from numpy import ndarray

from .dataset import encode_instructions, rendered
from .instructions import Instruction, Vocabulary, parse
from .layers import BiGRUEncoder, CellEncoder, GRUCell, Linear, cell_positions, unpatchify
from .parameters import CheckpointError, ParameterStore, load_checkpoint, save_checkpoint
from .scene import GRID, IMAGE_SIZE, InfeasibleEditError, DuplicateObjectError, PlacementError, Scene, apply_edit
from .tensor import (Tensor, add, as_tensor, broadcast_to, concat, log_sigmoid, mean, mul, no_grad, relu, reshape,
                     sigmoid, sub)

logger = getLogger("editor")

STORE_NAMES = ('instruction_encoder', 'history', 'image_encoder', 'generator', 'discriminator')
GENERATOR_STORES = ('instruction_encoder', 'history', 'image_encoder', 'generator')


@dataclass
class EditorConfig:
    embedding_dim: int = 32
    instruction_dim: int = 64
    history_dim: int = 64
    image_feature_dim: int = 64
    cell_channels: int = 16
    generator_hidden: Tuple[int, ...] = (128, 128)
    discriminator_hidden: int = 64
    gate_bias: float = -4.0
    lr_G_from_L_G: float = 1e-4
    lr_G_from_L_E: float = 1e-4
    lr_D: float = 4e-4
    lr_counterfactual: float = 5e-5
    grid: int = GRID
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        self.generator_hidden = tuple(int(n) for n in self.generator_hidden)
        dims = (self.embedding_dim, self.instruction_dim, self.history_dim, self.image_feature_dim,
                self.cell_channels, self.discriminator_hidden) + self.generator_hidden
        if min(dims) <= 0:
            raise ValueError("All editor dimensions must be positive")
        if self.instruction_dim % 2:
            raise ValueError("The instruction dimension must be even, it is split over two directions")
        if self.image_size % self.grid:
            raise ValueError(f"Image size {self.image_size} is not a multiple of the grid size {self.grid}")
        if min(self.lr_G_from_L_G, self.lr_G_from_L_E, self.lr_D, self.lr_counterfactual) <= 0.0:
            raise ValueError("Learning rates must be positive")

    @property
    def cell(self) -> int:
        return self.image_size // self.grid


def tile(x: Tensor, n: int) -> Tensor:
    """Repeats (B, D) vectors over n cells, giving (B, n, D)."""
    b, d = x.shape
    return broadcast_to(reshape(x, (b, 1, d)), (b, n, d))


def empty_images(n: int, grid: int = GRID, image_size: int = IMAGE_SIZE) -> ndarray:
    return np.broadcast_to(rendered(Scene((), grid), image_size), (n, image_size, image_size, 3)).copy()


class IterativeEditor:
    """Instruction and history encoders, generator, and discriminator of the iterative editor.

    Parameters
    ----------
    config: EditorConfig
        Model dimensions and learning rates.
    seed: int or sequence of int
        Seed for the parameter initialisation.
    vocabulary: Vocabulary, optional
        Instruction vocabulary, the lexicon vocabulary by default.
    """

    def __init__(self, config: EditorConfig, seed: Union[int, Sequence[int]] = 0, vocabulary: Optional[Vocabulary] = None):
        self.config = config
        self.vocabulary = vocabulary or Vocabulary()
        self.stores: Dict[str, ParameterStore] = {n: ParameterStore(n) for n in STORE_NAMES}
        c, s = config, self.stores
        rng = np.random.default_rng(seed)

        self.instruction_encoder = BiGRUEncoder(s['instruction_encoder'], 'bigru', len(self.vocabulary),
                                                c.embedding_dim, c.instruction_dim // 2, rng)
        self.history_cell = GRUCell(s['history'], 'cell', c.instruction_dim, c.history_dim, rng)

        self.cell_encoder = CellEncoder(s['image_encoder'], 'cells', c.cell, c.cell_channels, rng)
        self.global_encoder = Linear(s['image_encoder'], 'global', c.grid ** 2 * c.cell_channels,
                                     c.image_feature_dim, rng)

        npatch = 3 * c.cell ** 2
        dims = (npatch + c.cell_channels + c.image_feature_dim + c.history_dim + 2 * c.grid,) + c.generator_hidden
        self.generator_layers = [Linear(s['generator'], f'layer{i}', a, b, rng)
                                 for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]
        self.generator_paint = Linear(s['generator'], 'paint', dims[-1], npatch, rng)
        self.generator_gate = Linear(s['generator'], 'gate', dims[-1], 1, rng)
        s['generator']['gate.b'].values[:] = c.gate_bias

        self.discriminator_cells = CellEncoder(s['discriminator'], 'cells', c.cell, c.cell_channels, rng)
        self.discriminator_hidden = Linear(s['discriminator'], 'hidden', c.cell_channels + c.history_dim + 2 * c.grid,
                                           c.discriminator_hidden, rng)
        self.discriminator_output = Linear(s['discriminator'], 'output', c.discriminator_hidden, 1, rng)

        self.positions = Tensor(cell_positions(c.grid))

    # Encoders
    # --------
    def encode_ids(self, ids: ndarray, mask: ndarray) -> Tensor:
        return self.instruction_encoder(ids, mask)

    def encode_instruction(self, instructions: Sequence[Instruction]) -> Tensor:
        """Encodes a batch of instructions into d_t, shape (B, instruction_dim).

        Raises `VocabularyError` for tokens outside the editor vocabulary.
        """
        ids, mask = encode_instructions(instructions, self.vocabulary)
        return self.encode_ids(ids, mask)

    def initial_history(self, n: int) -> Tensor:
        return Tensor(np.zeros((n, self.config.history_dim)))

    def encode_history(self, d: Tensor, h_prev: Tensor) -> Tensor:
        return self.history_cell(d, h_prev)

    def image_features(self, images: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
        """Raw cell patches, per-cell features, and the global image feature f."""
        patches, cells = self.cell_encoder(images)
        f = relu(self.global_encoder(reshape(cells, (cells.shape[0], -1))))
        return patches, cells, f

    def _positions(self, b: int) -> Tensor:
        return broadcast_to(self.positions, (b,) + self.positions.shape)

    # Generator and discriminator
    # ---------------------------
    def generate(self, previous: Union[Tensor, ndarray], h: Tensor) -> Tensor:
        """Predicts V_t = G([f_{t-1}, h_t]) from the previous image, values in [0, 1].

        Every cell mixes the previous patch with a painted patch through a sigmoid gate,
        V = P + g (paint - P), the same interpolation as the update gate of a recurrent cell. The
        gate starts nearly closed, so an untrained generator copies the previous image.
        """
        patches, cells, f = self.image_features(as_tensor(previous))
        b, n = cells.shape[0], cells.shape[1]
        x = concat([patches, cells, tile(f, n), tile(h, n), self._positions(b)], axis=-1)
        for layer in self.generator_layers:
            x = relu(layer(x))
        paint = sigmoid(self.generator_paint(x))
        gate = sigmoid(self.generator_gate(x))
        return unpatchify(add(patches, mul(gate, sub(paint, patches))), self.config.cell)

    def discriminate(self, images: Union[Tensor, ndarray], h: Tensor) -> Tensor:
        """Discriminator logits for (image, history) pairs, shape (B,)."""
        _, cells = self.discriminator_cells(as_tensor(images))
        b, n = cells.shape[0], cells.shape[1]
        x = concat([cells, tile(h, n), self._positions(b)], axis=-1)
        x = mean(relu(self.discriminator_hidden(x)), axis=1)
        return reshape(self.discriminator_output(x), (b,))

    # Inference
    # ---------
    def rollout(self, instructions: Sequence[Sequence[Instruction]]) -> ndarray:
        """Edits from the empty image feeding back its own predictions.

        Returns
        -------
            Images V_0 ... V_T, shape (B, T+1, P, P, 3).
        """
        c = self.config
        b, n_turns = len(instructions), len(instructions[0])
        with no_grad():
            v = Tensor(empty_images(b, c.grid, c.image_size))
            h = self.initial_history(b)
            frames = [v.values]
            for t in range(n_turns):
                h = self.encode_history(self.encode_instruction([i[t] for i in instructions]), h)
                v = self.generate(v, h)
                frames.append(v.values)
        return np.stack(frames, 1)

    # Parameters
    # ----------
    @property
    def generator_stores(self) -> Tuple[ParameterStore, ...]:
        return tuple(self.stores[n] for n in GENERATOR_STORES)

    def checksums(self) -> Dict[str, str]:
        return {n: s.checksum() for n, s in self.stores.items()}

    def save(self, path: Union[Path, str], extra: Optional[Dict] = None):
        config = {'editor': asdict(self.config)}
        config.update(extra or {})
        save_checkpoint(path, self.stores, config)

    @classmethod
    def load(cls, path: Union[Path, str]) -> 'IterativeEditor':
        stores, config = load_checkpoint(path)
        if config is None or 'editor' not in config:
            raise CheckpointError(f"{path} does not hold an editor checkpoint")
        editor = cls(EditorConfig(**config['editor']))
        for name, store in editor.stores.items():
            if name not in stores:
                raise CheckpointError(f"{path} is missing the '{name}' parameter store")
            store.load_state(stores[name])
        return editor


class OracleEditor:
    """Executes the parsed instructions symbolically and renders the resulting scenes.

    Infeasible edits leave the scene unchanged.
    """

    def __init__(self, grid: int = GRID, image_size: int = IMAGE_SIZE):
        self.grid = grid
        self.image_size = image_size

    def rollout(self, instructions: Sequence[Sequence[Instruction]]) -> ndarray:
        episodes = []
        for sequence in instructions:
            scene = Scene((), self.grid)
            frames = [rendered(scene, self.image_size)]
            for instruction in sequence:
                try:
                    scene = apply_edit(scene, parse(instruction))
                except (InfeasibleEditError, PlacementError, DuplicateObjectError) as e:
                    logger.debug(f"Skipping the edit '{instruction}': {e}")
                frames.append(rendered(scene, self.image_size))
            episodes.append(np.stack(frames))
        return np.stack(episodes)


# Adversarial objectives
# ======================
def loss_G(fake_logits: Sequence[Tensor]) -> Tensor:
    """Generator objective Σ_t mean_b log D([V_t, h_t]), where D = σ(logit).

    The trainer maximises it, which is the non-saturating form of the generator loss.
    """
    total = Tensor(0.0)
    for logits in fake_logits:
        total = add(total, mean(log_sigmoid(logits)))
    return total


def loss_D(real_logits: Sequence[Tensor], fake_logits: Sequence[Tensor], wrong_logits: Sequence[Tensor]) -> Tensor:
    """Discriminator objective Σ_t mean_b [log D(real) + ½ (log(1 - D(fake)) + log(1 - D(wrong)))].

    Wrong pairs are real images with a history built from another episode's instructions. The
    trainer maximises the objective.
    """
    total = Tensor(0.0)
    for real, fake, wrong in zip(real_logits, fake_logits, wrong_logits):
        false = add(mean(log_sigmoid(mul(fake, -1.0))), mean(log_sigmoid(mul(wrong, -1.0))))
        total = add(total, add(mean(log_sigmoid(real)), mul(false, 0.5)))
    return total
