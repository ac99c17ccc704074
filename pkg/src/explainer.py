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
"""The iterative explainer.

The explainer reconstructs the instruction of a turn from the previous image, the resulting image,
and the history of the preceding instructions. Its teacher-forced reconstruction loss is the
cross-task consistency signal for the editor.
"""
from dataclasses import asdict, dataclass
from logging import getLogger
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from numpy import ndarray
from scipy.special import log_softmax
from tqdm.auto import tqdm

from .dataset import DECODER_LENGTH, Episode, EpisodeBatch, iterate_batches, make_batch
from .instructions import Vocabulary
from .layers import BiGRUEncoder, CellEncoder, GRUCell, Linear, SelfAttention, cell_positions
from .parameters import CheckpointError, ParameterStore, adam_step, load_checkpoint, save_checkpoint
from .scene import GRID, IMAGE_SIZE
from .tensor import (Tensor, add, as_tensor, attention, backward, broadcast_to, concat, cross_entropy, embedding,
                     mul, no_grad, reshape, stack, sub, tanh)

logger = getLogger("explainer")

STORE_NAMES = ('instruction_encoder', 'history', 'image_encoder', 'decoder')


@dataclass
class ExplainerConfig:
    embedding_dim: int = 32
    instruction_dim: int = 64
    history_dim: int = 64
    cell_channels: int = 32
    feature_dim: int = 64
    memory_dim: int = 64
    decoder_dim: int = 64
    decoder_length: int = DECODER_LENGTH
    lr: float = 1e-3
    epochs: int = 20
    batch_size: int = 32
    grid: int = GRID
    image_size: int = IMAGE_SIZE

    def __post_init__(self):
        dims = (self.embedding_dim, self.instruction_dim, self.history_dim, self.cell_channels, self.feature_dim,
                self.memory_dim, self.decoder_dim, self.decoder_length, self.epochs, self.batch_size)
        if min(dims) <= 0:
            raise ValueError("All explainer dimensions and loop counts must be positive")
        if self.instruction_dim % 2:
            raise ValueError("The instruction dimension must be even, it is split over two directions")
        if self.lr <= 0.0:
            raise ValueError("The learning rate must be positive")

    @property
    def cell(self) -> int:
        return self.image_size // self.grid


def ctc_loss(logits: Tensor, targets: ndarray, mask: ndarray) -> Tensor:
    """Teacher-forced reconstruction loss L_E.

    Parameters
    ----------
    logits: Tensor
        Decoder logits of shape (B, L, |V|).
    targets: ndarray
        Reference token ids of shape (B, L).
    mask: ndarray
        Non-PAD mask of shape (B, L); PAD positions are excluded.

    Returns
    -------
        Σ_i cross-entropy(ŵ_i, w_i), averaged over the batch.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:2]:
        raise ValueError(f"Reference length {targets.shape[-1]} does not match the {logits.shape[1]} decoder steps")
    return mul(cross_entropy(logits, targets, mask, reduction='sum'), 1.0 / targets.shape[0])


class IterativeExplainer:
    """Attention-based instruction decoder conditioned on an image pair and the instruction history.

    The explainer owns its instruction and history encoders. After pretraining all its stores are
    frozen, so the history it conditions on cannot drift while the editor trains.
    """

    def __init__(self, config: ExplainerConfig, seed: Union[int, Sequence[int]] = 0, vocabulary: Optional[Vocabulary] = None):
        self.config = config
        self.vocabulary = vocabulary or Vocabulary()
        self.stores: Dict[str, ParameterStore] = {n: ParameterStore(n) for n in STORE_NAMES}
        self.calls: int = 0
        c, s = config, self.stores
        rng = np.random.default_rng(seed)
        nv = len(self.vocabulary)

        self.instruction_encoder = BiGRUEncoder(s['instruction_encoder'], 'bigru', nv, c.embedding_dim,
                                                c.instruction_dim // 2, rng)
        self.history_cell = GRUCell(s['history'], 'cell', c.instruction_dim, c.history_dim, rng)

        self.cell_encoder = CellEncoder(s['image_encoder'], 'cells', c.cell, c.cell_channels, rng)
        self.global_encoder = Linear(s['image_encoder'], 'global', c.grid ** 2 * c.cell_channels, c.feature_dim, rng)

        d = s['decoder']
        self.cell_memory = Linear(d, 'memory.cells', 2 * c.cell_channels + 2 * c.grid, c.memory_dim, rng)
        self.history_memory = Linear(d, 'memory.history', c.history_dim, c.memory_dim, rng)
        self.difference_memory = Linear(d, 'memory.difference', c.feature_dim, c.memory_dim, rng)
        self.self_attention = SelfAttention(d, 'memory.attention', c.memory_dim, rng)
        self.initial_state = Linear(d, 'init', c.feature_dim + c.history_dim, c.decoder_dim, rng)
        d.add('embedding', rng.normal(0.0, 1.0, size=(nv, c.embedding_dim)))
        self.query = Linear(d, 'query', c.decoder_dim, c.memory_dim, rng)
        self.decoder_cell = GRUCell(d, 'cell', c.embedding_dim + c.memory_dim, c.decoder_dim, rng)
        self.output = Linear(d, 'output', c.decoder_dim + c.memory_dim, nv, rng)

        self.positions = Tensor(cell_positions(c.grid))

    @property
    def frozen(self) -> bool:
        return all(s.frozen for s in self.stores.values())

    def freeze(self):
        for s in self.stores.values():
            s.freeze()

    def checksums(self) -> Dict[str, str]:
        return {n: s.checksum() for n, s in self.stores.items()}

    # Encoders
    # --------
    def histories(self, ids: ndarray, mask: ndarray) -> List[Tensor]:
        """Instruction histories h_0 ... h_T for (B, T, N) instruction ids, h_0 = 0."""
        b, n_turns = ids.shape[:2]
        hs = [Tensor(np.zeros((b, self.config.history_dim)))]
        for t in range(n_turns):
            hs.append(self.history_cell(self.instruction_encoder(ids[:, t], mask[:, t]), hs[-1]))
        return hs

    def features(self, images: Union[Tensor, ndarray]) -> Tuple[Tensor, Tensor]:
        """Per-cell features (B, K*K, C) and the global feature f (B, F) of an image batch."""
        _, cells = self.cell_encoder(as_tensor(images))
        return cells, self.global_encoder(reshape(cells, (cells.shape[0], -1)))

    def feature_difference(self, current: Union[Tensor, ndarray], previous: Union[Tensor, ndarray]) -> Tensor:
        """f_d = f(V_t) - f(V_{t-1}), exactly zero for identical images."""
        return sub(self.features(current)[1], self.features(previous)[1])

    # Decoder
    # -------
    def explain(self, current: Union[Tensor, ndarray], previous: Union[Tensor, ndarray], h_prev: Tensor,
                length: Optional[int] = None, targets: Optional[ndarray] = None) -> Tensor:
        """Decoder logits for the instruction that turned `previous` into `current`.

        Parameters
        ----------
        current, previous: Tensor or ndarray
            Images V_t and V_{t-1} of shape (B, P, P, 3).
        h_prev: Tensor
            Instruction history h_{t-1} of shape (B, history_dim).
        length: int, optional
            Number of decoder steps L, the configured decoder length by default.
        targets: ndarray, optional
            Reference token ids (B, L) fed back with teacher forcing. Without targets the decoder
            feeds back its own greedy choices.

        Returns
        -------
            Logits of shape (B, L, |V|).
        """
        self.calls += 1
        length = length or self.config.decoder_length
        d = self.stores['decoder']

        cells_t, f_t = self.features(current)
        cells_p, f_p = self.features(previous)
        f_d = sub(f_t, f_p)
        b, n = cells_t.shape[0], cells_t.shape[1]
        positions = broadcast_to(self.positions, (b,) + self.positions.shape)
        memory = concat([self.cell_memory(concat([sub(cells_t, cells_p), cells_p, positions], axis=-1)),
                         reshape(self.history_memory(h_prev), (b, 1, -1)),
                         reshape(self.difference_memory(f_d), (b, 1, -1))], axis=1)
        memory = self.self_attention(memory)

        g = tanh(self.initial_state(concat([f_d, h_prev], axis=-1)))
        token = np.full(b, self.vocabulary.bos)
        logits = []
        for i in range(length):
            context = reshape(attention(reshape(self.query(g), (b, 1, -1)), memory, memory), (b, -1))
            g = self.decoder_cell(concat([embedding(d['embedding'], token), context], axis=-1), g)
            step = self.output(concat([g, context], axis=-1))
            logits.append(step)
            token = step.values.argmax(-1) if targets is None else np.asarray(targets)[:, i]
        return stack(logits, axis=1)

    def decode(self, current, previous, h_prev: Tensor) -> ndarray:
        """Greedy token ids, shape (B, L)."""
        with no_grad():
            return self.explain(current, previous, h_prev).values.argmax(-1)

    def loss(self, current, previous, h_prev: Tensor, targets: ndarray, mask: ndarray) -> Tensor:
        """Teacher-forced L_E for a batch of image pairs."""
        return ctc_loss(self.explain(current, previous, h_prev, targets.shape[1], targets), targets, mask)

    # Persistence
    # -----------
    def save(self, path: Union[Path, str], extra: Optional[Dict] = None):
        config = {'explainer': asdict(self.config)}
        config.update(extra or {})
        save_checkpoint(path, self.stores, config)

    @classmethod
    def load(cls, path: Union[Path, str]) -> 'IterativeExplainer':
        stores, config = load_checkpoint(path)
        if config is None or 'explainer' not in config:
            raise CheckpointError(f"{path} does not hold an explainer checkpoint")
        explainer = cls(ExplainerConfig(**config['explainer']))
        for name, store in explainer.stores.items():
            if name not in stores:
                raise CheckpointError(f"{path} is missing the '{name}' parameter store")
            store.load_state(stores[name])
        return explainer


# Pretraining
# ===========
def batch_loss(explainer: IterativeExplainer, batch: EpisodeBatch) -> Tuple[Tensor, float, int]:
    """Summed teacher-forced loss over the turns of a batch of ground-truth episodes.

    Returns the loss tensor, the total token cross-entropy, and the number of scored tokens.
    """
    hs = explainer.histories(batch.ids, batch.mask)
    total = Tensor(0.0)
    for t in range(batch.n_turns):
        total = add(total, explainer.loss(batch.images[:, t + 1], batch.images[:, t], hs[t],
                                          batch.targets[:, t], batch.target_mask[:, t]))
    return total, total.item() * len(batch), int(batch.target_mask.sum())


def transcribe(explainer: IterativeExplainer, episodes: Sequence[Episode],
               batch_size: int = 64) -> Tuple[List[List[str]], List[List[str]], ndarray]:
    """Greedy transcriptions, reference transcriptions, and reference token log probabilities.

    The images are the ground-truth images of every turn; the log probabilities are evaluated with
    teacher forcing over the non-PAD reference positions, EOS included.
    """
    hypotheses, references, log_probs = [], [], []
    with no_grad():
        for episodes_b in iterate_batches(episodes, batch_size):
            batch = make_batch(episodes_b, explainer.vocabulary, explainer.config.image_size)
            hs = explainer.histories(batch.ids, batch.mask)
            for t in range(batch.n_turns):
                current, previous = batch.images[:, t + 1], batch.images[:, t]
                greedy = explainer.decode(current, previous, hs[t])
                targets, mask = batch.targets[:, t], batch.target_mask[:, t]
                logits = explainer.explain(current, previous, hs[t], targets.shape[1], targets).values
                lp = np.take_along_axis(log_softmax(logits, -1), targets[..., None], -1)[..., 0]
                for j in range(len(batch)):
                    hypotheses.append(explainer.vocabulary.decode(greedy[j]))
                    references.append(explainer.vocabulary.decode(targets[j]))
                    log_probs.extend(lp[j][mask[j] > 0])
    return hypotheses, references, np.array(log_probs)


def pretrain(explainer: IterativeExplainer, episodes: Sequence[Episode], seed: int = 0,
             use_tqdm: bool = True) -> List[float]:
    """Pretrains the explainer on ground-truth image pairs and freezes it.

    Parameters
    ----------
    explainer: IterativeExplainer
        Explainer to train.
    episodes: sequence of Episode
        Training episodes.
    seed: int
        Seed for the batch order.
    use_tqdm: bool
        Show a progress bar over the epochs.

    Returns
    -------
        Training set perplexity per epoch.
    """
    c = explainer.config
    rng = np.random.default_rng(seed)
    perplexities = []
    for epoch in tqdm(range(c.epochs), desc='Pretraining the explainer', leave=False, disable=not use_tqdm):
        ce, ntokens = 0.0, 0
        for episodes_b in iterate_batches(episodes, c.batch_size, rng):
            batch = make_batch(episodes_b, explainer.vocabulary, c.image_size)
            loss, batch_ce, batch_tokens = batch_loss(explainer, batch)
            backward(loss)
            for store in explainer.stores.values():
                adam_step(store, c.lr)
            ce += batch_ce
            ntokens += batch_tokens
        perplexities.append(float(np.exp(ce / ntokens)))
        logger.info(f"Explainer epoch {epoch + 1}/{c.epochs}: training perplexity {perplexities[-1]:.4f}")
    explainer.freeze()
    return perplexities
