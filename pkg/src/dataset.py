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
"""Synthetic editing episodes, data splits, persistence, and batching."""
import json

from dataclasses import dataclass, field
from functools import lru_cache
from logging import getLogger
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from numpy import ndarray

from .instructions import Instruction, Vocabulary, parse, synthesize, tokenize
from .scene import (ALL_SPECS, GRID, IMAGE_SIZE, SPATIAL_RELATIONS, InfeasibleEditError, ObjectSpec, ParsedEdit,
                    PlacementError, Relation, Scene, apply_edit, render, scene_from_records, scene_to_records)

logger = getLogger("dataset")

EPISODE_FORMAT = 'sscr-episodes'
EPISODE_VERSION = 1
N_TURNS = 5
INSTRUCTION_LENGTH = 8
DECODER_LENGTH = INSTRUCTION_LENGTH + 1

ZERO_SHOT_HELD_OUT = (ObjectSpec('gray', 'cube'), ObjectSpec('red', 'cube'),
                      ObjectSpec('green', 'sphere'), ObjectSpec('purple', 'cylinder'))


class EpisodeFormatError(ValueError):
    pass


class InsufficientEpisodesError(ValueError):
    pass


@dataclass(frozen=True)
class Turn:
    instruction: Instruction
    edit: ParsedEdit
    scene: Scene


@dataclass
class Episode:
    """A sequence of editing turns starting from the empty scene.

    `scene_at(t)` gives the ground-truth scene after turn t (t = 0 is the empty scene) and counts
    the reads of intermediate scenes, so evaluation code can be audited for teacher forcing leaks.
    """
    id: str
    turns: Tuple[Turn, ...]
    intermediate_reads: int = field(default=0, compare=False, repr=False)

    def __len__(self):
        return len(self.turns)

    @property
    def grid(self) -> int:
        return self.turns[0].scene.grid

    @property
    def instructions(self) -> Tuple[Instruction, ...]:
        return tuple(t.instruction for t in self.turns)

    @property
    def final_scene(self) -> Scene:
        return self.turns[-1].scene

    @property
    def target_specs(self) -> FrozenSet[ObjectSpec]:
        return frozenset(t.edit.target for t in self.turns)

    def scene_at(self, t: int) -> Scene:
        if t == 0:
            return Scene((), self.grid)
        if t < len(self.turns):
            self.intermediate_reads += 1
        return self.turns[t - 1].scene


@dataclass(frozen=True)
class SplitConfig:
    n_train: int = 600
    n_val: int = 200
    n_test: int = 200
    fraction: float = 1.0
    held_out: Tuple[ObjectSpec, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"Scarcity fraction must be in (0, 1], got {self.fraction}")
        if min(self.n_train, self.n_val, self.n_test) < 0:
            raise ValueError("Split counts must be non-negative")


# Generation
# ==========
def _random_edit(rng: np.random.Generator, scene: Scene) -> ParsedEdit:
    free = [s for s in ALL_SPECS if s not in scene.specs]
    target = free[rng.integers(len(free))]
    if len(scene) == 0:
        return ParsedEdit(target, Relation.CENTER)
    relation = SPATIAL_RELATIONS[rng.integers(len(SPATIAL_RELATIONS))]
    anchor = scene.placements[rng.integers(len(scene))].spec
    return ParsedEdit(target, relation, anchor)


def generate_episode(episode_id: str, seed: Union[int, np.random.SeedSequence], n_turns: int = N_TURNS,
                     grid: int = GRID) -> Episode:
    """Generates one episode; infeasible random edits are redrawn until they execute."""
    rng = np.random.default_rng(seed)
    scene, turns = Scene((), grid), []
    while len(turns) < n_turns:
        edit = _random_edit(rng, scene)
        try:
            scene = apply_edit(scene, edit)
        except (PlacementError, InfeasibleEditError):
            continue
        turns.append(Turn(synthesize(edit), edit, scene))
    return Episode(episode_id, tuple(turns))


def generate_episodes(n: int, seed: int, n_turns: int = N_TURNS, grid: int = GRID) -> List[Episode]:
    """Generates `n` episodes, each from its own seed spawned from the master seed.

    Parameters
    ----------
    n: int
        Number of episodes.
    seed: int
        Master seed.
    n_turns: int
        Number of turns per episode.
    grid: int
        Grid size.

    Returns
    -------
        List of episodes with ids 'ep-000000', 'ep-000001', ...
    """
    if n <= 0:
        raise ValueError(f"The number of episodes must be positive, got {n}")
    seeds = np.random.SeedSequence(seed).spawn(n)
    return [generate_episode(f"ep-{i:06d}", s, n_turns, grid) for i, s in enumerate(seeds)]


# Splits
# ======
def subsample(episodes: Sequence[Episode], fraction: float) -> List[Episode]:
    """Keeps the first round(n × fraction) episodes of an already shuffled list."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"Scarcity fraction must be in (0, 1], got {fraction}")
    return list(episodes[:int(round(len(episodes) * fraction))])


def make_split(episodes: Sequence[Episode], config: SplitConfig) -> Dict[str, List[Episode]]:
    """Splits episodes into train, val, and test sets.

    The test and validation sets are drawn first from a seeded permutation. The remaining episodes
    are filtered of any episode that adds a held-out spec, the first `n_train` survivors form the
    full training set, and its first round(n_train × fraction) episodes are kept.
    """
    n_eval = config.n_test + config.n_val
    if len(episodes) < n_eval:
        raise InsufficientEpisodesError(f"{len(episodes)} episodes cannot fill {config.n_test} test and "
                                        f"{config.n_val} validation episodes")
    order = np.random.default_rng(config.seed).permutation(len(episodes))
    test = [episodes[i] for i in order[:config.n_test]]
    val = [episodes[i] for i in order[config.n_test:n_eval]]
    pool = [episodes[i] for i in order[n_eval:]]
    held_out = frozenset(config.held_out)
    if held_out:
        pool = [e for e in pool if not e.target_specs & held_out]
    if len(pool) < config.n_train:
        raise InsufficientEpisodesError(f"Only {len(pool)} episodes are available for {config.n_train} "
                                        f"training episodes")
    train = subsample(pool[:config.n_train], config.fraction)
    logger.info(f"Split {len(episodes)} episodes into {len(train)} train, {len(val)} val, {len(test)} test")
    return {'train': train, 'val': val, 'test': test}


# Persistence
# ===========
def episode_to_record(episode: Episode) -> Dict:
    return {'id': episode.id,
            'turns': [{'text': t.instruction.text,
                       'target': [t.edit.target.color, t.edit.target.shape],
                       'relation': t.edit.relation.value,
                       'anchor': None if t.edit.anchor is None else [t.edit.anchor.color, t.edit.anchor.shape],
                       'scene': scene_to_records(t.scene)} for t in episode.turns]}


def episode_from_record(record: Dict, grid: int = GRID) -> Episode:
    """Rebuilds an episode and checks that its edits replay into the stored scenes."""
    turns, scene = [], Scene((), grid)
    for t in record['turns']:
        anchor = None if t['anchor'] is None else ObjectSpec(*t['anchor'])
        edit = ParsedEdit(ObjectSpec(*t['target']), Relation(t['relation']), anchor)
        instruction = tokenize(t['text'])
        if parse(instruction) != edit:
            raise ValueError(f"Instruction '{t['text']}' does not match its stored edit")
        stored = scene_from_records(t['scene'], grid)
        scene = apply_edit(scene, edit)
        if scene.placements != stored.placements:
            raise ValueError(f"Replaying '{t['text']}' does not reproduce the stored scene")
        turns.append(Turn(instruction, edit, stored))
    return Episode(str(record['id']), tuple(turns))


def save_episodes(episodes: Sequence[Episode], path: Union[Path, str], grid: int = GRID):
    """Writes episodes as JSON lines after a versioned header line."""
    with open(path, 'w') as f:
        f.write(json.dumps({'format': EPISODE_FORMAT, 'version': EPISODE_VERSION, 'grid': grid}) + '\n')
        for e in episodes:
            f.write(json.dumps(episode_to_record(e)) + '\n')
    logger.info(f"Saved {len(episodes)} episodes to {path}")


def load_episodes(path: Union[Path, str]) -> List[Episode]:
    path = Path(path)
    with open(path) as f:
        lines = f.read().split('\n')
    if lines and lines[-1] == '':
        lines = lines[:-1]
    if not lines:
        raise EpisodeFormatError(f"{path}: missing header line")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError:
        raise EpisodeFormatError(f"{path}:1: malformed header line") from None
    if header.get('format') != EPISODE_FORMAT or header.get('version') != EPISODE_VERSION:
        raise EpisodeFormatError(f"{path}:1: not an {EPISODE_FORMAT} version {EPISODE_VERSION} file")
    grid = int(header.get('grid', GRID))

    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            episodes.append(episode_from_record(json.loads(line), grid))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise EpisodeFormatError(f"{path}:{lineno}: malformed episode record, the last good line "
                                     f"is {lineno - 1} ({e})") from e
    return episodes


# Batching
# ========
@lru_cache(maxsize=65536)
def rendered(scene: Scene, size: int = IMAGE_SIZE) -> ndarray:
    image = render(scene, size)
    image.flags.writeable = False
    return image


@dataclass
class EpisodeBatch:
    """Array view of a batch of episodes.

    Attributes
    ----------
    images: ndarray
        Ground-truth images O_0 ... O_T, shape (B, T+1, P, P, 3), O_0 is the empty scene.
    ids: ndarray
        Instruction token ids, shape (B, T, N), PAD padded.
    mask: ndarray
        Instruction token mask, shape (B, T, N).
    targets: ndarray
        Decoder targets (tokens followed by EOS), shape (B, T, L).
    target_mask: ndarray
        Non-PAD decoder target positions, shape (B, T, L).
    """
    episodes: List[Episode]
    images: ndarray
    ids: ndarray
    mask: ndarray
    targets: ndarray
    target_mask: ndarray

    def __len__(self):
        return len(self.episodes)

    @property
    def n_turns(self) -> int:
        return self.ids.shape[1]


def encode_instructions(instructions: Sequence[Instruction], vocabulary: Vocabulary) -> Tuple[ndarray, ndarray]:
    """Encoder ids and mask for a list of instructions, shape (B, N)."""
    ids = np.stack([vocabulary.encode(i, INSTRUCTION_LENGTH) for i in instructions])
    return ids, (ids != vocabulary.pad).astype(np.float64)


def decoder_targets(instructions: Sequence[Instruction], vocabulary: Vocabulary) -> Tuple[ndarray, ndarray]:
    """Decoder targets terminated by EOS and their non-PAD mask, shape (B, L)."""
    ids = np.stack([vocabulary.encode(i, DECODER_LENGTH, eos=True) for i in instructions])
    return ids, (ids != vocabulary.pad).astype(np.float64)


def make_batch(episodes: Sequence[Episode], vocabulary: Vocabulary, image_size: int = IMAGE_SIZE) -> EpisodeBatch:
    episodes = list(episodes)
    n_turns = len(episodes[0])
    images = np.stack([[rendered(e.scene_at(t), image_size) for t in range(n_turns + 1)] for e in episodes])
    ids, mask, targets, target_mask = [], [], [], []
    for t in range(n_turns):
        i, m = encode_instructions([e.turns[t].instruction for e in episodes], vocabulary)
        d, dm = decoder_targets([e.turns[t].instruction for e in episodes], vocabulary)
        ids.append(i)
        mask.append(m)
        targets.append(d)
        target_mask.append(dm)
    return EpisodeBatch(episodes, images, np.stack(ids, 1), np.stack(mask, 1),
                        np.stack(targets, 1), np.stack(target_mask, 1))


def iterate_batches(episodes: Sequence[Episode], batch_size: int,
                    rng: Optional[np.random.Generator] = None) -> Iterator[List[Episode]]:
    """Yields episode batches, shuffled when a generator is given."""
    order = np.arange(len(episodes)) if rng is None else rng.permutation(len(episodes))
    for start in range(0, len(episodes), batch_size):
        yield [episodes[i] for i in order[start:start + batch_size]]
