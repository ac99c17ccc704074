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
import hashlib

from logging import getLogger
from pathlib import Path
from typing import Dict, List

import pandas as pd

from astropy.io.fits import Card, HDUList

from .config import ExperimentConfig
from .dataset import Episode, generate_episodes, load_episodes, make_split, save_episodes, subsample
from .step import MissingArtifactError, Step

logger = getLogger("gen-data")

SPLITS = ('train', 'val', 'test')


def data_directory(config: ExperimentConfig, zero_shot: bool = False) -> Path:
    return Path(config.out) / 'data' / ('zero-shot' if zero_shot else '')


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def generate_data(config: ExperimentConfig, zero_shot: bool = False) -> Dict[str, List[Episode]]:
    """Generates the episode corpus, splits it, and writes the splits with their checksums.

    The zero-shot corpus is generated from a larger pool, since only about a third of the episodes
    avoid all the held-out specs.
    """
    dc = config.dataset
    n = dc.zero_shot_pool if zero_shot else dc.n_train + dc.n_val + dc.n_test
    episodes = generate_episodes(n, dc.seed, dc.n_turns, config.editor.grid)
    splits = make_split(episodes, dc.split_config(zero_shot))

    root = data_directory(config, zero_shot)
    root.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        save_episodes(splits[name], root / f"{name}.jsonl", config.editor.grid)
    pd.DataFrame({'file': [f"{s}.jsonl" for s in SPLITS],
                  'sha256': [sha256(root / f"{s}.jsonl") for s in SPLITS]}).to_csv(root / 'checksums.txt',
                                                                                   sep=' ', index=False, header=False)
    config.save(root / 'config.json')
    logger.info(f"Wrote {', '.join(f'{len(splits[s])} {s}' for s in SPLITS)} episodes to {root}")
    return splits


def verify_checksums(root: Path) -> bool:
    table = pd.read_csv(root / 'checksums.txt', sep=' ', names=['file', 'sha256'])
    return all(sha256(root / f) == h for f, h in zip(table.file, table.sha256))


def load_splits(config: ExperimentConfig, zero_shot: bool = False) -> Dict[str, List[Episode]]:
    root = data_directory(config, zero_shot)
    splits = {}
    for name in SPLITS:
        path = root / f"{name}.jsonl"
        if not path.exists():
            command = 'zero-shot' if zero_shot else 'gen-data'
            raise MissingArtifactError(f"Missing episode file {path}, run '{command}' first")
        splits[name] = load_episodes(path)
    if (root / 'checksums.txt').exists() and not verify_checksums(root):
        logger.warning(f"The episode files in {root} do not match their checksums")
    return splits


class DataStep(Step):
    name = "data"
    title = "Data"

    def __init__(self, experiment):
        super().__init__(experiment)
        self.n_train_full: int = 0

    def __call__(self):
        self.start()
        ex = self.experiment
        splits = load_splits(ex.config, ex.zero_shot)
        self.n_train_full = len(splits['train'])
        splits['train'] = subsample(splits['train'], ex.fraction)
        if ex.zero_shot:
            held_out = set(ex.config.dataset.held_out_specs)
            assert not any(e.target_specs & held_out for e in splits['train'])
        ex.splits = splits
        self.done = True
        self.logger.info(f"Using {len(splits['train'])} of {self.n_train_full} training episodes, "
                         f"{len(splits['val'])} validation and {len(splits['test'])} test episodes")

    def add_to_fits(self, hdul: HDUList):
        if self.done:
            ex = self.experiment
            h = hdul[0].header
            self._add_banner(hdul)
            h.append(Card('n_train', len(ex.splits['train']), 'Number of training episodes'), bottom=True)
            h.append(Card('n_full', self.n_train_full, 'Training episodes before subsampling'), bottom=True)
            h.append(Card('n_val', len(ex.splits['val']), 'Number of validation episodes'), bottom=True)
            h.append(Card('n_test', len(ex.splits['test']), 'Number of test episodes'), bottom=True)
            h.append(Card('fraction', ex.fraction, 'Training data fraction'), bottom=True)
            h.append(Card('zeroshot', ex.zero_shot, 'Held-out specs removed from training'), bottom=True)
