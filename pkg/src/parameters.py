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
import json

from logging import getLogger
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple, Union

import numpy as np

from astropy.io import fits
from astropy.io.fits import Card, HDUList, ImageHDU, PrimaryHDU
from numpy import ndarray

from .tensor import Tensor

logger = getLogger("parameters")

CHECKPOINT_FORMAT = 'sscr-checkpoint'
CHECKPOINT_VERSION = 1


class FrozenStoreError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


class ParameterStore:
    """Named collection of trainable tensors with their Adam state.

    Parameters
    ----------
    name: str
        Store name, used as the checkpoint prefix of its parameters.
    """

    def __init__(self, name: str):
        self.name: str = name
        self.step: int = 0
        self._parameters: Dict[str, Tensor] = {}
        self._m: Dict[str, ndarray] = {}
        self._v: Dict[str, ndarray] = {}
        self._frozen: bool = False

    def add(self, name: str, values: ndarray) -> Tensor:
        if name in self._parameters:
            raise KeyError(f"Parameter '{name}' already exists in store '{self.name}'")
        t = Tensor(values, requires_grad=not self._frozen, name=f"{self.name}/{name}")
        self._parameters[name] = t
        self._m[name] = np.zeros_like(t.values)
        self._v[name] = np.zeros_like(t.values)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._parameters[name]

    def __contains__(self, name: str) -> bool:
        return name in self._parameters

    def __iter__(self) -> Iterator[str]:
        return iter(self._parameters)

    def __len__(self) -> int:
        return len(self._parameters)

    def items(self):
        return self._parameters.items()

    def moments(self, name: str) -> Tuple[ndarray, ndarray]:
        return self._m[name], self._v[name]

    @property
    def frozen(self) -> bool:
        return self._frozen

    def freeze(self):
        """Freezes the store permanently; the parameters stop collecting gradients."""
        self._frozen = True
        for t in self._parameters.values():
            t.requires_grad = False
            t.grad = None

    def zero_grad(self):
        for t in self._parameters.values():
            t.grad = None

    def size(self) -> int:
        return int(sum(t.values.size for t in self._parameters.values()))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self._parameters):
            h.update(name.encode())
            h.update(self._parameters[name].values.tobytes())
        return h.hexdigest()

    def copy(self) -> 'ParameterStore':
        other = ParameterStore(self.name)
        for name, t in self._parameters.items():
            other.add(name, t.values.copy())
            other._m[name] = self._m[name].copy()
            other._v[name] = self._v[name].copy()
        other.step = self.step
        if self._frozen:
            other.freeze()
        return other

    def load_state(self, other: 'ParameterStore'):
        """Copies values and optimiser state from a store with identical layout."""
        for name, t in self._parameters.items():
            if name not in other or other[name].shape != t.shape:
                raise CheckpointError(f"Store '{self.name}': parameter '{name}' missing or reshaped in checkpoint")
            t.values[...] = other[name].values
            self._m[name][...] = other._m[name]
            self._v[name][...] = other._v[name]
        self.step = other.step
        if other.frozen:
            self.freeze()


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Applies one bias-corrected Adam update and zeroes the gradients.

    Parameters
    ----------
    store: ParameterStore
        Store to update, must not be frozen.
    lr: float
        Learning rate.
    beta1, beta2: float
        Decay rates of the first and second moment estimates.
    eps: float
        Denominator regulariser.

    Returns
    -------
    The updated store.
    """
    if store.frozen:
        raise FrozenStoreError(f"Store '{store.name}' is frozen and cannot be updated")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for name, t in store.items():
        if t.grad is None:
            g = np.zeros_like(t.values)
        else:
            g = t.grad
        m, v = store.moments(name)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        t.grad = None
    return store


# Checkpoints
# ===========
def save_checkpoint(path: Union[Path, str], stores: Dict[str, ParameterStore], config: Optional[Dict] = None):
    """Saves parameter stores into a FITS checkpoint.

    The primary header carries the format name, version and per-store Adam step counters and frozen
    flags. Each parameter is stored as an image HDU holding its value and Adam moments stacked along
    the first axis. An optional JSON-serialisable config is stored as UTF-8 bytes in a CONFIG HDU.
    """
    hdul = HDUList(PrimaryHDU())
    h = hdul[0].header
    h.append(Card('FORMAT', CHECKPOINT_FORMAT, 'Checkpoint format'))
    h.append(Card('VERSION', CHECKPOINT_VERSION, 'Checkpoint format version'))
    h.append(Card('NSTORES', len(stores), 'Number of parameter stores'))
    for i, (key, store) in enumerate(stores.items()):
        h.append(Card(f'STORE{i}', key, 'Parameter store name'))
        h.append(Card(f'STEP{i}', store.step, 'Adam step counter'))
        h.append(Card(f'FROZEN{i}', store.frozen, 'Is the store frozen'))
        for name, t in store.items():
            m, v = store.moments(name)
            hdu = ImageHDU(np.stack([t.values, m, v]).astype('>f8'), name=f"{key}/{name}")
            hdu.header.append(Card('STORE', key))
            hdu.header.append(Card('PARAM', name))
            hdul.append(hdu)
    if config is not None:
        data = np.frombuffer(json.dumps(config, sort_keys=True).encode('utf-8'), dtype=np.uint8)
        hdul.append(ImageHDU(data, name='CONFIG'))
    hdul.writeto(Path(path), overwrite=True)
    logger.info(f"Saved checkpoint {path} with {len(stores)} stores")


def load_checkpoint(path: Union[Path, str]) -> Tuple[Dict[str, ParameterStore], Optional[Dict]]:
    """Loads the parameter stores and config saved by `save_checkpoint`."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint {path} does not exist")
    with fits.open(path) as hdul:
        h = hdul[0].header
        if h.get('FORMAT') != CHECKPOINT_FORMAT:
            raise CheckpointError(f"{path} is not an sscr checkpoint")
        if h.get('VERSION') != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {h.get('VERSION')}")
        stores, frozen = {}, {}
        for i in range(h['NSTORES']):
            key = h[f'STORE{i}']
            stores[key] = ParameterStore(key)
            stores[key].step = int(h[f'STEP{i}'])
            frozen[key] = bool(h[f'FROZEN{i}'])
        config = None
        for hdu in hdul[1:]:
            if hdu.name == 'CONFIG':
                config = json.loads(hdu.data.astype(np.uint8).tobytes().decode('utf-8'))
                continue
            store = stores[hdu.header['STORE']]
            data = hdu.data.astype('<f8')
            name = hdu.header['PARAM']
            store.add(name, data[0])
            m, v = store.moments(name)
            m[...] = data[1]
            v[...] = data[2]
    for key, store in stores.items():
        if frozen[key]:
            store.freeze()
    return stores, config
