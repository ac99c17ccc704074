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
from logging import getLogger, Logger
from typing import Optional

from astropy.io.fits import Card, HDUList


class MissingArtifactError(FileNotFoundError):
    pass


class Step:
    """A stage of an experiment run.

    Steps run in registration order. Each one logs under `<step name>:<run name>` and writes its
    results into the run summary header with `add_to_fits`.
    """
    name = "step"
    title = ""

    def __init__(self, experiment):
        self.experiment = experiment
        self.logger: Optional[Logger] = None
        self.done: bool = False

    def start(self):
        self.logger = getLogger(f"{self.name}:{self.experiment.name}")

    def __call__(self):
        raise NotImplementedError

    def _add_banner(self, hdul: HDUList):
        h = hdul[0].header
        h.append(Card('COMMENT', '======================'))
        h.append(Card('COMMENT', f'{self.title:^22s}'))
        h.append(Card('COMMENT', '======================'))

    def add_to_fits(self, hdul: HDUList):
        pass
