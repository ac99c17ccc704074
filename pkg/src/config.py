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
import json

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .dataset import SplitConfig, ZERO_SHOT_HELD_OUT
from .editor import EditorConfig
from .explainer import ExplainerConfig
from .scene import ObjectSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    n_train: int = 600
    n_val: int = 200
    n_test: int = 200
    n_turns: int = 5
    seed: int = 0
    zero_shot_pool: int = 3000
    held_out: List[Tuple[str, str]] = field(default_factory=lambda: [(s.color, s.shape) for s in ZERO_SHOT_HELD_OUT])

    def __post_init__(self):
        if min(self.n_train, self.n_val, self.n_test, self.n_turns) <= 0:
            raise ValueError("Episode counts and the number of turns must be positive")
        self.held_out = [tuple(s) for s in self.held_out]
        for spec in self.held_out:
            ObjectSpec(*spec)

    @property
    def held_out_specs(self) -> Tuple[ObjectSpec, ...]:
        return tuple(ObjectSpec(*s) for s in self.held_out)

    def split_config(self, zero_shot: bool = False, fraction: float = 1.0) -> SplitConfig:
        return SplitConfig(self.n_train, self.n_val, self.n_test, fraction,
                           self.held_out_specs if zero_shot else (), self.seed)


@dataclass
class ExperimentConfig:
    """Complete, serialisable configuration of an experiment.

    `seed`, `fraction`, and `train.mode` select a single run; `seeds` and `fractions` span the
    ablation grids.
    """
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    editor: EditorConfig = field(default_factory=EditorConfig)
    explainer: ExplainerConfig = field(default_factory=ExplainerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    out: str = 'runs'
    seed: int = 0
    fraction: float = 1.0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    fractions: List[float] = field(default_factory=lambda: [1.0, 0.8, 0.5])
    zero_shot: bool = False
    cf_iteration_sweep: List[int] = field(default_factory=lambda: [0, 50, 100, 200, 400, 800])
    compare_cf_loss: bool = True
    render_count: int = 8
    use_tqdm: bool = True

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0 or not all(0.0 < f <= 1.0 for f in self.fractions):
            raise ValueError("Scarcity fractions must be in (0, 1]")
        if not self.seeds:
            raise ValueError("At least one seed is needed")
        if sorted(self.cf_iteration_sweep) != list(self.cf_iteration_sweep) or min(self.cf_iteration_sweep, default=0) < 0:
            raise ValueError("The counterfactual iteration sweep must be non-negative and increasing")
        if self.render_count < 0:
            raise ValueError("The render count must be non-negative")

    def to_dict(self) -> Dict:
        return json.loads(json.dumps(asdict(self)))

    def save(self, path: Union[Path, str]):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')


def _build(cls, values: Dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"'{where}' must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s) in '{where}': {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, bool) and not isinstance(value, bool):
            raise ConfigError(f"'{where}.{name}' must be true or false, got {value!r}")
        elif isinstance(default, (int, float)) and not isinstance(default, bool) and (
                isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"'{where}.{name}' must be a number, got {value!r}")
        elif isinstance(default, int) and not isinstance(default, bool) and isinstance(value, float):
            raise ConfigError(f"'{where}.{name}' must be an integer, got {value!r}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid '{where}' configuration: {e}") from None


def config_from_dict(values: Dict) -> ExperimentConfig:
    return _build(ExperimentConfig, values, 'config')


def load_config(path: Union[Path, str, None]) -> ExperimentConfig:
    """Loads an experiment configuration, the defaults when `path` is None."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Configuration file {path} does not exist")
    try:
        with open(path) as f:
            values = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Configuration file {path} is not valid JSON: {e}") from None
    return config_from_dict(values)
