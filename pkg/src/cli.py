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
import argparse
import logging

from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

from .config import ConfigError, ExperimentConfig, load_config
from .datastep import data_directory, generate_data
from .experiment import Experiment, archive_config
from .metrics import EmptyCorpusError
from .step import MissingArtifactError
from .summary import summarize
from .training import CounterfactualLoss, Mode

logger = logging.getLogger("sscr")

EXIT_OK, EXIT_CONFIG, EXIT_MISSING = 0, 2, 3


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Returns a copy of the configuration with the command line overrides applied."""
    try:
        train = config.train
        if args.mode is not None:
            train = replace(train, mode=Mode(args.mode))
        if args.cf_iters is not None:
            train = replace(train, cf_iterations=args.cf_iters)
        if args.cf_loss is not None:
            train = replace(train, cf_loss=CounterfactualLoss(args.cf_loss))
        changes = {'train': train}
        if args.seed is not None:
            changes['seed'] = args.seed
        if args.out is not None:
            changes['out'] = str(args.out)
        if args.fraction is not None:
            changes['fraction'] = args.fraction
        return replace(config, **changes)
    except ValueError as e:
        raise ConfigError(f"Invalid command line override: {e}") from None


def variant(config: ExperimentConfig, mode: Mode, seed: int, fraction: Optional[float] = None,
            cf_loss: Optional[CounterfactualLoss] = None, zero_shot: Optional[bool] = None) -> ExperimentConfig:
    train = replace(config.train, mode=mode, cf_loss=cf_loss or config.train.cf_loss)
    return replace(config, train=train, seed=seed, fraction=config.fraction if fraction is None else fraction,
                   zero_shot=config.zero_shot if zero_shot is None else zero_shot)


def grid(config: ExperimentConfig, modes: Sequence[Mode], fractions: Sequence[float],
         zero_shot: bool = False) -> List[ExperimentConfig]:
    """Run configurations of an ablation grid.

    The ctc runs come before the sscr runs of the same fraction and seed, so the sscr runs reuse
    their editor checkpoints.
    """
    configs = []
    for fraction in fractions:
        for seed in config.seeds:
            for mode in modes:
                configs.append(variant(config, mode, seed, fraction, CounterfactualLoss.EXPLAINER, zero_shot))
                if mode == Mode.SSCR and config.compare_cf_loss:
                    configs.append(variant(config, mode, seed, fraction, CounterfactualLoss.DISCRIMINATOR, zero_shot))
    return configs


# Subcommands
# ===========
def cmd_gen_data(config: ExperimentConfig, args: argparse.Namespace):
    generate_data(config, config.zero_shot)


def cmd_pretrain_explainer(config: ExperimentConfig, args: argparse.Namespace):
    if not Mode(config.train.mode).uses_explainer:
        config = replace(config, train=replace(config.train, mode=Mode.CTC))
    Experiment(config).pretrain_explainer()


def cmd_train(config: ExperimentConfig, args: argparse.Namespace):
    Experiment(config).run()


def cmd_eval(config: ExperimentConfig, args: argparse.Namespace):
    Experiment(config).evaluate()


def cmd_render(config: ExperimentConfig, args: argparse.Namespace):
    Experiment(config).render_examples()


def cmd_ablate_scarcity(config: ExperimentConfig, args: argparse.Namespace):
    configs = grid(config, (Mode.BASELINE, Mode.CTC, Mode.SSCR), config.fractions)
    for i, c in enumerate(configs):
        logger.info(f"Grid run {i + 1}/{len(configs)}")
        Experiment(c).run()
    summarize(Path(config.out) / 'reports')


def cmd_ablate_cf_iters(config: ExperimentConfig, args: argparse.Namespace):
    for seed in config.seeds:
        c = variant(config, Mode.SSCR, seed, cf_loss=config.train.cf_loss)
        Experiment(c, sweep=config.cf_iteration_sweep).run()
    summarize(Path(config.out) / 'reports')


def cmd_zero_shot(config: ExperimentConfig, args: argparse.Namespace):
    if not (data_directory(config, True) / 'train.jsonl').exists():
        generate_data(config, True)
    for c in grid(replace(config, compare_cf_loss=False), (Mode.BASELINE, Mode.SSCR), [config.fraction], True):
        Experiment(c).run()
    summarize(Path(config.out) / 'reports')


def cmd_summarize(config: ExperimentConfig, args: argparse.Namespace):
    summarize(Path(config.out) / 'reports')


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, default=None, help='Experiment configuration JSON file')
    common.add_argument('--seed', type=int, default=None, help='Run seed')
    common.add_argument('--out', type=Path, default=None, help='Output directory')
    common.add_argument('--mode', choices=['baseline', 'ctc', 'ctc-only', 'sscr'], default=None,
                        help='Editor training mode')
    common.add_argument('--fraction', type=float, default=None, help='Training data fraction')
    common.add_argument('--cf-iters', type=int, default=None, help='Counterfactual iterations')
    common.add_argument('--cf-loss', choices=['explainer', 'discriminator'], default=None,
                        help='Loss source of the counterfactual phase')
    common.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], default='INFO')

    parser = argparse.ArgumentParser(description='Self-supervised counterfactual reasoning for iterative image editing')
    sub = parser.add_subparsers(dest='command', required=True)
    commands = (('gen-data', cmd_gen_data, 'Generate the episode splits'),
                ('pretrain-explainer', cmd_pretrain_explainer, 'Pretrain the iterative explainer'),
                ('train', cmd_train, 'Train and evaluate a single run'),
                ('eval', cmd_eval, 'Evaluate the archived checkpoint of a run'),
                ('ablate-scarcity', cmd_ablate_scarcity, 'Run the modes over the data fractions and seeds'),
                ('ablate-cf-iters', cmd_ablate_cf_iters, 'Sweep the counterfactual iteration cap'),
                ('zero-shot', cmd_zero_shot, 'Train without the held-out color-shape combinations'),
                ('render', cmd_render, 'Write render strips of test episodes'),
                ('summarize', cmd_summarize, 'Summarize the reports'))
    for name, func, text in commands:
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)-8s %(name)s: %(message)s')
    try:
        config = apply_overrides(load_config(args.config), args)
        if args.command != 'summarize':
            archive_config(config)
        args.func(config, args)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except (MissingArtifactError, EmptyCorpusError) as e:
        logger.error(str(e))
        return EXIT_MISSING
    return EXIT_OK
