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

from pathlib import Path

import pandas as pd
import pytest

from astropy.io import fits

from sscr.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_OK, grid, main
from sscr.config import load_config
from sscr.datastep import load_splits, verify_checksums
from sscr.experiment import run_name
from sscr.training import CounterfactualLoss, Mode


@pytest.fixture
def config_file(tmp_path, experiment_config):
    path = tmp_path / 'config.json'
    experiment_config.save(path)
    return str(path)


@pytest.fixture
def out(experiment_config):
    return Path(experiment_config.out)


def test_run_names():
    assert run_name('sscr', 1.0, 0, sweep=True) == 'sscr-f100-s0-sweep'
    assert run_name('sscr', 0.5, 1) == 'sscr-f050-s1'
    assert run_name('ctc-only', 0.8, 2) == 'ctc-f080-s2'
    assert run_name(Mode.BASELINE, 1.0, 0, 'discriminator') == 'baseline-f100-s0'
    assert run_name('sscr', 1.0, 0, CounterfactualLoss.DISCRIMINATOR, zero_shot=True) == 'sscr-f100-s0-d-zs'


def test_grid_orders_ctc_before_sscr(experiment_config):
    configs = grid(experiment_config, (Mode.BASELINE, Mode.CTC, Mode.SSCR), experiment_config.fractions)
    names = [run_name(c.train.mode, c.fraction, c.seed, c.train.cf_loss) for c in configs]
    assert names[:4] == ['baseline-f100-s0', 'ctc-f100-s0', 'sscr-f100-s0', 'sscr-f100-s0-d']
    assert len(names) == 8


def test_summarize_without_reports(tmp_path):
    assert main(['summarize', '--out', str(tmp_path)]) == EXIT_MISSING


def test_train_without_data(tmp_path):
    assert main(['train', '--out', str(tmp_path), '--mode', 'baseline']) == EXIT_MISSING


def test_configuration_errors(tmp_path, config_file):
    assert main(['gen-data', '--config', str(tmp_path / 'missing.json')]) == EXIT_CONFIG
    assert main(['gen-data', '--config', config_file, '--fraction', '1.5']) == EXIT_CONFIG
    assert main(['gen-data', '--config', config_file, '--cf-iters', '-1']) == EXIT_CONFIG
    with pytest.raises(SystemExit):
        main(['train', '--config', config_file, '--mode', 'pix2pix'])


def test_gen_data(config_file, out, experiment_config):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    data = out / 'data'
    for name in ('train.jsonl', 'val.jsonl', 'test.jsonl', 'checksums.txt', 'config.json'):
        assert (data / name).exists()
    assert verify_checksums(data)
    assert load_config(data / 'config.json') == experiment_config
    splits = load_splits(experiment_config)
    assert [len(splits[s]) for s in ('train', 'val', 'test')] == [8, 4, 4]
    for d in ('checkpoints', 'reports', 'curves', 'renders'):
        assert (out / d / 'config.json').exists()


def test_eval_without_a_checkpoint(config_file):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    assert main(['eval', '--config', config_file, '--mode', 'ctc']) == EXIT_MISSING


def test_sscr_run(config_file, out):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    assert main(['train', '--config', config_file, '--mode', 'sscr']) == EXIT_OK

    name = 'sscr-f100-s0'
    for f in (f'{name}.fits', f'{name}-pre-cf.fits', f'{name}-pre-cf-e001.fits', 'explainer-f100-s0.fits'):
        assert (out / 'checkpoints' / f).exists()
    reports = out / 'reports'
    for f in (f'{name}.json', f'{name}-pre-cf.json', f'{name}-episodes.csv', 'explainer-f100-s0.json', f'{name}.fits'):
        assert (reports / f).exists()

    curves = pd.read_csv(out / 'curves' / f'{name}.csv')
    assert len(curves) == 4
    assert list(curves.phase) == ['editor'] * 2 + ['counterfactual-explainer'] * 2
    assert (out / 'curves' / f'{name}.svg').exists()

    with fits.open(reports / f'{name}.fits') as hdul:
        h = hdul[0].header
        assert h['NAME'] == name
        assert h['MODE'] == 'sscr'
        assert h['CF_ITER'] == 2 and h['CF_RUN'] == 2
        assert 'CF_CSD' in h and list(h.keys()).count('CS_DISCR') == 1
        assert h['NEPS'] == 4 and h['P_NEPS'] == 4
        assert not h['E_LOADED']

    # Evaluating the archived checkpoint reproduces the report of the run.
    report = (reports / f'{name}.json').read_bytes()
    assert main(['eval', '--config', config_file, '--mode', 'sscr']) == EXIT_OK
    assert (reports / f'{name}.json').read_bytes() == report

    assert main(['render', '--config', config_file, '--mode', 'sscr']) == EXIT_OK
    assert len(list((out / 'renders' / name).glob('*.png'))) == 6
    assert len(list((out / 'renders' / name).glob('*-final.ppm'))) == 2

    assert main(['summarize', '--config', config_file]) == EXIT_OK
    assert (reports / 'summary.md').exists()
    assert (reports / 'summary.csv').exists()


def test_pretrain_explainer(config_file, out):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    assert main(['pretrain-explainer', '--config', config_file, '--mode', 'baseline', '--fraction', '0.5']) == EXIT_OK
    assert (out / 'checkpoints' / 'explainer-f050-s0.fits').exists()
    assert (out / 'reports' / 'explainer-f050-s0.json').exists()


@pytest.mark.slow
def test_scarcity_ablation(config_file, out):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    assert main(['ablate-scarcity', '--config', config_file]) == EXIT_OK
    table = pd.read_csv(out / 'reports' / 'summary.csv')
    assert set(table.label) == {'baseline', 'ctc-only', 'sscr (E)', 'sscr (D)'}
    assert set(table.fraction) == {1.0, 0.5}
    assert '## Verdicts' in (out / 'reports' / 'summary.md').read_text()
    # The sscr runs reuse the editor of the ctc run with the same seed and fraction.
    with fits.open(out / 'reports' / 'sscr-f050-s0.fits') as hdul:
        assert hdul[0].header['REUSED'] == 'ctc-f050-s0'


@pytest.mark.slow
def test_iteration_sweep(config_file, out):
    assert main(['gen-data', '--config', config_file]) == EXIT_OK
    assert main(['ablate-cf-iters', '--config', config_file]) == EXIT_OK
    sweep = pd.read_csv(out / 'reports' / 'sscr-f100-s0-sweep.csv')
    assert list(sweep.iterations) == [0, 1, 2]
    assert (out / 'curves' / 'sscr-f100-s0-sweep-caps.svg').exists()
    assert not (out / 'reports' / 'sscr-f100-s0.json').exists()
    assert json.loads((out / 'reports' / 'sscr-f100-s0-sweep.json').read_text())['sweep']
    # The run keeps the editor of the best validation cap, the smallest one on ties.
    with fits.open(out / 'reports' / 'sscr-f100-s0-sweep.fits') as hdul:
        h = hdul[0].header
        assert h['NAME'] == 'sscr-f100-s0-sweep'
        assert h['CF_RUN'] == 2
        assert h['CF_ITER'] == sweep.iterations[sweep.f1.idxmax()]
    assert (out / 'reports' / 'summary.md').exists()


@pytest.mark.slow
def test_zero_shot(config_file, out, experiment_config):
    assert main(['zero-shot', '--config', config_file]) == EXIT_OK
    assert (out / 'data' / 'zero-shot' / 'train.jsonl').exists()
    held_out = set(experiment_config.dataset.held_out_specs)
    splits = load_splits(experiment_config, zero_shot=True)
    assert not any(e.target_specs & held_out for e in splits['train'])
    for name in ('baseline-f100-s0-zs', 'sscr-f100-s0-zs'):
        assert (out / 'reports' / f'{name}.json').exists()
