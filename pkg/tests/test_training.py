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

from sscr.dataset import generate_episodes, make_batch
from sscr.editor import EditorConfig, IterativeEditor
from sscr.explainer import ExplainerConfig, IterativeExplainer, pretrain
from sscr.scene import detect
from sscr.tensor import no_grad
from sscr.training import (CURVE_COLUMNS, INIT_EDITOR, CounterfactualLoss, MissingExplainerError, Mode, TrainConfig,
                           counterfactual_instructions, counterfactual_phase, evaluate_checkpoint, phase_rng,
                           train_editor_ctc, wrong_instructions)


@pytest.fixture
def frozen_explainer(explainer_config, episodes):
    explainer = IterativeExplainer(explainer_config, 0)
    pretrain(explainer, episodes[:4], use_tqdm=False)
    return explainer


def config(**kwargs):
    values = dict(epochs=1, batch_size=4, cf_iterations=2, cf_batch_size=4)
    values.update(kwargs)
    return TrainConfig(**values)


def test_modes():
    assert Mode('ctc-only') == Mode.CTC
    assert not Mode.BASELINE.uses_explainer
    assert Mode.CTC.uses_explainer and Mode.SSCR.uses_explainer
    with pytest.raises(ValueError):
        Mode('pix2pix')
    with pytest.raises(ValueError):
        TrainConfig(intervention_p=0.0)
    with pytest.raises(ValueError):
        TrainConfig(recon_weight=-1.0)


def test_phase_streams_are_independent():
    a, b = phase_rng(0, INIT_EDITOR).random(4), phase_rng(0, INIT_EDITOR).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, phase_rng(1, INIT_EDITOR).random(4))
    assert not np.array_equal(a, phase_rng(0, INIT_EDITOR + 1).random(4))


def test_baseline_never_calls_the_explainer(editor_config, frozen_explainer, episodes):
    calls = frozen_explainer.calls
    curves = train_editor_ctc(IterativeEditor(editor_config, 0), frozen_explainer, episodes[:8],
                              config(mode=Mode.BASELINE), use_tqdm=False)
    assert frozen_explainer.calls == calls
    assert curves.L_E.isna().all()


def test_ctc_needs_a_frozen_explainer(editor_config, explainer_config, episodes):
    editor = IterativeEditor(editor_config, 0)
    with pytest.raises(MissingExplainerError):
        train_editor_ctc(editor, None, episodes[:4], config(mode=Mode.CTC), use_tqdm=False)
    with pytest.raises(MissingExplainerError):
        train_editor_ctc(editor, IterativeExplainer(explainer_config, 0), episodes[:4], config(mode=Mode.CTC),
                         use_tqdm=False)


def test_ctc_training_updates_the_editor_only(editor_config, frozen_explainer, episodes):
    editor = IterativeEditor(editor_config, 0)
    before, explainer_before = editor.checksums(), frozen_explainer.checksums()
    epochs = []
    curves = train_editor_ctc(editor, frozen_explainer, episodes[:8], config(mode=Mode.CTC, epochs=2), use_tqdm=False,
                              on_epoch=lambda epoch, e: epochs.append(epoch))
    assert epochs == [1, 2]
    assert list(curves.columns) == CURVE_COLUMNS
    assert len(curves) == 4
    assert list(curves.iteration) == [0, 1, 2, 3]
    assert curves.L_E.notna().all() and (curves.L_E > 0).all()
    assert (curves.L_R > 0).all()
    assert (curves.L_G < 0).all() and (curves.L_D < 0).all()
    assert frozen_explainer.checksums() == explainer_before
    after = editor.checksums()
    assert all(after[n] != before[n] for n in before)


def test_editor_training_is_deterministic(editor_config, frozen_explainer, episodes):
    a, b = IterativeEditor(editor_config, [0, INIT_EDITOR]), IterativeEditor(editor_config, [0, INIT_EDITOR])
    ca = train_editor_ctc(a, frozen_explainer, episodes[:8], config(mode=Mode.CTC), seed=5, use_tqdm=False)
    cb = train_editor_ctc(b, frozen_explainer, episodes[:8], config(mode=Mode.SSCR), seed=5, use_tqdm=False)
    assert a.checksums() == b.checksums()
    assert ca.equals(cb)


def test_wrong_instructions_come_from_other_episodes(episodes):
    wrong = wrong_instructions(episodes[:4], episodes, np.random.default_rng(0))
    for e, w in zip(episodes[:4], wrong):
        assert len(w) == len(e)
        assert any(a != b for a, b in zip(w, e.instructions))


def test_counterfactual_instructions_differ(episodes):
    cf = counterfactual_instructions(episodes[:4], np.random.default_rng(0), 0.5)
    for e, c in zip(episodes[:4], cf):
        assert all(a != b and a.types == b.types for a, b in zip(c, e.instructions))


def test_counterfactual_phase_updates_the_generator_side_only(editor_config, frozen_explainer, episodes):
    editor = IterativeEditor(editor_config, 0)
    before, explainer_before = editor.checksums(), frozen_explainer.checksums()
    seen = []
    curves = counterfactual_phase(editor, frozen_explainer, episodes[:8], config(cf_iterations=3), use_tqdm=False,
                                  on_iteration=lambda i, e: seen.append(i), first_iteration=10)
    assert seen == [0, 1, 2, 3]
    assert list(curves.iteration) == [10, 11, 12]
    assert (curves.phase == 'counterfactual-explainer').all()
    assert curves["L'_E"].notna().all() and curves.L_G.isna().all()
    after = editor.checksums()
    assert after['discriminator'] == before['discriminator']
    assert frozen_explainer.checksums() == explainer_before
    assert after['generator'] != before['generator']
    assert after['instruction_encoder'] != before['instruction_encoder']


def test_counterfactual_phase_with_the_discriminator_loss(editor_config, episodes):
    editor = IterativeEditor(editor_config, 0)
    before = editor.checksums()
    curves = counterfactual_phase(editor, None, episodes[:8],
                                  config(cf_loss=CounterfactualLoss.DISCRIMINATOR), use_tqdm=False)
    assert len(curves) == 2
    assert (curves["L'_E"] > 0).all()
    assert editor.checksums()['discriminator'] == before['discriminator']
    assert editor.checksums()['generator'] != before['generator']


def test_counterfactual_phase_needs_the_explainer(editor_config, episodes):
    with pytest.raises(MissingExplainerError):
        counterfactual_phase(IterativeEditor(editor_config, 0), None, episodes[:4], config(), use_tqdm=False)


def test_zero_counterfactual_iterations_change_nothing(editor_config, frozen_explainer, episodes):
    editor = IterativeEditor(editor_config, 0)
    before = editor.checksums()
    curves = counterfactual_phase(editor, frozen_explainer, episodes[:4], config(cf_iterations=0), use_tqdm=False)
    assert len(curves) == 0
    assert editor.checksums() == before


def test_counterfactual_phase_is_deterministic(editor_config, frozen_explainer, episodes):
    a, b = IterativeEditor(editor_config, 0), IterativeEditor(editor_config, 0)
    counterfactual_phase(a, frozen_explainer, episodes[:8], config(), seed=2, use_tqdm=False)
    counterfactual_phase(b, frozen_explainer, episodes[:8], config(), seed=2, use_tqdm=False)
    assert a.checksums() == b.checksums()


def test_evaluation_is_reproducible(editor_config, episodes):
    editor = IterativeEditor(editor_config, 0)
    a = evaluate_checkpoint(editor, episodes[:6], seed=0, mode='ctc')
    b = evaluate_checkpoint(editor, episodes[:6], seed=0, mode='ctc')
    assert a.to_dict() == b.to_dict()
    assert a.mode == 'ctc' and a.split == 'test'
    assert [r['id'] for r in a.episodes] == [e.id for e in episodes[:6]]


def test_training_without_the_reconstruction_term(editor_config, frozen_explainer, episodes):
    curves = train_editor_ctc(IterativeEditor(editor_config, 0), frozen_explainer, episodes[:4],
                              config(mode=Mode.CTC, recon_weight=0.0), use_tqdm=False)
    assert curves.L_R.isna().all()
    assert curves.L_E.notna().all()


@pytest.fixture(scope='module')
def overfit():
    """A CTC-only editor trained to memorise ten episodes."""
    episodes = generate_episodes(10, seed=3)
    explainer = IterativeExplainer(ExplainerConfig(embedding_dim=16, instruction_dim=16, history_dim=16,
                                                   cell_channels=8, feature_dim=16, memory_dim=32, decoder_dim=32,
                                                   epochs=20, batch_size=2), 0)
    pretrain(explainer, episodes, use_tqdm=False)
    editor = IterativeEditor(EditorConfig(embedding_dim=16, instruction_dim=32, history_dim=32,
                                          image_feature_dim=16, cell_channels=8, generator_hidden=(64,),
                                          discriminator_hidden=16, lr_G_from_L_G=1e-3, lr_G_from_L_E=1e-3), 0)
    curves = train_editor_ctc(editor, explainer, episodes, config(mode=Mode.CTC, epochs=200, batch_size=2),
                              use_tqdm=False)
    return editor, episodes, curves


@pytest.mark.slow
def test_the_editor_memorises_its_training_episodes(overfit):
    editor, episodes, curves = overfit
    assert curves[curves.epoch == 199].L_R.mean() < curves[curves.epoch == 0].L_R.mean()
    assert evaluate_checkpoint(editor, episodes, split='train').f1 >= 0.9


@pytest.mark.slow
def test_the_last_edit_lands_from_the_true_previous_image(overfit):
    editor, episodes, _ = overfit
    batch = make_batch(episodes, editor.vocabulary, editor.config.image_size)
    with no_grad():
        h = editor.initial_history(len(batch))
        for t in range(batch.n_turns):
            h = editor.encode_history(editor.encode_ids(batch.ids[:, t], batch.mask[:, t]), h)
        v = editor.generate(batch.images[:, -2], h).values
    hits = [detect(v[i], e.grid) == e.final_scene for i, e in enumerate(episodes)]
    assert sum(hits) >= 9
