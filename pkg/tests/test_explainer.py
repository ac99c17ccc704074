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
from dataclasses import replace

import numpy as np
import pytest

from sscr.dataset import DECODER_LENGTH, generate_episodes, make_batch
from sscr.explainer import ExplainerConfig, IterativeExplainer, batch_loss, ctc_loss, pretrain, transcribe
from sscr.gradcheck import check_gradients
from sscr.metrics import explainer_quality
from sscr.parameters import FrozenStoreError, adam_step
from sscr.tensor import Tensor


@pytest.fixture
def explainer(explainer_config):
    return IterativeExplainer(explainer_config, 0)


def test_ctc_loss_of_uniform_logits():
    targets = np.full((1, 8), 5)
    loss = ctc_loss(Tensor(np.zeros((1, 8, 40))), targets, np.ones((1, 8)))
    assert loss.item() == pytest.approx(8 * np.log(40))
    assert loss.item() == pytest.approx(29.51, abs=0.01)


def test_ctc_loss_excludes_padding_and_averages_over_the_batch():
    targets = np.array([[3, 4, 0, 0], [5, 0, 0, 0]])
    mask = (targets != 0).astype(float)
    loss = ctc_loss(Tensor(np.zeros((2, 4, 22))), targets, mask)
    assert loss.item() == pytest.approx(3 * np.log(22) / 2)


def test_ctc_loss_depends_on_the_token_order():
    targets = np.array([[3, 7, 9, 12]])
    swapped = targets[:, [1, 0, 2, 3]]
    mask = np.ones((1, 4))
    for seed in range(20):
        logits = Tensor(np.random.default_rng(seed).normal(size=(1, 4, 22)))
        assert ctc_loss(logits, targets, mask).item() != pytest.approx(ctc_loss(logits, swapped, mask).item())
        assert ctc_loss(logits, targets, mask).item() > 0.0


def test_ctc_loss_length_mismatch():
    with pytest.raises(ValueError):
        ctc_loss(Tensor(np.zeros((1, 9, 22))), np.zeros((1, 8), dtype=int), np.ones((1, 8)))


def test_feature_difference_of_identical_images(explainer, episodes):
    batch = make_batch(episodes[:2], explainer.vocabulary)
    f_d = explainer.feature_difference(batch.images[:, 3], batch.images[:, 3].copy())
    np.testing.assert_array_equal(f_d.values, 0.0)


def test_explain_shapes_and_call_count(explainer, episodes):
    batch = make_batch(episodes[:3], explainer.vocabulary)
    hs = explainer.histories(batch.ids, batch.mask)
    assert len(hs) == 6
    np.testing.assert_array_equal(hs[0].values, 0.0)
    logits = explainer.explain(batch.images[:, 1], batch.images[:, 0], hs[0])
    assert logits.shape == (3, DECODER_LENGTH, len(explainer.vocabulary))
    assert explainer.decode(batch.images[:, 1], batch.images[:, 0], hs[0]).shape == (3, DECODER_LENGTH)
    assert explainer.calls == 2


def test_decoder_gradients(explainer, episodes):
    batch = make_batch(episodes[:2], explainer.vocabulary)
    hs = explainer.histories(batch.ids, batch.mask)
    h = Tensor(hs[1].values)
    inputs = [t for _, t in explainer.stores['decoder'].items()]
    f = lambda: explainer.loss(batch.images[:, 2], batch.images[:, 1], h, batch.targets[:, 1],
                               batch.target_mask[:, 1])
    assert check_gradients(f, inputs, samples=100) < 1e-4


def test_pretraining_freezes_the_explainer(explainer, episodes):
    perplexities = pretrain(explainer, episodes[:8], seed=0, use_tqdm=False)
    assert len(perplexities) == explainer.config.epochs
    assert explainer.frozen
    before = explainer.checksums()
    batch = make_batch(episodes[:4], explainer.vocabulary)
    loss, _, _ = batch_loss(explainer, batch)
    assert not loss.requires_grad
    with pytest.raises(FrozenStoreError):
        adam_step(explainer.stores['decoder'], 1e-3)
    assert explainer.checksums() == before


def test_pretraining_is_deterministic(explainer_config, episodes):
    a, b = IterativeExplainer(explainer_config, [0, 4]), IterativeExplainer(explainer_config, [0, 4])
    assert pretrain(a, episodes[:8], 3, False) == pretrain(b, episodes[:8], 3, False)
    assert a.checksums() == b.checksums()


def test_checkpoint_round_trip(tmp_path, explainer, episodes):
    pretrain(explainer, episodes[:4], use_tqdm=False)
    explainer.save(tmp_path / 'explainer.fits')
    loaded = IterativeExplainer.load(tmp_path / 'explainer.fits')
    assert loaded.frozen
    assert loaded.checksums() == explainer.checksums()
    batch = make_batch(episodes[:2], explainer.vocabulary)
    hs = loaded.histories(batch.ids, batch.mask)
    np.testing.assert_array_equal(loaded.decode(batch.images[:, 2], batch.images[:, 1], hs[1]),
                                  explainer.decode(batch.images[:, 2], batch.images[:, 1], hs[1]))


def test_transcriptions(explainer, episodes):
    hypotheses, references, log_probs = transcribe(explainer, episodes[:3])
    assert len(hypotheses) == len(references) == 15
    assert references[0] == [t.text for t in episodes[0].turns[0].instruction.tokens]
    assert len(log_probs) == sum(len(e.turns[t].instruction) + 1 for e in episodes[:3] for t in range(5))
    assert np.all(log_probs <= 0.0)
    quality = explainer_quality(hypotheses, references, log_probs)
    assert 0.0 <= quality.token_accuracy <= 1.0
    assert quality.ppl > 1.0


@pytest.mark.slow
def test_explainer_learns_the_training_instructions(explainer_config, episodes):
    explainer = IterativeExplainer(replace(explainer_config, embedding_dim=16, memory_dim=32, decoder_dim=32,
                                           epochs=40, batch_size=8), 0)
    perplexities = pretrain(explainer, episodes[:16], use_tqdm=False)
    assert perplexities[-1] < perplexities[0]
    quality = explainer_quality(*transcribe(explainer, episodes[:16]))
    assert quality.type_accuracy['filler'] > 0.9


@pytest.mark.slow
def test_perplexity_falls_over_the_first_epochs(explainer_config):
    explainer = IterativeExplainer(replace(explainer_config, epochs=3, batch_size=8, lr=3e-3), 0)
    perplexities = pretrain(explainer, generate_episodes(32, seed=5), use_tqdm=False)
    assert perplexities[0] > perplexities[1] > perplexities[2]


@pytest.mark.slow
def test_half_the_data_keeps_most_of_the_bleu(explainer_config):
    config = replace(explainer_config, embedding_dim=16, memory_dim=32, decoder_dim=32, epochs=30, batch_size=8)
    train, held_out = generate_episodes(64, seed=5), generate_episodes(16, seed=6)
    bleu = {}
    for n in (64, 32):
        explainer = IterativeExplainer(config, 0)
        pretrain(explainer, train[:n], use_tqdm=False)
        bleu[n] = explainer_quality(*transcribe(explainer, held_out)).bleu
    assert bleu[64] > 0.0
    assert bleu[32] >= 0.9 * bleu[64]


def test_config_validation():
    with pytest.raises(ValueError):
        ExplainerConfig(instruction_dim=9)
    with pytest.raises(ValueError):
        ExplainerConfig(lr=0.0)
