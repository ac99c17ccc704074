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

from sscr.instructions import (ParseError, TokenType, Vocabulary, VocabularyError, all_edits, alternatives,
                               intervene, parse, substitute, synthesize, tokenize)
from sscr.scene import ObjectSpec, ParsedEdit, Relation


def test_vocabulary_layout():
    v = Vocabulary()
    assert len(v) == 22
    assert (v.pad, v.bos, v.eos) == (0, 1, 2)
    assert v.token(v.id('on the left of')) == 'on the left of'
    with pytest.raises(VocabularyError):
        v.id('magenta')
    with pytest.raises(VocabularyError):
        v.token(22)


def test_encode_and_decode():
    v = Vocabulary()
    instruction = tokenize('add a red cube at the center')
    ids = v.encode(instruction, 9, eos=True)
    assert list(ids[5:]) == [v.eos, v.pad, v.pad, v.pad]
    assert v.decode(ids) == ['add', 'a', 'red', 'cube', 'at the center']
    with pytest.raises(ValueError):
        v.encode(instruction, 4)


def test_tokenize_matches_multi_word_phrases():
    instruction = tokenize('Add a red cube on the left of the blue sphere')
    assert len(instruction) == 8
    assert instruction.types == (TokenType.FILLER, TokenType.FILLER, TokenType.COLOR, TokenType.OBJECT,
                                 TokenType.RELATION, TokenType.FILLER, TokenType.COLOR, TokenType.OBJECT)
    assert instruction.text == 'add a red cube on the left of the blue sphere'


def test_parse():
    edit = parse('add a red cube on the left of the blue sphere')
    assert edit == ParsedEdit(ObjectSpec('red', 'cube'), Relation.LEFT, ObjectSpec('blue', 'sphere'))
    assert parse('add a gray cylinder at the center') == ParsedEdit(ObjectSpec('gray', 'cylinder'), Relation.CENTER)


def test_every_edit_survives_synthesis_and_parsing():
    edits = all_edits()
    assert len(edits) == 24 + 24 * 4 * 24
    assert len(set(edits)) == len(edits)
    for edit in edits:
        assert parse(synthesize(edit)) == edit


@pytest.mark.parametrize('text,position', [('add a magenta cube at the center', 2),
                                           ('add a red cube behind blue sphere', 5),
                                           ('add a red cube at the center the', 5),
                                           ('add red cube at the center', 1),
                                           ('add a red cube on the left of the blue', 7),
                                           ('a red cube at the center', 0)])
def test_parse_errors_report_the_token_position(text, position):
    with pytest.raises(ParseError) as e:
        parse(text)
    assert e.value.position == position
    assert f'at token {position}' in str(e.value)


def test_fixed_tokens_have_no_alternatives():
    instruction = tokenize('add a red cube at the center')
    assert [len(alternatives(t)) for t in instruction.tokens] == [0, 0, 7, 2, 0]
    relation = tokenize('behind').tokens[0]
    assert 'at the center' not in [t.text for t in alternatives(relation)]
    assert len(alternatives(relation)) == 3


def test_substitute():
    instruction = tokenize('add a red cube behind the blue sphere')
    assert substitute(instruction, 2, 'green').text == 'add a green cube behind the blue sphere'
    with pytest.raises(ValueError):
        substitute(instruction, 2, 'cube')
    with pytest.raises(ValueError):
        substitute(instruction, 0, 'the')


def test_interventions_preserve_types_and_grammar():
    edits = all_edits()
    rng = np.random.default_rng(0)
    for i in range(10000):
        instruction = synthesize(edits[rng.integers(len(edits))])
        counterfactual = intervene(instruction, i)
        assert counterfactual.types == instruction.types
        assert counterfactual != instruction
        parse(counterfactual)
        for a, b in zip(instruction.tokens, counterfactual.tokens):
            if a.type == TokenType.FILLER:
                assert a == b


def test_interventions_are_seeded():
    instruction = tokenize('add a red cube on the right of the blue sphere')
    assert intervene(instruction, 5) == intervene(instruction, 5)
    assert len({intervene(instruction, s) for s in range(50)}) > 1


def test_centre_instruction_keeps_its_relation():
    instruction = tokenize('add a red cube at the center')
    for s in range(100):
        assert parse(intervene(instruction, s)).relation == Relation.CENTER


def test_intervention_probability_one_replaces_every_free_token():
    instruction = tokenize('add a red cube behind the blue sphere')
    counterfactual = intervene(instruction, 3, p=1.0)
    for i in (2, 3, 4, 6, 7):
        assert counterfactual.tokens[i] != instruction.tokens[i]
