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
"""Controlled instruction grammar.

Instructions follow one of two forms

    add a <color> <shape> at the center
    add a <color> <shape> <relation> the <color> <shape>

where every multi-word relation phrase is a single relation token of the lexicon.
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from numpy import ndarray

from .scene import COLORS, SHAPES, ObjectSpec, ParsedEdit, Relation

LEXICON_FILE = Path(__file__).parent / 'data' / 'lexicon.txt'

PAD, BOS, EOS = '<pad>', '<bos>', '<eos>'
SPECIALS = (PAD, BOS, EOS)

PHRASES = {Relation.CENTER: 'at the center',
           Relation.BEHIND: 'behind',
           Relation.FRONT: 'in front of',
           Relation.LEFT: 'on the left of',
           Relation.RIGHT: 'on the right of'}
RELATIONS = {v: k for k, v in PHRASES.items()}

MAX_TOKENS = 12


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        self.position = position
        super().__init__(f"{message} at token {position}")


class VocabularyError(KeyError):
    pass


class TokenType(str, Enum):
    COLOR = 'color'
    OBJECT = 'object'
    RELATION = 'relation'
    FILLER = 'filler'


@dataclass(frozen=True)
class Token:
    text: str
    type: TokenType


@dataclass(frozen=True)
class Instruction:
    tokens: Tuple[Token, ...]

    @property
    def text(self) -> str:
        return ' '.join(t.text for t in self.tokens)

    @property
    def types(self) -> Tuple[TokenType, ...]:
        return tuple(t.type for t in self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __str__(self):
        return self.text


@lru_cache(maxsize=None)
def read_lexicon(path: Path = LEXICON_FILE) -> Tuple[Token, ...]:
    """Reads the (token, type) lexicon table."""
    df = pd.read_csv(path, sep='\t', comment='#', names=['token', 'type'], dtype=str)
    tokens = tuple(Token(r.token, TokenType(r.type)) for r in df.itertuples())
    texts = [t.text for t in tokens]
    if len(set(texts)) != len(texts):
        raise ValueError(f"Lexicon {path} contains duplicate tokens")
    if not set(COLORS) | set(SHAPES) | set(PHRASES.values()) <= set(texts):
        raise ValueError(f"Lexicon {path} does not cover the scene vocabulary")
    return tokens


def lexicon_by_type(token_type: TokenType) -> Tuple[Token, ...]:
    return tuple(t for t in read_lexicon() if t.type == token_type)


class Vocabulary:
    """Token-to-id mapping with the PAD, BOS, and EOS specials in front of the lexicon tokens."""

    def __init__(self, lexicon: Optional[Sequence[Token]] = None):
        lexicon = read_lexicon() if lexicon is None else lexicon
        self.tokens: Tuple[str, ...] = SPECIALS + tuple(t.text for t in lexicon)
        self.types: Dict[str, TokenType] = {t.text: t.type for t in lexicon}
        self._ids: Dict[str, int] = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    @property
    def pad(self) -> int:
        return self._ids[PAD]

    @property
    def bos(self) -> int:
        return self._ids[BOS]

    @property
    def eos(self) -> int:
        return self._ids[EOS]

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"Token '{token}' is not in the vocabulary") from None

    def token(self, i: int) -> str:
        if not 0 <= i < len(self.tokens):
            raise VocabularyError(f"Token id {i} is outside the vocabulary of size {len(self.tokens)}")
        return self.tokens[i]

    def encode(self, instruction: Instruction, length: int, eos: bool = False) -> ndarray:
        """Token ids padded with PAD to `length`, optionally terminated with EOS."""
        ids = [self.id(t.text) for t in instruction.tokens] + ([self.eos] if eos else [])
        if len(ids) > length:
            raise ValueError(f"Instruction '{instruction}' does not fit into {length} positions")
        return np.array(ids + [self.pad] * (length - len(ids)), dtype=int)

    def decode(self, ids: Sequence[int]) -> List[str]:
        """Token texts up to the first EOS, skipping PAD and BOS."""
        out = []
        for i in ids:
            if i == self.eos:
                break
            if i in (self.pad, self.bos):
                continue
            out.append(self.token(int(i)))
        return out


# Tokenizing and parsing
# ======================
def tokenize(text: str) -> Instruction:
    """Splits text into lexicon tokens, matching the longest multi-word phrase first."""
    lexicon = {t.text: t for t in read_lexicon()}
    longest = max(len(t.split()) for t in lexicon)
    words = text.lower().split()
    tokens, i = [], 0
    while i < len(words):
        for n in range(min(longest, len(words) - i), 0, -1):
            phrase = ' '.join(words[i:i + n])
            if phrase in lexicon:
                tokens.append(lexicon[phrase])
                i += n
                break
        else:
            raise ParseError(f"Unknown word '{words[i]}'", len(tokens))
    if len(tokens) > MAX_TOKENS:
        raise ParseError(f"Instruction longer than {MAX_TOKENS} tokens", MAX_TOKENS)
    return Instruction(tuple(tokens))


def _expect(tokens: Sequence[Token], i: int, kind: TokenType, text: Optional[str] = None) -> Token:
    if i >= len(tokens):
        raise ParseError(f"Instruction ends where a {kind.value} token is expected", i)
    t = tokens[i]
    if t.type != kind or (text is not None and t.text != text):
        expected = f"'{text}'" if text is not None else f"a {kind.value} token"
        raise ParseError(f"Expected {expected}, found '{t.text}'", i)
    return t


def parse(instruction: Union[str, Instruction]) -> ParsedEdit:
    """Parses an instruction into its structured edit.

    Raises
    ------
    ParseError
        For unknown words and grammar violations; `position` holds the zero-based index of the
        offending token.
    """
    tokens = (tokenize(instruction) if isinstance(instruction, str) else instruction).tokens
    _expect(tokens, 0, TokenType.FILLER, 'add')
    _expect(tokens, 1, TokenType.FILLER, 'a')
    target = ObjectSpec(_expect(tokens, 2, TokenType.COLOR).text, _expect(tokens, 3, TokenType.OBJECT).text)
    relation = RELATIONS[_expect(tokens, 4, TokenType.RELATION).text]
    if relation == Relation.CENTER:
        end, anchor = 5, None
    else:
        _expect(tokens, 5, TokenType.FILLER, 'the')
        anchor = ObjectSpec(_expect(tokens, 6, TokenType.COLOR).text, _expect(tokens, 7, TokenType.OBJECT).text)
        end = 8
    if len(tokens) > end:
        raise ParseError(f"Unexpected trailing token '{tokens[end].text}'", end)
    return ParsedEdit(target, relation, anchor)


def synthesize(edit: ParsedEdit) -> Instruction:
    words = f"add a {edit.target} {PHRASES[edit.relation]}"
    if edit.anchor is not None:
        words += f" the {edit.anchor}"
    return tokenize(words)


def all_edits() -> List[ParsedEdit]:
    """The complete finite edit space: 24 targets × (centre + 4 relations × 24 anchors)."""
    specs = [ObjectSpec(c, s) for c in COLORS for s in SHAPES]
    edits = []
    for target in specs:
        edits.append(ParsedEdit(target, Relation.CENTER))
        for relation in (Relation.BEHIND, Relation.FRONT, Relation.LEFT, Relation.RIGHT):
            edits.extend(ParsedEdit(target, relation, anchor) for anchor in specs)
    return edits


# Counterfactual interventions
# ============================
def alternatives(token: Token) -> Tuple[Token, ...]:
    """Same-type replacements of a token; empty for tokens that cannot be intervened on.

    The centre phrase and the fillers are fixed, since swapping them would break the grammar.
    """
    if token.type == TokenType.FILLER or token.text == PHRASES[Relation.CENTER]:
        return ()
    candidates = lexicon_by_type(token.type)
    if token.type == TokenType.RELATION:
        candidates = tuple(t for t in candidates if t.text != PHRASES[Relation.CENTER])
    return tuple(t for t in candidates if t.text != token.text)


def substitute(instruction: Instruction, position: int, text: str) -> Instruction:
    """Replaces the token at `position` with a same-type lexicon token."""
    old = instruction.tokens[position]
    new = next((t for t in alternatives(old) if t.text == text), None)
    if new is None:
        raise ValueError(f"'{text}' is not a valid replacement for '{old.text}'")
    tokens = list(instruction.tokens)
    tokens[position] = new
    return Instruction(tuple(tokens))


def intervene(instruction: Instruction, seed: Union[int, np.random.Generator, np.random.SeedSequence],
              p: float = 0.5) -> Instruction:
    """Creates a counterfactual instruction by type-preserving token replacement.

    Every color, object, and relation token is replaced independently with probability `p` by a
    uniformly drawn different token of the same type. If no token is drawn for replacement, one
    replaceable token is chosen uniformly and replaced, so the result always differs from the input.

    Parameters
    ----------
    instruction: Instruction
        A grammatical instruction.
    seed: int, Generator, or SeedSequence
        Randomness source; the same seed always gives the same counterfactual.
    p: float
        Replacement probability per replaceable token.

    Returns
    -------
        Counterfactual instruction with the same token type sequence.
    """
    rng = np.random.default_rng(seed)
    positions = [i for i, t in enumerate(instruction.tokens) if alternatives(t)]
    if not positions:
        raise ValueError(f"'{instruction}' has no replaceable tokens")
    chosen = [i for i in positions if rng.random() < p]
    if not chosen:
        chosen = [positions[rng.integers(len(positions))]]
    tokens = list(instruction.tokens)
    for i in chosen:
        options = alternatives(tokens[i])
        tokens[i] = options[rng.integers(len(options))]
    return Instruction(tuple(tokens))
