"""Vocabulary construction, tokenization and sequence states.

Token ids 0 and 1 are reserved for the start and end markers. A sequence
state always begins with BOS. It is terminal once it ends in EOS or once it
has grown past the horizon without one (a truncation, which scores 0).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from erp.errors import CorpusEmpty, UnknownToken

BOS = "[BOS]"
EOS = "[EOS]"
BOS_ID = 0
EOS_ID = 1

MODES = ("char", "smiles")

# bracket atoms, the two-letter organic-subset halogens, %NN ring labels,
# then any single character
_SMILES_UNIT = re.compile(r"\[[^\[\]]*\]|Cl|Br|%\d\d|.", re.DOTALL)


def split_units(text: str, mode: str) -> list[str]:
    if mode == "char":
        return list(text)
    if mode == "smiles":
        return _SMILES_UNIT.findall(text)
    raise ValueError(f"unknown tokenizer mode {mode!r}; expected one of {MODES}")


@dataclass(frozen=True)
class Token:
    id: int
    text: str


class Vocabulary:
    """Dense id <-> surface form mapping with BOS/EOS at ids 0 and 1."""

    def __init__(self, units: Iterable[str], mode: str = "char"):
        if mode not in MODES:
            raise ValueError(f"unknown tokenizer mode {mode!r}")
        units = list(units)
        if len(set(units)) != len(units):
            raise ValueError("duplicate surface forms in vocabulary")
        if BOS in units or EOS in units:
            raise ValueError("reserved marker used as a unit")
        self.mode = mode
        self.tokens = tuple(Token(i, t) for i, t in enumerate([BOS, EOS, *units]))
        self.lookup = {t.text: t.id for t in self.tokens}

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Vocabulary)
            and self.mode == other.mode
            and self.tokens == other.tokens
        )

    def __hash__(self) -> int:
        return hash((self.mode, self.tokens))

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)}, mode={self.mode!r})"

    @property
    def units(self) -> list[str]:
        return [t.text for t in self.tokens[2:]]

    def text(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise UnknownToken(token_id)
        return self.tokens[token_id].text


def build_vocab(corpus_lines: Sequence[str], mode: str = "char") -> Vocabulary:
    lines = [ln for ln in corpus_lines if ln.strip()]
    if not lines:
        raise CorpusEmpty("corpus has no non-blank lines")
    units: set[str] = set()
    for line in lines:
        units.update(split_units(line, mode))
    return Vocabulary(sorted(units), mode)


def read_corpus(path) -> list[str]:
    """One sequence per line, UTF-8, blank lines dropped."""
    with open(path, encoding="utf-8") as fh:
        return [ln.rstrip("\r\n") for ln in fh if ln.strip()]


@dataclass(frozen=True)
class SequenceState:
    token_ids: tuple[int, ...] = (BOS_ID,)
    terminal: bool = False

    def __post_init__(self):
        ids = self.token_ids
        if not ids or ids[0] != BOS_ID:
            raise ValueError("sequence must start with BOS")
        if BOS_ID in ids[1:]:
            raise ValueError("BOS may only appear at position 0")
        if EOS_ID in ids[:-1]:
            raise ValueError("EOS may only appear as the last token")
        if ids[-1] == EOS_ID and not self.terminal:
            raise ValueError("a sequence ending in EOS is terminal")

    def __len__(self) -> int:
        return len(self.token_ids)

    @property
    def complete(self) -> bool:
        """Ends in EOS, i.e. a member of the complete-hypothesis set."""
        return self.token_ids[-1] == EOS_ID

    @property
    def interior(self) -> tuple[int, ...]:
        ids = self.token_ids[1:]
        return ids[:-1] if ids and ids[-1] == EOS_ID else ids

    def append(self, token_id: int, horizon: int) -> "SequenceState":
        if self.terminal:
            raise ValueError("cannot extend a terminal sequence")
        ids = self.token_ids + (token_id,)
        done = token_id == EOS_ID or len(ids) - 1 > horizon
        return SequenceState(ids, done)


def root_state() -> SequenceState:
    return SequenceState((BOS_ID,), False)


def is_terminal(state: SequenceState, horizon: int) -> bool:
    """True once EOS was emitted or more than `horizon` interior tokens exist.

    A state holding exactly `horizon` interior tokens can still take EOS.
    """
    ids = state.token_ids
    return ids[-1] == EOS_ID or len(ids) - 1 > horizon


def tokenize(text: str, vocab: Vocabulary, mode: str | None = None) -> SequenceState:
    mode = mode or vocab.mode
    ids = [BOS_ID]
    for pos, unit in enumerate(split_units(text, mode)):
        tid = vocab.lookup.get(unit)
        if tid is None or tid in (BOS_ID, EOS_ID):
            raise UnknownToken(pos, unit)
        ids.append(tid)
    ids.append(EOS_ID)
    return SequenceState(tuple(ids), True)


def detokenize(state: SequenceState | Sequence[int], vocab: Vocabulary) -> str:
    ids = state.token_ids if isinstance(state, SequenceState) else tuple(state)
    out = []
    for pos, tid in enumerate(ids):
        if not 0 <= tid < len(vocab):
            raise UnknownToken(pos, tid)
        if tid not in (BOS_ID, EOS_ID):
            out.append(vocab.tokens[tid].text)
    return "".join(out)
