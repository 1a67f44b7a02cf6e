"""Multi-critic normalised reward.

Each critic maps a finished sequence string to a raw score; scores are
min-max normalised onto [0, 1] (flipped for critics to minimise) and summed.
Sequences the validator rejects, including truncations that never emitted
EOS, score 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from erp.errors import InvalidCritic, ProtocolError
from erp.http import JSONClient
from erp.vocab import SequenceState, Vocabulary, detokenize

log = logging.getLogger(__name__)

DIRECTIONS = ("maximize", "minimize")
CRITIC_KINDS = ("length_window", "motif_count", "char_balance", "table_lookup")


@dataclass(frozen=True)
class CriticSpec:
    name: str
    direction: str
    bound_min: float
    bound_max: float
    evaluator: Callable[[str], float] = field(compare=False, repr=False)
    kind: str = "custom"
    params: Mapping = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise InvalidCritic(f"{self.name}: direction must be one of {DIRECTIONS}")
        if not self.bound_min < self.bound_max:
            raise InvalidCritic(f"{self.name}: bound_min must be < bound_max")

    def raw(self, text: str) -> float:
        return float(self.evaluator(text))


def normalize(raw: float, spec: CriticSpec) -> float:
    span = spec.bound_max - spec.bound_min
    if spec.direction == "maximize":
        v = (raw - spec.bound_min) / span
    else:
        v = (spec.bound_max - raw) / span
    return min(1.0, max(0.0, v))


def validity_check(smiles: str) -> bool:
    """Well-formedness of a SMILES-like string (not chemical validity).

    Parentheses must balance without going negative, ring labels (digits or
    %NN outside brackets) must pair up, brackets must close and be non-empty.
    """
    if not smiles:
        return False
    depth = 0
    open_rings: set[str] = set()
    i, n = 0, len(smiles)
    while i < n:
        ch = smiles[i]
        if ch == "[":
            close = smiles.find("]", i + 1)
            if close == -1 or close == i + 1 or "[" in smiles[i + 1 : close]:
                return False
            i = close + 1
            continue
        if ch == "]":
            return False
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                return False
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                label = smiles[i + 1 : i + 3]
                if len(label) != 2 or not label.isdigit():
                    return False
                i += 2
            else:
                label = ch
            open_rings ^= {label}
        i += 1
    return depth == 0 and not open_rings


def accept_nonempty(text: str) -> bool:
    return bool(text)


def accept_all(text: str) -> bool:
    return True


VALIDATORS = {"smiles": validity_check, "nonempty": accept_nonempty, "any": accept_all}


@dataclass
class RewardSpec:
    critics: Sequence[CriticSpec]
    validator: Callable[[str], bool] = validity_check

    def __post_init__(self):
        self.critics = tuple(self.critics)
        if not self.critics:
            raise InvalidCritic("a reward needs at least one critic")
        names = [c.name for c in self.critics]
        if len(set(names)) != len(names):
            raise InvalidCritic("critic names must be unique")

    def bind(self, vocab: Vocabulary) -> "BoundReward":
        return BoundReward(self, vocab)


def score_text(text: str, spec: RewardSpec, errors: Optional[list] = None) -> float:
    """Sum of normalised critic scores for an already-validated string."""
    total = 0.0
    for critic in spec.critics:
        try:
            raw = critic.raw(text)
            if math.isnan(raw):
                raise ValueError("critic returned NaN")
        except Exception as exc:
            log.warning("critic %s failed on %r: %s", critic.name, text, exc)
            if errors is not None:
                errors.append({"sequence": text, "critic": critic.name, "error": str(exc)})
            continue
        total += normalize(raw, critic)
    return total


def is_valid(state: SequenceState, text: str, spec: RewardSpec) -> bool:
    return state.complete and bool(spec.validator(text))


def combined_reward(sequence: SequenceState, spec: RewardSpec, vocab: Vocabulary, errors: Optional[list] = None) -> float:
    if not sequence.terminal:
        raise ValueError("only terminal sequences are scored")
    text = detokenize(sequence, vocab)
    if not is_valid(sequence, text, spec):
        return 0.0
    return score_text(text, spec, errors)


class BoundReward:
    """`combined_reward` closed over a vocabulary; collects critic failures."""

    def __init__(self, spec: RewardSpec, vocab: Vocabulary):
        self.spec = spec
        self.vocab = vocab
        self.errors: list[dict] = []

    def __call__(self, state: SequenceState) -> float:
        return combined_reward(state, self.spec, self.vocab, self.errors)


def _overlapping_count(text: str, motif: str) -> int:
    count, start = 0, text.find(motif)
    while start != -1:
        count += 1
        start = text.find(motif, start + 1)
    return count


def builtin_critic(
    kind: str,
    name: Optional[str] = None,
    direction: str = "maximize",
    bounds: tuple[float, float] = (0.0, 1.0),
    **params,
) -> CriticSpec:
    lo, hi = bounds
    if kind == "length_window":
        target = int(params["target"])
        fn = lambda s: -abs(len(s) - target)  # noqa: E731
    elif kind == "motif_count":
        motif = params["motif"]
        if not motif:
            raise InvalidCritic("motif must be non-empty")
        fn = lambda s: _overlapping_count(s, motif)  # noqa: E731
    elif kind == "char_balance":
        char = params["char"]
        if len(char) != 1:
            raise InvalidCritic("char_balance needs a single character")
        fn = lambda s: s.count(char) / len(s) if s else 0.0  # noqa: E731
    elif kind == "table_lookup":
        table = {str(k): float(v) for k, v in params["table"].items()}
        default = float(params.get("default", lo))
        fn = lambda s: table.get(s, default)  # noqa: E731
    else:
        raise InvalidCritic(f"unknown critic kind {kind!r}; expected one of {CRITIC_KINDS}")
    return CriticSpec(name or kind, direction, lo, hi, fn, kind, dict(params))


def remote_critic(
    endpoint: str,
    timeout_ms: float = 5000,
    retries: int = 2,
    name: str = "remote",
    direction: str = "minimize",
    bounds: tuple[float, float] = (-14.0, -6.0),
) -> CriticSpec:
    """Critic backed by ``POST /v1/score``; defaults mirror a docking score."""
    client = JSONClient(endpoint, timeout_ms, retries)

    def score(text: str) -> float:
        body = client.post("/v1/score", {"sequence": text})
        value = body.get("score")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ProtocolError("response lacks a numeric 'score'")
        return float(value)

    return CriticSpec(name, direction, bounds[0], bounds[1], score, "remote",
                      {"endpoint": endpoint, "timeout_ms": timeout_ms, "retries": retries})
