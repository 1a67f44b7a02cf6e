"""Decoding primitives: Top-PK filtering, beam search, top-k sampling,
Shannon entropy and the greedy e-step lookahead entropy.

All ties break toward the lowest token id.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from erp.errors import InvalidFilter, TerminalState
from erp.policy import apply_temperature, greedy_token
from erp.vocab import EOS_ID, SequenceState

# slack on the cumulative-mass test so a distribution summing to 1 - 1e-16
# still reaches p = 1
CUMSUM_TOL = 1e-12


def ranked_ids(dist: np.ndarray) -> np.ndarray:
    """Token ids by descending probability, equal probabilities by id."""
    dist = np.asarray(dist)
    return np.lexsort((np.arange(len(dist)), -dist))


def top_pk(dist: np.ndarray, p: float, k: int) -> list[int]:
    if not (0 < p <= 1):
        raise InvalidFilter(f"p must lie in (0, 1], got {p}")
    if k < 1:
        raise InvalidFilter(f"k must be >= 1, got {k}")
    dist = np.asarray(dist, dtype=np.float64)
    order = ranked_ids(dist)
    cum = np.cumsum(dist[order])
    reached = np.nonzero(cum >= p - CUMSUM_TOL)[0]
    if len(reached):
        j = int(reached[0]) + 1
    else:
        j = int(np.count_nonzero(dist > 0))
    return [int(t) for t in order[: min(j, k)]]


def top_k(dist: np.ndarray, k: int) -> list[int]:
    if k < 1:
        raise InvalidFilter(f"k must be >= 1, got {k}")
    return [int(t) for t in ranked_ids(dist)[:k]]


def entropy(dist: np.ndarray) -> float:
    """Shannon entropy in nats, 0 ln 0 taken as 0."""
    dist = np.asarray(dist, dtype=np.float64)
    nz = dist[dist > 0]
    h = -float(np.sum(nz * np.log(nz)))
    return h if h > 0 else 0.0


def beam_search(policy, prefix: SequenceState, b: int, horizon: int) -> list[SequenceState]:
    """Beam search on cumulative log-probability.

    Finished hypotheses stay in the beam and keep competing on score, so
    b = 1 reproduces greedy decoding. Truncations (the horizon was hit
    without EOS) are ranked like any other hypothesis. Returns the surviving
    hypotheses, best first.
    """
    if prefix.terminal:
        raise TerminalState("beam search needs a non-terminal prefix")
    if b < 1:
        raise ValueError("beam width must be >= 1")
    beam: list[tuple[float, SequenceState]] = [(0.0, prefix)]
    while any(not s.terminal for _, s in beam):
        candidates = [(sc, s) for sc, s in beam if s.terminal]
        for score, state in beam:
            if state.terminal:
                continue
            dist = policy.next_dist(state)
            for tid in np.nonzero(dist > 0)[0]:
                candidates.append((score + math.log(dist[tid]), state.append(int(tid), horizon)))
        candidates.sort(key=lambda c: (-c[0], c[1].token_ids))
        beam = candidates[:b]
    return [s for _, s in beam]


def beam_search_scored(policy, prefix, b, horizon) -> list[tuple[float, SequenceState]]:
    """Like beam_search but returns (log-likelihood, state) pairs."""
    out = []
    for state in beam_search(policy, prefix, b, horizon):
        out.append((sequence_logprob(policy, state, start=len(prefix)), state))
    return out


def sequence_logprob(policy, state: SequenceState, start: int = 1) -> float:
    total = 0.0
    for i in range(start, len(state.token_ids)):
        prev = SequenceState(state.token_ids[:i], False)
        p = policy.next_dist(prev)[state.token_ids[i]]
        if p <= 0:
            return -math.inf
        total += math.log(p)
    return total


def sample_topk(policy, prefix: SequenceState, k: int, horizon: int, rng_seed) -> SequenceState:
    if k < 1:
        raise InvalidFilter(f"k must be >= 1, got {k}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    state = prefix
    while not state.terminal:
        dist = policy.next_dist(state)
        support = [t for t in top_k(dist, k) if dist[t] > 0]
        w = dist[support]
        tid = support[0] if len(support) == 1 else int(rng.choice(support, p=w / w.sum()))
        state = state.append(tid, horizon)
    return state


class EntropyMemo:
    """Per-search cache of (entropy, greedy successor) for pi_tau at a state.

    `top_pk_filter=(p, k)` restricts each entropy to the renormalised Top-PK
    set; `normalized` divides by ln V so values fall in [0, 1].
    """

    def __init__(self, horizon: int, top_pk_filter: Optional[tuple[float, int]] = None, normalized: bool = False):
        self.horizon = horizon
        self.top_pk_filter = top_pk_filter
        self.normalized = normalized
        self._table: dict[tuple, tuple[float, int]] = {}

    def __len__(self) -> int:
        return len(self._table)

    def entry(self, policy, state: SequenceState, tau: float) -> tuple[float, int]:
        key = (state.token_ids, tau)
        hit = self._table.get(key)
        if hit is None:
            dist = apply_temperature(policy.next_dist(state), tau)
            hit = self._table[key] = (self._entropy(dist), greedy_token(dist))
        return hit

    def _entropy(self, dist: np.ndarray) -> float:
        if self.top_pk_filter is not None:
            keep = top_pk(dist, *self.top_pk_filter)
            sub = np.zeros_like(dist)
            sub[keep] = dist[keep]
            dist = sub / sub.sum()
        h = entropy(dist)
        if self.normalized and len(dist) > 1:
            h /= math.log(len(dist))
        return h


def lookahead_entropy(policy, child_state: SequenceState, e: int, tau: float, memo: EntropyMemo) -> float:
    """Mean entropy of pi_tau along a greedy walk of up to `e` states from the child.

    e = 0 gives the neutral factor 1; a terminal child gives 0.
    """
    if e < 0:
        raise ValueError("e must be >= 0")
    if e == 0:
        return 1.0
    if child_state.terminal:
        return 0.0
    recorded = []
    state = child_state
    for _ in range(e):
        h, nxt = memo.entry(policy, state, tau)
        recorded.append(h)
        state = state.append(nxt, memo.horizon)
        if state.terminal:
            break
    return math.fsum(recorded) / len(recorded)


def greedy_decode(policy, prefix: SequenceState, horizon: int) -> SequenceState:
    state = prefix
    while not state.terminal:
        state = state.append(greedy_token(policy.next_dist(state)), horizon)
    return state
