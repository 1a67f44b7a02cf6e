"""Next-token policies.

Every policy exposes ``vocab`` and ``next_dist(state)``. Subclasses supply the
raw distribution through ``_raw_dist``; the base class rejects terminal
states, zeroes the BOS entry and renormalises.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from typing import Mapping, Sequence

import numpy as np

from erp.errors import (
    CorpusEmpty,
    FormatVersionError,
    InvalidTemperature,
    ProtocolError,
    TerminalState,
)
from erp.http import JSONClient
from erp.vocab import BOS_ID, SequenceState, Vocabulary

POLICY_FORMAT_VERSION = 1


def _mask_bos(raw: np.ndarray) -> np.ndarray:
    dist = np.array(raw, dtype=np.float64)
    dist[BOS_ID] = 0.0
    total = dist.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("distribution has no mass outside BOS")
    return dist / total


class Policy:
    vocab: Vocabulary

    def _raw_dist(self, state: SequenceState) -> np.ndarray:
        raise NotImplementedError

    def next_dist(self, state: SequenceState) -> np.ndarray:
        if state.terminal:
            raise TerminalState("no next-token distribution for a terminal state")
        return _mask_bos(self._raw_dist(state))


class UniformPolicy(Policy):
    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def _raw_dist(self, state):
        return np.ones(len(self.vocab))


class TablePolicy(Policy):
    """Explicit prefix -> distribution table; unknown prefixes get `default`.

    Keys are token-id tuples including the leading BOS. Values may be full
    probability vectors or sparse ``{token_id: prob}`` mappings.
    """

    def __init__(self, vocab: Vocabulary, table: Mapping, default: str = "uniform"):
        self.vocab = vocab
        self.table = {}
        for prefix, probs in table.items():
            vec = np.zeros(len(vocab))
            if isinstance(probs, Mapping):
                for tid, p in probs.items():
                    vec[tid] = p
            else:
                vec[:] = probs
            self.table[tuple(prefix)] = vec
        if default not in ("uniform", "error"):
            raise ValueError("default must be 'uniform' or 'error'")
        self.default = default

    def _raw_dist(self, state):
        vec = self.table.get(state.token_ids)
        if vec is None:
            if self.default == "error":
                raise KeyError(f"no table entry for prefix {state.token_ids}")
            return np.ones(len(self.vocab))
        return vec


class NGramPolicy(Policy):
    """Additive-k smoothed n-gram model over token ids.

    ``counts[context][token]`` holds raw counts where the context is the last
    n-1 ids, left-padded with BOS.
    """

    def __init__(self, vocab: Vocabulary, n: int, k: float, counts: Mapping):
        if n < 1:
            raise ValueError("n must be >= 1")
        if not k > 0:
            raise ValueError("k must be > 0")
        self.vocab = vocab
        self.n = n
        self.k = float(k)
        self.counts = {ctx: dict(c) for ctx, c in counts.items()}
        self._totals = {ctx: sum(c.values()) for ctx, c in self.counts.items()}

    def context(self, token_ids: Sequence[int]) -> tuple[int, ...]:
        width = self.n - 1
        if width == 0:
            return ()
        tail = tuple(token_ids[-width:])
        return (BOS_ID,) * (width - len(tail)) + tail

    def prob(self, context: Sequence[int], token_id: int) -> float:
        """Smoothed table probability before BOS masking."""
        ctx = tuple(context)
        count = self.counts.get(ctx, {}).get(token_id, 0)
        total = self._totals.get(ctx, 0)
        return (count + self.k) / (total + self.k * len(self.vocab))

    def _raw_dist(self, state):
        ctx = self.context(state.token_ids)
        V = len(self.vocab)
        vec = np.full(V, self.k)
        for tid, c in self.counts.get(ctx, {}).items():
            vec[tid] += c
        return vec / (self._totals.get(ctx, 0) + self.k * V)

    def to_dict(self) -> dict:
        counts = {
            " ".join(map(str, ctx)): {str(t): c for t, c in sorted(nxt.items())}
            for ctx, nxt in sorted(self.counts.items())
        }
        return {
            "format_version": POLICY_FORMAT_VERSION,
            "n": self.n,
            "k": self.k,
            "mode": self.vocab.mode,
            "vocab": self.vocab.units,
            "counts": counts,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NGramPolicy":
        version = data.get("format_version")
        if version != POLICY_FORMAT_VERSION:
            raise FormatVersionError(
                f"policy file format_version {version!r}, expected {POLICY_FORMAT_VERSION}"
            )
        vocab = Vocabulary(data["vocab"], data.get("mode", "char"))
        counts = {}
        for ctx, nxt in data["counts"].items():
            key = tuple(int(t) for t in ctx.split()) if ctx else ()
            counts[key] = {int(t): int(c) for t, c in nxt.items()}
        return cls(vocab, data["n"], data["k"], counts)

    def save(self, path) -> None:
        from erp.io import atomic_write_text

        atomic_write_text(path, json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "NGramPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def train_ngram(corpus: Sequence[SequenceState], vocab: Vocabulary, n: int = 3, k: float = 0.1) -> NGramPolicy:
    if not corpus:
        raise CorpusEmpty("no training sequences")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not k > 0:
        raise ValueError("k must be > 0")
    counts: dict[tuple, Counter] = defaultdict(Counter)
    probe = NGramPolicy(vocab, n, k, {})
    for state in corpus:
        if not state.complete:
            raise ValueError("training sequences must end with EOS")
        ids = state.token_ids
        for i in range(1, len(ids)):
            counts[probe.context(ids[:i])][ids[i]] += 1
    return NGramPolicy(vocab, n, k, counts)


def apply_temperature(dist: np.ndarray, tau: float) -> np.ndarray:
    """Sharpen (tau < 1) or flatten (tau > 1) a distribution; zeros stay zero."""
    if not tau > 0 or not math.isfinite(tau):
        raise InvalidTemperature(f"temperature must be positive, got {tau}")
    dist = np.asarray(dist, dtype=np.float64)
    if tau == 1.0:
        return dist.copy()
    out = np.zeros_like(dist)
    support = dist > 0
    # log space keeps tiny tau from underflowing every entry
    logits = np.log(dist[support]) / tau
    w = np.exp(logits - logits.max())
    out[support] = w / w.sum()
    return out


class RemotePolicy(Policy):
    """Queries ``POST /v1/next_token`` for log-probabilities."""

    def __init__(self, vocab: Vocabulary, endpoint: str, timeout_ms: float = 5000, retries: int = 2):
        self.vocab = vocab
        self.client = JSONClient(endpoint, timeout_ms, retries)

    def _raw_dist(self, state):
        body = self.client.post(
            "/v1/next_token",
            {"prefix": list(state.token_ids), "vocab_size": len(self.vocab)},
        )
        logprobs = body.get("logprobs")
        if not isinstance(logprobs, list) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in logprobs
        ):
            raise ProtocolError("response lacks a numeric 'logprobs' list")
        if len(logprobs) != len(self.vocab):
            raise ProtocolError(
                f"expected {len(self.vocab)} logprobs, got {len(logprobs)}"
            )
        lp = np.asarray(logprobs, dtype=np.float64)
        if np.isnan(lp).any() or np.isposinf(lp).any():
            raise ProtocolError("logprobs contain NaN or +inf")
        lp[BOS_ID] = -np.inf
        if np.isneginf(lp).all():
            raise ProtocolError("no token carries probability mass")
        w = np.exp(lp - lp.max())
        return w / w.sum()


def remote_next_dist(client: RemotePolicy, state: SequenceState) -> np.ndarray:
    return client.next_dist(state)


def greedy_token(dist: np.ndarray) -> int:
    """Highest-probability id; np.argmax already breaks ties toward the lowest id."""
    return int(np.argmax(dist))
