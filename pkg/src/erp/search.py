"""Tree search over token sequences with UCT, P-UCT and PH-UCT selection.

One rollout is selection -> expansion -> beam-search evaluation ->
max-backpropagation. Every finished sequence is scored once and kept in the
reward cache, which is also the search's output.

Visit counting: a node is created with N(s) = 1 and each rollout passing
*through* it (taking one of its edges) adds one, so N(s) = 1 + sum N(s, a)
holds at every node throughout the search.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator, Optional

import numpy as np

from erp.decode import EntropyMemo, beam_search, lookahead_entropy, ranked_ids, sample_topk, top_k, top_pk
from erp.errors import InvalidConfig, TerminalState
from erp.policy import apply_temperature
from erp.vocab import BOS_ID, SequenceState, detokenize, root_state

RESULT_FORMAT_VERSION = 1

TREE_ALGORITHMS = ("uct", "p_uct", "ph_uct")
BASELINES = ("beam", "sampling")
ALGORITHMS = TREE_ALGORITHMS + BASELINES
EXPANSION_FILTERS = ("top_pk", "top_k_only", "full")


@dataclass
class SearchConfig:
    algorithm: str = "ph_uct"
    rollouts: int = 256
    c_p: float = 4.0
    tau: float = 1.0
    e: int = 2
    p: float = 0.9
    k: int = 15
    b: int = 8
    horizon: int = 64
    rng_seed: int = 0
    expansion_filter: str = "top_pk"
    entropy_normalized: bool = False
    entropy_top_pk: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            ("algorithm", self.algorithm in ALGORITHMS, f"one of {ALGORITHMS}"),
            ("rollouts", self.rollouts >= 1, ">= 1"),
            ("c_p", self.c_p >= 0, ">= 0"),
            ("tau", self.tau > 0, "> 0"),
            ("e", self.e >= 0, ">= 0"),
            ("p", 0 < self.p <= 1, "in (0, 1]"),
            ("k", self.k >= 1, ">= 1"),
            ("b", self.b >= 1, ">= 1"),
            ("horizon", self.horizon >= 1, ">= 1"),
            ("expansion_filter", self.expansion_filter in EXPANSION_FILTERS, f"one of {EXPANSION_FILTERS}"),
        ]
        for name, ok, want in checks:
            if not ok:
                raise InvalidConfig(f"{name}={getattr(self, name)!r} must be {want}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# -- scores ---------------------------------------------------------------

def ucb_score(q: float, n_s: int, n_sa: int, c_p: float) -> float:
    if n_sa == 0:
        return math.inf
    return q + c_p * math.sqrt(math.log(n_s) / max(n_sa, 1))


def _prior_bonus(n_s, n_sa, c_p, pi):
    return c_p * pi * math.sqrt(math.log(n_s)) / (1 + n_sa)


def p_ucb_score(q: float, n_s: int, n_sa: int, c_p: float, pi_tau_a: float) -> float:
    return q + _prior_bonus(n_s, n_sa, c_p, pi_tau_a)


def ph_ucb_score(q: float, n_s: int, n_sa: int, c_p: float, pi_tau_a: float, lookahead: float) -> float:
    # lookahead == 1 multiplies exactly, so this reduces to p_ucb_score bit for bit
    return q + _prior_bonus(n_s, n_sa, c_p, pi_tau_a) * lookahead


# -- tree -----------------------------------------------------------------

@dataclass
class EdgeStats:
    N_sa: int = 0
    Q_sa: float = 0.0


@dataclass(eq=False)
class TreeNode:
    state: SequenceState
    N_s: int = 1
    children: dict = field(default_factory=dict)  # action -> (EdgeStats, TreeNode)
    cached_dist: Optional[np.ndarray] = None
    cached_lookahead: dict = field(default_factory=dict)

    def child(self, action: int) -> "TreeNode":
        return self.children[action][1]

    def edge(self, action: int) -> EdgeStats:
        return self.children[action][0]


def iter_nodes(root: TreeNode) -> Iterator[TreeNode]:
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(child for _, child in reversed(list(node.children.values())))


def visit_conservation_violations(root: TreeNode) -> list[TreeNode]:
    return [n for n in iter_nodes(root) if n.N_s != 1 + sum(e.N_sa for e, _ in n.children.values())]


class CountingPolicy:
    """Memoises raw next-token distributions for one search and counts
    the underlying policy queries (the token budget)."""

    def __init__(self, policy):
        self.policy = policy
        self.vocab = policy.vocab
        self.queries = 0
        self._cache: dict[tuple, np.ndarray] = {}

    def next_dist(self, state: SequenceState) -> np.ndarray:
        if state.terminal:
            raise TerminalState("no next-token distribution for a terminal state")
        dist = self._cache.get(state.token_ids)
        if dist is None:
            dist = self.policy.next_dist(state)
            dist.setflags(write=False)
            self._cache[state.token_ids] = dist
            self.queries += 1
        return dist


@dataclass
class CacheEntry:
    state: SequenceState
    reward: float
    rollout: int


class RewardCache:
    """Finished sequence -> reward, insertion ordered, write-once."""

    def __init__(self):
        self._entries: dict[tuple, CacheEntry] = {}
        self.best = 0.0

    def __len__(self):
        return len(self._entries)

    def __contains__(self, state: SequenceState) -> bool:
        return state.token_ids in self._entries

    def __getitem__(self, state: SequenceState) -> float:
        return self._entries[state.token_ids].reward

    def entries(self) -> list[CacheEntry]:
        return list(self._entries.values())

    def add(self, state: SequenceState, reward: float, rollout: int) -> None:
        if state.token_ids in self._entries:
            raise KeyError("cache entries are write-once")
        self._entries[state.token_ids] = CacheEntry(state, float(reward), rollout)
        if len(self._entries) == 1 or reward > self.best:
            self.best = float(reward)

    def ranked(self) -> list[CacheEntry]:
        order = sorted(enumerate(self._entries.values()), key=lambda t: (-t[1].reward, t[0]))
        return [e for _, e in order]


# -- rollout steps --------------------------------------------------------

def _child_score(node: TreeNode, action: int, cfg: SearchConfig, policy, memo) -> float:
    edge, child = node.children[action]
    if cfg.algorithm == "uct":
        return ucb_score(edge.Q_sa, node.N_s, edge.N_sa, cfg.c_p)
    pi = float(node.cached_dist[action])
    if cfg.algorithm == "p_uct":
        return p_ucb_score(edge.Q_sa, node.N_s, edge.N_sa, cfg.c_p, pi)
    look = node.cached_lookahead.get(action)
    if look is None:
        look = node.cached_lookahead[action] = lookahead_entropy(policy, child.state, cfg.e, cfg.tau, memo)
    return ph_ucb_score(edge.Q_sa, node.N_s, edge.N_sa, cfg.c_p, pi, look)


def select(root: TreeNode, cfg: SearchConfig, policy, memo: Optional[EntropyMemo]) -> tuple[list, TreeNode]:
    """Descend by argmax score (ties to the lowest token id) to a childless node."""
    path = []
    node = root
    while node.children:
        best_action, best_score = None, -math.inf
        for action in node.children:
            score = _child_score(node, action, cfg, policy, memo)
            if score > best_score or (score == best_score and (best_action is None or action < best_action)):
                best_action, best_score = action, score
        path.append((node, best_action))
        node = node.child(best_action)
    return path, node


def expansion_actions(dist: np.ndarray, cfg: SearchConfig) -> list[int]:
    if cfg.expansion_filter == "top_pk":
        return top_pk(dist, cfg.p, cfg.k)
    if cfg.expansion_filter == "top_k_only":
        return top_k(dist, cfg.k)
    return [int(t) for t in ranked_ids(dist) if t != BOS_ID]


def expand(node: TreeNode, policy, cfg: SearchConfig) -> None:
    if node.state.terminal:
        raise TerminalState("cannot expand a terminal node")
    if node.children:
        raise ValueError("node is already expanded")
    node.cached_dist = apply_temperature(policy.next_dist(node.state), cfg.tau)
    for action in expansion_actions(node.cached_dist, cfg):
        child = TreeNode(node.state.append(action, cfg.horizon))
        node.children[action] = (EdgeStats(), child)


def evaluate(node: TreeNode, policy, cfg: SearchConfig, reward_fn, cache: RewardCache, rollout: int = 0) -> float:
    if node.state.terminal:
        completions = [node.state]
    else:
        completions = beam_search(policy, node.state, cfg.b, cfg.horizon)
    for state in completions:
        if state not in cache:
            cache.add(state, reward_fn(state), rollout)
    return max(cache[s] for s in completions)


def backpropagate(path: list, r_h: float) -> None:
    for node, action in path:
        edge = node.edge(action)
        if r_h > edge.Q_sa:
            edge.Q_sa = r_h
        edge.N_sa += 1
        node.N_s += 1


# -- driver ---------------------------------------------------------------

@dataclass
class RunResult:
    config: dict
    cache: RewardCache
    vocab: object
    best_so_far: list[float]
    tokens_sampled: list[int]
    root: Optional[TreeNode] = None
    selections: list[tuple[int, ...]] = field(default_factory=list)
    reward_errors: list = field(default_factory=list)
    metrics: Optional[dict] = None

    @property
    def tokens_sampled_total(self) -> int:
        return self.tokens_sampled[-1] if self.tokens_sampled else 0

    def root_visits(self) -> dict[str, int]:
        if self.root is None:
            return {}
        return {self.vocab.text(a): e.N_sa for a, (e, _) in self.root.children.items()}

    def molecules(self) -> list[dict]:
        return [
            {
                "sequence": detokenize(e.state, self.vocab),
                "reward": e.reward,
                "rollout_discovered": e.rollout,
                "complete": e.state.complete,
            }
            for e in self.cache.ranked()
        ]

    def to_dict(self) -> dict:
        return {
            "format_version": RESULT_FORMAT_VERSION,
            "config": self.config,
            "molecules": self.molecules(),
            "best_so_far": self.best_so_far,
            "tokens_sampled": self.tokens_sampled,
            "root_visits": self.root_visits(),
            "reward_errors": self.reward_errors,
            "metrics": self.metrics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"


def run_search(root: Optional[SequenceState], cfg: SearchConfig, policy, reward_fn: Callable[[SequenceState], float]) -> RunResult:
    cfg.validate()
    if cfg.algorithm not in TREE_ALGORITHMS:
        return run_baseline(root, cfg, policy, reward_fn)
    root = root or root_state()
    errors_before = len(getattr(reward_fn, "errors", []))
    view = CountingPolicy(policy)
    memo = EntropyMemo(
        cfg.horizon,
        (cfg.p, cfg.k) if cfg.entropy_top_pk else None,
        cfg.entropy_normalized,
    )
    tree = TreeNode(root)
    cache = RewardCache()
    best, tokens, selections = [], [], []
    for i in range(cfg.rollouts):
        path, leaf = select(tree, cfg, view, memo)
        selections.append(tuple(a for _, a in path))
        if not leaf.state.terminal:
            expand(leaf, view, cfg)
        r_h = evaluate(leaf, view, cfg, reward_fn, cache, rollout=i)
        backpropagate(path, r_h)
        best.append(cache.best)
        tokens.append(view.queries)
    return RunResult(
        config=cfg.to_dict(),
        cache=cache,
        vocab=policy.vocab,
        best_so_far=best,
        tokens_sampled=tokens,
        root=tree,
        selections=selections,
        reward_errors=list(getattr(reward_fn, "errors", []))[errors_before:],
    )


def run_baseline(root: Optional[SequenceState], cfg: SearchConfig, policy, reward_fn) -> RunResult:
    """Plain decoding baselines: one beam search, or `rollouts` top-k samples."""
    root = root or root_state()
    errors_before = len(getattr(reward_fn, "errors", []))
    view = CountingPolicy(policy)
    cache = RewardCache()
    best, tokens = [], []
    if cfg.algorithm == "beam":
        for state in beam_search(view, root, cfg.b, cfg.horizon):
            if state not in cache:
                cache.add(state, reward_fn(state), 0)
        best.append(cache.best)
        tokens.append(view.queries)
    elif cfg.algorithm == "sampling":
        rng = np.random.default_rng(cfg.rng_seed)
        for i in range(cfg.rollouts):
            state = sample_topk(view, root, cfg.k, cfg.horizon, rng)
            if state not in cache:
                cache.add(state, reward_fn(state), i)
            best.append(cache.best)
            tokens.append(view.queries)
    else:
        raise InvalidConfig(f"unknown algorithm {cfg.algorithm!r}")
    return RunResult(
        config=cfg.to_dict(),
        cache=cache,
        vocab=policy.vocab,
        best_so_far=best,
        tokens_sampled=tokens,
        reward_errors=list(getattr(reward_fn, "errors", []))[errors_before:],
    )
