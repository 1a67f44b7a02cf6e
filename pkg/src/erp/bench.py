"""Oracles, metrics and experiment orchestration."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from erp.errors import InvalidConfig, ReportWriteError, SpaceTooLarge
from erp.io import atomic_write_text
from erp.policy import TablePolicy
from erp.reward import RewardSpec, accept_nonempty, builtin_critic
from erp.search import RewardCache, RunResult, SearchConfig, run_search
from erp.vocab import BOS_ID, EOS_ID, SequenceState, Vocabulary, detokenize

log = logging.getLogger(__name__)

ORACLE_GUARD = 10**6

CSV_HEADER = [
    "algorithm", "seed", "rollouts", "e", "c_p", "p", "k", "b",
    "best", "avg_valid", "avg_top10", "unique_valid", "tokens_sampled", "wall_ms",
]

RewardLike = Union[RewardSpec, Callable[[SequenceState], float]]


def as_reward_fn(reward: RewardLike, vocab: Vocabulary) -> Callable[[SequenceState], float]:
    return reward.bind(vocab) if isinstance(reward, RewardSpec) else reward


# -- brute force ----------------------------------------------------------

@dataclass
class OracleResult:
    best_sequence: SequenceState
    best_text: str
    best_reward: float
    table: list[tuple[str, float]]


def enumerate_complete(vocab: Vocabulary, horizon: int):
    """Every [BOS] v [EOS] with at most `horizon` interior tokens, shortest first."""
    units = range(2, len(vocab))
    for length in range(horizon + 1):
        for interior in itertools.product(units, repeat=length):
            yield SequenceState((BOS_ID, *interior, EOS_ID), True)


def brute_force_oracle(vocab: Vocabulary, horizon: int, reward: RewardLike) -> OracleResult:
    if len(vocab) ** horizon > ORACLE_GUARD:
        raise SpaceTooLarge(f"{len(vocab)}^{horizon} candidates exceed the {ORACLE_GUARD} guard")
    fn = as_reward_fn(reward, vocab)
    table = []
    best_state, best_r = None, -math.inf
    for state in enumerate_complete(vocab, horizon):
        r = float(fn(state))
        table.append((detokenize(state, vocab), r))
        if r > best_r or (r == best_r and state.token_ids < best_state.token_ids):
            best_state, best_r = state, r
    return OracleResult(best_state, detokenize(best_state, vocab), best_r, table)


# -- metrics --------------------------------------------------------------

@dataclass
class Metrics:
    best_norm_reward: float = 0.0
    avg_valid_norm_reward: float = 0.0
    avg_top10_norm_reward: float = 0.0
    unique_valid_count: int = 0
    per_critic_means: dict = field(default_factory=dict)
    tokens_sampled_total: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(result: RunResult, reward_spec: RewardSpec) -> Metrics:
    entries = result.cache.entries()
    valid_texts, valid_rewards = [], []
    for e in entries:
        text = detokenize(e.state, result.vocab)
        if e.state.complete and reward_spec.validator(text):
            valid_texts.append(text)
            valid_rewards.append(e.reward)
    m = Metrics(tokens_sampled_total=result.tokens_sampled_total)
    if entries:
        m.best_norm_reward = max(e.reward for e in entries)
    if valid_rewards:
        n = len(valid_rewards)
        m.unique_valid_count = n
        m.avg_valid_norm_reward = math.fsum(valid_rewards) / n
        top = sorted(valid_rewards, reverse=True)[: math.ceil(0.1 * n)]
        m.avg_top10_norm_reward = math.fsum(top) / len(top)
        for critic in reward_spec.critics:
            raws = []
            for text in valid_texts:
                try:
                    raws.append(critic.raw(text))
                except Exception:
                    continue
            m.per_critic_means[critic.name] = math.fsum(raws) / len(raws) if raws else 0.0
    return m


# -- deceptive two-branch environment --------------------------------------

class Fig2Policy(TablePolicy):
    """Two-branch table policy; see `make_fig2_env`."""

    depth: int
    hidden_leaf: str
    left: int
    right: int


def make_fig2_env(high_entropy_depth: int, hidden_reward: float = 1.0, seed: Optional[int] = None,
                  width: int = 4, left_eps: float = 0.05, mediocre: float = 0.4) -> tuple[Fig2Policy, RewardSpec]:
    """Deceptive two-branch environment.

    The root splits 0.5/0.5 between L and R. Below L the policy is nearly
    deterministic (L again with 1 - eps) and every leaf pays
    `mediocre * hidden_reward`. Below R it is nearly uniform over all `width`
    units and only the least likely leaf pays `hidden_reward`. Leaves sit at
    exactly `high_entropy_depth` interior tokens. `seed` jitters the
    probabilities below the root.
    """
    depth = high_entropy_depth
    if depth < 2:
        raise ValueError("depth must be >= 2")
    if width < 2:
        raise ValueError("width must be >= 2")
    rng = np.random.default_rng(seed) if seed is not None else None
    names = ["L", "R"] + [chr(ord("a") + i) for i in range(width - 2)]
    vocab = Vocabulary(names, "char")
    L, R = vocab.lookup["L"], vocab.lookup["R"]
    units = [vocab.lookup[u] for u in names]
    table: dict[tuple, dict] = {(BOS_ID,): {L: 0.5, R: 0.5}}
    for length in range(1, depth + 1):
        for interior in itertools.product(units, repeat=length):
            prefix = (BOS_ID, *interior)
            if length == depth:
                table[prefix] = {EOS_ID: 1.0}
            elif interior[0] == L:
                eps = left_eps if rng is None else rng.uniform(0.5 * left_eps, 1.5 * left_eps)
                row = {u: eps / (width - 1) for u in units}
                row[L] = 1 - eps
                table[prefix] = row
            else:
                w = np.ones(width) if rng is None else rng.uniform(0.8, 1.2, size=width)
                w = w / w.sum()
                table[prefix] = {u: float(x) for u, x in zip(units, w)}

    def leaf_logp(interior):
        lp, prefix = 0.0, (BOS_ID,)
        for t in interior:
            lp += math.log(table[prefix][t])
            prefix = prefix + (t,)
        return lp

    right_leaves = [(R, *rest) for rest in itertools.product(units, repeat=depth - 1)]
    # least likely right leaf; ties go to the lexicographically last ids
    hidden = min(right_leaves, key=lambda ids: (leaf_logp(ids), tuple(-t for t in ids)))
    rewards = {}
    for rest in itertools.product(units, repeat=depth - 1):
        rewards["L" + "".join(vocab.text(t) for t in rest)] = mediocre * hidden_reward
    hidden_text = "".join(vocab.text(t) for t in hidden)
    rewards[hidden_text] = hidden_reward

    policy = Fig2Policy(vocab, table, default="error")
    policy.depth, policy.hidden_leaf, policy.left, policy.right = depth, hidden_text, L, R
    critic = builtin_critic("table_lookup", name="hidden", bounds=(0.0, hidden_reward), table=rewards)
    return policy, RewardSpec([critic], validator=accept_nonempty)


def right_visit_share(result: RunResult) -> float:
    visits = result.root_visits()
    total = visits.get("L", 0) + visits.get("R", 0)
    return visits.get("R", 0) / total if total else 0.0


def fig2_visit_share_report(seeds: Sequence[int], depth: int = 4, cfg: Optional[SearchConfig] = None,
                            e_values: Sequence[int] = (0, 2)) -> list[dict]:
    """Right-branch root visit share per seed for each lookahead depth."""
    cfg = cfg or SearchConfig(algorithm="ph_uct", rollouts=64, c_p=4.0, p=1.0, k=4, b=2, horizon=depth)
    rows = []
    for seed in seeds:
        policy, spec = make_fig2_env(depth, 1.0, seed=seed)
        row = {"seed": seed}
        for e in e_values:
            res = run_search(None, replace(cfg, e=e, horizon=depth, rng_seed=seed), policy, spec.bind(policy.vocab))
            row[f"share_e{e}"] = right_visit_share(res)
            row[f"best_e{e}"] = res.cache.best
        rows.append(row)
    return rows


# -- experiment plans -----------------------------------------------------

@dataclass
class Cell:
    config: SearchConfig
    seeds: list[int]

    @property
    def algorithm(self) -> str:
        return self.config.algorithm


@dataclass
class ExperimentPlan:
    cells: list[Cell]
    policy: object
    reward_spec: RewardSpec
    output_dir: Path
    record_timing: bool = False
    jobs: int = 1

    def validate(self) -> None:
        if not self.cells:
            raise InvalidConfig("plan has no cells")
        for i, cell in enumerate(self.cells):
            if not cell.seeds:
                raise InvalidConfig(f"cell {i} has no seeds")
            if len(set(cell.seeds)) != len(cell.seeds):
                raise InvalidConfig(f"cell {i} repeats a seed: {cell.seeds}")
            cell.config.validate()


@dataclass
class CellRun:
    cell_index: int
    config: SearchConfig
    result: RunResult
    metrics: Metrics
    wall_ms: float

    @property
    def filename(self) -> str:
        return f"cell{self.cell_index:02d}_{self.config.algorithm}_seed{self.config.rng_seed}.json"

    def csv_row(self, record_timing: bool) -> list:
        c, m = self.config, self.metrics
        return [
            c.algorithm, c.rng_seed, c.rollouts, c.e, c.c_p, c.p, c.k, c.b,
            m.best_norm_reward, m.avg_valid_norm_reward, m.avg_top10_norm_reward,
            m.unique_valid_count, m.tokens_sampled_total,
            # left blank unless asked for: wall time would break reproducible rows
            f"{self.wall_ms:.3f}" if record_timing else "",
        ]


def run_cell(index: int, cfg: SearchConfig, policy, reward_spec: RewardSpec) -> CellRun:
    reward_fn = reward_spec.bind(policy.vocab)
    t0 = time.perf_counter()
    result = run_search(None, cfg, policy, reward_fn)
    wall_ms = (time.perf_counter() - t0) * 1000
    metrics = compute_metrics(result, reward_spec)
    result.metrics = metrics.to_dict()
    return CellRun(index, cfg, result, metrics, wall_ms)


def csv_text(runs: Sequence[CellRun], record_timing: bool = False) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for run in runs:
        writer.writerow(run.csv_row(record_timing))
    return buf.getvalue()


def run_experiment(plan: ExperimentPlan) -> list[Path]:
    """Run every (cell, seed), write one RunResult JSON each plus results.csv."""
    plan.validate()
    out = Path(plan.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportWriteError(f"cannot create {out}: {exc}") from exc

    jobs = [
        (i, replace(cell.config, rng_seed=seed))
        for i, cell in enumerate(plan.cells)
        for seed in cell.seeds
    ]
    if plan.jobs > 1:
        with ThreadPoolExecutor(max_workers=plan.jobs) as pool:
            runs = list(pool.map(lambda j: run_cell(j[0], j[1], plan.policy, plan.reward_spec), jobs))
    else:
        runs = [run_cell(i, cfg, plan.policy, plan.reward_spec) for i, cfg in jobs]

    written = []
    try:
        for run in runs:
            path = out / run.filename
            atomic_write_text(path, run.result.to_json())
            written.append(path)
        csv_path = out / "results.csv"
        atomic_write_text(csv_path, csv_text(runs, plan.record_timing))
        written.append(csv_path)
    except OSError as exc:
        raise ReportWriteError(f"writing reports under {out} failed: {exc}") from exc
    log.info("wrote %d run files and %s", len(runs), csv_path)
    return written
