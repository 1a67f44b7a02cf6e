"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import statistics
import sys
from pathlib import Path

from erp import __version__
from erp.bench import Cell, ExperimentPlan, brute_force_oracle, compute_metrics, run_experiment
from erp.config import is_plan, load_plan, load_run_config
from erp.errors import CorpusEmpty, ERPError, FormatVersionError, InvalidConfig, SpaceTooLarge
from erp.io import atomic_write_text
from erp.policy import train_ngram
from erp.search import run_search
from erp.vocab import build_vocab, read_corpus, split_units, tokenize

log = logging.getLogger("erp")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("ERP_LOG_LEVEL", "warn").lower()
    logging.basicConfig(
        level=LOG_LEVELS.get(level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def print_metrics(metrics, out=None):
    out = out or sys.stdout
    print(f"best_norm_reward      {_fmt(metrics.best_norm_reward)}", file=out)
    print(f"avg_valid_norm_reward {_fmt(metrics.avg_valid_norm_reward)}", file=out)
    print(f"avg_top10_norm_reward {_fmt(metrics.avg_top10_norm_reward)}", file=out)
    print(f"unique_valid_count    {metrics.unique_valid_count}", file=out)
    print(f"tokens_sampled_total  {metrics.tokens_sampled_total}", file=out)
    for name, value in metrics.per_critic_means.items():
        print(f"mean[{name}] {_fmt(value)}", file=out)


def cmd_train(args) -> int:
    if args.corpus is None or args.out is None:
        raise UsageError("train needs --corpus and --out")
    try:
        lines = read_corpus(args.corpus)
    except OSError as exc:
        raise UsageError(f"cannot read corpus {args.corpus}: {exc.strerror}") from None
    try:
        vocab = build_vocab(lines, args.mode)
        policy = train_ngram([tokenize(ln, vocab) for ln in lines], vocab, args.n, args.k)
    except (CorpusEmpty, ValueError) as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    policy.save(out)
    lengths = [len(split_units(ln, args.mode)) for ln in lines]
    print(f"vocab_size {len(vocab)}")
    print(f"sequences  {len(lines)}")
    print(f"length min {min(lengths)} mean {_fmt(statistics.fmean(lengths))} max {max(lengths)}")
    print(f"wrote {out}")
    return EXIT_OK


def _out_dir(args, cfg) -> Path:
    out = Path(args.out) if args.out else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> int:
    cfg = load_run_config(_require_config(args))
    for msg in cfg.search.warnings():
        log.warning(msg)
        print(f"warning: {msg}", file=sys.stderr)
    overrides = {"rng_seed": args.seed} if args.seed is not None else {}
    search = cfg.search.to_config(**overrides)
    spec = cfg.reward_spec()
    policy = cfg.load_policy()
    result = run_search(None, search, policy, spec.bind(policy.vocab))
    metrics = compute_metrics(result, spec)
    result.metrics = metrics.to_dict()
    out = _out_dir(args, cfg)
    path = out / f"run_{search.algorithm}_seed{search.rng_seed}.json"
    atomic_write_text(path, result.to_json())
    print_metrics(metrics)
    top = result.molecules()[:10]
    for mol in top:
        print(f"{_fmt(mol['reward'])}  {mol['sequence']}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    plan_cfg = load_plan(_require_config(args))
    policy = plan_cfg.load_policy()
    cells = []
    for config, seeds in plan_cfg.cell_configs():
        if args.seed is not None:
            seeds = [args.seed]
        cells.append(Cell(config, seeds))
    plan = ExperimentPlan(
        cells=cells,
        policy=policy,
        reward_spec=plan_cfg.reward_spec(),
        output_dir=Path(args.out) if args.out else plan_cfg.output_dir,
        record_timing=plan_cfg.record_timing,
        jobs=args.jobs,
    )
    written = run_experiment(plan)
    print(f"wrote {len(written) - 1} run files and {written[-1]}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = load_run_config(_require_config(args))
    policy = cfg.load_policy()
    try:
        result = brute_force_oracle(policy.vocab, cfg.search.horizon, cfg.reward_spec())
    except SpaceTooLarge as exc:
        raise UsageError(str(exc)) from None
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sequence", "reward"])
    for text, reward in result.table:
        writer.writerow([text, repr(reward)])
    out = _out_dir(args, cfg)
    path = out / "oracle.csv"
    atomic_write_text(path, buf.getvalue())
    print(f"optimum {result.best_text!r} reward {_fmt(result.best_reward)}")
    print(f"wrote {len(result.table)} rows to {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    path = _require_config(args)
    if is_plan(path):
        plan = load_plan(path)
        plan.reward_spec()
        print(f"ok: plan with {len(plan.cells)} cell(s)")
    else:
        cfg = load_run_config(path)
        cfg.reward_spec()
        for msg in cfg.search.warnings():
            print(f"warning: {msg}", file=sys.stderr)
        print("ok: run config")
    return EXIT_OK


def _require_config(args):
    if not args.config:
        raise UsageError(f"{args.command} needs --config PATH")
    return args.config


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run config or bench plan (JSON)")
    common.add_argument("--out", help="output directory (train: output file)")
    common.add_argument("--seed", type=int, help="override the config's rng_seed")
    common.add_argument("--jobs", type=int, default=1, help="concurrent bench cells")

    parser = argparse.ArgumentParser(prog="erp", description="Entropy-reinforced tree search decoding")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train and save an n-gram policy")
    p.add_argument("--corpus", help="one sequence per line")
    p.add_argument("--mode", choices=("char", "smiles"), default="char")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--k", type=float, default=0.1)
    p.set_defaults(func=cmd_train)

    for name, func, text in (
        ("generate", cmd_generate, "run one search and write its RunResult"),
        ("bench", cmd_bench, "run a benchmark plan"),
        ("oracle", cmd_oracle, "enumerate every sequence and score it"),
        ("validate", cmd_validate, "check a config or plan without running it"),
    ):
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return args.func(args)
    except (UsageError, InvalidConfig, FormatVersionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ERPError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
