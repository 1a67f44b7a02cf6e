import csv
import json
import subprocess
import sys

import pytest

from erp.cli import main
from erp.config import is_plan, load_plan, load_run_config, parse_config, RunConfig
from erp.errors import InvalidConfig

CORPUS = "CCO\nCC(=O)O\nc1ccccc1\nCCN\nCOC\n"


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "corpus.txt").write_text(CORPUS)
    return tmp_path


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


def run_cfg(workdir, **search):
    return {
        "format_version": 1,
        "policy": {"kind": "ngram", "corpus": "corpus.txt", "mode": "smiles"},
        "critics": [
            {"name": "len", "kind": "length_window", "bounds": [-8, 0], "params": {"target": 4}},
            {"name": "o", "kind": "motif_count", "bounds": [0, 3], "params": {"motif": "O"}},
        ],
        "search": {"rollouts": 32, "horizon": 6, "k": 4, "b": 3, **search},
        "output_dir": "out",
    }


class TestTrain:
    def test_writes_policy(self, workdir, capsys):
        out = workdir / "p.json"
        assert main(["train", "--corpus", str(workdir / "corpus.txt"), "--mode", "smiles", "--out", str(out)]) == 0
        assert out.exists()
        assert "vocab_size" in capsys.readouterr().out

    def test_two_lines(self, workdir, capsys):
        (workdir / "two.txt").write_text("ab\nba\n")
        assert main(["train", "--corpus", str(workdir / "two.txt"), "--out", str(workdir / "t.json")]) == 0
        assert "vocab_size 4" in capsys.readouterr().out

    def test_missing_corpus(self, workdir, capsys):
        assert main(["train", "--corpus", str(workdir / "nope.txt"), "--out", str(workdir / "p.json")]) == 2
        assert "error" in capsys.readouterr().err

    def test_retrain_identical(self, workdir):
        for name in ("a.json", "b.json"):
            main(["train", "--corpus", str(workdir / "corpus.txt"), "--out", str(workdir / name)])
        assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()


class TestGenerate:
    def test_smoke(self, workdir, capsys):
        cfg = write_json(workdir / "run.json", run_cfg(workdir))
        assert main(["generate", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert "best_norm_reward" in out
        body = json.loads((workdir / "out" / "run_ph_uct_seed0.json").read_text())
        assert body["metrics"]["tokens_sampled_total"] == body["tokens_sampled"][-1]

    def test_ignored_e_warns(self, workdir, capsys):
        cfg = write_json(workdir / "run.json", run_cfg(workdir, algorithm="uct", e=3))
        assert main(["generate", "--config", cfg, "--seed", "4"]) == 0
        assert "e is ignored" in capsys.readouterr().err
        assert (workdir / "out" / "run_uct_seed4.json").exists()

    def test_invalid_field(self, workdir, capsys):
        cfg = write_json(workdir / "run.json", run_cfg(workdir, p=1.5))
        assert main(["generate", "--config", cfg]) == 2
        assert "search.p" in capsys.readouterr().err

    def test_unknown_key(self, workdir, capsys):
        data = run_cfg(workdir)
        data["search"]["rollout"] = 3
        assert main(["generate", "--config", write_json(workdir / "r.json", data)]) == 2

    def test_missing_config(self, capsys):
        assert main(["generate"]) == 2

    def test_runtime_failure(self, workdir, capsys):
        data = run_cfg(workdir)
        data["policy"] = {"kind": "remote", "endpoint": "http://127.0.0.1:9", "vocab_corpus": "corpus.txt",
                          "mode": "smiles", "timeout_ms": 200, "retries": 0}
        assert main(["generate", "--config", write_json(workdir / "r.json", data)]) == 1


def plan_cfg(cells, **extra):
    data = {
        "format_version": 1,
        "policy": {"kind": "ngram", "corpus": "corpus.txt", "mode": "smiles"},
        "critics": [{"name": "len", "kind": "length_window", "bounds": [-8, 0], "params": {"target": 4}}],
        "search": {"rollouts": 16, "horizon": 5, "k": 3, "b": 2},
        "cells": cells,
        "output_dir": "bench",
    }
    data.update(extra)
    return data


class TestBench:
    def test_three_algorithms(self, workdir, capsys):
        cells = [{"algorithm": a, "seeds": [0, 1, 2]} for a in ("uct", "p_uct", "ph_uct")]
        cfg = write_json(workdir / "plan.json", plan_cfg(cells))
        assert main(["bench", "--config", cfg, "--jobs", "2"]) == 0
        assert len(list((workdir / "bench").glob("*.json"))) == 9
        rows = list(csv.reader((workdir / "bench" / "results.csv").open()))
        assert len(rows) == 10

    def test_duplicate_seeds(self, workdir, capsys):
        cfg = write_json(workdir / "plan.json", plan_cfg([{"algorithm": "uct", "seeds": [1, 1]}]))
        assert main(["bench", "--config", cfg]) == 2

    def test_empty_plan(self, workdir, capsys):
        cfg = write_json(workdir / "plan.json", plan_cfg([]))
        assert main(["bench", "--config", cfg]) == 2

    def test_bad_cell_override(self, workdir, capsys):
        cfg = write_json(workdir / "plan.json", plan_cfg([{"algorithm": "uct", "seeds": [0], "search": {"k": 0}}]))
        assert main(["bench", "--config", cfg]) == 2
        assert "cell 0" in capsys.readouterr().err


class TestOracle:
    def _cfg(self, workdir, corpus, horizon):
        (workdir / "small.txt").write_text(corpus)
        data = run_cfg(workdir, horizon=horizon)
        data["policy"]["corpus"] = "small.txt"
        return write_json(workdir / "o.json", data)

    def test_small_space(self, workdir, capsys):
        cfg = self._cfg(workdir, "C\n", 4)
        assert main(["oracle", "--config", cfg]) == 0
        rows = list(csv.reader((workdir / "out" / "oracle.csv").open()))
        assert rows[0] == ["sequence", "reward"] and len(rows) - 1 <= 3 ** 4
        first = (workdir / "out" / "oracle.csv").read_bytes()
        main(["oracle", "--config", cfg])
        assert (workdir / "out" / "oracle.csv").read_bytes() == first

    def test_too_large(self, workdir, capsys):
        cfg = self._cfg(workdir, "ABCDEFGHIJKLMNOPQR\n", 10)
        assert main(["oracle", "--config", cfg]) == 2


class TestValidate:
    def test_run_and_plan(self, workdir, capsys):
        assert main(["validate", "--config", write_json(workdir / "r.json", run_cfg(workdir))]) == 0
        cells = [{"algorithm": "beam", "seeds": [0]}]
        assert main(["validate", "--config", write_json(workdir / "p.json", plan_cfg(cells))]) == 0
        assert is_plan(workdir / "p.json") and not is_plan(workdir / "r.json")

    def test_missing_policy_file(self, workdir, capsys):
        data = run_cfg(workdir)
        data["policy"] = {"kind": "file", "path": "absent.json"}
        assert main(["validate", "--config", write_json(workdir / "r.json", data)]) == 2

    def test_bad_critic_params(self, workdir, capsys):
        data = run_cfg(workdir)
        data["critics"][0]["params"] = {}
        assert main(["validate", "--config", write_json(workdir / "r.json", data)]) == 2

    def test_format_version(self, workdir):
        data = run_cfg(workdir)
        data["format_version"] = 2
        with pytest.raises(InvalidConfig):
            parse_config(data, RunConfig, workdir)


def test_relative_paths_resolve_against_config(workdir):
    cfg = load_run_config(write_json(workdir / "r.json", run_cfg(workdir)))
    assert cfg.policy.corpus == workdir / "corpus.txt"
    assert cfg.output_dir == workdir / "out"


def test_plan_cells_inherit_search(workdir):
    plan = load_plan(write_json(workdir / "p.json", plan_cfg([{"algorithm": "uct", "seeds": [3], "search": {"b": 5}}])))
    [(config, seeds)] = plan.cell_configs()
    assert (config.algorithm, config.b, config.k, seeds) == ("uct", 5, 3, [3])


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "erp.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("erp ")
