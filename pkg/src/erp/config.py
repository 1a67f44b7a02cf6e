"""JSON run-config and bench-plan schemas.

Unknown keys are rejected so that a misspelt hyperparameter fails loudly.
Relative paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from erp.errors import InvalidConfig
from erp.policy import NGramPolicy, RemotePolicy, train_ngram
from erp.reward import VALIDATORS, RewardSpec, builtin_critic, remote_critic
from erp.search import ALGORITHMS, EXPANSION_FILTERS, SearchConfig
from erp.vocab import build_vocab, read_corpus, tokenize, Vocabulary

CONFIG_FORMAT_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SearchModel(_Strict):
    algorithm: Literal[ALGORITHMS] = "ph_uct"
    rollouts: int = Field(256, ge=1)
    c_p: float = Field(4.0, ge=0)
    tau: float = Field(1.0, gt=0)
    e: int = Field(2, ge=0)
    p: float = Field(0.9, gt=0, le=1)
    k: int = Field(15, ge=1)
    b: int = Field(8, ge=1)
    horizon: int = Field(64, ge=1)
    rng_seed: int = 0
    expansion_filter: Literal[EXPANSION_FILTERS] = "top_pk"
    entropy_normalized: bool = False
    entropy_top_pk: bool = False

    def to_config(self, **overrides) -> SearchConfig:
        return SearchConfig(**{**self.model_dump(), **overrides})

    def warnings(self) -> list[str]:
        out = []
        if self.algorithm != "ph_uct" and "e" in self.model_fields_set:
            out.append(f"e is ignored by algorithm {self.algorithm}")
        if self.algorithm in ("uct", "beam", "sampling") and "tau" in self.model_fields_set:
            out.append(f"tau is ignored by algorithm {self.algorithm}")
        return out


class NGramSource(_Strict):
    kind: Literal["ngram"]
    corpus: Path
    mode: Literal["char", "smiles"] = "char"
    n: int = Field(3, ge=1)
    k: float = Field(0.1, gt=0)


class FileSource(_Strict):
    kind: Literal["file"]
    path: Path


class RemoteSource(_Strict):
    kind: Literal["remote"]
    endpoint: str
    vocab_corpus: Path
    mode: Literal["char", "smiles"] = "char"
    timeout_ms: float = Field(5000, gt=0)
    retries: int = Field(2, ge=0)


PolicySource = Annotated[Union[NGramSource, FileSource, RemoteSource], Field(discriminator="kind")]


class CriticModel(_Strict):
    name: str
    kind: Literal["length_window", "motif_count", "char_balance", "table_lookup", "remote"]
    direction: Literal["maximize", "minimize"] = "maximize"
    bounds: tuple[float, float]
    params: dict = Field(default_factory=dict)

    @field_validator("bounds")
    @classmethod
    def _ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError("bounds must satisfy min < max")
        return v

    def build(self):
        if self.kind == "remote":
            return remote_critic(name=self.name, direction=self.direction, bounds=self.bounds, **self.params)
        return builtin_critic(self.kind, name=self.name, direction=self.direction, bounds=self.bounds, **self.params)


class _Common(_Strict):
    format_version: Literal[CONFIG_FORMAT_VERSION]
    policy: PolicySource
    critics: list[CriticModel] = Field(min_length=1)
    validator: Literal[tuple(VALIDATORS)] = "smiles"
    output_dir: Path = Path("out")

    @field_validator("critics")
    @classmethod
    def _unique_names(cls, v):
        names = [c.name for c in v]
        if len(set(names)) != len(names):
            raise ValueError("critic names must be unique")
        return v

    def reward_spec(self) -> RewardSpec:
        try:
            return RewardSpec([c.build() for c in self.critics], VALIDATORS[self.validator])
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"critic params: {exc}") from exc

    def load_policy(self):
        src = self.policy
        if src.kind == "ngram":
            lines = read_corpus(src.corpus)
            vocab = build_vocab(lines, src.mode)
            return train_ngram([tokenize(ln, vocab) for ln in lines], vocab, src.n, src.k)
        if src.kind == "file":
            return NGramPolicy.load(src.path)
        vocab = build_vocab(read_corpus(src.vocab_corpus), src.mode)
        return RemotePolicy(vocab, src.endpoint, src.timeout_ms, src.retries)

    def _check_paths(self):
        src = self.policy
        path = {"ngram": "corpus", "file": "path", "remote": "vocab_corpus"}[src.kind]
        if not getattr(src, path).is_file():
            raise InvalidConfig(f"policy.{path}: file not found: {getattr(src, path)}")


class RunConfig(_Common):
    search: SearchModel = Field(default_factory=SearchModel)


class CellModel(_Strict):
    algorithm: Literal[ALGORITHMS]
    seeds: list[int] = Field(min_length=1)
    search: dict = Field(default_factory=dict)

    @field_validator("seeds")
    @classmethod
    def _distinct(cls, v):
        if len(set(v)) != len(v):
            raise ValueError(f"duplicate seeds {v}")
        return v

    @field_validator("search")
    @classmethod
    def _no_algorithm(cls, v):
        if "algorithm" in v or "rng_seed" in v:
            raise ValueError("set algorithm and seeds on the cell itself")
        return v


class PlanConfig(_Common):
    search: SearchModel = Field(default_factory=SearchModel)
    cells: list[CellModel] = Field(min_length=1)
    record_timing: bool = False

    @model_validator(mode="after")
    def _cells_validate(self):
        for i, cell in enumerate(self.cells):
            try:
                SearchModel(**{**self.search.model_dump(), **cell.search, "algorithm": cell.algorithm})
            except ValidationError as exc:
                raise ValueError(f"cell {i}: {_format_errors(exc)}") from None
        return self

    def cell_configs(self) -> list[tuple[SearchConfig, list[int]]]:
        out = []
        for cell in self.cells:
            model = SearchModel(**{**self.search.model_dump(), **cell.search, "algorithm": cell.algorithm})
            out.append((model.to_config(), list(cell.seeds)))
        return out


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def _resolve(model, base: Path):
    src = model.policy
    for attr in ("corpus", "path", "vocab_corpus"):
        val = getattr(src, attr, None)
        if val is not None and not val.is_absolute():
            setattr(src, attr, base / val)
    if not model.output_dir.is_absolute():
        model.output_dir = base / model.output_dir
    return model


def _load(path, model_cls):
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(data, model_cls, path.parent)


def parse_config(data: dict, model_cls, base: Path = Path(".")):
    try:
        model = model_cls.model_validate(data)
    except ValidationError as exc:
        raise InvalidConfig(_format_errors(exc)) from None
    model = _resolve(model, base)
    model._check_paths()
    return model


def load_run_config(path) -> RunConfig:
    return _load(path, RunConfig)


def load_plan(path) -> PlanConfig:
    return _load(path, PlanConfig)


def is_plan(path) -> bool:
    try:
        with open(path, encoding="utf-8") as fh:
            return "cells" in json.load(fh)
    except (OSError, ValueError):
        return False
