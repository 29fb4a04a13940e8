"""Experiment configuration: strict JSON with defaults.

A config file may set any subset of the known keys; unknown keys at any level
are errors (silent typos would invalidate whole sweeps).  The defaults below
are the desk-scale setup every CLI subcommand starts from.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .models import ModelArch
from .seqmdp import Vocabulary
from .tasks import CopyTask, MarkovChainTask, ReverseTask, Task
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, invalid value, bad shape)."""


DEFAULTS: dict[str, Any] = {
    "task": {
        "kind": "markov_chain",
        "order": 1,
        "transition_seed": 7,
        "eos_prob": 0.02,
        "cond_len": 2,
        "length": 4,  # copy/reverse only
    },
    "vocab_size": 12,
    "horizon": 20,
    "window": 3,
    "teacher": {"kind": "mlp1", "hidden": 32},
    "student": {"kind": "mlp1", "hidden": 8},
    "teacher_fit": {"epochs": 300, "lr": 2.0, "init_scale": 0.1},
    "predistill": {"epochs": 30, "lr": 1.0},
    "rl": {
        "iterations": 400,
        "lr": 0.01,
        "batch_size": 4,
        "grad_accum": 1,
        "optimizer": "sgd",
        "eval_every": 50,
    },
    "clip_range": [-100.0, 100.0],
    "k_list": [1, 2, 4, 8, 16],
    "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9],
    "include_baselines": True,
    "corpus": {"n_sequences": 600, "seed": 1234, "n_val": 32, "n_test": 64},
    "sweep": {
        "samples_per_input": 32,
        "n_inputs": 200,
        "kl_bucket_epochs": [0, 1, 2, 5],
        "iid_mode": False,
        "iid_num_terms": 16,
        "iid_var_sa": 1.0,
        "iid_var_s": 0.5,
        "iid_samples": 100000,
    },
    "out_dir": "runs",
}


def _merge(defaults: dict[str, Any], override: dict[str, Any], path: str) -> dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in override.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            merged[key] = _merge(defaults[key], value, path + key + ".")
        else:
            merged[key] = value
    return merged


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict[str, Any] = field(repr=False)

    # -- derived views -----------------------------------------------------

    @property
    def vocab(self) -> Vocabulary:
        size = int(self.raw["vocab_size"])
        return Vocabulary(size=size, bos_id=0, eos_id=size - 1)

    @property
    def horizon(self) -> int:
        return int(self.raw["horizon"])

    @property
    def window(self) -> int:
        return int(self.raw["window"])

    @property
    def clip_range(self) -> tuple[float, float]:
        lo, hi = self.raw["clip_range"]
        return (float(lo), float(hi))

    @property
    def k_list(self) -> list[int]:
        return [int(k) for k in self.raw["k_list"]]

    @property
    def seeds(self) -> list[int]:
        return [int(s) for s in self.raw["seeds"]]

    @property
    def include_baselines(self) -> bool:
        return bool(self.raw["include_baselines"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["out_dir"])

    def task(self) -> Task:
        spec = self.raw["task"]
        kind = spec["kind"]
        if kind == "markov_chain":
            return MarkovChainTask(
                vocab=self.vocab,
                order=int(spec["order"]),
                transition_seed=int(spec["transition_seed"]),
                eos_prob=float(spec["eos_prob"]),
                cond_len=int(spec["cond_len"]),
            )
        if kind == "copy":
            return CopyTask(vocab=self.vocab, length=int(spec["length"]))
        if kind == "reverse":
            return ReverseTask(vocab=self.vocab, length=int(spec["length"]))
        raise ConfigError(f"unknown task kind {kind!r}")

    def arch(self, which: str) -> ModelArch:
        spec = self.raw[which]
        return ModelArch(kind=spec["kind"], window=self.window, hidden=int(spec["hidden"]))

    def teacher_fit_params(self) -> dict[str, Any]:
        return dict(self.raw["teacher_fit"])

    def predistill_config(self, epochs: int | None = None) -> TrainConfig:
        spec = self.raw["predistill"]
        return TrainConfig(
            stage="predistill",
            lr=float(spec["lr"]),
            epochs=int(spec["epochs"]) if epochs is None else epochs,
            horizon=self.horizon,
            clip_range=self.clip_range,
        )

    def rl_config(self, estimator: str, k: int, seed: int) -> TrainConfig:
        spec = self.raw["rl"]
        return TrainConfig(
            stage="rl",
            lr=float(spec["lr"]),
            batch_size=int(spec["batch_size"]),
            iterations=int(spec["iterations"]),
            horizon=self.horizon,
            grad_accum=int(spec["grad_accum"]),
            seed=seed,
            estimator=estimator,
            k=k,
            clip_range=self.clip_range,
            optimizer=spec["optimizer"],
            eval_every=int(spec["eval_every"]),
        )

    def corpus_params(self) -> dict[str, Any]:
        return dict(self.raw["corpus"])

    def sweep_params(self) -> dict[str, Any]:
        return dict(self.raw["sweep"])

    def validate(self) -> None:
        if int(self.raw["vocab_size"]) < 3:
            raise ConfigError("vocab_size must be >= 3 (BOS, EOS, and content)")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not self.k_list:
            raise ConfigError("k_list must be non-empty")
        if any(k < 1 for k in self.k_list):
            raise ConfigError("k_list entries must be >= 1")
        seeds = self.seeds
        if len(seeds) != len(set(seeds)):
            raise ConfigError("seeds must be distinct")
        lo, hi = self.clip_range
        if not lo < hi:
            raise ConfigError("clip_range must satisfy lo < hi")
        try:
            self.task()
            self.arch("teacher")
            self.arch("student")
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    cfg = ExperimentConfig(_merge(DEFAULTS, data, ""))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return from_dict({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(data)
