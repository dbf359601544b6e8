"""Run configuration: defaults, overlays and validation.

The effective configuration is built in layers: built-in defaults, then
the config file (YAML or JSON), then command-line flags, then environment
variables ``DUALRANK_<SECTION>__<KEY>`` (``DUALRANK_SEED`` for the master
seed). Later layers win. Every leaf is also reachable as a dotted flag,
e.g. ``--trainer.learning_rate 0.3``.
"""

from __future__ import annotations

import copy
import json
import os
import shlex
from dataclasses import fields
from pathlib import Path
from typing import Any, Iterator, Mapping

import yaml

from .dataset import STRATEGIES
from .gateway import EVAL_SAMPLING, SYNTHESIS_SAMPLING, Endpoint, SamplingConfig
from .grpo import FeatureConfig, TrainerConfig
from .reward import RewardSpec
from .sandbox import GiB, MiB, ResourceLimits

ENV_PREFIX = "DUALRANK_"


class ConfigError(ValueError):
    pass


def _sampling(cfg: SamplingConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "problems": None,
        "pools": None,
        "dataset": None,
        "judgments": None,
        "candidates": None,
        "from_files": None,
        "out": "runs/latest",
    },
    "sandbox": {
        "wall_timeout": 10.0,
        "memory_cap": 1 * GiB,
        "max_output": 16 * MiB,
        "interpreter": ["python3"],
        "workers": 4,
    },
    "dataset": {"k": 4, "strategy": "shuffled", "pool_size": 64},
    "reward": {"kind": "pairwise", "format_penalty": -1.0, "think_open": "<think>", "think_close": "</think>"},
    "trainer": {
        **{f.name: f.default for f in fields(TrainerConfig) if f.name != "seed"},
        "workers": 1,
        "features": {"length": True, "label_signal": False, "label_noise": 0.1},
    },
    "gateway": {
        "base_url": None,
        "model": None,
        "trained_model": None,
        "auth_env": "OPENAI_API_KEY",
        "max_concurrency": 8,
        "max_attempts": 5,
        "backoff_base": 1.0,
        "timeout": 600.0,
        "cache_dir": None,
        "offline": False,
        "thinking_mode": False,
        "synthesis": _sampling(SYNTHESIS_SAMPLING),
        "evaluation": _sampling(EVAL_SAMPLING),
    },
    "eval": {
        "n": 4,
        "repeats": 10,
        "judge": "oracle",
        "generator": None,
        "trained_judge": None,
        "trained_generator": None,
        "workers": 1,
    },
}


def leaves(tree: Mapping, prefix: str = "") -> Iterator[tuple[str, Any]]:
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, Mapping):
            yield from leaves(value, path + ".")
        else:
            yield path, value


def get_path(tree: Mapping, dotted: str) -> Any:
    node: Any = tree
    for part in dotted.split("."):
        node = node[part]
    return node


def set_path(tree: dict, dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value


def coerce(text: str, default: Any) -> Any:
    """Parse a flag or environment string using the default's type."""
    if isinstance(default, bool):
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, list):
        return json.loads(text) if text.lstrip().startswith("[") else shlex.split(text)
    if default is None and text.lower() in ("null", "none", ""):
        return None
    return text


def _merge(base: dict, overlay: Mapping, where: str, prefix: str = "") -> None:
    for key, value in overlay.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"{where}: {path!r} must be a section")
            _merge(base[key], value, where, path + ".")
        else:
            base[key] = value


def load_file(path: str | os.PathLike) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: config must be a mapping")
    return dict(data)


def env_overrides(environ: Mapping[str, str]) -> dict[str, str]:
    known = {path for path, _ in leaves(DEFAULTS)}
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        if dotted in known:
            out[dotted] = value
    return out


def build_config(
    file: str | os.PathLike | None = None,
    flags: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> dict:
    """Layer defaults, file, flags (already typed) and environment, then validate."""
    cfg = copy.deepcopy(DEFAULTS)
    if file is not None:
        _merge(cfg, load_file(file), str(file))
    for dotted, value in (flags or {}).items():
        try:
            get_path(DEFAULTS, dotted)
        except (KeyError, TypeError):
            raise ConfigError(f"unknown flag key {dotted!r}") from None
        set_path(cfg, dotted, value)
    for dotted, text in env_overrides(os.environ if environ is None else environ).items():
        try:
            set_path(cfg, dotted, coerce(text, get_path(DEFAULTS, dotted)))
        except ValueError as exc:
            raise ConfigError(f"environment override {dotted}: {exc}") from exc
    validate(cfg)
    return cfg


# -- typed views ------------------------------------------------------------------


def limits(cfg: Mapping) -> ResourceLimits:
    s = cfg["sandbox"]
    return ResourceLimits(float(s["wall_timeout"]), int(s["memory_cap"]), int(s["max_output"]))


def reward_spec(cfg: Mapping) -> RewardSpec:
    return RewardSpec(cfg["reward"]["kind"], float(cfg["reward"]["format_penalty"]))


def think_tags(cfg: Mapping) -> tuple[tuple[str, str], ...]:
    r = cfg["reward"]
    return ((r["think_open"], r["think_close"]),) if r["think_open"] and r["think_close"] else ()


def trainer_config(cfg: Mapping) -> TrainerConfig:
    t = cfg["trainer"]
    kwargs = {f.name: t[f.name] for f in fields(TrainerConfig) if f.name != "seed"}
    return TrainerConfig(**kwargs, seed=int(cfg["seed"]))


def feature_config(cfg: Mapping) -> FeatureConfig:
    f = cfg["trainer"]["features"]
    return FeatureConfig(bool(f["length"]), bool(f["label_signal"]), float(f["label_noise"]), seed=int(cfg["seed"]))


def sampling(cfg: Mapping, which: str) -> SamplingConfig:
    return SamplingConfig(**cfg["gateway"][which])


def endpoint(cfg: Mapping, model: str | None = None) -> Endpoint:
    g = cfg["gateway"]
    model = model or g["model"]
    if not g["base_url"] or not model:
        raise ConfigError("gateway.base_url and gateway.model are required for live sampling")
    return Endpoint(g["base_url"], model, g["auth_env"], int(g["max_concurrency"]), int(g["max_attempts"]),
                    float(g["backoff_base"]), float(g["timeout"]))


def validate(cfg: Mapping) -> None:
    try:
        int(cfg["seed"])
        limits(cfg)
        if not cfg["sandbox"]["interpreter"] or int(cfg["sandbox"]["workers"]) < 1:
            raise ValueError("sandbox.interpreter must be non-empty and sandbox.workers >= 1")
        d = cfg["dataset"]
        if int(d["k"]) < 2 or d["strategy"] not in STRATEGIES or int(d["pool_size"]) < 1:
            raise ValueError(f"dataset: need k >= 2, strategy in {STRATEGIES}, pool_size >= 1")
        reward_spec(cfg)
        trainer_config(cfg)
        if feature_config(cfg).dim < 1:
            raise ValueError("trainer.features enables no feature")
        sampling(cfg, "synthesis")
        sampling(cfg, "evaluation")
        e = cfg["eval"]
        if int(e["n"]) < 1 or int(e["repeats"]) < 1:
            raise ValueError("eval.n and eval.repeats must be >= 1")
    except (TypeError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
