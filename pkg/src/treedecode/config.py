"""Benchmark configuration: JSON schema, validation, and object builders.

A config file is a single JSON object with ``backend``, ``engine``,
``workload``, ``output``, and ``sweep`` sections, all optional; omitted keys
take the defaults below.  Validation errors carry the config path, a line
anchor, and the offending key path.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from .backends import (
    LatencyModel,
    ModelBackend,
    SyntheticOracle,
    SyntheticOracleConfig,
    TinyTransformer,
    TinyTransformerConfig,
)
from .engine import MODES, EngineConfig
from .pruning import PruneConfig
from .scheduler import SchedulerConfig


class ConfigError(Exception):
    """Invalid config file; message carries ``path:line: keypath: problem``."""


_NUM = {"type": "number"}
_INT = {"type": "integer"}
_POS_INT = {"type": "integer", "minimum": 1}
_UNIT = {"type": "number", "minimum": 0.0, "maximum": 1.0}

CONFIG_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "backend": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["tiny", "synthetic"]},
                "seed": _INT,
                "tiny": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "layers": _POS_INT,
                        "hidden": _POS_INT,
                        "heads": _POS_INT,
                        "vocab": _POS_INT,
                        "draft_heads": _POS_INT,
                        "max_positions": _POS_INT,
                    },
                },
                "synthetic": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "vocab": _POS_INT,
                        "draft_heads": _POS_INT,
                        "layers": _POS_INT,
                        "rank_quality": {
                            "type": "array",
                            "minItems": 1,
                            "items": {"type": "array", "minItems": 1, "items": _UNIT},
                        },
                        "early_quality": _UNIT,
                        "early_true_rank": _POS_INT,
                    },
                },
                "latency": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "c0_base": _NUM,
                        "c0_batch": _NUM,
                        "c0_seqlen": _NUM,
                        "c1_base": _NUM,
                        "c1_batch": _NUM,
                        "noise": {"type": "number", "minimum": 0.0},
                        "seed": _INT,
                    },
                },
            },
        },
        "engine": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": list(MODES)},
                "draft_heads": _POS_INT,
                "draft_topk": _POS_INT,
                "prune": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"layer": _POS_INT, "topk": _POS_INT},
                },
                "scheduler": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "resize_batch_delta": _POS_INT,
                        "resize_seqlen_delta": _POS_INT,
                        "replan_period": _POS_INT,
                        "size_candidates": {
                            "type": "array",
                            "minItems": 1,
                            "items": _POS_INT,
                        },
                    },
                },
                "static_tree": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "array", "minItems": 1, "items": _POS_INT},
                },
                "acceptance_alpha": {
                    "oneOf": [{"type": "null"}, {"type": "number", "exclusiveMinimum": 0.0, "maximum": 1.0}],
                },
                "cost_alpha": {"type": "number", "exclusiveMinimum": 0.0, "maximum": 1.0},
                "cost_staleness": {"type": "number", "minimum": 0.0},
                "include_bonus_in_speed": {"type": "boolean"},
                "probe_rounds": _POS_INT,
                "eos_token": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 0}]},
                "clock": {"enum": ["model", "wall"]},
            },
        },
        "workload": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["synthetic", "file"]},
                "num_prompts": _POS_INT,
                "prompt_len": _POS_INT,
                "path": {"oneOf": [{"type": "null"}, {"type": "string"}]},
                "max_tokens": _POS_INT,
                "batch_size": {"oneOf": [{"type": "null"}, _POS_INT]},
                "seed": _INT,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string", "minLength": 1},
                "transcripts": {"type": "boolean"},
                "metrics": {"type": "boolean"},
                "summary": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "batch": {"type": "array", "minItems": 1, "items": _POS_INT},
                "prune_layer": {"type": "array", "minItems": 1, "items": _POS_INT},
                "prune_topk": {"type": "array", "minItems": 1, "items": _POS_INT},
                "mode": {"type": "array", "minItems": 1, "items": {"enum": list(MODES)}},
            },
        },
    },
}

DEFAULT_CONFIG: dict[str, Any] = {
    "backend": {
        "kind": "synthetic",
        "seed": 0,
        "tiny": {},
        "synthetic": {},
        "latency": {},
    },
    "engine": {
        "mode": "propd_full",
        "draft_heads": 4,
        "draft_topk": 3,
        "prune": None,
        "scheduler": {},
        "static_tree": None,
        "acceptance_alpha": 0.05,
        "cost_alpha": 0.2,
        "cost_staleness": 0.01,
        "include_bonus_in_speed": False,
        "probe_rounds": 1,
        "eos_token": None,
        "clock": "model",
    },
    "workload": {
        "kind": "synthetic",
        "num_prompts": 16,
        "prompt_len": 8,
        "path": None,
        "max_tokens": 32,
        "batch_size": None,
        "seed": 1,
    },
    "output": {"dir": "out", "transcripts": True, "metrics": True, "summary": True},
    "sweep": {},
}


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _line_of_key(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return lineno
    return None


def load_config(path: str | Path) -> dict[str, Any]:
    """Parse, schema-validate, and default-fill a config file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc

    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        keypath = ".".join(str(p) for p in err.absolute_path) or "<root>"
        anchor = None
        for part in reversed([p for p in err.absolute_path if isinstance(p, str)]):
            anchor = _line_of_key(text, part)
            if anchor is not None:
                break
        where = f"{path}:{anchor}" if anchor is not None else str(path)
        raise ConfigError(f"{where}: {keypath}: {err.message}")
    return _merge(DEFAULT_CONFIG, raw)


def apply_seed_override(cfg: dict[str, Any], seed: int | None) -> dict[str, Any]:
    """Re-seed backend, latency noise, and synthetic workload in one step."""
    if seed is None:
        return cfg
    out = copy.deepcopy(cfg)
    out["backend"]["seed"] = seed
    out["backend"]["latency"]["seed"] = seed + 1
    out["workload"]["seed"] = seed + 2
    return out


def build_backend(cfg: dict[str, Any]) -> ModelBackend:
    section = cfg["backend"]
    seed = section["seed"]
    try:
        if section["kind"] == "tiny":
            params = dict(section["tiny"])
            return TinyTransformer(TinyTransformerConfig(seed=seed, **params))
        params = dict(section["synthetic"])
        if "rank_quality" in params:
            params["rank_quality"] = tuple(tuple(row) for row in params["rank_quality"])
        return SyntheticOracle(SyntheticOracleConfig(seed=seed, **params))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend.{section['kind']}: {exc}") from exc


def build_latency(cfg: dict[str, Any]) -> LatencyModel | None:
    """The engine clock: a deterministic latency model, or None for wall time."""
    if cfg["engine"]["clock"] == "wall":
        return None
    params = dict(cfg["backend"]["latency"])
    params.setdefault("seed", cfg["backend"]["seed"] + 1)
    try:
        return LatencyModel(**params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"backend.latency: {exc}") from exc


def build_engine_config(cfg: dict[str, Any]) -> EngineConfig:
    section = cfg["engine"]
    try:
        prune = PruneConfig(**section["prune"]) if section["prune"] else None
        scheduler = SchedulerConfig(**{
            k: tuple(v) if k == "size_candidates" else v
            for k, v in section["scheduler"].items()
        })
        static_tree = (
            tuple(tuple(p) for p in section["static_tree"])
            if section["static_tree"] else None
        )
        return EngineConfig(
            mode=section["mode"],
            draft_heads=section["draft_heads"],
            draft_topk=section["draft_topk"],
            prune=prune,
            scheduler=scheduler,
            static_tree=static_tree,
            acceptance_alpha=section["acceptance_alpha"],
            cost_alpha=section["cost_alpha"],
            cost_staleness=section["cost_staleness"],
            include_bonus_in_speed=section["include_bonus_in_speed"],
            probe_rounds=section["probe_rounds"],
            eos_token=section["eos_token"],
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"engine: {exc}") from exc


def build_prompts(cfg: dict[str, Any], vocab_size: int) -> list[list[int]]:
    section = cfg["workload"]
    if section["kind"] == "file":
        if not section["path"]:
            raise ConfigError("workload.path: required when workload.kind is 'file'")
        path = Path(section["path"])
        try:
            data = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError(f"workload.path: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
        if not (
            isinstance(data, list)
            and data
            and all(
                isinstance(p, list) and p and all(
                    isinstance(t, int) and 0 <= t < vocab_size for t in p
                )
                for p in data
            )
        ):
            raise ConfigError(
                f"{path}: prompt file must be a non-empty JSON array of non-empty "
                f"arrays of token ids below {vocab_size}"
            )
        return [list(p) for p in data]
    rng = np.random.default_rng(section["seed"])
    return [
        rng.integers(0, vocab_size, size=section["prompt_len"]).tolist()
        for _ in range(section["num_prompts"])
    ]
