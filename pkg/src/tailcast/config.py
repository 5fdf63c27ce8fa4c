"""Experiment configuration: YAML file, JSON-schema check, cross-field validation.

Relative paths resolve against the config file's directory.  Environment
variables may override paths (and only paths):

    TAILCAST_PANEL, TAILCAST_SIDECAR, TAILCAST_CORPUS, TAILCAST_KEEP_LIST, TAILCAST_OUTPUT_DIR
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import pandas as pd
import yaml

from .backtest import MODELS, BacktestConfig
from .evaluation import QUANTILE_GRID

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "validate_config", "schema", "PATH_ENV"]

PATH_KEYS = ("panel", "sidecar", "corpus", "keep_list", "output_dir")
PATH_ENV = {k: f"TAILCAST_{k.upper()}" for k in PATH_KEYS}

DEFAULTS: dict[str, Any] = {
    "backtest": {
        "quantile_grid": list(QUANTILE_GRID),
        "horizons": [0, 1],
        "predictor_modes": ["fred"],
        "models": list(MODELS),
        "n_lags": 12,
        "rearrange": True,
        "realization": "final",
        "estimation_start": None,
    },
    "text": {"v_max": 10000, "aggregate": "max", "cutoff": None},
    "ctm": {"K": 80, "tol": 1e-5, "max_iter": 200, "n_starts": 4},
    "models": {},
    "importance": {"k": 5, "cv_folds": 5},
    "threads": 1,
}


class ConfigError(ValueError):
    """Every problem found in a configuration, reported together."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))


def schema() -> dict:
    return json.loads(resources.files("tailcast.data").joinpath("config.schema.json").read_text(encoding="utf-8"))


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    raw: Mapping[str, Any]

    @property
    def paths(self) -> Mapping[str, Path | None]:
        return {k: (Path(v) if v is not None else None) for k, v in self.raw["paths"].items()}

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["paths"]["output_dir"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def needs_text(self) -> bool:
        return any(m != "fred" for m in self.raw["backtest"]["predictor_modes"])

    @property
    def backtest(self) -> BacktestConfig:
        b = self.raw["backtest"]
        return BacktestConfig(
            targets=tuple(b["targets"]),
            eval_start=b["eval_start"],
            eval_end=b["eval_end"],
            estimation_start=b.get("estimation_start"),
            quantile_grid=tuple(b["quantile_grid"]),
            horizons=tuple(b["horizons"]),
            models=tuple(b["models"]),
            predictor_modes=tuple(b["predictor_modes"]),
            n_lags=int(b["n_lags"]),
            rearrange=bool(b["rearrange"]),
            realization=b["realization"],
            seed=self.seed,
            model_params=self.raw.get("models", {}),
        )

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)

    def with_overrides(self, seed: int | None = None, output_dir=None, threads: int | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(dict(self.raw))
        if seed is not None:
            raw["seed"] = int(seed)
        if output_dir is not None:
            raw["paths"]["output_dir"] = str(Path(output_dir).resolve())
        if threads is not None:
            raw["threads"] = int(threads)
        return ExperimentConfig(raw)


def _month(value, field_name, errors):
    try:
        return pd.Period(str(value), freq="M")
    except (ValueError, TypeError):
        errors.append(f"{field_name}: {value!r} is not a YYYY-MM month")
        return None


def validate_config(raw: Mapping[str, Any], base_dir=".", environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    """Normalize and check a configuration mapping; raises :class:`ConfigError` listing all problems."""
    environ = os.environ if environ is None else environ
    errors = [
        f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
        for e in sorted(jsonschema.Draft7Validator(schema()).iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    ]
    if errors:
        raise ConfigError(errors)
    cfg = _merge(DEFAULTS, raw)
    base = Path(base_dir)

    paths = dict(cfg.get("paths", {}))
    for key, env in PATH_ENV.items():
        if environ.get(env):
            paths[key] = environ[env]
    for key in PATH_KEYS:
        if paths.get(key) is not None:
            p = Path(paths[key])
            paths[key] = str((p if p.is_absolute() else base / p).resolve())
        else:
            paths[key] = None
    cfg["paths"] = paths

    for key in ("panel", "sidecar", "corpus", "keep_list"):
        if paths[key] is not None and not Path(paths[key]).exists():
            errors.append(f"paths/{key}: {paths[key]} does not exist")
    if paths["panel"] is None:
        errors.append("paths/panel: required")
    if paths["output_dir"] is None:
        errors.append("paths/output_dir: required")

    b = cfg["backtest"]
    start = _month(b["eval_start"], "backtest/eval_start", errors)
    end = _month(b["eval_end"], "backtest/eval_end", errors)
    est = _month(b["estimation_start"], "backtest/estimation_start", errors) if b.get("estimation_start") else None
    if start is not None and end is not None and start > end:
        errors.append(f"backtest/eval_start ({start}) is after backtest/eval_end ({end})")
    if est is not None and start is not None and est >= start:
        errors.append(f"backtest/estimation_start ({est}) must precede backtest/eval_start ({start})")
    grid = [float(t) for t in b["quantile_grid"]]
    if grid != sorted(set(grid)):
        errors.append("backtest/quantile_grid must be strictly increasing")
    if "ar1" not in b["models"]:
        errors.append("backtest/models must include the ar1 benchmark")

    needs_text = any(m != "fred" for m in b["predictor_modes"])
    if needs_text and paths["corpus"] is None:
        errors.append(f"paths/corpus: required when backtest/predictor_modes includes {sorted(set(b['predictor_modes']) - {'fred'})}")
    t = cfg["text"]
    if needs_text or paths["corpus"] is not None:
        cutoff = _month(t["cutoff"], "text/cutoff", errors) if t.get("cutoff") else None
        if cutoff is None and not t.get("cutoff"):
            errors.append("text/cutoff: required when a corpus is used")
        elif cutoff is not None and start is not None and cutoff >= start:
            errors.append(f"text/cutoff ({cutoff}) must precede backtest/eval_start ({start})")

    unknown = set(cfg["models"]) - set(MODELS)
    if unknown:
        errors.append(f"models: no such models {sorted(unknown)}")

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(cfg)


def load_config(path, environ: Mapping[str, str] | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError([f"config file {path} not found"]) from None
    except yaml.YAMLError as exc:
        raise ConfigError([f"config file {path} is not valid YAML: {exc}"]) from None
    if not isinstance(raw, Mapping):
        raise ConfigError(["config must be a mapping at the top level"])
    return validate_config(raw, base_dir=path.parent, environ=environ)
