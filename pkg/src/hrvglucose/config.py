"""Run configuration: YAML file, overridden by command-line flags."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .features import AgeNormParams, FeatureOptions
from .model import RidgeHyperparams

DEFAULTS = {
    "data": {
        "clinical": None,
        "signal": "rr",
        "signal_dir": None,
        "annotations_dir": None,
        "features": None,
    },
    "sampling_rate_hz": 250.0,
    "artifact_window": 51,
    "age_norm": {"reference_age": 65.0, "epsilon": 0.1},
    "features": {"age_normalization": True, "psqi_age": True, "psqi_column": "psqi"},
    "selection": {"p_threshold": 0.2, "k": 15},
    "ridge": {"alpha_1": 1e-6, "alpha_2": 1e-6, "lambda_1": 1e-6, "lambda_2": 1e-6,
              "max_iter": 300, "tol": 1e-3},
    "cv": {"k_folds": 5, "seed": 42, "selection_mode": "global"},
    "output": "out",
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in base:
            raise ConfigError(f"unknown config key: {path}{key}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise ConfigError("config root must be a mapping")
        raw = _merge(DEFAULTS, loaded)
        raw = _merge(raw, overrides or {})
        cfg = cls(raw, path.resolve().parent)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, d), Path(base_dir).resolve())
        cfg.validate()
        return cfg

    def path(self, value) -> Path | None:
        if value in (None, ""):
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    # typed views --------------------------------------------------------
    @property
    def seed(self) -> int:
        return int(self.raw["cv"]["seed"])

    @property
    def k_folds(self) -> int:
        return int(self.raw["cv"]["k_folds"])

    @property
    def selection_mode(self) -> str:
        return str(self.raw["cv"]["selection_mode"]).replace("-", "_")

    @property
    def fs(self) -> float:
        return float(self.raw["sampling_rate_hz"])

    @property
    def artifact_window(self) -> int:
        return int(self.raw["artifact_window"])

    @property
    def p_threshold(self) -> float:
        return float(self.raw["selection"]["p_threshold"])

    @property
    def k_features(self) -> int:
        return int(self.raw["selection"]["k"])

    @property
    def age_norm(self) -> AgeNormParams:
        a = self.raw["age_norm"]
        return AgeNormParams(float(a["reference_age"]), float(a["epsilon"]))

    @property
    def feature_options(self) -> FeatureOptions:
        f = self.raw["features"]
        return FeatureOptions(age_normalization=bool(f["age_normalization"]), psqi_age=bool(f["psqi_age"]),
                              psqi_column=str(f["psqi_column"]))

    @property
    def ridge(self) -> RidgeHyperparams:
        r = self.raw["ridge"]
        return RidgeHyperparams(float(r["alpha_1"]), float(r["alpha_2"]), float(r["lambda_1"]),
                                float(r["lambda_2"]), int(r["max_iter"]), float(r["tol"]))

    @property
    def output_dir(self) -> Path:
        return self.path(self.raw["output"])

    def validate(self) -> None:
        try:
            self.age_norm, self.ridge, self.feature_options  # noqa: B018
            if self.selection_mode not in ("global", "per_fold"):
                raise ConfigError(f"unknown selection_mode {self.selection_mode!r}")
            if self.raw["data"]["signal"] not in ("rr", "ecg"):
                raise ConfigError("data.signal must be 'rr' or 'ecg'")
            if self.fs <= 0:
                raise ConfigError("sampling_rate_hz must be positive")
            if self.artifact_window < 3:
                raise ConfigError("artifact_window must be >= 3")
            if self.k_folds < 2:
                raise ConfigError("cv.k_folds must be >= 2")
            self.seed  # noqa: B018
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def resolved(self) -> dict:
        """Fully resolved configuration with typed values, for provenance records."""
        out = copy.deepcopy(self.raw)
        out["cv"]["selection_mode"] = self.selection_mode
        out["cv"]["seed"] = self.seed
        out["sampling_rate_hz"] = self.fs
        out["ridge"] = {k: (int(v) if k == "max_iter" else float(v)) for k, v in out["ridge"].items()}
        out["age_norm"] = {k: float(v) for k, v in out["age_norm"].items()}
        out["selection"] = {"p_threshold": self.p_threshold, "k": self.k_features}
        return out
