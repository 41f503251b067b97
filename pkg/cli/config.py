# cli/config.py
import json
import math
import os
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from curves.criteria import Criterion
from forest.models import ForestConfig
from utils.errors import ConfigError, SurvDTRError


class RunConfig(BaseModel):
    """
    Parameters of a ``reproduce`` run: the factorial grid, replicate counts and
    the forest settings shared by every fitted regime.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    scenarios: list[int] = [1]
    designs: list[Literal["rct", "obs"]] = ["rct"]
    sizes: list[int] = [300]
    n_rep: int = Field(20, ge=1)
    n_eval: int = Field(10000, ge=1)
    criteria: list[str] = ["mean", "composite@5"]
    tau: float = Field(10.0, gt=0)
    dt: float = Field(0.01, gt=0)
    n_stages: int = Field(3, ge=1)
    seed: int = 0
    trigger: Literal["tumor", "wellness"] = "tumor"
    censoring_intercept: Optional[float] = None
    forest: ForestConfig = ForestConfig()

    @model_validator(mode="after")
    def _criteria_parse(self):
        for label in self.criteria:
            try:
                Criterion.parse(label, tau=self.tau)
            except SurvDTRError as exc:
                raise ValueError(exc.message)
            except ValidationError as exc:
                raise ValueError(f"criterion '{label}' with tau={self.tau}: {exc.errors()[0]['msg']}")
        return self

    @field_validator("sizes")
    @classmethod
    def _positive_sizes(cls, value):
        if any(n < 1 for n in value):
            raise ValueError("sample sizes must be positive")
        return value

    def parsed_criteria(self):
        return [Criterion.parse(label, self.tau) for label in self.criteria]

    def forest_for(self, n):
        """
        Forest settings for a training cohort of ``n`` patients.

        Unless ``forest.n_min`` was given explicitly, the minimum terminal node
        size grows with the sample as ceil(n^0.6 / 2).
        """
        if "n_min" in self.forest.model_fields_set:
            return self.forest
        return self.forest.model_copy(update={"n_min": max(1, math.ceil(n**0.6 / 2))})

    def settings(self):
        """Factorial grid in (scenario, design, n) order."""
        return [
            {"scenario": s, "design": d, "n": n}
            for s in self.scenarios
            for d in self.designs
            for n in self.sizes
        ]


def read_config_file(path):
    """Load a YAML or JSON mapping; an empty file gives an empty mapping."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        if os.path.splitext(path)[1].lower() == ".json":
            payload = json.loads(text) if text.strip() else {}
        else:
            payload = yaml.safe_load(text) or {}
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}")
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return payload


def load_run_config(path=None, **overrides):
    """
    Build a RunConfig from an optional file plus command-line overrides.

    Overrides set to None (or empty tuples from repeatable flags) are ignored,
    so flags only win when they are actually given. Forest overrides are
    passed as a ``forest`` mapping and merged field by field.
    """
    payload = read_config_file(path) if path else {}
    forest = dict(payload.get("forest") or {})
    forest.update({k: v for k, v in (overrides.pop("forest", None) or {}).items() if v is not None})
    for key, value in overrides.items():
        if value is None or value == ():
            continue
        payload[key] = list(value) if isinstance(value, tuple) else value
    if forest:
        payload["forest"] = forest
    return RunConfig.model_validate(payload)
