# sim/scenarios.py
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import UnknownScenarioError


class Scenario(BaseModel):
    """Failure and censoring log-hazard coefficients of one simulation setting."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str
    p: int = Field(..., ge=0)
    beta_F_1: tuple[float, ...]
    beta_F_0: tuple[float, ...]
    beta_C_1: tuple[float, ...]
    beta_C_0: tuple[float, ...]

    @model_validator(mode="after")
    def _check_lengths(self):
        for field in ("beta_F_1", "beta_F_0", "beta_C_1", "beta_C_0"):
            if len(getattr(self, field)) != self.p + 2:
                raise ValueError(f"{field} must have p + 2 = {self.p + 2} entries")
        return self

    def failure_coef(self, arm):
        return np.array(self.beta_F_1 if arm == 1 else self.beta_F_0)

    def censoring_coef(self, arm):
        return np.array(self.beta_C_1 if arm == 1 else self.beta_C_0)

    def with_censoring_intercept(self, value):
        """Copy with both censoring intercepts replaced (lower means less censoring)."""
        return self.model_copy(
            update={
                "name": f"{self.name} (censoring intercept {value:g})",
                "beta_C_1": (float(value),) + self.beta_C_1[1:],
                "beta_C_0": (float(value),) + self.beta_C_0[1:],
            }
        )


_BASE = dict(
    p=5,
    beta_F_1=(0, -3, 2, 2, 1, -1, -1),
    beta_F_0=(0, -1, 1, 1, 1, 1, 1),
    beta_C_1=(-3, 0.2, 0.2, 0.2, 0.2, -0.2, -0.2),
    beta_C_0=(-3, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2),
)

SCENARIOS = {
    1: Scenario(name="base", **_BASE),
    2: Scenario(
        name="small p",
        p=2,
        beta_F_1=(0, -2, 2, 0),
        beta_F_0=(0, -1, 1, 1),
        beta_C_1=(-3, 0.2, 0.2, -0.2),
        beta_C_0=(-3, 0.1, 0.2, 0.2),
    ),
    3: Scenario(
        name="large p",
        p=10,
        beta_F_1=(0, -2) + (2,) * 4 + (-1,) * 4 + (-2,) * 2,
        beta_F_0=(0, -1) + (1,) * 4 + (1,) * 4 + (0,) * 2,
        beta_C_1=(-3, 0.2) + (0.2,) * 4 + (-0.2,) * 3 + (0,) * 3,
        beta_C_0=(-3, 0.1) + (0.2,) * 4 + (0.2,) * 3 + (0,) * 3,
    ),
    4: Scenario(
        name="moderate censoring",
        **{
            **_BASE,
            "beta_C_1": (-2, 0.2, 0.2, 0.2, 0.2, -0.2, -0.2),
            "beta_C_0": (-2, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2),
        },
    ),
}


def get_scenario(scenario_id):
    try:
        return SCENARIOS[int(scenario_id)]
    except (KeyError, TypeError, ValueError):
        raise UnknownScenarioError(
            f"unknown scenario '{scenario_id}', expected one of {sorted(SCENARIOS)}"
        )


class SimConfig(BaseModel):
    """
    Size, design and dynamics parameters of a simulated trial.

    Field notes:
        design: "rct" assigns arms with probability 1/2, "obs" through the
            logistic propensity of elapsed time and covariates.
        trigger: variable whose crossing of 1 starts the next stage,
            "tumor" (rho) or "wellness" (omega).
        wellness_floor: lower bound on omega in the failure hazard ratio.
        censoring: switch the censoring hazard on or off.
        censoring_intercept: optional override of both censoring intercepts.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(300, ge=1)
    n_stages: int = Field(3, ge=1)
    tau: float = Field(10.0, gt=0)
    dt: float = Field(0.01, gt=0)
    design: Literal["rct", "obs"] = "rct"
    seed: int = 0
    scenario: int = 1
    trigger: Literal["tumor", "wellness"] = "tumor"
    wellness_floor: float = Field(0.01, gt=0)
    censoring: bool = True
    censoring_intercept: Optional[float] = None

    def resolve_scenario(self):
        scenario = get_scenario(self.scenario)
        if self.censoring_intercept is not None:
            scenario = scenario.with_censoring_intercept(self.censoring_intercept)
        return scenario


def design_matrix(baselines, Z):
    """g(H) = (1, log(B + 1), Z) row-wise."""
    baselines = np.asarray(baselines, dtype=float).reshape(-1)
    Z = np.asarray(Z, dtype=float).reshape(baselines.size, -1)
    return np.column_stack([np.ones(baselines.size), np.log1p(baselines), Z])


def propensity_coef(design, p):
    """Coefficients of the treatment propensity for the given design."""
    if design == "obs":
        return np.concatenate([[-1.0, 1.0], np.full(p, -0.5)])
    return np.zeros(p + 2)
