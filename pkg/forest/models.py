# forest/models.py
import math
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from curves.curves import StepCurve


@dataclass(frozen=True, eq=False)
class ForestSample:
    """One training outcome: covariates h, outcome curve S_i and event flag."""

    covariates: np.ndarray
    curve: StepCurve
    event: int

    def __post_init__(self):
        covariates = np.array(self.covariates, dtype=float).reshape(-1)
        covariates.setflags(write=False)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "event", int(self.event))


class ForestConfig(BaseModel):
    """
    Growing parameters of a generalized random survival forest.

    Field notes:
        n_min: a node with fewer than 2 * n_min (resampled) members is terminal,
            and no child may be smaller than n_min.
        n_min_event: a node with fewer than 2 * n_min_event events is terminal,
            and no child may hold fewer than n_min_event events.
        mtry: candidate variables per split; None means ceil(sqrt(d)).
        alpha: each child keeps at least this fraction of its parent.
        split_prob_uniform: chance that the split variable is drawn uniformly
            from all d variables instead of searching mtry candidates.
        resample: "bootstrap" (with replacement) or "subsample" (without,
            subsample_fraction of the data).
        split_rule: "glr" (generalized log-rank) or "md" (truncated mean difference).
        glr_variance: variance form of the log-rank denominator.
        exhaustive_cuts: use every midpoint between distinct values instead of
            n_cut random thresholds.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    n_tree: int = Field(300, ge=1)
    n_min: int = Field(5, ge=1)
    n_min_event: int = Field(1, ge=1)
    mtry: Optional[int] = Field(None, ge=1)
    n_cut: int = Field(10, ge=1)
    alpha: float = Field(0.1, gt=0, le=0.5)
    split_prob_uniform: float = Field(0.05, ge=0, lt=1)
    resample: Literal["bootstrap", "subsample"] = "bootstrap"
    subsample_fraction: float = Field(0.632, gt=0, le=1)
    split_rule: Literal["glr", "md"] = "glr"
    glr_variance: Literal["cubic", "hypergeometric"] = "cubic"
    exhaustive_cuts: bool = False
    tau: float = Field(10.0, gt=0)
    seed: int = 0

    def resolve_mtry(self, n_features):
        """Effective mtry for ``n_features`` columns, clamped to [1, d]."""
        if n_features < 1:
            return 1
        mtry = self.mtry if self.mtry is not None else math.ceil(math.sqrt(n_features))
        return max(1, min(int(mtry), n_features))
