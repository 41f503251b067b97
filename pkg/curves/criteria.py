# curves/criteria.py
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import CurveError

MEAN = "mean"
SURVPROB = "survprob"
COMPOSITE = "composite"


class Criterion(BaseModel):
    """
    Optimisation target evaluated on a survival curve.

    ``mean`` is the truncated mean survival time up to ``tau``; ``survprob``
    is S(t); ``composite`` orders (S(t), truncated mean) lexicographically.
    Differences within ``tie_epsilon`` count as ties.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["mean", "survprob", "composite"] = MEAN
    tau: float = Field(10.0, gt=0)
    t: Optional[float] = None
    tie_epsilon: float = Field(1e-10, ge=0)

    @model_validator(mode="after")
    def _check_time(self):
        if self.kind == MEAN:
            return self
        if self.t is None:
            raise ValueError(f"criterion '{self.kind}' needs an evaluation time t")
        if not 0 < self.t <= self.tau:
            raise ValueError(f"t must lie in (0, tau]; got t={self.t}, tau={self.tau}")
        return self

    @classmethod
    def parse(cls, text, tau, tie_epsilon=1e-10):
        """
        Parse the CLI form ``mean``, ``survprob@5`` or ``composite@5``.

        Args:
            text (str): Criterion string
            tau (float): Horizon
            tie_epsilon (float): Comparison tolerance

        Returns:
            Criterion: Validated criterion

        Raises:
            CurveError: On an unrecognised kind or a malformed time
        """
        kind, _, when = text.strip().lower().partition("@")
        if kind not in (MEAN, SURVPROB, COMPOSITE):
            raise CurveError(f"unknown criterion '{text}'")
        t = None
        if when:
            try:
                t = float(when)
            except ValueError:
                raise CurveError(f"bad evaluation time in criterion '{text}'")
        return cls(kind=kind, tau=tau, t=t, tie_epsilon=tie_epsilon)

    @property
    def label(self):
        if self.kind == MEAN:
            return MEAN
        return f"{self.kind}@{self.t:g}"

    @property
    def is_composite(self):
        return self.kind == COMPOSITE


def stage_value(curve, criterion, baseline=0.0):
    """
    Criterion value of a remaining-life curve for a patient at elapsed time B.

    The truncated mean counts the elapsed time plus the remaining-life area up to
    the horizon; the survival probability reads the remaining-life curve at
    ``t - B`` (1 when ``t < B``). Composite returns the pair
    (survival probability, truncated mean).

    Args:
        curve (StepCurve): Remaining-life survival curve
        criterion (Criterion): Target
        baseline (float): Elapsed time B at the start of the stage

    Returns:
        float or tuple[float, float]: The stage value
    """
    baseline = float(baseline)
    mean = None
    if criterion.kind in (MEAN, COMPOSITE):
        mean = baseline + curve.integral(criterion.tau - baseline)
        if criterion.kind == MEAN:
            return mean
    prob = 1.0 if criterion.t < baseline else curve.evaluate(criterion.t - baseline)
    if criterion.kind == SURVPROB:
        return prob
    return (prob, mean)


def _compare_scalar(a, b, eps):
    diff = float(a) - float(b)
    if abs(diff) <= eps:
        return 0
    return 1 if diff > 0 else -1


def compare(criterion, a, b):
    """
    Order two values produced under ``criterion``.

    Returns 1 when ``a`` is better, -1 when ``b`` is better and 0 for a tie.
    Composite values fall through to the truncated mean only when the survival
    probabilities are within ``tie_epsilon``.
    """
    eps = criterion.tie_epsilon
    if criterion.is_composite:
        first = _compare_scalar(a[0], b[0], eps)
        if first != 0:
            return first
        return _compare_scalar(a[1], b[1], eps)
    return _compare_scalar(a, b, eps)


def best_index(criterion, values):
    """Index of the best value; ties go to the smallest index."""
    best = None
    for i, value in enumerate(values):
        if value is None:
            continue
        if best is None or compare(criterion, value, values[best]) > 0:
            best = i
    return best
