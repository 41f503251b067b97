# evaluation/value.py
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from curves.criteria import COMPOSITE, MEAN, best_index
from evaluation.propensity import PropensityModel, fit_logistic
from sim.simulator import arm_sequences, constant_policy, rollout_policy
from utils.errors import DatasetSchemaError, UndefinedValueError
from utils.log import get_logger

logger = get_logger("evaluation")

WEIGHT_FLOOR = 1e-3


class ValueEstimate(BaseModel):
    """Estimated policy value; ``secondary`` holds the truncated mean of a composite criterion."""

    model_config = ConfigDict(frozen=True)

    criterion: str
    estimate: float
    se: float
    n_effective: float
    secondary: Optional[float] = None
    secondary_se: Optional[float] = None
    n_clipped: int = 0

    @property
    def ordering_key(self):
        if self.secondary is None:
            return self.estimate
        return (self.estimate, self.secondary)

    def to_dict(self):
        return self.model_dump()


def survival_outcomes(lifetimes, criterion):
    """
    Per-subject outcome f(T) of the criterion.

    Returns:
        tuple[numpy.ndarray, numpy.ndarray or None]: Primary outcome (T∧τ or
        1(T > t)) and, for composite criteria, the secondary T∧τ
    """
    lifetimes = np.asarray(lifetimes, dtype=float)
    truncated = np.minimum(lifetimes, criterion.tau)
    if criterion.kind == MEAN:
        return truncated, None
    alive = (lifetimes > criterion.t).astype(float)
    if criterion.kind == COMPOSITE:
        return alive, truncated
    return alive, None


def _plain_mean(values):
    n = values.size
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def value_from_lifetimes(lifetimes, criterion):
    """Monte Carlo value of uncensored lifetimes with plug-in standard error."""
    primary, secondary = survival_outcomes(lifetimes, criterion)
    if primary.size == 0:
        raise UndefinedValueError("no lifetimes to average")
    estimate, se = _plain_mean(primary)
    sec, sec_se = _plain_mean(secondary) if secondary is not None else (None, None)
    return ValueEstimate(
        criterion=criterion.label,
        estimate=estimate,
        se=se,
        n_effective=float(primary.size),
        secondary=sec,
        secondary_se=sec_se,
    )


def mc_value(policy, config, criterion, n_eval=10000, n_jobs=None):
    """
    Monte Carlo value of ``policy`` from an uncensored rollout of ``n_eval`` patients.

    Args:
        policy (callable or None): ``policy(stage, H, B) -> arms``; None is the
            design's own assignment rule
        config (SimConfig): Scenario, dynamics and seed of the rollout
        criterion (Criterion): Value to estimate
        n_eval (int): Rollout size
        n_jobs (int, optional): Workers

    Returns:
        ValueEstimate: Mean outcome with plug-in SE
    """
    lifetimes = rollout_policy(policy, config, n_eval=n_eval, n_jobs=n_jobs)
    return value_from_lifetimes(lifetimes, criterion)


class ZeroOrderResult(NamedTuple):
    sequence: tuple
    value: ValueEstimate
    values: dict


def zero_order_value(config, criterion, n_eval=10000, arms=(0, 1), n_jobs=None):
    """
    Best constant arm sequence ("embedded regime") by Monte Carlo value.

    Every sequence is rolled out on the same seed, and ties go to the first
    sequence in lexicographic order.
    """
    lifetimes = {
        sequence: rollout_policy(constant_policy(sequence), config, n_eval=n_eval, n_jobs=n_jobs)
        for sequence in arm_sequences(config.n_stages, arms)
    }
    result = best_sequence(lifetimes, criterion)
    logger.info(f"Zero-order winner {result.sequence} with {criterion.label} {result.value.estimate:.4f}")
    return result


def best_sequence(lifetimes_by_sequence, criterion):
    """Pick the best of already rolled-out constant sequences (first wins ties)."""
    sequences = list(lifetimes_by_sequence)
    values = {s: value_from_lifetimes(lifetimes_by_sequence[s], criterion) for s in sequences}
    best = best_index(criterion, [values[s].ordering_key for s in sequences])
    return ZeroOrderResult(sequences[best], values[sequences[best]], values)


def _stage_history(dataset, stage):
    return pd.DataFrame(dataset.history_matrix(stage), columns=dataset.history_columns(stage))


def _select_columns(dataset, stage, columns):
    available = dataset.history_columns(stage)
    if columns is None:
        return available
    return [c for c in columns if c in available]


def fit_stage_propensities(dataset, columns=None):
    """
    One logistic treatment model per stage, for binary arms {0, 1}.

    ``columns`` restricts the covariates (names from ``history_columns``;
    names absent at a stage are skipped). A stage where everyone got the same
    arm gets a degenerate known-probability model.
    """
    models = {}
    for stage in range(1, dataset.n_stages + 1):
        arms = dataset.stage_frame(stage)["arm"].to_numpy()
        if not np.isin(arms, (0, 1)).all():
            raise DatasetSchemaError(f"stage {stage}: logistic propensities need arms coded 0/1")
        if arms.min() == arms.max():
            models[stage] = PropensityModel.known(float(arms[0]))
            continue
        cols = _select_columns(dataset, stage, columns)
        models[stage] = fit_logistic(_stage_history(dataset, stage)[cols], arms, cols)
    return models


def stage_uncensored(dataset, stage, tau):
    """Stage records not lost to dropout: either delta = 1 or followed to the horizon."""
    frame = dataset.stage_frame(stage)
    reached = frame["B"] + frame["X"] >= tau - 1e-9
    return ((frame["delta"] == 1) | reached).to_numpy().astype(int)


def fit_censoring_models(dataset, tau, columns=None):
    """Per-stage logistic models of pr(stage not censored | history)."""
    models = {}
    for stage in range(1, dataset.n_stages + 1):
        y = stage_uncensored(dataset, stage, tau)
        if y.min() == y.max():
            models[stage] = PropensityModel.known(float(y[0]))
            continue
        cols = _select_columns(dataset, stage, columns)
        models[stage] = fit_logistic(_stage_history(dataset, stage)[cols], y, cols)
    return models


def ipw_weights(dataset, policy, propensities, censor_models, tau, floor=WEIGHT_FLOOR):
    """
    Inverse probability weights W_i of every patient.

    The numerator is the product over the patient's observed stages of the
    concordance indicators 1(policy(H) = A) times the overall observation
    flag. The denominator multiplies, over the same stages, the probability of
    the observed arm and the probability of staying uncensored. Denominators
    below ``floor`` are clipped.

    Returns:
        tuple[pandas.DataFrame, int]: ``patient_id, time, observed, weight`` and
        the number of clipped denominators
    """
    outcomes = dataset.overall_outcomes(tau).set_index("patient_id")
    concordant = pd.Series(1.0, index=outcomes.index)
    denominator = pd.Series(1.0, index=outcomes.index)
    for stage in range(1, dataset.n_stages + 1):
        frame = dataset.stage_frame(stage)
        history = _stage_history(dataset, stage)
        arms = frame["arm"].to_numpy()
        chosen = None if policy is None else policy(stage, history.to_numpy(), frame["B"].to_numpy())
        if chosen is not None:
            chosen = np.asarray(chosen, dtype=int)
            concordant.loc[frame["patient_id"]] *= (chosen == arms).astype(float)
        p_treat = propensities[stage].predict(history)
        p_arm = np.where(arms == 1, p_treat, 1.0 - p_treat)
        p_stay = censor_models[stage].predict(history)
        denominator.loc[frame["patient_id"]] *= p_arm * p_stay
    clipped = int((denominator < floor).sum())
    if clipped:
        logger.warning(f"Clipped {clipped} weight denominators at {floor}")
    weights = concordant * outcomes["observed"] / denominator.clip(lower=floor)
    out = outcomes.assign(weight=weights).reset_index()
    return out, clipped


def _ratio(values, weights):
    total = weights.sum()
    estimate = float(values @ weights / total)
    se = float(np.sqrt(np.sum(weights**2 * (values - estimate) ** 2)) / total)
    return estimate, se


def ipw_value(dataset, policy, criterion, propensities, censor_models, floor=WEIGHT_FLOOR):
    """
    Self-normalised inverse-probability-weighted value on held-out data.

    Args:
        dataset (MultiStageDataset): Evaluation data
        policy (callable or None): ``policy(stage, H, B) -> arms``; None
            evaluates the observed assignments
        criterion (Criterion): Value to estimate
        propensities (Mapping[int, PropensityModel]): Treatment model per stage
        censor_models (Mapping[int, PropensityModel]): Uncensoring model per stage
        floor (float): Denominator floor

    Returns:
        ValueEstimate: Weighted estimate; ``n_effective`` is the weight sum

    Raises:
        UndefinedValueError: No concordant observed patient
    """
    table, clipped = ipw_weights(dataset, policy, propensities, censor_models, criterion.tau, floor)
    weights = table["weight"].to_numpy()
    if weights.sum() <= 0:
        raise UndefinedValueError(
            "no observed patient follows the policy at every stage; the weighted value is undefined"
        )
    primary, secondary = survival_outcomes(table["time"].to_numpy(), criterion)
    estimate, se = _ratio(primary, weights)
    sec, sec_se = _ratio(secondary, weights) if secondary is not None else (None, None)
    return ValueEstimate(
        criterion=criterion.label,
        estimate=estimate,
        se=se,
        n_effective=float(weights.sum()),
        secondary=sec,
        secondary_se=sec_se,
        n_clipped=clipped,
    )
