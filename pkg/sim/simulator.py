# sim/simulator.py
import itertools
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import expit

from regime.models import MultiStageDataset, covariate_columns
from sim.scenarios import design_matrix, propensity_coef
from utils.log import get_logger
from utils.rng import derive_rng
from utils.settings import resolve_n_jobs

logger = get_logger("sim")

OU_RATE = 2.0
OU_DRIFT = np.array([0.1, 0.05])
OU_CHOL = np.linalg.cholesky(np.array([[1.0, -0.5], [-0.5, 1.0]]))
FAILURE_SCALE = 0.2
CRITICAL_WELLNESS = 0.1
BLOCK_SIZE = 512

# stage outcomes
RUNNING, FAILED, CENSORED, NEXT_STAGE, END_OF_TRIAL = range(5)


def covariate_chol(p):
    return np.linalg.cholesky(0.8 * np.eye(p) + 0.2 * np.ones((p, p))) if p else np.zeros((0, 0))


@dataclass(frozen=True)
class PatientState:
    rho: float
    omega: float
    z: np.ndarray
    baseline: float = 0.0
    stage: int = 1
    terminal_risk: bool = False


def treatment_jump(rho, omega, arm):
    """
    Immediate effect of arm A on tumor size and wellness (array-aware).

    rho+ = rho / (omega (10 - 6A)) v 0 and omega+ = omega - 2^(A-2). A
    non-positive omega makes the ratio non-positive, so rho+ is 0 there;
    omega = 0 takes the same value, its limit from below.
    """
    arm = np.asarray(arm)
    rho, omega = np.asarray(rho, dtype=float), np.asarray(omega, dtype=float)
    positive = omega > 0
    ratio = rho / (np.where(positive, omega, 1.0) * (10.0 - 6.0 * arm))
    new_rho = np.where(positive, np.maximum(ratio, 0.0), 0.0)
    new_omega = omega - np.power(2.0, arm - 2.0)
    return new_rho, new_omega


def ou_update(rho, omega, noise, dt):
    """
    One Euler-Maruyama step of the coupled tumor/wellness process.

    ``noise`` is (..., 2) N(0, I); ``dt`` is a scalar or one step width per
    row of ``noise``.
    """
    shock = np.asarray(noise) @ OU_CHOL.T * np.sqrt(np.asarray(dt, dtype=float))[..., None]
    new_rho = rho + (-OU_RATE * rho + OU_DRIFT[0]) * dt + shock[..., 0]
    new_omega = omega + (-OU_RATE * omega + OU_DRIFT[1]) * dt + shock[..., 1]
    return np.maximum(new_rho, 0.0), new_omega


def failure_hazard(rho, omega, linear, wellness_floor=0.01):
    return FAILURE_SCALE * (
        rho / np.maximum(omega, wellness_floor) * np.exp(linear) + (omega < CRITICAL_WELLNESS)
    )


def init_patient(rng, p):
    """Draw entry tumor size, wellness and stage-1 covariates."""
    rho, omega = 0.5 + 0.5 * rng.random(2)
    z = 0.5 * (covariate_chol(p) @ rng.standard_normal(p))
    return PatientState(float(rho), float(omega), z)


def apply_treatment(state, arm):
    risk = state.terminal_risk or state.omega <= 0
    rho, omega = treatment_jump(state.rho, state.omega, arm)
    return replace(state, rho=float(rho), omega=float(omega), terminal_risk=bool(risk))


def ou_step(state, dt, rng):
    rho, omega = ou_update(state.rho, state.omega, rng.standard_normal(2), dt)
    return replace(state, rho=float(rho), omega=float(omega))


def constant_policy(sequence):
    """Policy giving every patient ``sequence[q - 1]`` at stage q."""
    sequence = tuple(int(a) for a in sequence)

    def policy(stage, H, baselines):
        return np.full(np.shape(baselines)[0], sequence[stage - 1], dtype=int)

    return policy


class SimResult(NamedTuple):
    dataset: MultiStageDataset
    truth: pd.DataFrame


class _Draws(NamedTuple):
    init: np.ndarray
    z0: np.ndarray
    treat: np.ndarray
    noise: np.ndarray
    events: np.ndarray


def _time_grid(config):
    n_steps = int(np.ceil(config.tau / config.dt - 1e-9))
    return np.minimum(np.round(np.arange(n_steps + 1) * config.dt, 12), config.tau)


def _draw_block(config, scenario, indices, n_steps):
    rows = []
    for index in indices:
        rng = derive_rng(config.seed, int(index))
        rows.append(
            (
                rng.random(2),
                rng.standard_normal((config.n_stages, scenario.p)),
                rng.random(config.n_stages),
                rng.standard_normal((n_steps, 2)),
                rng.random((n_steps, 2)),
            )
        )
    return _Draws(*(np.stack(parts) for parts in zip(*rows)))


def _run_block(config, scenario, indices, policy, censoring):
    """
    Simulate patients ``indices`` stage by stage in lockstep.

    All randomness of a patient comes from its own stream, laid out by calendar
    step, so the trajectory does not depend on which block the patient is in
    and the same patient sees the same noise under different policies.
    """
    times = _time_grid(config)
    n_steps = times.size - 1
    draws = _draw_block(config, scenario, indices, n_steps)
    m, p, n_stages = len(indices), scenario.p, config.n_stages
    chol = covariate_chol(p)
    beta_pi = propensity_coef(config.design, p)
    floor = config.wellness_floor

    rho = 0.5 + 0.5 * draws.init[:, 0]
    omega = 0.5 + 0.5 * draws.init[:, 1]
    rho0, omega0 = rho.copy(), omega.copy()
    z = np.zeros((m, p))
    arm_history = np.zeros((m, n_stages), dtype=int)
    step = np.zeros(m, dtype=int)
    alive = np.ones(m, dtype=bool)
    failed = np.zeros(m, dtype=bool)
    risk = np.zeros(m, dtype=bool)
    records = []

    for stage in range(1, n_stages + 1):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        z[idx] = 0.5 * z[idx] + 0.5 * (draws.z0[idx, stage - 1] @ chol.T)
        start = step[idx].copy()
        baselines = times[start]
        g = design_matrix(baselines, z[idx])
        arms = None
        if policy is not None:
            H = np.column_stack([baselines, z[idx], arm_history[idx, : stage - 1]])
            arms = policy(stage, H, baselines)
        if arms is None:
            arms = (draws.treat[idx, stage - 1] < expit(g @ beta_pi)).astype(int)
        else:
            arms = np.asarray(arms, dtype=int).reshape(-1)
        arm_history[idx, stage - 1] = arms
        risk[idx] |= omega[idx] <= 0
        rho[idx], omega[idx] = treatment_jump(rho[idx], omega[idx], arms)

        lin_f = np.where(arms == 1, g @ scenario.failure_coef(1), g @ scenario.failure_coef(0))
        lin_c = np.where(arms == 1, g @ scenario.censoring_coef(1), g @ scenario.censoring_coef(0))
        outcome = np.full(idx.size, RUNNING)
        k = start.copy()
        while True:
            a = np.nonzero(outcome == RUNNING)[0]
            if a.size == 0:
                break
            who, ka = idx[a], k[a]
            width = times[ka + 1] - times[ka]
            u = draws.events[who, ka]
            hazard = failure_hazard(rho[who], omega[who], lin_f[a], floor)
            fail = u[:, 0] < -np.expm1(-hazard * width)
            censor = ~fail & (u[:, 1] < -np.expm1(-np.exp(lin_c[a]) * width)) if censoring else np.zeros_like(fail)
            rho[who], omega[who] = ou_update(rho[who], omega[who], draws.noise[who, ka], width)
            k[a] = ka + 1
            result = np.where(fail, FAILED, np.where(censor, CENSORED, RUNNING))
            going = result == RUNNING
            trigger = rho[who] if config.trigger == "tumor" else omega[who]
            result[going & (k[a] >= n_steps)] = END_OF_TRIAL
            if stage < n_stages:
                result[going & (k[a] < n_steps) & (trigger > 1.0)] = NEXT_STAGE
            outcome[a] = result

        ends = times[k]
        delta = np.isin(outcome, (FAILED, NEXT_STAGE)).astype(int)
        gamma = np.where(delta == 1, (outcome == FAILED).astype(float), np.nan)
        records.append(
            pd.DataFrame(
                {
                    "index": np.asarray(indices)[idx],
                    "stage": stage,
                    "X": np.round(ends - baselines, 12),
                    "delta": delta,
                    "gamma": gamma,
                    "arm": arms,
                    "B": baselines,
                    **{col: z[idx, j] for j, col in enumerate(covariate_columns(p))},
                }
            )
        )
        step[idx] = k
        alive[idx] = outcome == NEXT_STAGE
        failed[idx] = outcome == FAILED

    truth = pd.DataFrame(
        {
            "index": np.asarray(indices),
            "time": times[step],
            "failed": failed.astype(int),
            "terminal_risk": risk.astype(int),
            "rho0": rho0,
            "omega0": omega0,
        }
    )
    return pd.concat(records, ignore_index=True), truth


def _simulate(config, policy, censoring, n_jobs):
    scenario = config.resolve_scenario()
    blocks = [np.arange(lo, min(lo + BLOCK_SIZE, config.n)) for lo in range(0, config.n, BLOCK_SIZE)]
    results = Parallel(n_jobs=resolve_n_jobs(n_jobs))(
        delayed(_run_block)(config, scenario, block, policy, censoring) for block in blocks
    )
    records = pd.concat([r[0] for r in results], ignore_index=True)
    truth = pd.concat([r[1] for r in results], ignore_index=True)
    return records, truth


def _patient_ids(index):
    return [f"P{i + 1:05d}" for i in index]


def simulate_cohort(config, n_jobs=None):
    """
    Simulate a censored multi-stage trial.

    Arms are assigned by the design propensity, stages end at failure,
    censoring, the next-treatment trigger or the horizon, and reaching the
    horizon counts as censoring (delta = 0).

    Args:
        config (SimConfig): Trial parameters
        n_jobs (int, optional): Workers over patient blocks

    Returns:
        SimResult: Stage-long dataset plus per-patient ground truth
            (end time, failure flag, terminal-risk flag, entry state)
    """
    records, truth = _simulate(config, None, config.censoring, n_jobs)
    records = records.sort_values(["index", "stage"], kind="stable")
    records.insert(0, "patient_id", _patient_ids(records["index"]))
    frame = records.drop(columns="index")
    frame["gamma"] = frame["gamma"].astype("Int64")
    truth.insert(0, "patient_id", _patient_ids(truth["index"]))
    dataset = MultiStageDataset(frame)
    censored = int((dataset.frame.groupby("patient_id", sort=False)["delta"].last() == 0).sum())
    logger.info(
        f"Simulated scenario {config.scenario} ({config.design}) n={config.n}: "
        f"stage counts {dataset.stage_counts()}, {censored} censored"
    )
    return SimResult(dataset, truth.drop(columns="index"))


def rollout_policy(policy, config, n_eval=None, n_jobs=None):
    """
    Uncensored lifetimes T∧τ of patients treated by ``policy``.

    Args:
        policy (callable or None): ``policy(stage, H, B) -> arms``; None, or a
            policy returning None at a stage, follows the design propensity
        config (SimConfig): Dynamics, scenario and seed
        n_eval (int, optional): Number of patients (defaults to config.n)
        n_jobs (int, optional): Workers over patient blocks

    Returns:
        numpy.ndarray: Truncated lifetimes in patient order
    """
    if n_eval is not None:
        config = config.model_copy(update={"n": int(n_eval)})
    _, truth = _simulate(config, policy, False, n_jobs)
    return truth.sort_values("index")["time"].to_numpy()


def arm_sequences(n_stages, arms=(0, 1)):
    return list(itertools.product(arms, repeat=n_stages))


def sequence_label(sequence):
    return "seq_" + "".join(str(a) for a in sequence)


def counterfactual_lifetimes(config, sequences=None, n_jobs=None):
    """
    Ground-truth T∧τ of every patient under each constant arm sequence.

    Every sequence reuses the same per-patient random numbers, so columns are
    directly comparable patient by patient.

    Returns:
        pandas.DataFrame: ``patient_id`` plus one ``seq_...`` column per sequence
    """
    sequences = sequences or arm_sequences(config.n_stages)
    out = pd.DataFrame({"patient_id": _patient_ids(range(config.n))})
    for sequence in sequences:
        out[sequence_label(sequence)] = rollout_policy(constant_policy(sequence), config, n_jobs=n_jobs)
    return out
