# cli/reproduce.py
from joblib import Parallel, delayed

from evaluation.reporter import value_row, write_reports
from evaluation.value import best_sequence, value_from_lifetimes
from regime.regime import fit_regime
from sim.scenarios import SimConfig
from sim.simulator import arm_sequences, constant_policy, rollout_policy, sequence_label, simulate_cohort
from utils.log import get_logger
from utils.rng import derive_seed
from utils.settings import resolve_n_jobs

logger = get_logger("cli")

# counters appended to (seed, setting, replicate)
TRAINING_STREAM, FOREST_STREAM, EVALUATION_STREAM = range(3)

FITTED, OBSERVED, ZERO_ORDER = "fitted", "observed", "zero_order"


def _sim_config(config, setting, seed, n):
    return SimConfig(
        n=n,
        n_stages=config.n_stages,
        tau=config.tau,
        dt=config.dt,
        design=setting["design"],
        seed=seed,
        scenario=setting["scenario"],
        trigger=config.trigger,
        censoring_intercept=config.censoring_intercept,
    )


def run_replicate(config, setting_index, setting, replicate):
    """
    One replicate of one factorial setting.

    A training cohort is simulated and a regime fitted per criterion; the
    fitted regimes, the design's own assignment rule and the best constant
    sequence are then rolled out on one shared evaluation stream.

    Returns:
        list[dict]: One row per (criterion, policy)
    """
    train_seed = derive_seed(config.seed, setting_index, replicate, TRAINING_STREAM)
    forest_seed = derive_seed(config.seed, setting_index, replicate, FOREST_STREAM)
    eval_seed = derive_seed(config.seed, setting_index, replicate, EVALUATION_STREAM)

    dataset = simulate_cohort(_sim_config(config, setting, train_seed, setting["n"]), n_jobs=1).dataset
    eval_config = _sim_config(config, setting, eval_seed, config.n_eval)
    forest_config = config.forest_for(setting["n"]).model_copy(update={"seed": forest_seed})

    observed = rollout_policy(None, eval_config, n_jobs=1)
    constant = {
        sequence: rollout_policy(constant_policy(sequence), eval_config, n_jobs=1)
        for sequence in arm_sequences(config.n_stages)
    }
    rows = []
    for criterion in config.parsed_criteria():
        regime = fit_regime(dataset, criterion, forest_config, n_jobs=1)
        fitted = rollout_policy(regime.as_policy(), eval_config, n_jobs=1)
        zero = best_sequence(constant, criterion)
        rows.append(value_row(setting, replicate, FITTED, value_from_lifetimes(fitted, criterion)))
        rows.append(value_row(setting, replicate, OBSERVED, value_from_lifetimes(observed, criterion)))
        rows.append(value_row(setting, replicate, ZERO_ORDER, zero.value))
        logger.info(
            f"Setting {setting} replicate {replicate} {criterion.label}: "
            f"fitted {rows[-3]['estimate']:.4f}, observed {rows[-2]['estimate']:.4f}, "
            f"zero-order {sequence_label(zero.sequence)} {rows[-1]['estimate']:.4f}"
        )
    return rows


def _safe_replicate(config, setting_index, setting, replicate):
    try:
        return run_replicate(config, setting_index, setting, replicate)
    except Exception:
        logger.exception(f"Replicate {replicate} of setting {setting} failed; skipping it")
        return []


def reproduce(config, out_dir, n_jobs=None):
    """
    Run the factorial simulation study and write the value reports.

    Every (setting, replicate) pair draws from streams derived from the master
    seed and its own indices, so the report does not depend on the worker
    count. Rows are collected in (setting, replicate) order.

    Args:
        config (RunConfig): Study definition
        out_dir (str): Report directory
        n_jobs (int, optional): Workers over replicates

    Returns:
        dict[str, str]: Paths of the written reports
    """
    tasks = [
        (index, setting, replicate)
        for index, setting in enumerate(config.settings())
        for replicate in range(config.n_rep)
    ]
    logger.info(f"Reproducing {len(config.settings())} settings x {config.n_rep} replicates")
    results = Parallel(n_jobs=resolve_n_jobs(n_jobs))(
        delayed(_safe_replicate)(config, index, setting, replicate) for index, setting, replicate in tasks
    )
    rows = [row for result in results for row in result]
    failed = sum(1 for result in results if not result)
    metadata = {
        "config": config.model_dump(),
        "n_tasks": len(tasks),
        "n_failed": failed,
        "policies": [FITTED, OBSERVED, ZERO_ORDER],
    }
    return write_reports(out_dir, rows, metadata)
