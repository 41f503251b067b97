# cli/main.py
import functools
import sys

import click
import pandas as pd
from pydantic import ValidationError

from cli.config import load_run_config
from cli.io import (
    load_model,
    read_dataset,
    read_query,
    recommend_query,
    save_model,
    write_dataset,
    write_json,
)
from cli.reproduce import reproduce
from curves.criteria import Criterion
from evaluation.propensity import PropensityModel
from evaluation.value import fit_censoring_models, fit_stage_propensities, ipw_value
from forest.models import ForestConfig
from regime.regime import fit_regime
from sim.scenarios import SimConfig
from sim.simulator import counterfactual_lifetimes, simulate_cohort
from utils.errors import SurvDTRError
from utils.log import get_logger

logger = get_logger("cli")

EXIT_ERROR = 2


def _fail(code, message):
    text = " ".join(str(message).split())
    click.echo(f"error code={code} message={text}", err=True)
    sys.exit(EXIT_ERROR)


def reports_errors(command):
    """Turn library, validation and I/O errors into a one-line message and exit status 2."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except SurvDTRError as exc:
            click.echo(exc.one_line(), err=True)
            sys.exit(EXIT_ERROR)
        except ValidationError as exc:
            errors = "; ".join(
                f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}" for e in exc.errors()
            )
            _fail("INVALID_CONFIG", errors)
        except OSError as exc:
            _fail("IO_ERROR", exc)

    return wrapper


def _columns(value):
    if value is None:
        return None
    return [c.strip() for c in value.split(",") if c.strip()]


@click.group()
def cli():
    """Optimal multi-stage treatment regimes for censored survival outcomes."""


@cli.command()
@click.option("--scenario", default=1, show_default=True, help="Built-in scenario id (1-4).")
@click.option("--design", type=click.Choice(["rct", "obs"]), default="rct", show_default=True)
@click.option("--n", "n", default=300, show_default=True, help="Number of patients.")
@click.option("--seed", default=0, show_default=True)
@click.option("--n-stages", default=3, show_default=True)
@click.option("--tau", default=10.0, show_default=True)
@click.option("--dt", default=0.01, show_default=True)
@click.option("--trigger", type=click.Choice(["tumor", "wellness"]), default="tumor", show_default=True)
@click.option("--censoring-intercept", type=float, default=None, help="Override both censoring intercepts.")
@click.option("--no-censoring", is_flag=True, help="Switch the censoring hazard off.")
@click.option("--counterfactual", type=click.Path(dir_okay=False), default=None,
              help="Also write T∧τ under every constant arm sequence.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--n-jobs", type=int, default=None)
@reports_errors
def simulate(scenario, design, n, seed, n_stages, tau, dt, trigger, censoring_intercept, no_censoring,
             counterfactual, out, n_jobs):
    """Simulate a censored trial and write the stage-long CSV."""
    config = SimConfig(
        n=n,
        n_stages=n_stages,
        tau=tau,
        dt=dt,
        design=design,
        seed=seed,
        scenario=scenario,
        trigger=trigger,
        censoring=not no_censoring,
        censoring_intercept=censoring_intercept,
    )
    result = simulate_cohort(config, n_jobs=n_jobs)
    write_dataset(result.dataset, out)
    write_json({"simulation": config.model_dump(), "stage_counts": result.dataset.stage_counts()},
               f"{out}.meta.json")
    if counterfactual:
        counterfactual_lifetimes(config, n_jobs=n_jobs).to_csv(counterfactual, index=False, lineterminator="\n")
    click.echo(f"wrote {len(result.dataset.patient_ids)} patients to {out}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--criterion", default="mean", show_default=True, help="mean | survprob@t | composite@t")
@click.option("--tau", default=10.0, show_default=True)
@click.option("--tie-epsilon", default=1e-10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--n-tree", default=300, show_default=True)
@click.option("--n-min", default=5, show_default=True)
@click.option("--n-min-event", default=1, show_default=True)
@click.option("--mtry", type=int, default=None)
@click.option("--n-cut", default=10, show_default=True)
@click.option("--alpha", default=0.1, show_default=True)
@click.option("--split-rule", type=click.Choice(["glr", "md"]), default="glr", show_default=True)
@click.option("--resample", type=click.Choice(["bootstrap", "subsample"]), default="bootstrap", show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--n-jobs", type=int, default=None)
@reports_errors
def fit(data, criterion, tau, tie_epsilon, seed, n_tree, n_min, n_min_event, mtry, n_cut, alpha, split_rule,
        resample, out, n_jobs):
    """Fit a regime on a stage-long CSV and write the model file."""
    dataset = read_dataset(data)
    target = Criterion.parse(criterion, tau, tie_epsilon)
    forest_config = ForestConfig(
        n_tree=n_tree,
        n_min=n_min,
        n_min_event=n_min_event,
        mtry=mtry,
        n_cut=n_cut,
        alpha=alpha,
        split_rule=split_rule,
        resample=resample,
        tau=tau,
        seed=seed,
    )
    for stage, count in dataset.stage_counts().items():
        click.echo(f"stage {stage}: n={count}")
    regime = fit_regime(dataset, target, forest_config, n_jobs=n_jobs)
    for model in regime.stages:
        if model.unfittable:
            click.echo(f"stage {model.stage}: unfittable arms {model.unfittable}")
    save_model(regime, out)
    click.echo(f"wrote model to {out}")


@cli.command()
@click.option("--model", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--query", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--curves", type=click.Path(dir_okay=False), default=None, help="Also dump the optimal curves (JSON).")
@reports_errors
def recommend(model, query, out, curves):
    """Recommend an arm for every (stage, B, history) row of a query CSV."""
    regime = load_model(model)
    rows = read_query(query, regime)
    table, curve_dump = recommend_query(regime, rows, with_curves=curves is not None)
    table.to_csv(out, index=False, lineterminator="\n")
    if curves is not None:
        write_json({"curves": curve_dump}, curves)
    click.echo(f"wrote {len(table)} recommendations to {out}")


@cli.command()
@click.option("--data", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Regime to evaluate; the observed assignments when omitted.")
@click.option("--criterion", default=None, help="Defaults to the model's criterion (or mean).")
@click.option("--tau", default=10.0, show_default=True)
@click.option("--known-propensity", type=click.FloatRange(0, 1), default=None, help="Randomization probability of arm 1.")
@click.option("--propensity-columns", default=None, help="Comma-separated history columns.")
@click.option("--censor-columns", default=None, help="Comma-separated history columns.")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@reports_errors
def evaluate(data, model, criterion, tau, known_propensity, propensity_columns, censor_columns, out):
    """Inverse-probability-weighted value of a regime on held-out data."""
    dataset = read_dataset(data)
    regime = load_model(model) if model else None
    if criterion is not None:
        target = Criterion.parse(criterion, tau)
    elif regime is not None:
        target = regime.criterion
    else:
        target = Criterion(kind="mean", tau=tau)
    if known_propensity is not None:
        propensities = {q: PropensityModel.known(known_propensity) for q in range(1, dataset.n_stages + 1)}
    else:
        propensities = fit_stage_propensities(dataset, _columns(propensity_columns))
    censor_models = fit_censoring_models(dataset, target.tau, _columns(censor_columns))
    policy = regime.as_policy() if regime is not None else None
    value = ipw_value(dataset, policy, target, propensities, censor_models)
    row = {"policy": "regime" if regime is not None else "observed", **value.to_dict()}
    if out:
        pd.DataFrame([row]).to_csv(out, index=False, lineterminator="\n")
    click.echo(
        f"{row['policy']} {value.criterion}: {value.estimate:.6f} (se {value.se:.6f}, "
        f"n_effective {value.n_effective:.2f}, clipped {value.n_clipped})"
    )


@cli.command("reproduce")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="YAML or JSON run configuration.")
@click.option("--scenario", "scenarios", type=int, multiple=True)
@click.option("--design", "designs", type=click.Choice(["rct", "obs"]), multiple=True)
@click.option("--n", "sizes", type=int, multiple=True)
@click.option("--criterion", "criteria", multiple=True)
@click.option("--n-rep", type=int, default=None)
@click.option("--n-eval", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--tau", type=float, default=None)
@click.option("--n-tree", type=int, default=None)
@click.option("--n-min", type=int, default=None)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--n-jobs", type=int, default=None)
@reports_errors
def reproduce_cmd(config_path, scenarios, designs, sizes, criteria, n_rep, n_eval, seed, tau, n_tree, n_min,
                  out_dir, n_jobs):
    """Run the factorial simulation study and write value reports."""
    config = load_run_config(
        config_path,
        scenarios=scenarios,
        designs=designs,
        sizes=sizes,
        criteria=criteria,
        n_rep=n_rep,
        n_eval=n_eval,
        seed=seed,
        tau=tau,
        forest={"n_tree": n_tree, "n_min": n_min, "tau": tau},
    )
    paths = reproduce(config, out_dir, n_jobs=n_jobs)
    for name, path in paths.items():
        click.echo(f"{name}: {path}")


if __name__ == "__main__":
    cli()
