# evaluation/reporter.py
import json
import os

import numpy as np
import pandas as pd

from utils.log import get_logger

logger = get_logger("evaluation")

VALUE_COLUMNS = [
    "scenario",
    "design",
    "n",
    "replicate",
    "criterion",
    "policy",
    "estimate",
    "se",
    "n_effective",
    "secondary",
]


def value_row(setting, replicate, policy, estimate):
    """Flatten one ValueEstimate into a long-format report row."""
    return {
        **setting,
        "replicate": replicate,
        "criterion": estimate.criterion,
        "policy": policy,
        "estimate": estimate.estimate,
        "se": estimate.se,
        "n_effective": estimate.n_effective,
        "secondary": estimate.secondary,
    }


def summarize_values(values):
    """
    Mean, standard error and replicate count per setting, criterion and policy.

    Args:
        values (pandas.DataFrame): Long table with ``VALUE_COLUMNS``

    Returns:
        pandas.DataFrame: One row per (scenario, design, n, criterion, policy)
    """
    keys = ["scenario", "design", "n", "criterion", "policy"]
    if values.empty:
        return pd.DataFrame(columns=keys + ["mean", "se", "n_replicates"])
    grouped = values.groupby(keys, sort=True)["estimate"]
    summary = grouped.agg(mean="mean", sd="std", n_replicates="count").reset_index()
    summary["se"] = (summary["sd"] / np.sqrt(summary["n_replicates"])).fillna(0.0)
    return summary[keys + ["mean", "se", "n_replicates"]]


def write_reports(out_dir, values, metadata):
    """
    Write ``values.csv``, ``summary.csv`` and ``run.json`` into ``out_dir``.

    Returns:
        dict[str, str]: Paths of the written files
    """
    os.makedirs(out_dir, exist_ok=True)
    values = pd.DataFrame(values, columns=VALUE_COLUMNS)
    summary = summarize_values(values)

    values_path = os.path.join(out_dir, "values.csv")
    summary_path = os.path.join(out_dir, "summary.csv")
    run_path = os.path.join(out_dir, "run.json")

    values.to_csv(values_path, index=False)
    summary.to_csv(summary_path, index=False)
    payload = {
        **metadata,
        "n_rows": int(len(values)),
    }
    with open(run_path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, default=str)

    logger.info(f"Generated value reports: {values_path}, {summary_path}, {run_path}")
    return {"values": values_path, "summary": summary_path, "run": run_path}
