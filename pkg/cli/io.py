# cli/io.py
import json
import os

import numpy as np
import pandas as pd

from regime.models import MultiStageDataset, history_columns
from regime.regime import Regime
from utils.errors import DatasetSchemaError, DimensionMismatchError, ModelFileError
from utils.log import get_logger

logger = get_logger("cli")

MODEL_SCHEMA_VERSION = 1
MODEL_KIND = "survdtr-regime"


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)


def write_dataset(dataset, path):
    """Write the stage-long CSV (gamma left empty when delta = 0)."""
    _ensure_parent(path)
    dataset.frame.to_csv(path, index=False, lineterminator="\n")


def read_dataset(path):
    """
    Read and validate a stage-long CSV.

    Floats are parsed with round-trip precision so that reading and writing
    back gives a byte-identical file.

    Raises:
        DatasetSchemaError: Unparseable file or a structural violation
    """
    try:
        frame = pd.read_csv(
            path,
            dtype={"patient_id": str},
            float_precision="round_trip",
            encoding="utf-8",
        )
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DatasetSchemaError(f"cannot parse dataset {path}: {exc}")
    try:
        return MultiStageDataset(frame)
    except (ValueError, TypeError) as exc:
        raise DatasetSchemaError(f"dataset {path} has malformed values: {exc}")


def write_json(payload, path):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def save_model(regime, path):
    write_json({"schema_version": MODEL_SCHEMA_VERSION, "kind": MODEL_KIND, "regime": regime.to_dict()}, path)


def load_model(path):
    """
    Load a regime saved by ``save_model``.

    Raises:
        ModelFileError: Not JSON, wrong kind or schema version, or malformed
    """
    with open(path, "r", encoding="utf-8") as f:
        try:
            payload = json.load(f)
        except json.JSONDecodeError as exc:
            raise ModelFileError(f"model file {path} is not valid JSON: {exc}")
    if not isinstance(payload, dict) or payload.get("kind") != MODEL_KIND:
        raise ModelFileError(f"{path} is not a regime model file")
    if payload.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise ModelFileError(
            f"model schema version {payload.get('schema_version')} is not supported "
            f"(expected {MODEL_SCHEMA_VERSION})"
        )
    return Regime.from_dict(payload["regime"])


def read_query(path, regime):
    """
    Read a recommendation query CSV.

    Each row holds ``stage, B`` and the stage's history columns
    (``z1..zp`` and ``a1..a{q-1}``). Columns a row's stage does not use may be
    left empty.

    Returns:
        pandas.DataFrame: The query rows

    Raises:
        DimensionMismatchError: A needed history column is missing or empty
    """
    try:
        query = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=["stage", "B"])
    except pd.errors.ParserError as exc:
        raise DimensionMismatchError(f"cannot parse query {path}: {exc}")
    for col in ("stage", "B"):
        if col not in query.columns:
            raise DimensionMismatchError(f"query is missing column '{col}'")
    expected = set(history_columns(regime.n_stages, regime.n_covariates)) | {"stage"}
    extra = [c for c in query.columns if c not in expected]
    if extra:
        raise DimensionMismatchError(
            f"query columns {extra} do not match a model with {regime.n_covariates} covariates"
        )
    return query


def query_histories(query, regime, stage):
    """History matrix and baselines of the query rows at ``stage``."""
    rows = query[query["stage"] == stage]
    cols = history_columns(stage, regime.n_covariates)
    missing = [c for c in cols if c not in rows.columns]
    if missing:
        raise DimensionMismatchError(f"stage {stage} queries need columns {missing}")
    H = rows[cols].to_numpy(dtype=float)
    if np.isnan(H).any():
        raise DimensionMismatchError(f"stage {stage} queries have empty history values")
    return rows.index, H, rows["B"].to_numpy(dtype=float)


def recommend_query(regime, query, with_curves=False):
    """
    Recommended arm for every query row, in input order.

    Returns:
        tuple[pandas.DataFrame, list]: ``row, stage, arm`` table and, when
        ``with_curves`` is set, per-row optimal curve dicts
    """
    arms = np.zeros(len(query), dtype=int)
    curves = [None] * len(query)
    position = {label: i for i, label in enumerate(query.index)}
    for stage in sorted(int(s) for s in pd.unique(query["stage"])):
        index, H, baselines = query_histories(query, regime, stage)
        picks = regime.recommend_batch(stage, H, baselines)
        for label, arm in zip(index, picks):
            arms[position[label]] = arm
        if with_curves:
            model = regime.stage_model(stage)
            for label, curve in zip(index, model.predict_optimal_curves(H, baselines, regime.criterion)):
                curves[position[label]] = {"row": position[label] + 1, **curve.to_dict()}
    table = pd.DataFrame(
        {"row": np.arange(1, len(query) + 1), "stage": query["stage"].astype(int).to_numpy(), "arm": arms}
    )
    return table, curves
