# regime/models.py
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from utils.errors import DatasetSchemaError

BASE_COLUMNS = ["patient_id", "stage", "X", "delta", "gamma", "arm", "B"]


class StageRecord(BaseModel):
    """One patient-stage row: stage length, censoring and failure flags, arm, history."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    patient_id: str
    stage: int = Field(..., ge=1)
    X: float = Field(..., ge=0)
    delta: int = Field(..., ge=0, le=1)
    gamma: Optional[int] = Field(None, ge=0, le=1)
    arm: int
    B: float = Field(0.0, ge=0)
    z: tuple[float, ...] = ()

    @model_validator(mode="after")
    def _gamma_needs_delta(self):
        if self.delta == 0 and self.gamma is not None:
            raise ValueError("gamma must be empty when delta = 0")
        if self.delta == 1 and self.gamma is None:
            raise ValueError("gamma is required when delta = 1")
        return self


def covariate_columns(p):
    return [f"z{j}" for j in range(1, p + 1)]


def history_columns(stage, p):
    """Column names of H^(q): elapsed time, current covariates, earlier arms."""
    return ["B"] + covariate_columns(p) + [f"a{k}" for k in range(1, stage)]


def history_vector(baseline, z, prior_arms):
    """Encode one history the same way for datasets, queries and simulated rollouts."""
    return np.concatenate([[float(baseline)], np.asarray(z, dtype=float), np.asarray(prior_arms, dtype=float)])


class MultiStageDataset:
    """
    Stage-long table of patient records (one row per patient and stage).

    Columns are ``patient_id, stage, X, delta, gamma, arm, B, z1..zp``; rows are
    grouped by patient (first-appearance order) and sorted by stage within a
    patient. Construction validates every structural invariant and names the
    offending patient on failure.
    """

    def __init__(self, frame):
        frame = frame.copy()
        missing = [c for c in BASE_COLUMNS if c not in frame.columns]
        if missing:
            raise DatasetSchemaError(f"dataset is missing columns {missing}")
        z_cols = sorted(
            (c for c in frame.columns if c.startswith("z") and c[1:].isdigit()),
            key=lambda c: int(c[1:]),
        )
        if z_cols != covariate_columns(len(z_cols)):
            raise DatasetSchemaError(f"covariate columns must be z1..zp, got {z_cols}")
        extra = [c for c in frame.columns if c not in BASE_COLUMNS and c not in z_cols]
        if extra:
            raise DatasetSchemaError(f"unexpected columns {extra}")
        frame = frame[BASE_COLUMNS + z_cols]
        frame["patient_id"] = frame["patient_id"].astype(str)
        for col in ("stage", "delta", "arm"):
            frame[col] = frame[col].astype(int)
        frame["gamma"] = frame["gamma"].astype("Int64")
        for col in ["X", "B"] + z_cols:
            frame[col] = frame[col].astype(float)
        order = {pid: i for i, pid in enumerate(pd.unique(frame["patient_id"]))}
        frame["_order"] = frame["patient_id"].map(order)
        frame = frame.sort_values(["_order", "stage"], kind="stable").drop(columns="_order")
        self.frame = frame.reset_index(drop=True)
        self.p = len(z_cols)
        self._validate()

    @classmethod
    def from_records(cls, records):
        rows = []
        p = max((len(r.z) for r in records), default=0)
        for r in records:
            if len(r.z) != p:
                raise DatasetSchemaError(f"patient {r.patient_id}: expected {p} covariates, got {len(r.z)}")
            row = r.model_dump(exclude={"z"})
            row.update(dict(zip(covariate_columns(p), r.z)))
            rows.append(row)
        frame = pd.DataFrame(rows, columns=BASE_COLUMNS + covariate_columns(p))
        return cls(frame)

    def records(self):
        z_cols = covariate_columns(self.p)
        out = []
        for row in self.frame.itertuples(index=False):
            data = row._asdict()
            gamma = data["gamma"]
            out.append(
                StageRecord(
                    patient_id=data["patient_id"],
                    stage=data["stage"],
                    X=data["X"],
                    delta=data["delta"],
                    gamma=None if pd.isna(gamma) else int(gamma),
                    arm=data["arm"],
                    B=data["B"],
                    z=tuple(data[c] for c in z_cols),
                )
            )
        return out

    def _fail(self, row, message):
        raise DatasetSchemaError(
            f"row {int(row) + 1}, patient {self.frame.at[row, 'patient_id']}: {message}",
            patient_id=self.frame.at[row, "patient_id"],
            row=int(row) + 1,
        )

    def _validate(self):
        f = self.frame
        if f.empty:
            raise DatasetSchemaError("dataset has no rows")
        checks = [
            (f["X"] < 0, "negative stage length X"),
            (~f["delta"].isin([0, 1]), "delta must be 0 or 1"),
            ((f["delta"] == 0) & f["gamma"].notna(), "gamma must be empty when delta = 0"),
            ((f["delta"] == 1) & f["gamma"].isna(), "gamma is required when delta = 1"),
            (f["gamma"].notna() & ~f["gamma"].isin([0, 1]), "gamma must be 0 or 1"),
            (f["B"] < 0, "negative baseline B"),
        ]
        for bad, message in checks:
            if bad.any():
                self._fail(int(np.argmax(np.asarray(bad))), message)

        grouped = f.groupby("patient_id", sort=False)
        expected_stage = grouped.cumcount() + 1
        bad = f["stage"] != expected_stage
        if bad.any():
            self._fail(int(np.argmax(np.asarray(bad))), "stages must run 1, 2, ... without gaps or repeats")
        last = grouped["stage"].transform("max") == f["stage"]
        continues = ~last
        bad = continues & ~((f["delta"] == 1) & (f["gamma"] == 0)).fillna(False)
        if bad.any():
            self._fail(
                int(np.argmax(np.asarray(bad))),
                "has a next-stage record although this stage was censored or ended in failure",
            )
        elapsed = grouped["X"].cumsum() - f["X"]
        bad = ~np.isclose(f["B"], elapsed, rtol=0, atol=1e-6)
        if bad.any():
            self._fail(int(np.argmax(np.asarray(bad))), "B differs from the sum of earlier stage lengths")

    @property
    def n_stages(self):
        return int(self.frame["stage"].max())

    @property
    def patient_ids(self):
        return list(pd.unique(self.frame["patient_id"]))

    def stage_frame(self, stage):
        return self.frame[self.frame["stage"] == stage].reset_index(drop=True)

    def arms(self, stage):
        return sorted(int(a) for a in self.frame.loc[self.frame["stage"] == stage, "arm"].unique())

    def stage_counts(self):
        """n^(q) per stage."""
        return {int(q): int(n) for q, n in self.frame.groupby("stage").size().items()}

    def history_columns(self, stage):
        return history_columns(stage, self.p)

    def history_matrix(self, stage):
        """
        H^(q) for every stage-q record, in ``stage_frame(stage)`` row order.

        Columns follow ``history_columns``: B, z1..zp, then the arms taken at
        stages 1..q-1.
        """
        current = self.stage_frame(stage)
        parts = [current[["B"] + covariate_columns(self.p)].to_numpy(dtype=float)]
        if stage > 1:
            arms = self.frame.pivot(index="patient_id", columns="stage", values="arm")
            prior = arms.loc[current["patient_id"], list(range(1, stage))]
            parts.append(prior.to_numpy(dtype=float))
        return np.hstack(parts)

    def overall_outcomes(self, tau):
        """
        Per-patient observed time T∧C and whether T∧τ is known.

        The truncated outcome is known when the patient failed (gamma = 1) or was
        followed up to the horizon.

        Returns:
            pandas.DataFrame: ``patient_id, time, observed`` in patient order
        """
        f = self.frame
        last = f.groupby("patient_id", sort=False).tail(1)
        time = (last["B"] + last["X"]).to_numpy()
        failed = (last["gamma"] == 1).fillna(False).to_numpy()
        observed = failed | (time >= tau - 1e-9)
        return pd.DataFrame(
            {"patient_id": last["patient_id"].to_numpy(), "time": time, "observed": observed.astype(int)}
        )
