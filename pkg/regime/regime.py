# regime/regime.py
from dataclasses import dataclass

import numpy as np

from curves.criteria import Criterion, best_index
from curves.curves import indicator_curve
from forest.forest import GeneralizedForest, fit_forest
from forest.models import ForestConfig, ForestSample
from utils.errors import ForestConstructionError, ModelFileError, RegimeError
from utils.log import get_logger
from utils.rng import derive_seed

logger = get_logger("regime")


def augment(dataset, stage, next_stage_optimal=None):
    """
    Build the stage-q training outcomes of every arm.

    Patients whose stage ended in failure or censoring, and every patient at
    the last stage, get the indicator curve of their stage length. Patients who
    moved on get the optimal next-stage curve shifted by their stage length.
    The event flag is delta in both cases.

    Args:
        dataset (MultiStageDataset): Training data
        stage (int): Stage q
        next_stage_optimal (Mapping[str, StepCurve], optional): Optimal
            stage-(q+1) curve per continuing patient

    Returns:
        dict[int, list[ForestSample]]: Samples grouped by arm, arms ascending

    Raises:
        RegimeError: A continuing patient has no next-stage curve
    """
    next_stage_optimal = next_stage_optimal or {}
    frame = dataset.stage_frame(stage)
    H = dataset.history_matrix(stage)
    last_stage = stage == dataset.n_stages
    grouped = {arm: [] for arm in dataset.arms(stage)}
    for i, row in enumerate(frame.itertuples(index=False)):
        continues = not last_stage and row.delta == 1 and row.gamma == 0
        if continues:
            curve = next_stage_optimal.get(row.patient_id)
            if curve is None:
                raise RegimeError(
                    f"patient {row.patient_id} continues past stage {stage} but has no next-stage curve",
                    patient_id=row.patient_id,
                )
            curve = curve.shift(row.X)
        else:
            curve = indicator_curve(row.X)
        grouped[int(row.arm)].append(ForestSample(H[i], curve, int(row.delta)))
    return grouped


@dataclass(frozen=True, eq=False)
class StageModel:
    """Per-arm forests of one stage; ``None`` marks an unfittable arm."""

    stage: int
    arms: tuple
    forests: tuple
    columns: tuple

    @property
    def unfittable(self):
        return [arm for arm, forest in zip(self.arms, self.forests) if forest is None]

    def arm_values(self, H, baselines, criterion):
        return [
            None if forest is None else forest.stage_values(H, baselines, criterion)
            for forest in self.forests
        ]

    def recommend_batch(self, H, baselines, criterion):
        if all(forest is None for forest in self.forests):
            raise RegimeError(f"stage {self.stage} has no fittable arm")
        H = np.atleast_2d(np.asarray(H, dtype=float))
        values = self.arm_values(H, baselines, criterion)
        picks = np.empty(H.shape[0], dtype=int)
        for i in range(H.shape[0]):
            k = best_index(criterion, [None if v is None else v[i] for v in values])
            picks[i] = self.arms[k]
        return picks

    def predict_optimal_curves(self, H, baselines, criterion):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        picks = self.recommend_batch(H, baselines, criterion)
        curves = [None] * H.shape[0]
        for arm, forest in zip(self.arms, self.forests):
            rows = np.nonzero(picks == arm)[0]
            if rows.size == 0:
                continue
            for row, curve in zip(rows, forest.predict_curves(H[rows])):
                curves[row] = curve
        return curves


@dataclass(frozen=True, eq=False)
class Regime:
    """
    Estimated dynamic treatment regime: one ``StageModel`` per stage.

    The stage-q rule picks, among fittable arms, the arm whose forest curve has
    the best criterion value at (h, B); ties within ``tie_epsilon`` go to the
    smallest arm.
    """

    criterion: Criterion
    forest_config: ForestConfig
    n_covariates: int
    stages: tuple

    @property
    def n_stages(self):
        return len(self.stages)

    def stage_model(self, stage):
        if not 1 <= stage <= self.n_stages:
            raise RegimeError(f"stage {stage} outside 1..{self.n_stages}")
        return self.stages[stage - 1]

    def recommend(self, stage, h, baseline):
        return int(self.recommend_batch(stage, [h], [baseline])[0])

    def recommend_batch(self, stage, H, baselines):
        return self.stage_model(stage).recommend_batch(H, baselines, self.criterion)

    def predict_optimal_curve(self, stage, h, baseline):
        return self.stage_model(stage).predict_optimal_curves([h], [baseline], self.criterion)[0]

    def predict_arm_curve(self, stage, arm, h):
        model = self.stage_model(stage)
        if arm not in model.arms:
            raise RegimeError(f"arm {arm} not seen at stage {stage}")
        forest = model.forests[model.arms.index(arm)]
        if forest is None:
            raise RegimeError(f"arm {arm} at stage {stage} is unfittable")
        return forest.predict_curve(h)

    def as_policy(self):
        """
        Vectorised ``policy(stage, H, B) -> arms`` following this regime.

        Stages past the last fitted one return None, which simulators and the
        weighted estimator read as "keep the design's own assignment".
        """

        def policy(stage, H, baselines):
            if stage > self.n_stages:
                return None
            return self.recommend_batch(stage, H, baselines)

        return policy

    def to_dict(self):
        return {
            "criterion": self.criterion.model_dump(),
            "forest_config": self.forest_config.model_dump(),
            "n_covariates": self.n_covariates,
            "stages": [
                {
                    "stage": model.stage,
                    "columns": list(model.columns),
                    "arms": [
                        {"arm": arm, "forest": None if forest is None else forest.to_dict()}
                        for arm, forest in zip(model.arms, model.forests)
                    ],
                }
                for model in self.stages
            ],
        }

    @classmethod
    def from_dict(cls, payload):
        try:
            stages = []
            for entry in payload["stages"]:
                arms = tuple(int(a["arm"]) for a in entry["arms"])
                forests = tuple(
                    None if a["forest"] is None else GeneralizedForest.from_dict(a["forest"])
                    for a in entry["arms"]
                )
                stages.append(StageModel(int(entry["stage"]), arms, forests, tuple(entry["columns"])))
            return cls(
                Criterion.model_validate(payload["criterion"]),
                ForestConfig.model_validate(payload["forest_config"]),
                int(payload["n_covariates"]),
                tuple(stages),
            )
        except (KeyError, TypeError) as exc:
            raise ModelFileError(f"regime entry is malformed: {exc}")


def fit_regime(dataset, criterion, forest_config, n_jobs=None):
    """
    Estimate the optimal regime by backward recursion over the stages.

    At each stage q = Q, ..., 1 the augmented outcomes are split by arm and one
    forest is grown per arm, seeded from ``(forest_config.seed, q, arm_index)``.
    Each stage-q patient's optimal curve is then predicted at their own history
    and carried back to stage q-1. Arms without events are marked unfittable.

    Args:
        dataset (MultiStageDataset): Training data
        criterion (Criterion): Optimisation target
        forest_config (ForestConfig): Growing parameters shared by all forests
        n_jobs (int, optional): Workers for tree growing

    Returns:
        Regime: The fitted regime

    Raises:
        RegimeError: A stage has no events at all
    """
    n_stages = dataset.n_stages
    logger.info(f"Fitting a {n_stages}-stage regime, n per stage {dataset.stage_counts()}")
    models = {}
    next_curves = None
    for stage in range(n_stages, 0, -1):
        grouped = augment(dataset, stage, next_curves)
        n_events = sum(s.event for samples in grouped.values() for s in samples)
        if n_events == 0:
            raise RegimeError(f"stage {stage} has no uncensored outcomes")
        arms = tuple(grouped)
        forests = []
        for arm_index, arm in enumerate(arms):
            samples = grouped[arm]
            config = forest_config.model_copy(
                update={"seed": derive_seed(forest_config.seed, stage, arm_index), "tau": criterion.tau}
            )
            try:
                forests.append(fit_forest(samples, config, n_jobs=n_jobs))
            except ForestConstructionError as exc:
                logger.warning(f"Stage {stage} arm {arm} is unfittable ({len(samples)} samples): {exc}")
                forests.append(None)
        model = StageModel(stage, arms, tuple(forests), tuple(dataset.history_columns(stage)))
        models[stage] = model

        if stage > 1:
            frame = dataset.stage_frame(stage)
            curves = model.predict_optimal_curves(
                dataset.history_matrix(stage), frame["B"].to_numpy(), criterion
            )
            next_curves = dict(zip(frame["patient_id"], curves))

    return Regime(criterion, forest_config, dataset.p, tuple(models[q] for q in range(1, n_stages + 1)))
