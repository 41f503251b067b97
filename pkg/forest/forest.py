# forest/forest.py
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from curves.criteria import COMPOSITE, MEAN
from curves.curves import StepCurve, average_curves
from forest.models import ForestConfig
from forest.splitting import MassTable, SplitSearch, km_from_table
from utils.errors import DimensionMismatchError, ForestConstructionError, ModelFileError
from utils.log import get_logger
from utils.rng import derive_rng
from utils.settings import resolve_n_jobs

logger = get_logger("forest")


@dataclass(frozen=True)
class Leaf:
    curve: StepCurve
    n_samples: float
    n_events: float
    frozen: bool = False


@dataclass(frozen=True, eq=False)
class SurvivalTree:
    """
    Axis-aligned binary tree stored as flat preorder arrays.

    Node ``k`` is internal when ``feature[k] >= 0``: rows with
    ``h[feature[k]] <= threshold[k]`` go to ``left[k]``, the others to
    ``right[k]``. Terminal nodes carry a ``Leaf`` in ``leaves[k]``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaves: tuple

    @property
    def n_nodes(self):
        return int(self.feature.size)

    def apply(self, H):
        """Terminal node index reached by every row of ``H``."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        node = np.zeros(H.shape[0], dtype=int)
        while True:
            active = np.nonzero(self.feature[node] >= 0)[0]
            if active.size == 0:
                return node
            current = node[active]
            goes_left = H[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(goes_left, self.left[current], self.right[current])

    def leaf_for(self, h):
        return self.leaves[int(self.apply(h)[0])]

    def to_dict(self):
        """Preorder node list: split nodes as (feature, threshold), leaves with curves."""
        nodes = []
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                nodes.append({"feature": int(self.feature[k]), "threshold": float(self.threshold[k])})
            else:
                leaf = self.leaves[k]
                nodes.append(
                    {
                        "leaf": leaf.curve.to_dict(),
                        "n": leaf.n_samples,
                        "events": leaf.n_events,
                        "frozen": leaf.frozen,
                    }
                )
        return nodes

    @classmethod
    def from_dict(cls, nodes):
        builder = _TreeBuilder()
        position = 0

        def read():
            nonlocal position
            if position >= len(nodes):
                raise ModelFileError("truncated tree in model file")
            node = nodes[position]
            position += 1
            if "leaf" in node:
                leaf = Leaf(
                    StepCurve.from_dict(node["leaf"]),
                    float(node["n"]),
                    float(node["events"]),
                    bool(node.get("frozen", False)),
                )
                return builder.add_leaf(leaf)
            node_id = builder.add_split(int(node["feature"]), float(node["threshold"]))
            builder.left[node_id] = read()
            builder.right[node_id] = read()
            return node_id

        read()
        if position != len(nodes):
            raise ModelFileError("trailing nodes after tree end in model file")
        return builder.build()


class _TreeBuilder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right, self.leaves = [], [], [], [], []

    def _new(self):
        self.feature.append(-1)
        self.threshold.append(np.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.leaves.append(None)
        return len(self.feature) - 1

    def add_leaf(self, leaf):
        node_id = self._new()
        self.leaves[node_id] = leaf
        return node_id

    def add_split(self, feature, threshold):
        node_id = self._new()
        self.feature[node_id] = feature
        self.threshold[node_id] = threshold
        return node_id

    def build(self):
        return SurvivalTree(
            np.array(self.feature, dtype=int),
            np.array(self.threshold, dtype=float),
            np.array(self.left, dtype=int),
            np.array(self.right, dtype=int),
            tuple(self.leaves),
        )


def _resample(n, config, rng):
    if config.resample == "bootstrap":
        counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
    else:
        size = max(1, int(round(config.subsample_fraction * n)))
        counts = np.zeros(n, dtype=int)
        counts[rng.choice(n, size=size, replace=False)] = 1
    members = np.nonzero(counts)[0]
    return members, counts[members].astype(float)


def _grow_tree(covariates, events, table, config, tree_index):
    rng = derive_rng(config.seed, tree_index)
    search = SplitSearch(covariates, events, table, config)
    builder = _TreeBuilder()
    members, weights = _resample(covariates.shape[0], config, rng)
    in_node = np.zeros(covariates.shape[0], dtype=bool)
    in_node[members] = True
    entries = np.nonzero(in_node[table.owner])[0]

    def grow(members, weights, entries):
        mass = float(weights.sum())
        n_events = float((weights * events[members]).sum())
        split = None
        if mass >= 2 * config.n_min and n_events >= 2 * config.n_min_event:
            split = search.find(members, weights, entries, rng)
        if split is None:
            position = np.full(covariates.shape[0], -1)
            position[members] = np.arange(members.size)
            entry_weights = weights[position[table.owner[entries]]]
            curve, frozen = km_from_table(table, entries, entry_weights, mass)
            return builder.add_leaf(Leaf(curve, mass, n_events, frozen))
        node_id = builder.add_split(split.feature, split.threshold)
        goes_left = covariates[members, split.feature] <= split.threshold
        left_set = np.zeros(covariates.shape[0], dtype=bool)
        left_set[members[goes_left]] = True
        entry_left = left_set[table.owner[entries]]
        builder.left[node_id] = grow(members[goes_left], weights[goes_left], entries[entry_left])
        builder.right[node_id] = grow(members[~goes_left], weights[~goes_left], entries[~entry_left])
        return node_id

    grow(members, weights, entries)
    return builder.build()


@dataclass(frozen=True, eq=False)
class GeneralizedForest:
    """Ensemble of survival trees whose prediction is the mean leaf curve."""

    trees: tuple
    config: ForestConfig
    n_features: int

    @property
    def n_tree(self):
        return len(self.trees)

    def _check(self, H):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"history has {H.shape[1]} columns, forest expects {self.n_features}"
            )
        return H

    def apply(self, H):
        """Leaf index per (row, tree)."""
        H = self._check(H)
        return np.column_stack([tree.apply(H) for tree in self.trees])

    def predict_curve(self, h):
        """
        Forest survival curve at one covariate vector.

        Args:
            h (array-like): Covariate vector of length ``n_features``

        Returns:
            StepCurve: Mean of the n_tree leaf curves containing ``h``, merged on
            the union jump grid in tree order.
        """
        H = self._check(h)
        if H.shape[0] != 1:
            raise DimensionMismatchError("predict_curve takes a single covariate vector")
        return average_curves([tree.leaf_for(H).curve for tree in self.trees])

    def predict_curves(self, H):
        H = self._check(H)
        leaf_ids = self.apply(H)
        return [
            average_curves([self.trees[b].leaves[leaf_ids[i, b]].curve for b in range(self.n_tree)])
            for i in range(H.shape[0])
        ]

    def stage_values(self, H, baselines, criterion):
        """
        Criterion values of the forest curves at many histories.

        Both criteria are linear in the curve, so the value of the averaged curve
        is the tree mean of the leaf values; this avoids building the averaged
        curves. Composite criteria return an (m, 2) array of
        (survival probability, truncated mean).
        """
        H = self._check(H)
        baselines = np.broadcast_to(np.asarray(baselines, dtype=float), (H.shape[0],))
        wants_mean = criterion.kind in (MEAN, COMPOSITE)
        wants_prob = criterion.kind != MEAN
        mean_total = np.zeros(H.shape[0])
        prob_total = np.zeros(H.shape[0])
        for tree in self.trees:
            node = tree.apply(H)
            for leaf_id in np.unique(node):
                rows = np.nonzero(node == leaf_id)[0]
                curve = tree.leaves[leaf_id].curve
                b = baselines[rows]
                if wants_mean:
                    mean_total[rows] += curve.integral(criterion.tau - b)
                if wants_prob:
                    prob_total[rows] += np.where(
                        criterion.t < b, 1.0, curve.evaluate(criterion.t - b)
                    )
        mean = baselines + mean_total / self.n_tree
        prob = prob_total / self.n_tree
        if criterion.kind == MEAN:
            return mean
        if criterion.kind == COMPOSITE:
            return np.column_stack([prob, mean])
        return prob

    def to_dict(self):
        return {
            "config": self.config.model_dump(),
            "n_features": self.n_features,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, payload):
        try:
            config = ForestConfig.model_validate(payload["config"])
            trees = tuple(SurvivalTree.from_dict(nodes) for nodes in payload["trees"])
            return cls(trees, config, int(payload["n_features"]))
        except KeyError as exc:
            raise ModelFileError(f"forest entry is missing {exc}")


def fit_forest(samples, config, n_jobs=None):
    """
    Grow a generalized random survival forest.

    Each tree is grown on its own resample with a stream derived from
    ``(config.seed, tree_index)``, so the forest is identical for any worker
    count. A node becomes terminal when its (resampled) size drops below
    2 * n_min, its event count below 2 * n_min_event, or no admissible split
    exists; terminal curves are node Kaplan-Meier estimates.

    Args:
        samples (Sequence[ForestSample]): Training outcomes
        config (ForestConfig): Growing parameters
        n_jobs (int, optional): Workers; defaults to SURVDTR_N_JOBS

    Returns:
        GeneralizedForest: The fitted forest

    Raises:
        ForestConstructionError: Empty input, zero events or ragged covariates
    """
    if not samples:
        raise ForestConstructionError("cannot grow a forest on an empty sample")
    dims = {s.covariates.size for s in samples}
    if len(dims) != 1:
        raise ForestConstructionError(f"covariate lengths differ across samples: {sorted(dims)}")
    events = np.array([s.event for s in samples], dtype=float)
    if events.sum() == 0:
        raise ForestConstructionError("cannot grow a forest without events")

    covariates = np.vstack([s.covariates for s in samples])
    table = MassTable.from_curves([s.curve for s in samples], events)
    logger.info(
        f"Growing {config.n_tree} trees on {len(samples)} samples "
        f"({int(events.sum())} events, {covariates.shape[1]} covariates)"
    )
    trees = Parallel(n_jobs=resolve_n_jobs(n_jobs))(
        delayed(_grow_tree)(covariates, events, table, config, b) for b in range(config.n_tree)
    )
    frozen = sum(leaf.frozen for tree in trees for leaf in tree.leaves if leaf is not None)
    if frozen:
        logger.debug(f"{frozen} terminal curves were frozen")
    return GeneralizedForest(tuple(trees), config, covariates.shape[1])


def predict_curve(forest, h):
    """Module-level alias of ``GeneralizedForest.predict_curve``."""
    return forest.predict_curve(h)
