# tests/test_regime.py
import itertools

import numpy as np
import pandas as pd
import pytest

from conftest import make_dataset
from curves.criteria import Criterion
from curves.curves import indicator_curve
from forest.models import ForestConfig
from forest.splitting import node_km
from regime.models import MultiStageDataset, history_columns
from regime.regime import Regime, augment, fit_regime
from utils.errors import DatasetSchemaError, RegimeError


def test_history_columns_layout():
    assert history_columns(1, 2) == ["B", "z1", "z2"]
    assert history_columns(3, 1) == ["B", "z1", "a1", "a2"]


def test_dataset_rejects_continuation_after_censoring():
    rows = [
        ("p1", 1, 2.0, 0, None, 0, 0.0, 0.1),
        ("p1", 2, 1.0, 1, 1, 1, 2.0, 0.1),
    ]
    with pytest.raises(DatasetSchemaError) as info:
        make_dataset(rows)
    assert "p1" in info.value.message


def test_dataset_rejects_gamma_without_delta():
    with pytest.raises(DatasetSchemaError):
        make_dataset([("p1", 1, 2.0, 0, 1, 0, 0.0, 0.1)])


def test_dataset_rejects_wrong_baseline():
    rows = [
        ("p1", 1, 2.0, 1, 0, 0, 0.0, 0.1),
        ("p1", 2, 1.0, 1, 1, 1, 3.0, 0.1),
    ]
    with pytest.raises(DatasetSchemaError) as info:
        make_dataset(rows)
    assert info.value.code == "SCHEMA_VIOLATION"
    assert "p1" in info.value.message and "earlier stage lengths" in info.value.message


def test_dataset_accessors(two_stage_toy):
    counts = two_stage_toy.stage_counts()
    assert counts == {1: 32, 2: 32}
    assert two_stage_toy.arms(2) == [0, 1]
    H = two_stage_toy.history_matrix(2)
    assert H.shape == (32, 3)
    stage1 = two_stage_toy.stage_frame(1)
    np.testing.assert_array_equal(H[:, 2], stage1["arm"].to_numpy())
    outcomes = two_stage_toy.overall_outcomes(tau=10)
    assert outcomes["observed"].all()


def test_records_round_trip(two_stage_toy):
    rebuilt = MultiStageDataset.from_records(two_stage_toy.records())
    pd.testing.assert_frame_equal(rebuilt.frame, two_stage_toy.frame)


def test_augment_examples():
    rows = [
        ("a", 1, 3.0, 1, 1, 0, 0.0, 0.0),
        ("b", 1, 2.0, 0, None, 1, 0.0, 0.0),
        ("c", 1, 2.0, 1, 0, 1, 0.0, 0.0),
        ("c", 2, 4.0, 1, 1, 0, 2.0, 0.0),
    ]
    dataset = make_dataset(rows)
    grouped = augment(dataset, 1, {"c": indicator_curve(4)})
    arm0, arm1 = grouped[0], grouped[1]
    assert arm0[0].curve == indicator_curve(3) and arm0[0].event == 1
    assert arm1[0].curve == indicator_curve(2) and arm1[0].event == 0
    assert arm1[1].curve == indicator_curve(6) and arm1[1].event == 1
    last = augment(dataset, 2)
    assert last[0][0].curve == indicator_curve(4)


def test_augment_requires_next_curve():
    rows = [
        ("c", 1, 2.0, 1, 0, 1, 0.0, 0.0),
        ("c", 2, 4.0, 1, 1, 0, 2.0, 0.0),
    ]
    with pytest.raises(RegimeError):
        augment(make_dataset(rows), 1, {})


def exact_config(seed):
    """Full-sample trees that split on every variable until cells are pure."""
    return ForestConfig(
        n_tree=2, n_min=1, mtry=3, split_prob_uniform=0.0, resample="subsample", subsample_fraction=1.0, seed=seed
    )


def enumerate_best_value(value_of):
    best = -np.inf
    for a1_rule in itertools.product((0, 1), repeat=2):
        for a2_rule in itertools.product((0, 1), repeat=2):
            value = np.mean([value_of(z, a1_rule[z], a2_rule[z]) for z in (0, 1)])
            best = max(best, value)
    return best


def regime_value(regime, value_of):
    total = []
    for z in (0, 1):
        a1 = regime.recommend(1, [0.0, float(z)], 0.0)
        x1 = 1.0 + (a1 == z)
        a2 = regime.recommend(2, [x1, float(z), float(a1)], x1)
        total.append(value_of(z, a1, a2))
    return float(np.mean(total))


def toy_lifetime(z, a1, a2):
    return 1.0 + (a1 == z) + 2.0 + 3.0 * (a2 != a1)


def test_backward_recursion_matches_exhaustive_search(two_stage_toy):
    """
    The fitted regime attains the best value over all 16 deterministic rules.

    Stage-1 and stage-2 rules are enumerated as maps z -> arm (the stage-2
    history is a function of z once the stage-1 rule is fixed), and every
    regime is valued with the toy's closed-form lifetime.
    """
    config = exact_config(3)
    for criterion, value_of in (
        (Criterion(kind="mean", tau=10), lambda z, a1, a2: min(toy_lifetime(z, a1, a2), 10)),
        (Criterion(kind="survprob", tau=10, t=6), lambda z, a1, a2: float(toy_lifetime(z, a1, a2) > 6)),
    ):
        regime = fit_regime(two_stage_toy, criterion, config)
        assert regime_value(regime, value_of) == pytest.approx(enumerate_best_value(value_of))


def seeded_toys(count, seed):
    """
    Random two-stage toys with deterministic lifetimes per (z, a1, a2) cell.

    Stage-2 tables whose cells form an exclusive-or pattern in (z, a1) are
    redrawn: no single split separates such a node, so trees stop early there.
    """
    rng = np.random.default_rng(seed)
    toys = []
    while len(toys) < count:
        table = rng.integers(1, 6, size=(2, 2, 2)).astype(float)
        first = rng.integers(1, 4, size=(2, 2)).astype(float)
        if any(
            table[0, 0, a2] == table[1, 1, a2] and table[0, 1, a2] == table[1, 0, a2] for a2 in (0, 1)
        ):
            continue
        toys.append((first, table))
    return toys


def toy_dataset(first, table):
    rows, pid = [], 0
    for z, a1, a2 in itertools.product((0, 1), repeat=3):
        for _ in range(3):
            pid += 1
            x1, x2 = first[z, a1], table[z, a1, a2]
            rows.append((f"p{pid}", 1, x1, 1, 0, a1, 0.0, float(z)))
            rows.append((f"p{pid}", 2, x2, 1, 1, a2, x1, float(z)))
    return make_dataset(rows)


@pytest.mark.parametrize(
    "criterion",
    [Criterion(kind="mean", tau=20), Criterion(kind="survprob", tau=20, t=5.5)],
    ids=["mean", "survprob"],
)
def test_backward_recursion_on_seeded_toys(criterion):
    """
    Test the fitted regime against brute force on 50 random toys.

    Args:
        criterion (Criterion): Truncated mean or survival probability at 5.5

    Asserts:
        - On every toy the fitted regime's value equals the best value over
          all 16 deterministic rules (exact ties allowed)
    """
    config = exact_config(5)
    for first, table in seeded_toys(50, 17):

        def value_of(z, a1, a2, first=first, table=table):
            lifetime = first[z, a1] + table[z, a1, a2]
            if criterion.kind == "mean":
                return min(lifetime, criterion.tau)
            return float(lifetime > criterion.t)

        regime = fit_regime(toy_dataset(first, table), criterion, config)
        total = []
        for z in (0, 1):
            a1 = regime.recommend(1, [0.0, float(z)], 0.0)
            x1 = first[z, a1]
            a2 = regime.recommend(2, [x1, float(z), float(a1)], x1)
            total.append(value_of(z, a1, a2))
        assert np.mean(total) == pytest.approx(enumerate_best_value(value_of))


def test_single_stage_single_leaf_value_equals_arm_km(single_leaf_config):
    rng = np.random.default_rng(23)
    rows = []
    for i in range(40):
        arm = i % 2
        rows.append((f"p{i}", 1, float(rng.integers(1, 9)), 1, 1, arm, 0.0, float(rng.random())))
    dataset = make_dataset(rows)
    criterion = Criterion(kind="mean", tau=10)
    regime = fit_regime(dataset, criterion, single_leaf_config)
    samples = augment(dataset, 1)
    for arm in (0, 1):
        km_mean = node_km(samples[arm]).curve.truncated_mean(10)
        predicted = regime.predict_arm_curve(1, arm, [0.0, 0.5]).truncated_mean(10)
        assert predicted == pytest.approx(km_mean, abs=1e-12)


def dominant_dataset(shift):
    """
    Paired single-stage cohort: each base draw (z, x) appears once under arm 0
    with lifetime x and once under arm 1 with lifetime x + shift.

    Base lifetimes lie in [0.01, 4.01], so for shift > 4 every arm-1 leaf has
    a longer mean than every arm-0 leaf, whatever the partition.
    """
    rng = np.random.default_rng(31)
    rows = []
    for i in range(30):
        z = float(rng.random())
        x = 0.01 + 4.0 * float(rng.random())
        rows.append((f"p{i}-0", 1, x, 1, 1, 0, 0.0, z))
        rows.append((f"p{i}-1", 1, x + shift, 1, 1, 1, 0.0, z))
    return make_dataset(rows)


def test_dominant_arm_recommended_everywhere(small_forest_config):
    regime = fit_regime(dominant_dataset(5.0), Criterion(kind="mean", tau=20), small_forest_config)
    H = np.column_stack([np.zeros(50), np.linspace(0, 1, 50)])
    assert (regime.recommend_batch(1, H, np.zeros(50)) == 1).all()
    h = [0.0, 0.4]
    assert regime.predict_optimal_curve(1, h, 0.0) == regime.predict_arm_curve(1, 1, h)


def test_recommendation_invariant_to_time_scale(small_forest_config):
    base = dominant_dataset(1.0)
    scaled_frame = base.frame.copy()
    scaled_frame[["X", "B"]] *= 3.0
    scaled = MultiStageDataset(scaled_frame)
    H = np.column_stack([np.zeros(20), np.linspace(0, 1, 20)])
    picks = fit_regime(base, Criterion(kind="mean", tau=10), small_forest_config).recommend_batch(1, H, np.zeros(20))
    picks_scaled = fit_regime(scaled, Criterion(kind="mean", tau=30), small_forest_config).recommend_batch(
        1, H, np.zeros(20)
    )
    np.testing.assert_array_equal(picks, picks_scaled)


def test_identical_arms_tie_to_smallest():
    rows = []
    for i in range(20):
        for arm in (0, 1):
            rows.append((f"p{i}-{arm}", 1, float(1 + i % 5), 1, 1, arm, 0.0, float(i % 5)))
    config = ForestConfig(n_tree=3, n_min=10_000, seed=0, resample="subsample", subsample_fraction=1.0)
    regime = fit_regime(make_dataset(rows), Criterion(kind="mean", tau=10), config)
    assert regime.recommend(1, [0.0, 2.0], 0.0) == 0


def test_unfittable_arm_is_skipped(small_forest_config):
    rows = [(f"p{i}", 1, float(1 + i), 1, 1, 0, 0.0, float(i)) for i in range(10)]
    rows += [(f"q{i}", 1, float(1 + i), 0, None, 1, 0.0, float(i)) for i in range(5)]
    regime = fit_regime(make_dataset(rows), Criterion(kind="mean", tau=20), small_forest_config)
    assert regime.stage_model(1).unfittable == [1]
    assert regime.recommend(1, [0.0, 3.0], 0.0) == 0


def test_stage_without_events_raises(small_forest_config):
    rows = [(f"p{i}", 1, float(1 + i), 0, None, i % 2, 0.0, float(i)) for i in range(10)]
    with pytest.raises(RegimeError):
        fit_regime(make_dataset(rows), Criterion(kind="mean", tau=20), small_forest_config)


def test_composite_regime_prefers_longer_mean_on_probability_tie(small_forest_config):
    rows = []
    for i in range(30):
        rows.append((f"a{i}", 1, 6.0 if i % 2 else 4.0, 1, 1, 0, 0.0, float(i % 3)))
        rows.append((f"b{i}", 1, 8.0 if i % 2 else 4.0, 1, 1, 1, 0.0, float(i % 3)))
    criterion = Criterion(kind="composite", tau=10, t=5)
    config = ForestConfig(n_tree=3, n_min=100, seed=0, resample="subsample", subsample_fraction=1.0)
    regime = fit_regime(make_dataset(rows), criterion, config)
    assert regime.recommend(1, [0.0, 1.0], 0.0) == 1


def test_regime_dict_round_trip(two_stage_toy, small_forest_config):
    regime = fit_regime(two_stage_toy, Criterion(kind="mean", tau=10), small_forest_config)
    loaded = Regime.from_dict(regime.to_dict())
    H = two_stage_toy.history_matrix(2)
    B = two_stage_toy.stage_frame(2)["B"].to_numpy()
    np.testing.assert_array_equal(loaded.recommend_batch(2, H, B), regime.recommend_batch(2, H, B))
    assert loaded.predict_optimal_curve(2, H[0], B[0]) == regime.predict_optimal_curve(2, H[0], B[0])


def test_recommend_rejects_unknown_stage(two_stage_toy, small_forest_config):
    regime = fit_regime(two_stage_toy, Criterion(kind="mean", tau=10), small_forest_config)
    with pytest.raises(RegimeError):
        regime.recommend(3, [0.0, 0.0, 0.0, 0.0], 0.0)


def test_policy_defers_past_fitted_stages(two_stage_toy, small_forest_config):
    policy = fit_regime(two_stage_toy, Criterion(kind="mean", tau=10), small_forest_config).as_policy()
    assert policy(3, np.zeros((2, 4)), np.zeros(2)) is None
    assert policy(1, np.zeros((2, 2)), np.zeros(2)).shape == (2,)
