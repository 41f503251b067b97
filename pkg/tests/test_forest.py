# tests/test_forest.py
import numpy as np
import pytest

from curves.criteria import Criterion, stage_value
from curves.curves import StepCurve, indicator_curve
from forest.forest import GeneralizedForest, fit_forest
from forest.models import ForestConfig, ForestSample
from forest.splitting import best_split, glr_statistic, md_statistic, node_km
from utils.errors import DimensionMismatchError, ForestConstructionError
from utils.rng import derive_rng


def indicator_samples(times, events, covariates=None):
    covariates = np.zeros((len(times), 1)) if covariates is None else covariates
    return [
        ForestSample(covariates[i], indicator_curve(t), int(e))
        for i, (t, e) in enumerate(zip(times, events))
    ]


def classical_km(times, events):
    """Textbook product-limit estimate at the distinct event times."""
    out = {}
    s = 1.0
    for t in np.unique(times[events == 1]):
        at_risk = np.sum(times >= t)
        deaths = np.sum((times == t) & (events == 1))
        s *= 1.0 - deaths / at_risk
        out[t] = s
    return out


def classical_logrank(times, events, group, variance):
    """Count-based two-sample log-rank statistic for group 1."""
    o_minus_e, var = 0.0, 0.0
    for t in np.unique(times[events == 1]):
        risk = times >= t
        n, n1 = risk.sum(), (risk & group).sum()
        n2 = n - n1
        dead = (times == t) & (events == 1)
        d, d1 = dead.sum(), (dead & group).sum()
        o_minus_e += d1 - n1 * d / n
        if variance == "hypergeometric":
            if n > 1:
                var += n1 * n2 * d * (n - d) / (n**2 * (n - 1))
        else:
            var += n1 * n2 * d * (n - d) / n**3
    return o_minus_e, var


def test_node_km_matches_classical_km_on_indicator_curves():
    """
    On indicator curves the modified estimator is the ordinary Kaplan-Meier.

    200 random censored samples with ties; the estimate must agree with the
    textbook product-limit formula at every event time.
    """
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 51))
        times = rng.integers(1, 20, size=n) / 2.0
        events = (rng.random(n) < 0.7).astype(int)
        result = node_km(indicator_samples(times, events))
        for t, expected in classical_km(times, events).items():
            assert abs(result.curve.evaluate(t) - expected) < 1e-12
        assert not result.frozen


def test_node_km_with_fractional_masses():
    samples = [
        ForestSample([0.0], StepCurve([1, 3], [0.5, 0.0]), 1),
        ForestSample([0.0], indicator_curve(2), 1),
    ]
    curve = node_km(samples).curve
    assert curve.evaluate(1) == pytest.approx(0.75)
    assert curve.evaluate(2) == pytest.approx(0.25)
    assert curve.evaluate(3) == pytest.approx(0.0)


def test_node_km_rejects_empty_node():
    with pytest.raises(ValueError):
        node_km([])


@pytest.mark.parametrize("variance", ["cubic", "hypergeometric"])
def test_glr_matches_count_based_logrank(variance):
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(200):
        n = int(rng.integers(4, 41))
        times = rng.integers(1, 15, size=n) / 2.0
        events = (rng.random(n) < 0.75).astype(int)
        group = rng.random(n) < 0.5
        if group.all() or not group.any():
            continue
        samples = indicator_samples(times, events)
        node1 = [s for s, g in zip(samples, group) if g]
        node2 = [s for s, g in zip(samples, group) if not g]
        o_minus_e, var = classical_logrank(times, events, group, variance)
        stat = glr_statistic(node1, node2, tau=100.0, variance=variance)
        if var <= 0:
            assert stat == 0.0
            continue
        assert abs(stat - o_minus_e / np.sqrt(var)) < 1e-10
        checked += 1
    assert checked > 100


def test_md_statistic_on_point_masses():
    node1 = indicator_samples([2.0, 2.0], [1, 1])
    node2 = indicator_samples([6.0, 6.0], [1, 1])
    stat, frozen = md_statistic(node1, node2, tau=10.0)
    assert stat == pytest.approx(4.0)
    assert not frozen


def test_best_split_finds_separating_covariate():
    z = np.repeat([0.0, 1.0], 20)
    noise = np.random.default_rng(9).permutation(np.linspace(0, 1, 40))
    samples = indicator_samples(2.0 + 6.0 * z, np.ones(40), np.column_stack([noise, z]))
    config = ForestConfig(n_tree=1, n_min=2, mtry=2, n_cut=20, split_prob_uniform=0.0)
    split = best_split(samples, config, derive_rng(0, 0))
    assert split is not None
    assert split.feature == 1
    assert 0.0 <= split.threshold < 1.0


def test_best_split_respects_alpha():
    x = np.arange(20, dtype=float).reshape(-1, 1)
    samples = indicator_samples(np.arange(1, 21, dtype=float), np.ones(20), x)
    config = ForestConfig(n_tree=1, n_min=1, alpha=0.5, exhaustive_cuts=True)
    split = best_split(samples, config, derive_rng(0, 0))
    assert split is not None
    left = int(np.sum(x[:, 0] <= split.threshold))
    assert left == 10


def test_best_split_none_when_no_variation():
    samples = indicator_samples([1.0, 2.0, 3.0, 4.0], [1, 1, 1, 1])
    config = ForestConfig(n_tree=1, n_min=1)
    assert best_split(samples, config, derive_rng(0, 0)) is None


def test_resolve_mtry_defaults_and_clamps():
    assert ForestConfig().resolve_mtry(9) == 3
    assert ForestConfig().resolve_mtry(10) == 4
    assert ForestConfig(mtry=50).resolve_mtry(4) == 4


def step_signal_samples(n, seed):
    rng = np.random.default_rng(seed)
    z = rng.integers(0, 2, size=n).astype(float)
    other = rng.random(n)
    times = np.where(z == 1, 8.0, 2.0) + rng.random(n) * 0.1
    events = np.ones(n, dtype=int)
    return indicator_samples(times, events, np.column_stack([z, other]))


def test_forest_recovers_step_signal(small_forest_config):
    forest = fit_forest(step_signal_samples(80, 3), small_forest_config)
    high = forest.predict_curve([1.0, 0.5]).truncated_mean(10)
    low = forest.predict_curve([0.0, 0.5]).truncated_mean(10)
    assert high > 6.0
    assert low < 4.0


def test_forest_is_deterministic_across_workers(small_forest_config):
    samples = step_signal_samples(60, 4)
    serial = fit_forest(samples, small_forest_config, n_jobs=1)
    parallel = fit_forest(samples, small_forest_config, n_jobs=2)
    assert serial.to_dict() == parallel.to_dict()


def test_stage_values_match_averaged_curve(small_forest_config):
    forest = fit_forest(step_signal_samples(60, 5), small_forest_config)
    H = np.array([[0.0, 0.2], [1.0, 0.9], [1.0, 0.1]])
    B = np.array([0.0, 1.5, 3.0])
    for criterion in (
        Criterion(kind="mean", tau=10),
        Criterion(kind="survprob", tau=10, t=5),
        Criterion(kind="composite", tau=10, t=5),
    ):
        values = forest.stage_values(H, B, criterion)
        for i in range(H.shape[0]):
            expected = stage_value(forest.predict_curve(H[i]), criterion, B[i])
            np.testing.assert_allclose(values[i], expected, atol=1e-12)


def test_forest_dict_round_trip_predicts_identically(small_forest_config):
    forest = fit_forest(step_signal_samples(50, 6), small_forest_config)
    loaded = GeneralizedForest.from_dict(forest.to_dict())
    for h in ([0.0, 0.3], [1.0, 0.7]):
        assert loaded.predict_curve(h) == forest.predict_curve(h)


def test_fit_forest_errors(small_forest_config):
    with pytest.raises(ForestConstructionError):
        fit_forest([], small_forest_config)
    with pytest.raises(ForestConstructionError):
        fit_forest(indicator_samples([1.0, 2.0], [0, 0]), small_forest_config)
    forest = fit_forest(step_signal_samples(30, 7), small_forest_config)
    with pytest.raises(DimensionMismatchError):
        forest.predict_curve([1.0, 2.0, 3.0])


def test_md_split_rule_grows_forest():
    config = ForestConfig(n_tree=5, n_min=2, split_rule="md", seed=2)
    forest = fit_forest(step_signal_samples(60, 8), config)
    assert forest.predict_curve([1.0, 0.5]).truncated_mean(10) > forest.predict_curve([0.0, 0.5]).truncated_mean(10)


@pytest.mark.slow
def test_forest_error_shrinks_with_sample_size():
    """
    Integrated absolute error against the true conditional survival drops by
    at least a quarter when the sample grows tenfold.

    T | z ~ Exponential(1 + z), z ~ U(0, 1), 20% independent censoring.
    """
    grid = np.linspace(0, 3, 301)
    z_eval = np.linspace(0.05, 0.95, 10)

    def error(n, seed):
        rng = np.random.default_rng(seed)
        z = rng.random(n)
        t = rng.exponential(1.0 / (1.0 + z))
        censored = rng.random(n) < 0.2
        c = np.where(censored, rng.random(n) * t, t)
        samples = indicator_samples(c, (~censored).astype(int), z.reshape(-1, 1))
        forest = fit_forest(samples, ForestConfig(n_tree=20, n_min=5, tau=3.0, seed=seed))
        total = 0.0
        for zz in z_eval:
            est = forest.predict_curve([zz]).evaluate(grid)
            total += np.trapezoid(np.abs(est - np.exp(-(1 + zz) * grid)), grid)
        return total / z_eval.size

    small = np.mean([error(500, s) for s in range(10)])
    large = np.mean([error(5000, s) for s in range(10)])
    assert large <= 0.75 * small
