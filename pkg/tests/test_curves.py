# tests/test_curves.py
import numpy as np
import pytest

from curves.criteria import Criterion, best_index, compare, stage_value
from curves.curves import StepCurve, average_curves, constant_curve, indicator_curve
from utils.errors import CurveError


def test_evaluate_is_right_continuous():
    curve = indicator_curve(2)
    assert curve.evaluate(1) == 1.0
    assert curve.evaluate(2) == 0.0
    assert curve.left_limit(2) == 1.0
    assert curve.evaluate(-1) == 1.0


def test_evaluate_piecewise_constant():
    curve = StepCurve([1, 3], [0.5, 0.25])
    assert curve(2) == 0.5
    assert curve.left_limit(3) == 0.5
    np.testing.assert_array_equal(curve.evaluate([0, 1, 2.9, 3, 10]), [1, 0.5, 0.5, 0.25, 0.25])


def test_invalid_curves_rejected():
    with pytest.raises(CurveError):
        StepCurve([1, 1], [0.5, 0.2])
    with pytest.raises(CurveError):
        StepCurve([1, 2], [0.2, 0.5])
    with pytest.raises(CurveError):
        StepCurve([-1], [0.5])
    with pytest.raises(CurveError):
        StepCurve([1], [1.5])


def test_zero_height_steps_are_dropped():
    curve = StepCurve([1, 2, 3], [0.5, 0.5, 0.0])
    assert curve == StepCurve([1, 3], [0.5, 0.0])


def test_shift_examples():
    assert indicator_curve(2).shift(3) == indicator_curve(5)
    curve = StepCurve([1, 2], [0.5, 0])
    assert curve.shift(0) is curve
    assert curve.shift(1.5) == StepCurve([2.5, 3.5], [0.5, 0])
    with pytest.raises(CurveError):
        curve.shift(-1)


def test_shift_composes(rng):
    times = np.sort(rng.choice(np.arange(1, 100), size=8, replace=False)) / 8
    values = np.sort(rng.random(8))[::-1]
    curve = StepCurve(times, values)
    assert curve.shift(0.25).shift(0.5) == curve.shift(0.75)


def test_truncated_mean_examples():
    assert indicator_curve(5).truncated_mean(10) == 5
    assert constant_curve().truncated_mean(10) == 10
    assert StepCurve([2, 4], [0.5, 0]).truncated_mean(10) == 3
    with pytest.raises(CurveError):
        constant_curve().truncated_mean(0)


def test_truncated_mean_bounds(rng):
    for _ in range(20):
        times = np.cumsum(rng.random(5) + 0.1)
        values = np.sort(rng.random(5))[::-1]
        mean = StepCurve(times, values).truncated_mean(3.0)
        assert 0 <= mean <= 3.0


def test_integral_is_vectorised():
    curve = StepCurve([2, 4], [0.5, 0])
    np.testing.assert_allclose(curve.integral([-1, 0, 1, 3, 10]), [0, 0, 1, 2.5, 3])


def test_stage_value_examples():
    mean = Criterion(kind="mean", tau=10)
    prob = Criterion(kind="survprob", tau=10, t=5)
    assert stage_value(indicator_curve(3), mean, baseline=2) == 5
    assert stage_value(indicator_curve(3), prob, baseline=2) == 0
    assert stage_value(indicator_curve(3), prob, baseline=4) == 1
    assert stage_value(indicator_curve(3), prob, baseline=5.5) == 1


def test_composite_stage_value_pairs():
    composite = Criterion(kind="composite", tau=10, t=5)
    assert stage_value(StepCurve([4, 8], [0.5, 0]), composite) == (0.5, 6.0)


def test_compare_lexicographic():
    exact = Criterion(kind="composite", tau=10, t=5, tie_epsilon=0)
    assert compare(exact, (0.5, 6), (0.5, 7)) == -1
    assert compare(exact, (0.6, 1), (0.5, 9)) == 1
    loose = Criterion(kind="composite", tau=10, t=5, tie_epsilon=1e-3)
    assert compare(loose, (0.5000001, 3), (0.5, 9)) == -1


def test_best_index_prefers_smallest_on_ties():
    mean = Criterion(kind="mean", tau=10)
    assert best_index(mean, [3.0, 3.0 + 1e-12, 2.0]) == 0
    assert best_index(mean, [None, 1.0, 4.0]) == 2


def test_criterion_validation():
    with pytest.raises(ValueError):
        Criterion(kind="survprob", tau=10)
    with pytest.raises(ValueError):
        Criterion(kind="survprob", tau=10, t=11)
    assert Criterion.parse("composite@5", tau=10).label == "composite@5"
    with pytest.raises(CurveError):
        Criterion.parse("median", tau=10)
    with pytest.raises(CurveError):
        Criterion.parse("survprob@soon", tau=10)


def test_average_curves_on_union_grid():
    avg = average_curves([indicator_curve(2), indicator_curve(4)])
    assert avg == StepCurve([2, 4], [0.5, 0])
    assert avg.truncated_mean(10) == pytest.approx(3.0)


def test_curve_dict_round_trip():
    curve = StepCurve([0.1, 0.7, 2.0], [0.9, 1 / 3, 0.0])
    assert StepCurve.from_dict(curve.to_dict()) == curve
