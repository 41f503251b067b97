# curves/curves.py
from dataclasses import dataclass

import numpy as np

from utils.errors import CurveError

# slack for rounding noise when validating values produced by averaging
_TOL = 1e-12


def _as_array(values):
    arr = np.array(values, dtype=float).reshape(-1)
    return arr


@dataclass(frozen=True, eq=False)
class StepCurve:
    """
    Right-continuous nonincreasing survival function stored as an exact jump list.

    ``S(t) = 1`` for ``t < times[0]`` and ``S(t) = values[j]`` on
    ``[times[j], times[j + 1])``. Zero-height steps are dropped on construction
    so two curves describing the same function have the same arrays. The arrays
    are read-only; curves are shared freely between forests and threads.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = _as_array(self.times)
        values = _as_array(self.values)
        if times.shape != values.shape:
            raise CurveError(
                f"times and values differ in length ({times.size} vs {values.size})"
            )
        if times.size:
            if not np.all(np.isfinite(times)) or not np.all(np.isfinite(values)):
                raise CurveError("curve contains non-finite entries")
            if times[0] < 0:
                raise CurveError(f"negative jump time {times[0]}")
            if np.any(np.diff(times) <= 0):
                raise CurveError("jump times must be strictly increasing")
            if values.min() < -_TOL or values.max() > 1 + _TOL:
                raise CurveError("survival values must lie in [0, 1]")
            if np.any(np.diff(np.concatenate([[1.0], values])) > _TOL):
                raise CurveError("survival values must be nonincreasing")
            values = np.minimum.accumulate(np.clip(values, 0.0, 1.0))
            previous = np.concatenate([[1.0], values[:-1]])
            keep = values < previous
            times, values = times[keep], values[keep]
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_steps(cls, times, values):
        """
        Build a curve from possibly noisy averaged steps.

        Values are clipped to [0, 1] and made nonincreasing with a running
        minimum before validation; use it for arithmetic results, not for
        user input.
        """
        values = np.minimum.accumulate(np.clip(_as_array(values), 0.0, 1.0))
        return cls(_as_array(times), values)

    def __len__(self):
        return int(self.times.size)

    def __eq__(self, other):
        if not isinstance(other, StepCurve):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(
            self.values, other.values
        )

    __hash__ = None

    def __repr__(self):
        steps = ", ".join(
            f"({t:g}, {v:g})" for t, v in zip(self.times[:6], self.values[:6])
        )
        more = ", ..." if self.times.size > 6 else ""
        return f"StepCurve([{steps}{more}])"

    def evaluate(self, t):
        """
        Read S(t) with right-continuity.

        Args:
            t (float or array-like): Time point(s)

        Returns:
            float or numpy.ndarray: Survival probability at each t; 1 before the
            first jump.
        """
        scalar = np.ndim(t) == 0
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        table = np.concatenate([[1.0], self.values])
        out = table[idx]
        return float(out) if scalar else out

    __call__ = evaluate

    def left_limit(self, t):
        """S(t-), i.e. the previous step value at a jump location."""
        scalar = np.ndim(t) == 0
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="left")
        table = np.concatenate([[1.0], self.values])
        out = table[idx]
        return float(out) if scalar else out

    def drops(self):
        """Positive jump sizes S(t_j-) - S(t_j), aligned with ``times``."""
        previous = np.concatenate([[1.0], self.values[:-1]])
        return previous - self.values

    def shift(self, offset):
        """
        Translate the curve right: result(t) = S(t - offset).

        Args:
            offset (float): Nonnegative shift

        Returns:
            StepCurve: The shifted curve
        """
        if offset < 0:
            raise CurveError(f"shift offset must be nonnegative, got {offset}")
        if offset == 0:
            return self
        return StepCurve(self.times + float(offset), self.values)

    def integral(self, upper):
        """
        Exact area under S on [0, upper], vectorised in ``upper``.

        Negative upper limits integrate to 0.
        """
        scalar = np.ndim(upper) == 0
        upper = np.maximum(np.asarray(upper, dtype=float), 0.0)
        knots = np.concatenate([[0.0], self.times])
        heights = np.concatenate([[1.0], self.values])
        cumulative = np.concatenate([[0.0], np.cumsum(np.diff(knots) * heights[:-1])])
        k = np.searchsorted(knots, upper, side="right") - 1
        out = cumulative[k] + heights[k] * (upper - knots[k])
        return float(out) if scalar else out

    def truncated_mean(self, tau):
        """Restricted mean ``∫_0^tau S(t) dt``; residual mass at tau counts as tau."""
        if tau <= 0:
            raise CurveError(f"truncation horizon must be positive, got {tau}")
        return self.integral(tau)

    def to_dict(self):
        return {"times": self.times.tolist(), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(payload["times"], payload["values"])


def indicator_curve(x):
    """1 before ``x`` and 0 from ``x`` on: a point-mass lifetime."""
    return StepCurve([float(x)], [0.0])


def constant_curve():
    """No failure at any time."""
    return StepCurve([], [])


def average_curves(curves):
    """
    Pointwise mean of curves on the union of their jump grids.

    The reduction runs over ``curves`` in the given order, so the same list
    always produces bit-identical output.

    Args:
        curves (Sequence[StepCurve]): Nonempty list of curves

    Returns:
        StepCurve: The averaged curve
    """
    if not curves:
        raise CurveError("cannot average an empty list of curves")
    if len(curves) == 1:
        return curves[0]
    grid = np.unique(np.concatenate([c.times for c in curves]))
    total = np.zeros(grid.size)
    for curve in curves:
        total += curve.evaluate(grid)
    return StepCurve.from_steps(grid, total / len(curves))
