# forest/splitting.py
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from curves.curves import StepCurve
from utils.log import get_logger

logger = get_logger("forest")

# risk mass at or below this is treated as an exhausted risk set
RISK_EPS = 1e-12


class KaplanMeierResult(NamedTuple):
    curve: StepCurve
    frozen: bool


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    score: float


@dataclass(frozen=True, eq=False)
class MassTable:
    """
    All jumps of a set of outcome curves, flattened.

    Entry k says: curve ``owner[k]`` loses ``drops[k]`` survival mass at
    ``times[k]``; ``event_drops[k]`` is that loss when the owner is an event
    (delta = 1) and 0 otherwise. Risk sets and event masses of any weighted
    subset of owners are bincounts over these entries.
    """

    owner: np.ndarray
    times: np.ndarray
    drops: np.ndarray
    event_drops: np.ndarray

    @classmethod
    def from_curves(cls, curves, events):
        events = np.asarray(events, dtype=float)
        sizes = [len(c) for c in curves]
        owner = np.repeat(np.arange(len(curves)), sizes)
        if owner.size:
            times = np.concatenate([c.times for c in curves])
            drops = np.concatenate([c.drops() for c in curves])
        else:
            times = np.zeros(0)
            drops = np.zeros(0)
        return cls(owner, times, drops, drops * events[owner])

    def __len__(self):
        return int(self.owner.size)


def aggregate(table, entries, entry_weights):
    """
    Collapse table entries onto their distinct times.

    Returns:
        tuple: (grid, inverse, total_drop, event_drop) where ``inverse`` maps each
        selected entry to its grid position.
    """
    grid, inverse = np.unique(table.times[entries], return_inverse=True)
    total = np.bincount(
        inverse, weights=table.drops[entries] * entry_weights, minlength=grid.size
    )
    event = np.bincount(
        inverse, weights=table.event_drops[entries] * entry_weights, minlength=grid.size
    )
    return grid, inverse, total, event


def at_risk(mass, total_drop):
    """Risk mass just before each grid time: sum_i S_i(s-)."""
    return mass - (np.cumsum(total_drop) - total_drop)


def product_limit(grid, risk, events):
    """
    Product-limit curve with fractional risk and event masses.

    Factors are ``1 - events / risk`` clamped to [0, 1]. When the risk mass is
    exhausted while event mass remains, the curve is frozen at its last value
    from that time on and the result is flagged.
    """
    has_event = events > 0
    grid, risk, events = grid[has_event], risk[has_event], events[has_event]
    exhausted = risk <= RISK_EPS
    frozen = bool(exhausted.any())
    if frozen:
        stop = int(np.argmax(exhausted))
        grid, risk, events = grid[:stop], risk[:stop], events[:stop]
    factors = np.clip(1.0 - events / risk, 0.0, 1.0)
    return KaplanMeierResult(StepCurve.from_steps(grid, np.cumprod(factors)), frozen)


def km_from_table(table, entries, entry_weights, mass):
    if entries.size == 0:
        return KaplanMeierResult(StepCurve([], []), False)
    grid, _, total, event = aggregate(table, entries, entry_weights)
    return product_limit(grid, at_risk(mass, total), event)


def node_km(samples, weights=None):
    """
    Modified Kaplan-Meier estimate of a node whose outcomes are curves.

    Risk sets are sums of the members' S_i(s-) and event counts are the
    event members' survival drops at s, so on indicator curves this is the
    classical Kaplan-Meier estimator.

    Args:
        samples (Sequence[ForestSample]): Nonempty node members
        weights (array-like, optional): Multiplicity of each member (bootstrap
            counts). Defaults to 1 for every member.

    Returns:
        KaplanMeierResult: ``(curve, frozen)``; ``frozen`` is True when the risk
        mass ran out before the remaining event mass.
    """
    if not samples:
        raise ValueError("node_km needs at least one sample")
    weights = (
        np.ones(len(samples)) if weights is None else np.asarray(weights, dtype=float)
    )
    table = MassTable.from_curves([s.curve for s in samples], [s.event for s in samples])
    entries = np.arange(len(table))
    result = km_from_table(table, entries, weights[table.owner], float(weights.sum()))
    if result.frozen:
        logger.debug("node curve frozen after risk mass was exhausted")
    return result


def _glr_from_masses(risk1, event1, risk2, event2, variance):
    risk = risk1 + risk2
    event = event1 + event2
    use = (event > 0) & (risk > RISK_EPS)
    if not use.any():
        return 0.0
    r1, r2, r = risk1[use], risk2[use], risk[use]
    d1, d2, d = event1[use], event2[use], event[use]
    numerator = np.sum((r2 * d1 - r1 * d2) / r)
    spread = np.clip(r - d, 0.0, None)
    if variance == "hypergeometric":
        ok = r > 1.0
        var = np.sum(r1[ok] * r2[ok] * d[ok] * spread[ok] / (r[ok] ** 2 * (r[ok] - 1.0)))
    else:
        var = np.sum(r1 * r2 * d * spread / r**3)
    if not var > 0:
        return 0.0
    return float(numerator / np.sqrt(var))


def _km_truncated_mean(grid, risk, event, tau):
    curve, frozen = product_limit(grid, risk, event)
    return curve.truncated_mean(tau), frozen


def _two_node_table(node1, node2, tau):
    samples = list(node1) + list(node2)
    table = MassTable.from_curves([s.curve for s in samples], [s.event for s in samples])
    entries = np.nonzero(table.times <= tau)[0]
    in_first = table.owner[entries] < len(node1)
    return table, entries, in_first


def _split_masses(table, entries, in_first, mass1, mass2):
    grid, inverse, total, event = aggregate(table, entries, np.ones(entries.size))
    first = in_first.astype(float)
    total1 = np.bincount(inverse, weights=table.drops[entries] * first, minlength=grid.size)
    event1 = np.bincount(
        inverse, weights=table.event_drops[entries] * first, minlength=grid.size
    )
    total2, event2 = total - total1, event - event1
    return grid, at_risk(mass1, total1), event1, at_risk(mass2, total2), event2


def glr_statistic(node1, node2, tau, variance="cubic"):
    """
    Generalized two-sample log-rank statistic between two candidate nodes.

    Y_l(t) is the risk mass sum_i S_i(t-) of node l and dN_l(t) its event mass
    at t; the statistic is

        sum_t (Y2 dN1 - Y1 dN2) / Y  /  sqrt(sum_t Y1 Y2 dN (Y - dN) / Y^3)

    over t in [0, tau]. On indicator curves this is the count-based log-rank
    statistic (observed minus expected failures of node 1 over its standard
    deviation); ``variance="hypergeometric"`` swaps the denominator for the
    Y^2 (Y - 1) form. A zero variance gives 0.

    Args:
        node1 (Sequence[ForestSample]): First node
        node2 (Sequence[ForestSample]): Second node
        tau (float): Horizon
        variance (str): "cubic" or "hypergeometric"

    Returns:
        float: Signed statistic; split quality is its absolute value.
    """
    table, entries, in_first = _two_node_table(node1, node2, tau)
    if entries.size == 0:
        return 0.0
    _, risk1, event1, risk2, event2 = _split_masses(
        table, entries, in_first, float(len(node1)), float(len(node2))
    )
    return _glr_from_masses(risk1, event1, risk2, event2, variance)


def md_statistic(node1, node2, tau):
    """
    Absolute difference of the two nodes' truncated mean survival times.

    Returns:
        tuple[float, bool]: ``(statistic, frozen)``; ``frozen`` is True when
        either node curve was frozen.
    """
    table, entries, in_first = _two_node_table(node1, node2, tau)
    if entries.size == 0:
        return 0.0, False
    grid, risk1, event1, risk2, event2 = _split_masses(
        table, entries, in_first, float(len(node1)), float(len(node2))
    )
    mean1, frozen1 = _km_truncated_mean(grid, risk1, event1, tau)
    mean2, frozen2 = _km_truncated_mean(grid, risk2, event2, tau)
    return abs(mean1 - mean2), frozen1 or frozen2


class SplitSearch:
    """
    Random split search over weighted node members.

    Holds the training covariates, event flags and the jump table once; each
    call to ``find`` works on one node given as member indices, their
    resampling multiplicities and the table entries owned by those members.
    """

    def __init__(self, covariates, events, table, config):
        self.covariates = covariates
        self.events = np.asarray(events, dtype=float)
        self.table = table
        self.config = config
        self.in_horizon = table.times <= config.tau
        self.mtry = config.resolve_mtry(covariates.shape[1])

    def _features(self, rng):
        d = self.covariates.shape[1]
        if rng.random() < self.config.split_prob_uniform:
            return [int(rng.integers(d))]
        return [int(f) for f in rng.choice(d, size=self.mtry, replace=False)]

    def _thresholds(self, x, rng):
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            return np.zeros(0)
        if self.config.exhaustive_cuts:
            distinct = np.unique(x)
            return (distinct[:-1] + distinct[1:]) / 2.0
        return rng.uniform(lo, hi, size=self.config.n_cut)

    def _admissible(self, mass, events, child_mass, child_events):
        cfg = self.config
        other_mass, other_events = mass - child_mass, events - child_events
        if min(child_mass, other_mass) < max(cfg.alpha * mass, cfg.n_min):
            return False
        return min(child_events, other_events) >= cfg.n_min_event

    def find(self, members, weights, entries, rng):
        """
        Best admissible split of one node, or None to make it terminal.

        Args:
            members (numpy.ndarray): Distinct sample indices in the node
            weights (numpy.ndarray): Multiplicity of each member
            entries (numpy.ndarray): Table entries owned by the members
            rng (numpy.random.Generator): The tree's stream

        Returns:
            Split or None
        """
        cfg = self.config
        weights = np.asarray(weights, dtype=float)
        mass = float(weights.sum())
        member_events = weights * self.events[members]
        n_events = float(member_events.sum())

        entries = entries[self.in_horizon[entries]]
        position = np.full(self.covariates.shape[0], -1)
        position[members] = np.arange(members.size)
        entry_pos = position[self.table.owner[entries]]
        entry_weights = weights[entry_pos]
        if entries.size:
            grid, inverse, total, event = aggregate(self.table, entries, entry_weights)
        else:
            grid = np.zeros(0)

        best = None
        for feature in self._features(rng):
            x = self.covariates[members, feature]
            for threshold in self._thresholds(x, rng):
                goes_left = x <= threshold
                left_mass = float(weights[goes_left].sum())
                left_events = float(member_events[goes_left].sum())
                if not self._admissible(mass, n_events, left_mass, left_events):
                    continue
                if grid.size == 0:
                    continue
                entry_left = goes_left[entry_pos] * entry_weights
                total1 = np.bincount(
                    inverse, weights=self.table.drops[entries] * entry_left,
                    minlength=grid.size,
                )
                event1 = np.bincount(
                    inverse, weights=self.table.event_drops[entries] * entry_left,
                    minlength=grid.size,
                )
                risk1 = at_risk(left_mass, total1)
                risk2 = at_risk(mass - left_mass, total - total1)
                event2 = event - event1
                if cfg.split_rule == "md":
                    mean1, _ = _km_truncated_mean(grid, risk1, event1, cfg.tau)
                    mean2, _ = _km_truncated_mean(grid, risk2, event2, cfg.tau)
                    score = abs(mean1 - mean2)
                else:
                    score = abs(
                        _glr_from_masses(risk1, event1, risk2, event2, cfg.glr_variance)
                    )
                if score > 0 and (best is None or score > best.score):
                    best = Split(feature, float(threshold), float(score))
        return best


def best_split(samples, config, rng):
    """
    Search a split for a node given as a plain list of samples.

    With probability ``split_prob_uniform`` a single variable is drawn uniformly,
    otherwise ``mtry`` distinct candidates; each gets ``n_cut`` thresholds drawn
    uniformly between the node's minimum and maximum of that variable. Candidates
    breaking alpha-regularity, the child size minimum or the child event minimum
    are discarded; the best remaining one (|GLR| or MD) wins.

    Args:
        samples (Sequence[ForestSample]): Node members (unit weights)
        config (ForestConfig): Growing parameters
        rng (numpy.random.Generator): Random stream

    Returns:
        Split or None: None signals "make terminal".
    """
    covariates = np.vstack([s.covariates for s in samples])
    events = np.array([s.event for s in samples], dtype=float)
    table = MassTable.from_curves([s.curve for s in samples], events)
    search = SplitSearch(covariates, events, table, config)
    members = np.arange(len(samples))
    return search.find(members, np.ones(len(samples)), np.arange(len(table)), rng)
