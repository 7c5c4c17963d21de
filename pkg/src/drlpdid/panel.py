"""Staggered-adoption panels, base-period rules and clean-control stacks.

Periods are 1-based. A never-treated unit has ``first_treat`` coded as
:data:`NEVER`; callers should test ``panel.never_treated`` rather than compare
entry dates numerically.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .errors import EmptyStack, HorizonOutOfRange, InadmissibleBase, InvalidPanel

log = logging.getLogger(__name__)

NEVER = kernels.NEVER


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Panel:
    """Balanced unit-by-period panel with an absorbing binary treatment.

    Use :meth:`from_arrays` to build one; the constructor expects already
    encoded arrays.

    Attributes
    ----------
    outcome : (N, T) float array
    first_treat : (N,) int array, entry period in ``1..T`` or ``NEVER``
    covariates : (N, k) float array of unit-level covariates
    cluster : (N,) int array of cluster codes ``0..n_clusters-1``
    covariates_by_period : optional (N, T, k) array; when present the stack
        reads covariates at the period before entry
    """

    outcome: np.ndarray
    first_treat: np.ndarray
    covariates: np.ndarray
    cluster: np.ndarray
    covariate_names: tuple = ()
    unit_ids: np.ndarray | None = None
    times: np.ndarray | None = None
    cluster_labels: np.ndarray | None = None
    covariates_by_period: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.outcome, dtype=float)
        if y.ndim != 2:
            raise InvalidPanel("outcome must be a units x periods matrix")
        n, T = y.shape
        if not np.all(np.isfinite(y)):
            raise InvalidPanel("outcome has missing or non-finite cells; "
                               "unbalanced panels are not supported")
        g = np.asarray(self.first_treat)
        if g.shape != (n,) or not np.issubdtype(g.dtype, np.integer):
            raise InvalidPanel("first_treat must be an integer vector of length N")
        bad = (g != NEVER) & ((g < 1) | (g > T))
        if bad.any():
            raise InvalidPanel(f"entry dates outside 1..{T}: units {np.flatnonzero(bad)[:5].tolist()}")
        x = np.asarray(self.covariates, dtype=float).reshape(n, -1)
        if not np.all(np.isfinite(x)):
            raise InvalidPanel("covariates contain missing values")
        cl = np.asarray(self.cluster)
        if cl.shape != (n,):
            raise InvalidPanel("cluster must have one label per unit")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise InvalidPanel("covariate_names does not match covariate columns")
        unit_ids = np.arange(n) if self.unit_ids is None else np.asarray(self.unit_ids)
        times = np.arange(1, T + 1) if self.times is None else np.asarray(self.times)
        if unit_ids.shape != (n,) or times.shape != (T,):
            raise InvalidPanel("unit_ids/times have the wrong length")
        labels = np.unique(cl) if self.cluster_labels is None else np.asarray(self.cluster_labels)
        codes = cl.astype(np.int64) if self.cluster_labels is not None else np.searchsorted(labels, cl)
        if codes.min(initial=0) < 0 or codes.max(initial=0) >= max(len(labels), 1):
            raise InvalidPanel("cluster codes out of range")
        xp = self.covariates_by_period
        if xp is not None:
            xp = np.asarray(xp, dtype=float)
            if xp.shape != (n, T, x.shape[1]) or not np.all(np.isfinite(xp)):
                raise InvalidPanel("covariates_by_period must be a complete N x T x k array")
            xp = _frozen(xp)

        set_ = object.__setattr__
        set_(self, "outcome", _frozen(y))
        set_(self, "first_treat", _frozen(g.astype(np.int64)))
        set_(self, "covariates", _frozen(x))
        set_(self, "cluster", _frozen(codes.astype(np.int64)))
        set_(self, "cluster_labels", _frozen(labels))
        set_(self, "covariate_names", names)
        set_(self, "unit_ids", _frozen(unit_ids))
        set_(self, "times", _frozen(times))
        set_(self, "covariates_by_period", xp)

    @classmethod
    def from_arrays(cls, outcome, first_treat, covariates=None, cluster=None, *,
                    covariate_names: Sequence[str] = (), unit_ids=None, times=None,
                    covariates_by_period=None) -> "Panel":
        """Build a panel from plain arrays.

        ``first_treat`` entries that are ``None``, NaN or infinite mark
        never-treated units.
        """
        y = np.asarray(outcome, dtype=float)
        n = y.shape[0]
        g = np.empty(n, dtype=np.int64)
        for i, v in enumerate(first_treat):
            if v is None or (isinstance(v, float) and not math.isfinite(v)):
                g[i] = NEVER
            else:
                if float(v) != int(v):
                    raise InvalidPanel(f"unit {i}: entry date {v!r} is not an integer")
                g[i] = int(v)
                if g[i] == NEVER:
                    raise InvalidPanel(f"unit {i}: entry date {v!r} outside 1..{y.shape[1]}")
        if covariates is None:
            covariates = np.zeros((n, 0))
        if cluster is None:
            cluster = np.arange(n) if unit_ids is None else np.asarray(unit_ids)
        return cls(y, g, np.asarray(covariates, dtype=float).reshape(n, -1), np.asarray(cluster),
                   covariate_names=tuple(covariate_names), unit_ids=unit_ids, times=times,
                   covariates_by_period=covariates_by_period)

    @property
    def n_units(self) -> int:
        return self.outcome.shape[0]

    @property
    def n_periods(self) -> int:
        return self.outcome.shape[1]

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_labels)

    @property
    def never_treated(self) -> np.ndarray:
        return self.first_treat == NEVER

    def status(self) -> np.ndarray:
        """Calendar-time treatment status, an (N, T) boolean matrix."""
        s = np.arange(1, self.n_periods + 1)
        g = self.first_treat[:, None]
        return (g != NEVER) & (s[None, :] >= g)

    def unit_index(self, unit) -> int:
        hits = np.flatnonzero(self.unit_ids == unit)
        if hits.size != 1:
            raise KeyError(unit)
        return int(hits[0])


@dataclass(frozen=True)
class BaseRule:
    """Pre-treatment base built from the periods ``t - lag`` for each lag.

    ``weights[j]`` applies to period ``t - lags[j]``.
    """

    lags: tuple
    weights: tuple
    name: str = "custom"

    def __post_init__(self):
        lags = tuple(int(v) for v in self.lags)
        w = tuple(float(v) for v in self.weights)
        if not lags or len(lags) != len(w):
            raise InadmissibleBase("base rule needs one weight per lag")
        if min(lags) < 1 or len(set(lags)) != len(lags):
            raise InadmissibleBase("base rule lags must be distinct and >= 1 "
                                   "(only periods strictly before entry)")
        if min(w) < 0 or not math.isclose(math.fsum(w), 1.0, rel_tol=0, abs_tol=1e-12):
            raise InadmissibleBase(f"base weights must be nonnegative and sum to 1, got {w}")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "weights", w)

    @classmethod
    def last_pre(cls) -> "BaseRule":
        return cls((1,), (1.0,), "last_pre")

    @classmethod
    def mean_pre(cls, k: int) -> "BaseRule":
        """Equal-weight average of the ``k`` periods before entry."""
        return cls(tuple(range(k, 0, -1)), (1.0 / k,) * k, f"mean_pre{k}")

    @classmethod
    def from_weights(cls, weights: Sequence[float]) -> "BaseRule":
        """Weights over the ``len(weights)`` periods before entry, earliest first."""
        k = len(weights)
        return cls(tuple(range(k, 0, -1)), tuple(weights), "weighted_pre")

    @property
    def max_lag(self) -> int:
        return max(self.lags)

    def pre_periods(self, t: int) -> np.ndarray:
        return t - np.asarray(self.lags, dtype=np.int64)

    def admissible(self, t: int) -> bool:
        return t - self.max_lag >= 1

    def to_dict(self) -> dict:
        return {"name": self.name, "lags": list(self.lags), "weights": list(self.weights)}


LAST_PRE = BaseRule.last_pre()


def base_value(panel: Panel, unit: int, t: int, rule: BaseRule = LAST_PRE) -> float:
    """Weighted pre-period base of ``unit`` (row index) for entry date ``t``."""
    if not (1 <= t <= panel.n_periods) or not rule.admissible(t):
        raise InadmissibleBase(f"rule {rule.name} is not admissible at t={t}")
    periods = rule.pre_periods(t)
    return float(panel.outcome[unit, periods - 1] @ np.asarray(rule.weights))


def _check_horizon(panel: Panel, t: int, h: int, rule: BaseRule) -> None:
    if not (1 <= t <= panel.n_periods) or not rule.admissible(t):
        raise InadmissibleBase(f"rule {rule.name} is not admissible at t={t}")
    if not (1 <= t + h <= panel.n_periods):
        raise HorizonOutOfRange(f"t+h = {t + h} outside 1..{panel.n_periods}")


def long_diff(panel: Panel, unit: int, t: int, h: int, rule: BaseRule = LAST_PRE) -> float:
    """``Y[unit, t+h]`` minus the base value for entry date ``t``."""
    _check_horizon(panel, t, h, rule)
    return float(panel.outcome[unit, t + h - 1] - base_value(panel, unit, t, rule))


def comparison_window(t: int, h: int, rule: BaseRule = LAST_PRE) -> np.ndarray:
    """Periods over which a control must stay untreated; ``h < 0`` uses ``h = 0``."""
    return np.concatenate([[t + max(h, 0)], rule.pre_periods(t)])


def clean_control_set(panel: Panel, t: int, h: int, rule: BaseRule = LAST_PRE) -> frozenset:
    """Unit ids untreated throughout the comparison window of ``(t, h)``."""
    _check_horizon(panel, t, h, rule)
    window = comparison_window(t, h, rule)
    clean = ~panel.status()[:, window - 1].any(axis=1)
    return frozenset(panel.unit_ids[clean].tolist())


@dataclass(frozen=True, eq=False)
class Stack:
    """Horizon-specific pooled clean-control stack, one row per (unit, entry date)."""

    horizon: int
    rule: BaseRule
    unit: np.ndarray
    entry: np.ndarray
    treated: np.ndarray
    delta: np.ndarray
    covariates: np.ndarray
    cluster: np.ndarray
    n_clusters: int
    covariate_names: tuple
    entry_dates: np.ndarray
    dropped_cells: tuple = ()
    notes: tuple = field(default=())

    @property
    def n_rows(self) -> int:
        return self.unit.size

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def n_control(self) -> int:
        return self.n_rows - self.n_treated

    def cell_mask(self, t: int) -> np.ndarray:
        return self.entry == t

    def take(self, rows: np.ndarray) -> "Stack":
        """Sub-stack (or reordering) with the given row indices."""
        return Stack(self.horizon, self.rule, self.unit[rows], self.entry[rows], self.treated[rows],
                     self.delta[rows], self.covariates[rows], self.cluster[rows], self.n_clusters,
                     self.covariate_names, self.entry_dates, self.dropped_cells, self.notes)


def admissible_entry_dates(panel: Panel, h: int, rule: BaseRule = LAST_PRE) -> np.ndarray:
    """Entry dates with at least one entrant for which ``(t, h, rule)`` is admissible."""
    T = panel.n_periods
    dates = np.unique(panel.first_treat[~panel.never_treated])
    ok = [t for t in dates if rule.admissible(int(t)) and 1 <= t + h <= T]
    return np.asarray(ok, dtype=np.int64)


def build_stack(panel: Panel, h: int, rule: BaseRule = LAST_PRE) -> Stack:
    """Pool treated entrants and clean controls over admissible entry dates.

    Cells with entrants but no clean control are dropped and logged. Negative
    horizons reuse the ``h = 0`` membership and only change the outcome.
    """
    h = int(h)
    g = panel.first_treat
    never = panel.never_treated
    dates, dropped = [], []
    for t in admissible_entry_dates(panel, h, rule):
        s_max = t + h if h >= 0 else t
        n_ctrl = int(np.count_nonzero(never | (g > s_max)))
        if n_ctrl == 0:
            n_tr = int(np.count_nonzero(g == t))
            dropped.append((int(t), n_tr))
            log.warning("h=%d: entry date %d has %d entrants but no clean controls; cell dropped",
                        h, t, n_tr)
        else:
            dates.append(int(t))
    if not dates:
        raise EmptyStack(f"no admissible entry date with entrants and clean controls at h={h}")
    dates = np.asarray(dates, dtype=np.int64)

    unit, entry, treated, delta = kernels.stack_rows(
        g, panel.outcome, dates, h, np.asarray(rule.lags), np.asarray(rule.weights))
    if panel.covariates_by_period is not None:
        x = panel.covariates_by_period[unit, entry - 2]
    else:
        x = panel.covariates[unit]
    notes = tuple(f"dropped entry date {t}: {n} entrants without clean controls" for t, n in dropped)
    return Stack(h, rule, unit, entry, treated.astype(bool), delta, np.asarray(x, dtype=float),
                 panel.cluster[unit], panel.n_clusters, panel.covariate_names, dates,
                 tuple(dropped), notes)
