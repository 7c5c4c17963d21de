"""Cohort cells, variance-weighted and RW aggregation, and the pooled LP-DiD
regression they are equivalent to."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlignmentError, NoRetainedCells
from .panel import Stack


@dataclass(frozen=True)
class CellStats:
    cohort: int
    horizon: int
    n_treated: int
    n_controls: int
    did: float

    @property
    def n_total(self) -> int:
        return self.n_treated + self.n_controls

    @property
    def treated_share(self) -> float:
        return self.n_treated / self.n_total


@dataclass(frozen=True)
class AggWeights:
    cohorts: tuple
    weights: np.ndarray
    scheme: str


def cell_stats(stack: Stack) -> list[CellStats]:
    """One cell per entry date: counts and the clean DiD contrast."""
    out = []
    for t in stack.entry_dates:
        m = stack.entry == t
        tr = m & stack.treated
        co = m & ~stack.treated
        n1, n0 = int(tr.sum()), int(co.sum())
        if n1 == 0 or n0 == 0:
            continue
        did = stack.delta[tr].mean() - stack.delta[co].mean()
        out.append(CellStats(int(t), stack.horizon, n1, n0, float(did)))
    return out


def _normalize(cells, raw, scheme):
    raw = np.asarray(raw, dtype=float)
    if len(cells) == 0 or not np.all(np.isfinite(raw)) or raw.sum() <= 0:
        raise NoRetainedCells(f"no non-degenerate cell for {scheme} weights")
    return AggWeights(tuple(c.cohort for c in cells), raw / raw.sum(), scheme)


def vw_weights(cells: Sequence[CellStats]) -> AggWeights:
    """Implicit weights of the pooled regression, proportional to N n (1 - n)."""
    raw = [c.n_total * c.treated_share * (1 - c.treated_share) for c in cells]
    return _normalize(cells, raw, "VW")


def rw_weights(cells: Sequence[CellStats]) -> AggWeights:
    """VW weights rescaled by 1 / (1 - n); reduces to cohort size shares."""
    raw = [c.n_total * c.treated_share * (1 - c.treated_share) / (1 - c.treated_share)
           for c in cells]
    return _normalize(cells, raw, "RW")


def custom_weights(cells: Sequence[CellStats], lam: Sequence[float]) -> AggWeights:
    """Aggregation weights induced by cell-constant regression weights ``lam``."""
    if len(lam) != len(cells):
        raise AlignmentError("one regression weight per cell is required")
    raw = [l * c.n_total * c.treated_share * (1 - c.treated_share) for l, c in zip(lam, cells)]
    return _normalize(cells, raw, "custom")


def aggregate(cells: Sequence[CellStats], weights: AggWeights) -> float:
    if tuple(c.cohort for c in cells) != tuple(weights.cohorts):
        raise AlignmentError(f"cells {[c.cohort for c in cells]} vs weights {list(weights.cohorts)}")
    return float(np.dot(weights.weights, [c.did for c in cells]))


def rw_cell_lambda(cells: Sequence[CellStats]) -> dict:
    """Cell weights 1 / (1 - n) keyed by cohort."""
    return {c.cohort: 1.0 / (1.0 - c.treated_share) for c in cells}


def pooled_design(stack: Stack, extra: np.ndarray | None = None) -> np.ndarray:
    """Columns: treatment dummy, one intercept per entry date, then ``extra``."""
    dates = stack.entry_dates
    fe = (stack.entry[:, None] == dates[None, :]).astype(float)
    cols = [stack.treated.astype(float)[:, None], fe]
    if extra is not None and extra.size:
        cols.append(np.asarray(extra, dtype=float).reshape(stack.n_rows, -1))
    return np.hstack(cols)


def pooled_lpdid_fit(stack: Stack, cell_weights: dict | None = None,
                     extra: np.ndarray | None = None):
    """Weighted least squares of the long difference on the pooled design.

    Returns ``(coef, design, row_weights, residuals)``.
    """
    X = pooled_design(stack, extra)
    if cell_weights is None:
        w = np.ones(stack.n_rows)
    else:
        w = np.array([cell_weights[int(t)] for t in stack.entry], dtype=float)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], stack.delta * sw, rcond=None)
    return coef, X, w, stack.delta - X @ coef


def pooled_lpdid_coefficient(stack: Stack, cell_weights: dict | None = None) -> float:
    """Coefficient on the treatment dummy in the pooled LP-DiD regression.

    ``cell_weights`` maps entry date to a positive weight, constant within the
    cell. ``None`` gives the unweighted (variance-weighted) benchmark.
    """
    return float(pooled_lpdid_fit(stack, cell_weights)[0][0])


def weight_table(stack: Stack) -> list[dict]:
    cells = cell_stats(stack)
    vw, rw = vw_weights(cells), rw_weights(cells)
    return [{"cohort": c.cohort, "h": c.horizon, "N_g": c.n_treated,
             "n_gh": c.treated_share, "w_vw": float(a), "w_rw": float(b)}
            for c, a, b in zip(cells, vw.weights, rw.weights)]


def write_weight_table(stacks: Sequence[Stack], path) -> None:
    rows = [r for s in stacks for r in weight_table(s)]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["cohort", "h", "N_g", "n_gh", "w_vw", "w_rw"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
