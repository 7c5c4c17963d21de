"""Shared horizon basis and the two working models fitted on it: the
inverse-probability-tilting propensity model and the untreated long-difference
regression."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateBasis, IptDiverged, SeparationDetected, SingularNormalEquations
from .panel import Stack

log = logging.getLogger(__name__)

IPT_TOL = 1e-9
IPT_MAX_ITER = 100
ODDS_LIMIT = 1e8


@dataclass(frozen=True, eq=False)
class Basis:
    matrix: np.ndarray
    names: tuple
    dropped: tuple = ()

    @property
    def n_cols(self) -> int:
        return self.matrix.shape[1]


def _select_covariates(stack: Stack, spec) -> tuple[np.ndarray, list[str]]:
    names = list(stack.covariate_names)
    if spec is None:
        return stack.covariates, names
    idx = []
    for s in spec:
        if isinstance(s, str):
            if s not in names:
                raise KeyError(f"unknown covariate {s!r}")
            idx.append(names.index(s))
        else:
            idx.append(int(s))
    return stack.covariates[:, idx], [names[j] for j in idx]


def build_basis(stack: Stack, covariates: Sequence | None = None, *,
                date_controls: bool = True, interactions: bool = False) -> Basis:
    """Intercept, covariates and entry-date indicators (first date dropped).

    ``covariates`` selects stack covariate columns by name or position;
    ``None`` takes all of them. Constant columns and columns collinear with
    earlier ones on the control rows are pruned and recorded in ``dropped``.
    """
    x, xnames = _select_covariates(stack, covariates)
    cols = [np.ones(stack.n_rows)]
    names = ["const"]
    for j, nm in enumerate(xnames):
        cols.append(x[:, j])
        names.append(nm)
    if date_controls:
        for t in stack.entry_dates[1:]:
            dummy = (stack.entry == t).astype(float)
            cols.append(dummy)
            names.append(f"t={int(t)}")
            if interactions:
                for j, nm in enumerate(xnames):
                    cols.append(dummy * x[:, j])
                    names.append(f"{nm}:t={int(t)}")

    ctrl = ~stack.treated
    kept, dropped, q = [], [], []
    for col, nm in zip(cols, names):
        if nm != "const" and np.ptp(col) == 0:
            dropped.append((nm, "constant"))
            continue
        v = col[ctrl]
        scale = np.linalg.norm(v)
        if scale == 0:
            dropped.append((nm, "zero on control rows"))
            continue
        r = v / scale
        for _ in range(2):
            for b in q:
                r = r - (b @ r) * b
        if np.linalg.norm(r) < 1e-8:
            dropped.append((nm, "collinear on control rows"))
            continue
        q.append(r / np.linalg.norm(r))
        kept.append((col, nm))
    if not kept:
        raise DegenerateBasis("basis has rank 0 on the control rows")
    for nm, why in dropped:
        log.info("h=%d: basis column %s pruned (%s)", stack.horizon, nm, why)
    mat = np.column_stack([c for c, _ in kept])
    return Basis(mat, tuple(nm for _, nm in kept), tuple(dropped))


def intercept_basis(stack: Stack) -> Basis:
    return Basis(np.ones((stack.n_rows, 1)), ("const",))


# --------------------------------------------------------------------------- #
# inverse probability tilting
# --------------------------------------------------------------------------- #


def ipt_objective(gamma, Q, treated) -> float:
    eta = Q @ gamma
    return float(eta[treated].sum() - np.exp(eta[~treated]).sum())


def ipt_moments(gamma, Q, treated) -> np.ndarray:
    """Summed tilting moments ``sum Q {D - (1 - D) exp(Q'gamma)}``."""
    w = np.where(treated, 1.0, -np.exp(Q @ gamma))
    return Q.T @ w


@dataclass
class IptFit:
    gamma: np.ndarray
    iterations: int
    residual: float
    objective_trace: list = field(default_factory=list)


def fit_ipt(stack: Stack, basis: Basis, tol: float = IPT_TOL, max_iter: int = IPT_MAX_ITER,
            odds_limit: float = ODDS_LIMIT) -> IptFit:
    """Damped Newton solve of the exact-balance tilting problem.

    Maximizes ``sum D Q'g - (1 - D) exp(Q'g)`` from ``g = 0`` with
    step halving; stops when the sup-norm of the summed moments is below
    ``tol``.
    """
    Q = basis.matrix
    d = np.asarray(stack.treated, dtype=bool)
    if d.all() or not d.any():
        raise SeparationDetected("tilting needs both treated and control rows")
    Qc = Q[~d]
    target = Q[d].sum(axis=0)
    gamma = np.zeros(Q.shape[1])

    def objective(g):
        with np.errstate(over="ignore"):
            val = target @ g - np.exp(Qc @ g).sum()
        return val if np.isfinite(val) else -np.inf

    obj = objective(gamma)
    trace = [obj]
    for it in range(max_iter + 1):
        w = np.exp(Qc @ gamma)
        if w.max() > odds_limit:
            raise SeparationDetected(
                f"h={stack.horizon}: odds reached {w.max():.3g}; a basis direction "
                "nearly separates entrants from controls")
        grad = target - Qc.T @ w
        resid = float(np.abs(grad).max())
        if resid < tol:
            return IptFit(gamma, it, resid, trace)
        if it == max_iter:
            break
        H = (Qc * w[:, None]).T @ Qc
        try:
            L = np.linalg.cholesky(H)
            step = np.linalg.solve(L.T, np.linalg.solve(L, grad))
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = grad @ step
        s = 1.0
        for _ in range(60):
            cand = gamma + s * step
            new = objective(cand)
            if new >= obj + 1e-4 * s * slope - 1e-12 * (1.0 + abs(obj)):
                break
            s *= 0.5
        else:
            raise IptDiverged(f"h={stack.horizon}: line search failed at iteration {it}, "
                              f"moment residual {resid:.3g}")
        gamma, obj = cand, new
        trace.append(new)
    raise IptDiverged(f"h={stack.horizon}: no convergence in {max_iter} Newton steps "
                      f"(moment residual {resid:.3g}); overlap is likely poor")


# --------------------------------------------------------------------------- #
# outcome regressions
# --------------------------------------------------------------------------- #


def _control_weights(stack: Stack, odds) -> np.ndarray:
    odds = np.asarray(odds, dtype=float)
    if odds.shape[0] == stack.n_rows:
        odds = odds[~stack.treated]
    if odds.shape[0] != stack.n_control:
        raise ValueError("odds must have one entry per row or per control row")
    if np.any(odds <= 0) or not np.all(np.isfinite(odds)):
        raise SingularNormalEquations("outcome weights must be positive and finite")
    return odds


def fit_outcome_wls(stack: Stack, basis: Basis, odds=None) -> np.ndarray:
    """Least squares of the long difference on the basis over control rows,
    weighted by ``odds`` when given."""
    ctrl = ~stack.treated
    Q = basis.matrix[ctrl]
    y = stack.delta[ctrl]
    if Q.shape[0] < Q.shape[1]:
        raise SingularNormalEquations(
            f"h={stack.horizon}: {Q.shape[0]} control rows for {Q.shape[1]} basis columns")
    if odds is not None:
        sw = np.sqrt(_control_weights(stack, odds))
        Q, y = Q * sw[:, None], y * sw
    beta, _, rank, sv = np.linalg.lstsq(Q, y, rcond=None)
    if rank < Q.shape[1]:
        raise SingularNormalEquations(
            f"h={stack.horizon}: control design has rank {rank} < {Q.shape[1]}")
    return beta


def fit_outcome_ols(stack: Stack, basis: Basis) -> np.ndarray:
    return fit_outcome_wls(stack, basis, None)


@dataclass(eq=False)
class NuisanceFit:
    gamma: np.ndarray | None
    beta: np.ndarray | None
    odds: np.ndarray | None
    pscore: np.ndarray | None
    diagnostics: dict


def fit_nuisance(stack: Stack, basis: Basis, *, propensity: bool = True, outcome: str | None = "wls",
                 tol: float = IPT_TOL, max_iter: int = IPT_MAX_ITER,
                 odds_cap: float | None = None) -> NuisanceFit:
    """Fit the working models an estimator needs.

    ``outcome`` is ``"wls"`` (odds-weighted, needs ``propensity``), ``"ols"``
    or ``None``. ``odds_cap`` truncates control odds after the fit, which
    breaks exact balance; it is off by default.
    """
    diag = {"horizon": stack.horizon, "n_rows": stack.n_rows, "n_treated": stack.n_treated,
            "n_control": stack.n_control, "basis": list(basis.names),
            "dropped_columns": [list(d) for d in basis.dropped],
            "dropped_cells": [list(d) for d in stack.dropped_cells]}
    gamma = odds = pscore = beta = None
    if propensity:
        ipt = fit_ipt(stack, basis, tol=tol, max_iter=max_iter)
        gamma = ipt.gamma
        odds = np.exp(basis.matrix @ gamma)
        pscore = odds / (1.0 + odds)
        diag.update(ipt_iterations=ipt.iterations, ipt_residual=ipt.residual)
        if odds_cap is not None:
            n_capped = int(np.count_nonzero(odds[~stack.treated] > odds_cap))
            odds = np.minimum(odds, odds_cap)
            diag.update(odds_cap=odds_cap, odds_capped=n_capped)
            if n_capped:
                log.warning("h=%d: %d control odds capped at %g", stack.horizon, n_capped, odds_cap)
        oc = odds[~stack.treated]
        diag["odds_quantiles"] = dict(zip(["min", "q25", "median", "q75", "max"],
                                          np.quantile(oc, [0, .25, .5, .75, 1]).tolist()))
    if outcome == "wls":
        if odds is None:
            raise ValueError("weighted outcome regression needs the propensity fit")
        beta = fit_outcome_wls(stack, basis, odds)
    elif outcome == "ols":
        beta = fit_outcome_ols(stack, basis)
    elif outcome is not None:
        raise ValueError(f"unknown outcome fit {outcome!r}")
    return NuisanceFit(gamma, beta, odds, pscore, diag)
