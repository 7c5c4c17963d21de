"""Horizon-specific LP-DiD estimators and the event-study driver.

Estimator tags: ``rw`` (LPDID-RW), ``rwx`` (LPDID-RW + X), ``ra`` (LPDID-RA),
``ipt`` (DRLPDID-IPT) and ``dr`` (DRLPDID).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import aggregation, inference
from .errors import DrlpdidError
from .nuisance import Basis, NuisanceFit, build_basis, fit_nuisance
from .panel import LAST_PRE, BaseRule, Panel, Stack, build_stack

log = logging.getLogger(__name__)

NAMES = {"rw": "LPDID-RW", "rwx": "LPDID-RW+X", "ra": "LPDID-RA",
         "ipt": "DRLPDID-IPT", "dr": "DRLPDID"}
_ALIASES = {k: k for k in NAMES} | {v.lower().replace(" ", ""): k for k, v in NAMES.items()}


def estimator_tag(name: str) -> str:
    key = name.lower().replace(" ", "")
    if key not in _ALIASES:
        raise ValueError(f"unknown estimator {name!r}; choose from {sorted(NAMES.values())}")
    return _ALIASES[key]


@dataclass
class HorizonEstimate:
    horizon: int
    estimator: str
    theta: float
    mu1: float
    mu0: float
    n_treated: int
    n_control: int
    influence: np.ndarray | None = field(default=None, repr=False)
    se: float = float("nan")
    diagnostics: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"h": self.horizon, "estimator": NAMES[self.estimator], "theta": self.theta,
                "mu1": self.mu1, "mu0": self.mu0, "n1": self.n_treated, "n0": self.n_control,
                "se": self.se}


def _finish(est: HorizonEstimate, infl) -> HorizonEstimate:
    if infl is not None:
        est.influence = infl
        est.se = inference.cluster_se(infl, infl.size)
    return est


def _means(stack: Stack):
    d = stack.treated
    return stack.delta[d].mean(), d


def estimate_ra(stack: Stack, basis: Basis, fit: NuisanceFit | None = None,
                with_influence: bool = True) -> HorizonEstimate:
    """Treated mean of the long difference net of the fitted untreated regression."""
    if fit is None:
        fit = fit_nuisance(stack, basis, propensity=False, outcome="ols")
    mu1, d = _means(stack)
    mu0 = float((basis.matrix[d] @ fit.beta).mean())
    est = HorizonEstimate(stack.horizon, "ra", float(mu1 - mu0), float(mu1), mu0,
                          stack.n_treated, stack.n_control, diagnostics=fit.diagnostics)
    infl = inference.influence(stack, basis, fit, "ra", mu1, mu0) if with_influence else None
    return _finish(est, infl)


def estimate_ipt(stack: Stack, basis: Basis, fit: NuisanceFit | None = None,
                 with_influence: bool = True) -> HorizonEstimate:
    """Treated mean minus the tilting-weighted control mean."""
    if fit is None:
        fit = fit_nuisance(stack, basis, propensity=True, outcome=None)
    mu1, d = _means(stack)
    w = fit.odds[~d]
    mu0 = float(w @ stack.delta[~d] / w.sum())
    est = HorizonEstimate(stack.horizon, "ipt", float(mu1 - mu0), float(mu1), mu0,
                          stack.n_treated, stack.n_control, diagnostics=fit.diagnostics)
    infl = inference.influence(stack, basis, fit, "ipt", mu1, mu0) if with_influence else None
    return _finish(est, infl)


def estimate_dr(stack: Stack, basis: Basis, fit: NuisanceFit | None = None,
                with_influence: bool = True) -> HorizonEstimate:
    """Doubly robust contrast with tilting odds and odds-weighted outcome fit."""
    if fit is None:
        fit = fit_nuisance(stack, basis, propensity=True, outcome="wls")
    d = stack.treated
    resid = stack.delta - basis.matrix @ fit.beta
    w = fit.odds[~d]
    mu1 = float(resid[d].mean())
    mu0 = float(w @ resid[~d] / w.sum())
    est = HorizonEstimate(stack.horizon, "dr", mu1 - mu0, mu1, mu0,
                          stack.n_treated, stack.n_control, diagnostics=fit.diagnostics)
    infl = inference.influence(stack, basis, fit, "dr", mu1, mu0) if with_influence else None
    return _finish(est, infl)


def estimate_benchmark(stack: Stack, adjusted: bool = False, covariates: Sequence | None = None,
                       with_influence: bool = True) -> HorizonEstimate:
    """RW-weighted pooled LP-DiD regression, optionally with covariates entered
    linearly next to the entry-date intercepts."""
    cells = aggregation.cell_stats(stack)
    lam = aggregation.rw_cell_lambda(cells)
    extra = None
    diag = {"horizon": stack.horizon, "dropped_cells": [list(c) for c in stack.dropped_cells]}
    if adjusted:
        basis = build_basis(stack, covariates, date_controls=False)
        extra = basis.matrix[:, 1:]
        diag["covariates"] = list(basis.names[1:])
        diag["dropped_columns"] = [list(c) for c in basis.dropped]
    coef, X, w, _ = aggregation.pooled_lpdid_fit(stack, lam, extra)
    theta = float(coef[0])
    mu1 = float(stack.delta[stack.treated].mean())
    est = HorizonEstimate(stack.horizon, "rwx" if adjusted else "rw", theta, mu1, mu1 - theta,
                          stack.n_treated, stack.n_control, diagnostics=diag)
    infl = inference.regression_influence(stack, X, coef, w) if with_influence else None
    return _finish(est, infl)


def estimate(stack: Stack, estimator: str, covariates: Sequence | None = None, *,
             interactions: bool = False, odds_cap: float | None = None,
             with_influence: bool = True) -> HorizonEstimate:
    """Run one estimator on one stack, building the shared basis as needed."""
    tag = estimator_tag(estimator)
    if tag in ("rw", "rwx"):
        return estimate_benchmark(stack, tag == "rwx", covariates, with_influence)
    basis = build_basis(stack, covariates, interactions=interactions)
    if tag == "ra":
        return estimate_ra(stack, basis, with_influence=with_influence)
    fit = fit_nuisance(stack, basis, propensity=True, outcome="wls" if tag == "dr" else None,
                       odds_cap=odds_cap)
    if tag == "ipt":
        return estimate_ipt(stack, basis, fit, with_influence)
    return estimate_dr(stack, basis, fit, with_influence)


@dataclass
class EventStudy:
    estimator: str
    estimates: list
    errors: dict
    n_clusters: int

    @property
    def horizons(self) -> tuple:
        return tuple(e.horizon for e in self.estimates)

    def theta(self) -> np.ndarray:
        return np.array([e.theta for e in self.estimates])

    def influence_array(self) -> inference.InfluenceArray:
        vals = np.column_stack([e.influence for e in self.estimates]) if self.estimates \
            else np.zeros((self.n_clusters, 0))
        return inference.InfluenceArray(self.horizons, self.theta(), vals)


def event_study(panel: Panel, horizons: Sequence[int], rule: BaseRule = LAST_PRE,
                estimator: str = "dr", covariates: Sequence | None = None, *,
                interactions: bool = False, odds_cap: float | None = None,
                stacks: dict | None = None, with_influence: bool = True) -> EventStudy:
    """Estimate every horizon; failures are recorded per horizon and skipped.

    ``stacks`` may carry prebuilt stacks keyed by horizon (they are reused
    across estimators by the simulation harness).
    """
    tag = estimator_tag(estimator)
    out, errors = [], {}
    for h in horizons:
        try:
            stack = stacks[h] if stacks is not None and h in stacks else build_stack(panel, h, rule)
            out.append(estimate(stack, tag, covariates, interactions=interactions,
                                odds_cap=odds_cap, with_influence=with_influence))
        except DrlpdidError as exc:
            log.warning("%s h=%d failed: %s (%s)", NAMES[tag], h, exc, exc.code)
            errors[int(h)] = f"{exc.code}: {exc}"
    return EventStudy(tag, out, errors, panel.n_clusters)
