"""Cluster-level influence functions, standard errors, linear contrasts and
multiplier-bootstrap sup-t bands.

Every estimator is written as an exactly identified M-estimator with
per-row moment contributions ``psi``. Cluster moments are the within-cluster
sums, the Jacobian is their cluster average, and the influence value of
cluster ``c`` is ``-grad_g' A^{-1} Psi_c``. Scaling is such that
``theta_hat - theta ~ mean_c IF_c``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import stats

from . import kernels
from .errors import AlignmentError, DegenerateBand, SingularJacobian, TooFewClusters
from .nuisance import Basis, NuisanceFit
from .panel import Stack

log = logging.getLogger(__name__)

SEMIPARAMETRIC = ("ra", "ipt", "dr")
REGRESSION = ("rw", "rwx")


class MomentSystem:
    """Stacked moments for one horizon and estimator.

    Parameter layout
    ----------------
    ``ra``   (beta, mu1, mu0)
    ``ipt``  (gamma, mu1, mu0)
    ``dr``   (beta, gamma, mu1, mu0)
    ``rw``/``rwx``  regression coefficients, treatment dummy first
    """

    def __init__(self, stack: Stack, kind: str, Q: np.ndarray, row_weights=None):
        if kind not in SEMIPARAMETRIC + REGRESSION:
            raise ValueError(f"unknown estimator kind {kind!r}")
        self.kind = kind
        self.Q = np.asarray(Q, dtype=float)
        self.y = stack.delta
        self.d = stack.treated.astype(float)
        self.c = 1.0 - self.d
        self.cluster = stack.cluster
        self.n_clusters = stack.n_clusters
        self.w = None if row_weights is None else np.asarray(row_weights, dtype=float)
        p = self.Q.shape[1]
        self.p = p
        if kind in REGRESSION:
            self.dim = p
        else:
            self.dim = p + 2 if kind in ("ra", "ipt") else 2 * p + 2

    def grad_g(self) -> np.ndarray:
        g = np.zeros(self.dim)
        if self.kind in REGRESSION:
            g[0] = 1.0
        else:
            g[-2], g[-1] = 1.0, -1.0
        return g

    def _split(self, eta):
        p = self.p
        if self.kind == "ra":
            return eta[:p], None, eta[p], eta[p + 1]
        if self.kind == "ipt":
            return None, eta[:p], eta[p], eta[p + 1]
        return eta[:p], eta[p:2 * p], eta[2 * p], eta[2 * p + 1]

    def psi(self, eta) -> np.ndarray:
        """Per-row moment contributions, ``n_rows x dim``."""
        eta = np.asarray(eta, dtype=float)
        Q, y, d, c = self.Q, self.y, self.d, self.c
        if self.kind in REGRESSION:
            u = y - Q @ eta
            return Q * (self.w * u)[:, None]
        beta, gamma, mu1, mu0 = self._split(eta)
        cols = []
        if self.kind == "ra":
            fit = Q @ beta
            cols.append(Q * (c * (y - fit))[:, None])
            cols.append((d * (y - mu1))[:, None])
            cols.append((d * (fit - mu0))[:, None])
        elif self.kind == "ipt":
            e = np.exp(Q @ gamma)
            cols.append(Q * (d - c * e)[:, None])
            cols.append((d * (y - mu1))[:, None])
            cols.append((c * e * (y - mu0))[:, None])
        else:
            e = np.exp(Q @ gamma)
            r = y - Q @ beta
            cols.append(Q * (c * e * r)[:, None])
            cols.append(Q * (d - c * e)[:, None])
            cols.append((d * (r - mu1))[:, None])
            cols.append((c * e * (r - mu0))[:, None])
        return np.hstack(cols)

    def moments(self, eta) -> np.ndarray:
        """Cluster moment vectors, ``n_clusters x dim``."""
        return kernels.cluster_sums(self.psi(eta), self.cluster, self.n_clusters)

    def mean_moment(self, eta) -> np.ndarray:
        return self.psi(eta).sum(axis=0) / self.n_clusters

    def jacobian(self, eta) -> np.ndarray:
        """Analytic ``d mean_c Psi_c / d eta'``."""
        eta = np.asarray(eta, dtype=float)
        Q, y, d, c = self.Q, self.y, self.d, self.c
        p = self.p
        A = np.zeros((self.dim, self.dim))
        if self.kind in REGRESSION:
            A[:] = -(Q * self.w[:, None]).T @ Q
            return A / self.n_clusters
        beta, gamma, mu1, mu0 = self._split(eta)
        if self.kind == "ra":
            A[:p, :p] = -(Q * c[:, None]).T @ Q
            A[p, p] = -d.sum()
            A[p + 1, :p] = (Q * d[:, None]).sum(axis=0)
            A[p + 1, p + 1] = -d.sum()
        elif self.kind == "ipt":
            ce = c * np.exp(Q @ gamma)
            A[:p, :p] = -(Q * ce[:, None]).T @ Q
            A[p, p] = -d.sum()
            A[p + 1, :p] = (Q * (ce * (y - mu0))[:, None]).sum(axis=0)
            A[p + 1, p + 1] = -ce.sum()
        else:
            ce = c * np.exp(Q @ gamma)
            r = y - Q @ beta
            b, g, m1, m0 = slice(0, p), slice(p, 2 * p), 2 * p, 2 * p + 1
            A[b, b] = -(Q * ce[:, None]).T @ Q
            A[b, g] = (Q * (ce * r)[:, None]).T @ Q
            A[g, g] = -(Q * ce[:, None]).T @ Q
            A[m1, b] = -(Q * d[:, None]).sum(axis=0)
            A[m1, m1] = -d.sum()
            A[m0, b] = -(Q * ce[:, None]).sum(axis=0)
            A[m0, g] = (Q * (ce * (r - mu0))[:, None]).sum(axis=0)
            A[m0, m0] = -ce.sum()
        return A / self.n_clusters

    def numeric_jacobian(self, eta, step: float = 1e-6) -> np.ndarray:
        """Central finite-difference Jacobian of :meth:`mean_moment`."""
        eta = np.asarray(eta, dtype=float)
        J = np.empty((self.dim, self.dim))
        for k in range(self.dim):
            hk = step * max(1.0, abs(eta[k]))
            up, dn = eta.copy(), eta.copy()
            up[k] += hk
            dn[k] -= hk
            J[:, k] = (self.mean_moment(up) - self.mean_moment(dn)) / (2 * hk)
        return J

    def influence(self, eta, numeric: bool = False) -> np.ndarray:
        """``IF_c = -grad_g' A^{-1} Psi_c`` for every cluster."""
        A = self.numeric_jacobian(eta) if numeric else self.jacobian(eta)
        cond = np.linalg.cond(A)
        if not np.isfinite(cond) or cond > 1e13:
            raise SingularJacobian(f"{self.kind}: Jacobian condition number {cond:.3g}")
        v = np.linalg.solve(A.T, self.grad_g())
        return -self.moments(eta) @ v


def eta_hat(kind: str, stack: Stack, basis: Basis, fit: NuisanceFit, mu1: float, mu0: float):
    if kind == "ra":
        return np.concatenate([fit.beta, [mu1, mu0]])
    if kind == "ipt":
        return np.concatenate([fit.gamma, [mu1, mu0]])
    if kind == "dr":
        return np.concatenate([fit.beta, fit.gamma, [mu1, mu0]])
    raise ValueError(kind)


def influence(stack: Stack, basis: Basis, fit: NuisanceFit, kind: str, mu1: float, mu0: float,
              numeric: bool = False) -> np.ndarray:
    """Influence values (one per panel cluster) for a semiparametric estimate."""
    system = MomentSystem(stack, kind, basis.matrix)
    return system.influence(eta_hat(kind, stack, basis, fit, mu1, mu0), numeric=numeric)


def regression_influence(stack: Stack, design: np.ndarray, coef: np.ndarray,
                         row_weights: np.ndarray) -> np.ndarray:
    """Influence values of the first coefficient of a weighted regression;
    squared and summed they give the CR0 cluster sandwich."""
    system = MomentSystem(stack, "rw", design, row_weights)
    return system.influence(coef)


def cluster_se(influence_column, n_clusters: int | None = None) -> float:
    """``sqrt(V / N_C)`` with ``V = mean_c IF_c^2``."""
    v = np.asarray(influence_column, dtype=float)
    n = v.size if n_clusters is None else int(n_clusters)
    if n < 2:
        raise TooFewClusters(f"{n} cluster(s); at least 2 are needed")
    V = np.sum(v ** 2) / n
    return float(np.sqrt(V / n))


@dataclass
class InfluenceArray:
    """Per-cluster influence values, one column per horizon."""

    horizons: tuple
    estimates: np.ndarray
    values: np.ndarray

    @property
    def n_clusters(self) -> int:
        return self.values.shape[0]

    def se(self) -> np.ndarray:
        return np.array([cluster_se(self.values[:, k], self.n_clusters)
                         for k in range(len(self.horizons))])

    def column(self, h: int) -> np.ndarray:
        return self.values[:, self.horizons.index(h)]


def linear_contrast(infl: InfluenceArray, weights: Mapping[int, float] | None = None):
    """Estimate and SE of ``sum_h w_h theta_h``.

    The default is the equal-weight mean over horizons ``h >= 0``.
    """
    if weights is None:
        post = [h for h in infl.horizons if h >= 0]
        if not post:
            raise AlignmentError("no nonnegative horizon for the default contrast")
        weights = {h: 1.0 / len(post) for h in post}
    missing = [h for h in weights if h not in infl.horizons]
    if missing:
        raise AlignmentError(f"contrast weights on horizons without estimates: {missing}")
    w = np.array([weights.get(h, 0.0) for h in infl.horizons])
    est = float(w @ infl.estimates)
    return est, cluster_se(infl.values @ w, infl.n_clusters)


# --------------------------------------------------------------------------- #
# multiplier bootstrap
# --------------------------------------------------------------------------- #

_SQ5 = np.sqrt(5.0)
BLOCK = 1024


def multipliers(scheme: str, size, rng: np.random.Generator) -> np.ndarray:
    """Mean-zero, unit-variance multiplier draws."""
    scheme = scheme.lower()
    if scheme == "rademacher":
        return rng.integers(0, 2, size=size) * 2.0 - 1.0
    if scheme == "mammen":
        p = (_SQ5 + 1) / (2 * _SQ5)
        lo, hi = (1 - _SQ5) / 2, (1 + _SQ5) / 2
        return np.where(rng.random(size) < p, lo, hi)
    if scheme == "webb":
        vals = np.array([-np.sqrt(1.5), -1.0, -np.sqrt(0.5), np.sqrt(0.5), 1.0, np.sqrt(1.5)])
        return vals[rng.integers(0, 6, size=size)]
    raise ValueError(f"unknown multiplier scheme {scheme!r}")


@dataclass
class Band:
    horizons: tuple
    estimates: np.ndarray
    se: np.ndarray
    alpha: float
    scheme: str
    B: int
    seed: int
    c_star: float
    draws: np.ndarray = field(repr=False, default=None)
    excluded: tuple = ()

    @property
    def z(self) -> float:
        return float(stats.norm.ppf(1 - self.alpha / 2))

    @property
    def ci(self):
        return self.estimates - self.z * self.se, self.estimates + self.z * self.se

    @property
    def band(self):
        return self.estimates - self.c_star * self.se, self.estimates + self.c_star * self.se

    def to_dict(self) -> dict:
        lo, hi = self.ci
        blo, bhi = self.band
        rows = [{"h": int(h), "theta": float(t), "se": float(s), "ci_lo": float(a),
                 "ci_hi": float(b), "band_lo": float(c), "band_hi": float(d)}
                for h, t, s, a, b, c, d in zip(self.horizons, self.estimates, self.se,
                                               lo, hi, blo, bhi)]
        return {"alpha": self.alpha, "scheme": self.scheme, "B": self.B, "seed": self.seed,
                "c_star": self.c_star, "horizons": rows}


def sup_t_draws(infl: InfluenceArray, B: int, scheme: str = "rademacher", seed: int = 0,
                se: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Bootstrap sup-t statistics and the mask of horizons used.

    Draws come in fixed blocks, each from its own seed derived from
    ``(seed, block)``, so the result does not depend on how blocks are
    scheduled.
    """
    se = infl.se() if se is None else np.asarray(se, dtype=float)
    use = se > 0
    if not use.any():
        raise DegenerateBand("every horizon has zero standard error")
    vals = infl.values[:, use] / infl.n_clusters
    inv = 1.0 / se[use]
    out = np.empty(B)
    for blk, start in enumerate(range(0, B, BLOCK)):
        n = min(BLOCK, B - start)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(blk,)))
        xi = multipliers(scheme, (n, infl.n_clusters), rng)
        out[start:start + n] = kernels.sup_t(xi, vals, inv)
    return out, use


def multiplier_bootstrap(infl: InfluenceArray, B: int = 999, scheme: str = "rademacher",
                         alpha: float = 0.05, seed: int = 0) -> Band:
    """Sup-t simultaneous band over the horizons of ``infl``."""
    if B < 1:
        raise ValueError("B must be at least 1")
    se = infl.se()
    draws, use = sup_t_draws(infl, B, scheme, seed, se)
    excluded = tuple(h for h, u in zip(infl.horizons, use) if not u)
    if excluded:
        # the base-period horizon is identically zero; anything else deserves a warning
        zero = all(infl.estimates[i] == 0 for i, u in enumerate(use) if not u)
        (log.info if zero else log.warning)("horizons %s have zero standard error and are excluded from the sup-t max",
                    list(excluded))
    c_star = float(np.quantile(draws, 1 - alpha))
    return Band(tuple(infl.horizons), np.asarray(infl.estimates, dtype=float), se, alpha,
                scheme.lower(), B, seed, c_star, draws, excluded)

