"""Monte Carlo harness: staggered-adoption DGP with covariate-driven timing,
per-replication oracle targets, and bias / RMSE / coverage campaigns.

Every replication ``r`` draws from ``SeedSequence(seed, spawn_key=(r,))`` split
into three child streams (covariates, cohort assignment, outcomes), so a
campaign is fully determined by its design and base seed, and scenarios that
share a seed share their covariate, assignment-uniform and noise draws.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import inference
from .errors import CampaignFailed, DrlpdidError
from .estimators import NAMES, estimator_tag, event_study
from .panel import LAST_PRE, NEVER, BaseRule, Panel, build_stack

log = logging.getLogger(__name__)

SCENARIOS = {
    # scenario: (outcome features, assignment features)
    "A": ("Z", "Z"),
    "B": ("H", "Z"),
    "C": ("Z", "X"),
    "D": ("H", "X"),
}
LOADINGS = np.array([27.4, 13.7, 13.7, 13.7])
ASSIGN_LOADINGS = np.array([-1.0, 0.5, -0.25, -0.2])
ALL_ESTIMATORS = ("rw", "rwx", "ra", "ipt", "dr")


@dataclass(frozen=True)
class McDesign:
    scenario: str = "A"
    N: int = 500
    T: int = 17
    first_cohort: int = 9
    G: int = 6
    corr: float = 0.0
    xi: float = 0.9
    delta: float = 0.0
    R: int = 200
    seed: int = 20240601
    horizons: tuple = (0, 1, 2, 3, 4, 5, 6)
    estimators: tuple = ALL_ESTIMATORS
    alpha: float = 0.05

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {sorted(SCENARIOS)}")
        if not abs(self.corr) < 1:
            raise ValueError("corr must lie in (-1, 1)")
        if self.first_cohort + self.G - 1 > self.T:
            raise ValueError("cohorts extend past the last period")
        object.__setattr__(self, "horizons", tuple(int(h) for h in self.horizons))
        object.__setattr__(self, "estimators", tuple(estimator_tag(e) for e in self.estimators))

    @property
    def cohorts(self) -> np.ndarray:
        return np.arange(self.first_cohort, self.first_cohort + self.G)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["horizons"] = list(self.horizons)
        d["estimators"] = list(self.estimators)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _standardize(a: np.ndarray) -> np.ndarray:
    return (a - a.mean(axis=0)) / a.std(axis=0)


def draw_covariates(N: int, corr: float, rng: np.random.Generator):
    """Latent Gaussian ``X`` and its standardized transforms ``Z`` and ``H``."""
    k = np.arange(4)
    sigma = corr ** np.abs(k[:, None] - k[None, :])
    X = rng.standard_normal((N, 4)) @ np.linalg.cholesky(sigma).T
    x1, x2, x3, x4 = X.T
    Z = np.column_stack([
        np.exp(0.5 * x1),
        10 + x2 / (1 + np.exp(x1)),
        (0.6 + x1 * x3 / 25) ** 3,
        (20 + x2 + x4) ** 2,
    ])
    H = np.column_stack([np.exp(0.5 * x1), x2 ** 2, x2 * x3, np.sin(x1 + x4)])
    return X, _standardize(Z), _standardize(H)


def cohort_probabilities(W: np.ndarray, xi: float = 0.9, G: int = 6) -> np.ndarray:
    """Multinomial-logit probabilities over G cohorts plus never-treated (last)."""
    score = W[:, :4] @ ASSIGN_LOADINGS
    j = np.arange(1, G + 1)
    logits = np.column_stack([xi * (1 - j / G)[None, :] * score[:, None], np.zeros(len(W))])
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def assign_cohorts(W: np.ndarray, xi: float, rng: np.random.Generator, G: int = 6,
                   first_cohort: int = 9) -> np.ndarray:
    """Entry periods (``NEVER`` for the never-treated) drawn from the logit."""
    p = cohort_probabilities(W, xi, G)
    u = rng.random(len(W))
    cat = (np.cumsum(p, axis=1)[:, :-1] < u[:, None]).sum(axis=1)
    return np.where(cat < G, first_cohort + cat, NEVER).astype(np.int64)


def treatment_effect(first_treat: np.ndarray, x1: np.ndarray, T: int) -> np.ndarray:
    """``max(t - G + 1, 0) (1 + 0.1 x1)``; zero for never-treated units."""
    t = np.arange(1, T + 1)[None, :]
    g = first_treat[:, None]
    dose = np.where(g == NEVER, 0, np.maximum(t - g + 1, 0))
    return dose * (1 + 0.1 * x1)[:, None]


def gen_outcomes(design: McDesign, X, Z, H, first_treat, rng: np.random.Generator):
    """Return ``(Y0, Y1, Yobs, tau)``, each ``N x T``."""
    N, T = len(first_treat), design.T
    W = Z if SCENARIOS[design.scenario][0] == "Z" else H
    t = np.arange(1, T + 1)[None, :]
    f_reg = 210 + (t / T) * (W @ LOADINGS)[:, None]
    ever = first_treat != NEVER
    mu = np.where(ever, first_treat, T + 1).astype(float)
    alpha = mu + rng.standard_normal(N)
    eps = rng.standard_normal((N, T))
    drift = design.delta * ever[:, None] * (t / T) * (1 + 0.2 * X[:, 0])[:, None]
    Y0 = f_reg + t + alpha[:, None] + drift + eps
    tau = treatment_effect(first_treat, X[:, 0], T)
    Y1 = Y0 + tau
    treated_now = ever[:, None] & (t >= first_treat[:, None])
    Yobs = np.where(treated_now, Y1, Y0)
    return Y0, Y1, Yobs, tau


@dataclass(eq=False)
class McReplication:
    index: int
    panel: Panel
    X: np.ndarray
    Z: np.ndarray
    H: np.ndarray
    Y0: np.ndarray
    Y1: np.ndarray
    tau: np.ndarray


def simulate(design: McDesign, r: int) -> McReplication:
    """Generate replication ``r`` of ``design``."""
    ss = np.random.SeedSequence(design.seed, spawn_key=(r,))
    rng_x, rng_g, rng_y = (np.random.default_rng(s) for s in ss.spawn(3))
    X, Z, H = draw_covariates(design.N, design.corr, rng_x)
    W = Z if SCENARIOS[design.scenario][1] == "Z" else X
    g = assign_cohorts(W, design.xi, rng_g, design.G, design.first_cohort)
    Y0, Y1, Yobs, tau = gen_outcomes(design, X, Z, H, g, rng_y)
    panel = Panel(Yobs, g, Z, np.arange(design.N), covariate_names=("z1", "z2", "z3", "z4"))
    return McReplication(r, panel, X, Z, H, Y0, Y1, tau)


def true_target(rep: McReplication, horizons, rule: BaseRule = LAST_PRE,
                stacks: dict | None = None) -> dict:
    """Oracle local target per horizon from the potential outcomes.

    Averages ``(Y1 - Y0)[t+h] - (B(Y1) - B(Y0))`` over the treated entrants
    the estimators' stack retains at that horizon.
    """
    out = {}
    w = np.asarray(rule.weights)
    for h in horizons:
        stack = stacks[h] if stacks is not None and h in stacks else build_stack(rep.panel, h, rule)
        units = stack.unit[stack.treated]
        t = stack.entry[stack.treated]
        post = rep.Y1[units, t + h - 1] - rep.Y0[units, t + h - 1]
        pre_cols = t[:, None] - np.asarray(rule.lags)[None, :] - 1
        base1 = (rep.Y1[units[:, None], pre_cols] * w).sum(axis=1)
        base0 = (rep.Y0[units[:, None], pre_cols] * w).sum(axis=1)
        out[int(h)] = float(np.mean(post - (base1 - base0)))
    return out


def run_replication(design: McDesign, r: int) -> dict:
    """Average post-treatment estimate, SE and coverage for every estimator."""
    rep = simulate(design, r)
    stacks, truth = {}, None
    try:
        for h in design.horizons:
            stacks[h] = build_stack(rep.panel, h)
        truth_h = true_target(rep, design.horizons, stacks=stacks)
        post = [h for h in design.horizons if h >= 0]
        truth = float(np.mean([truth_h[h] for h in post]))
    except DrlpdidError as exc:
        return {"r": r, "truth": None, "error": f"{exc.code}: {exc}", "results": {}}
    z = stats.norm.ppf(1 - design.alpha / 2)
    results = {}
    for tag in design.estimators:
        es = event_study(rep.panel, design.horizons, estimator=tag, stacks=stacks)
        if es.errors:
            results[tag] = {"failed": "; ".join(es.errors.values())}
            continue
        try:
            est, se = inference.linear_contrast(es.influence_array())
        except DrlpdidError as exc:
            results[tag] = {"failed": f"{exc.code}: {exc}"}
            continue
        results[tag] = {"estimate": est, "se": se,
                        "covered": bool(abs(est - truth) <= z * se)}
    return {"r": r, "truth": truth, "results": results}


def _run_chunk(args):
    design, rs = args
    return [run_replication(design, r) for r in rs]


REPORT_COLUMNS = ["scenario", "N", "delta", "estimator", "bias", "rmse", "coverage",
                  "mean_se", "sd", "n_reps", "n_failed"]


@dataclass
class McReport:
    design: McDesign
    rows: list
    replications: list = field(repr=False, default_factory=list)
    runtime: float = 0.0

    def row(self, estimator: str) -> dict:
        name = NAMES[estimator_tag(estimator)]
        for r in self.rows:
            if r["estimator"] == name:
                return r
        raise KeyError(estimator)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS + ["config_hash", "seed"])
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in REPORT_COLUMNS]
                       + [self.design.digest(), self.design.seed])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"config_hash": self.design.digest(), "seed": self.design.seed,
                           "design": self.design.to_dict(), "rows": self.rows},
                          indent=2, sort_keys=True) + "\n"

    def write(self, directory, stem: str = "mc_report") -> None:
        from pathlib import Path
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.csv").write_text(self.to_csv())
        (d / f"{stem}.json").write_text(self.to_json())


def summarize(design: McDesign, reps: list) -> list:
    rows = []
    for tag in design.estimators:
        errs, ses, cover, failed = [], [], [], 0
        for rep in reps:
            res = rep["results"].get(tag)
            if rep["truth"] is None or res is None or "failed" in res:
                failed += 1
                continue
            errs.append(res["estimate"] - rep["truth"])
            ses.append(res["se"])
            cover.append(res["covered"])
        n = len(errs)
        e = np.asarray(errs)
        rows.append({
            "scenario": design.scenario, "N": design.N, "delta": design.delta,
            "estimator": NAMES[tag],
            "bias": float(e.mean()) if n else float("nan"),
            "rmse": float(np.sqrt(np.mean(e ** 2))) if n else float("nan"),
            "coverage": float(np.mean(cover)) if n else float("nan"),
            "mean_se": float(np.mean(ses)) if n else float("nan"),
            "sd": float(e.std(ddof=1)) if n > 1 else float("nan"),
            "n_reps": n, "n_failed": failed,
        })
    return rows


def run_campaign(design: McDesign, n_jobs: int = 1, max_fail: float = 0.02,
                 chunk: int = 10) -> McReport:
    """Run ``design.R`` replications and score every estimator.

    Replications are independent; with ``n_jobs > 1`` they run in worker
    processes and are reassembled in index order, so the report does not
    depend on scheduling.
    """
    t0 = time.perf_counter()
    jobs = [(design, list(range(s, min(s + chunk, design.R)))) for s in range(0, design.R, chunk)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    reps = sorted((r for p in parts for r in p), key=lambda r: r["r"])
    rows = summarize(design, reps)
    report = McReport(design, rows, reps, time.perf_counter() - t0)
    bad = [(r["estimator"], r["n_failed"]) for r in rows if r["n_failed"] > max_fail * design.R]
    if bad:
        raise CampaignFailed(f"failure rate above {max_fail:.0%}: {bad}")
    return report
