"""Command-line front end.

    drlpdid estimate --config run.json [--seed N] [--out DIR]
    drlpdid simulate --config campaign.json [--seed N] [--out DIR] [--jobs K]
    drlpdid validate --input panel.csv

Exit status: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import aggregation, inference
from .errors import ConfigError, DrlpdidError, NumericalError
from .estimators import NAMES, estimator_tag, event_study
from .io import Columns, ingest_csv
from .panel import LAST_PRE, BaseRule, build_stack
from .simulation import McDesign, run_campaign

log = logging.getLogger("drlpdid")

ESTIMATE_KEYS = {"mode", "input", "columns", "covariates", "estimators", "horizons",
                 "base_rule", "cluster", "interactions", "odds_cap", "bootstrap", "output_dir"}
BOOTSTRAP_DEFAULTS = {"B": 999, "scheme": "rademacher", "alpha": 0.05, "seed": 0}


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def parse_horizons(spec) -> list[int]:
    """``[-2, 3]`` style ranges are written ``{"from": -2, "to": 3}``;
    a plain list is taken verbatim."""
    if isinstance(spec, dict):
        try:
            lo, hi = int(spec["from"]), int(spec["to"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"horizon range needs integer 'from' and 'to': {spec}") from exc
        hs = list(range(lo, hi + 1))
    elif isinstance(spec, list) and all(isinstance(h, int) for h in spec):
        hs = sorted(set(spec))
    else:
        raise ConfigError(f"horizons must be a list of integers or a from/to range, got {spec!r}")
    if not hs:
        raise ConfigError("horizon range is empty")
    return hs


def parse_base_rule(spec) -> BaseRule:
    try:
        if spec is None or spec == "last_pre":
            return LAST_PRE
        if isinstance(spec, dict) and "mean_pre" in spec:
            return BaseRule.mean_pre(int(spec["mean_pre"]))
        if isinstance(spec, dict) and "weights" in spec:
            return BaseRule.from_weights(spec["weights"])
    except ValueError as exc:
        raise ConfigError(f"invalid base rule: {exc}") from exc
    raise ConfigError(f"base_rule must be 'last_pre', {{'mean_pre': k}} or "
                      f"{{'weights': [...]}}, got {spec!r}")


@dataclass
class EstimateConfig:
    input: Path
    columns: Columns
    estimators: list
    horizons: list
    rule: BaseRule
    bootstrap: dict
    output_dir: Path
    interactions: bool = False
    odds_cap: float | None = None
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        # the output location is not part of the run's identity
        return config_hash({k: v for k, v in self.raw.items() if k != "output_dir"})

    @property
    def seed(self) -> int:
        return int(self.bootstrap["seed"])

    @classmethod
    def from_dict(cls, cfg: dict, base_dir: Path = Path(".")) -> "EstimateConfig":
        unknown = set(cfg) - ESTIMATE_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "input" not in cfg:
            raise ConfigError("config needs an 'input' CSV path")
        try:
            columns = Columns.from_dict(cfg.get("columns"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid 'columns': {exc}") from exc
        if "covariates" in cfg:
            columns.covariates = cfg["covariates"]
        if "cluster" in cfg:
            columns.cluster = cfg["cluster"]
        try:
            ests = [estimator_tag(e) for e in cfg.get("estimators", ["DRLPDID"])]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        boot = dict(BOOTSTRAP_DEFAULTS)
        boot.update(cfg.get("bootstrap") or {})
        if set(boot) - set(BOOTSTRAP_DEFAULTS):
            raise ConfigError(f"unknown bootstrap keys: {sorted(set(boot) - set(BOOTSTRAP_DEFAULTS))}")
        if boot["scheme"] not in ("rademacher", "mammen", "webb"):
            raise ConfigError(f"unknown multiplier scheme {boot['scheme']!r}")
        if not 0 < float(boot["alpha"]) < 1 or int(boot["B"]) < 1:
            raise ConfigError("bootstrap needs 0 < alpha < 1 and B >= 1")
        inp = Path(cfg["input"])
        out = Path(cfg.get("output_dir", "drlpdid_out"))
        return cls(input=inp if inp.is_absolute() else base_dir / inp, columns=columns,
                   estimators=ests, horizons=parse_horizons(cfg.get("horizons", [0])),
                   rule=parse_base_rule(cfg.get("base_rule")), bootstrap=boot,
                   output_dir=out if out.is_absolute() else base_dir / out,
                   interactions=bool(cfg.get("interactions", False)),
                   odds_cap=cfg.get("odds_cap"), raw=cfg)


def _load_config(path: str, mode: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("mode", mode) != mode:
        raise ConfigError(f"config mode {cfg['mode']!r} does not match command {mode!r}")
    cfg["mode"] = mode
    return cfg


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def run_estimate(cfg: EstimateConfig) -> dict:
    """Estimate every requested estimator and write its artifacts.

    Returns a summary keyed by estimator name. Horizon-level failures are
    recorded in the diagnostics; an estimator with no surviving horizon is fatal.
    """
    try:
        panel = ingest_csv(cfg.input, cfg.columns)
    except FileNotFoundError as exc:
        raise ConfigError(f"input file not found: {cfg.input}") from exc
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    prov = {"config_hash": cfg.hash, "seed": cfg.seed}
    times = np.asarray(panel.times)

    stacks, stack_errors = {}, {}
    for h in cfg.horizons:
        try:
            stacks[h] = build_stack(panel, h, cfg.rule)
        except DrlpdidError as exc:
            log.warning("h=%d: %s (%s)", h, exc, exc.code)
            stack_errors[h] = f"{exc.code}: {exc}"

    wrows = []
    for h in sorted(stacks):
        for r in aggregation.weight_table(stacks[h]):
            wrows.append([int(times[r["cohort"] - 1]), r["h"], r["N_g"], r["n_gh"],
                          r["w_vw"], r["w_rw"], cfg.hash, cfg.seed])
    _write_csv(out / "weights.csv", ["cohort", "h", "N_g", "n_gh", "w_vw", "w_rw",
                                     "config_hash", "seed"], wrows)

    diagnostics = dict(prov, panel={"n_units": panel.n_units, "n_periods": panel.n_periods,
                                    "n_clusters": panel.n_clusters,
                                    "n_never_treated": int(panel.never_treated.sum()),
                                    "covariates": list(panel.covariate_names)},
                       base_rule=cfg.rule.to_dict(), estimators={})
    summary = {}
    for tag in cfg.estimators:
        name = NAMES[tag]
        es = event_study(panel, list(stacks), cfg.rule, tag, cfg.columns.covariates,
                         interactions=cfg.interactions, odds_cap=cfg.odds_cap, stacks=stacks)
        errors = {int(h): m for h, m in stack_errors.items()} | es.errors
        diagnostics["estimators"][name] = {
            "errors": {str(h): m for h, m in sorted(errors.items())},
            "horizons": {str(e.horizon): e.diagnostics for e in es.estimates},
        }
        if not es.estimates:
            _write_json(out / "diagnostics.json", diagnostics)
            raise NumericalError(f"{name}: every horizon failed: {errors}")
        infl = es.influence_array()
        band = inference.multiplier_bootstrap(infl, B=int(cfg.bootstrap["B"]),
                                              scheme=cfg.bootstrap["scheme"],
                                              alpha=float(cfg.bootstrap["alpha"]),
                                              seed=cfg.seed)
        post_h = [h for h in es.horizons if h >= 0]
        post = None
        if post_h:
            est, se = inference.linear_contrast(infl)
            post = {"horizons": post_h, "estimate": est, "se": se}
        stem = tag
        rows = [e.to_dict() for e in es.estimates]
        _write_json(out / f"event_study_{stem}.json",
                    dict(prov, estimator=name, horizons=rows, post_average=post,
                         n_clusters=es.n_clusters, errors=diagnostics["estimators"][name]["errors"]))
        cols = ["h", "estimator", "theta", "mu1", "mu0", "n1", "n0", "se"]
        _write_csv(out / f"event_study_{stem}.csv", cols + ["config_hash", "seed"],
                   [[r[c] for c in cols] + [cfg.hash, cfg.seed] for r in rows])
        _write_json(out / f"band_{stem}.json",
                    dict(prov, estimator=name, excluded=list(band.excluded), **band.to_dict()))
        lo, hi = band.ci
        blo, bhi = band.band
        _write_csv(out / f"plot_{stem}.csv",
                   ["h", "estimate", "ci_lo", "ci_hi", "band_lo", "band_hi", "config_hash", "seed"],
                   [[int(h), float(t), float(a), float(b), float(c), float(d), cfg.hash, cfg.seed]
                    for h, t, a, b, c, d in zip(band.horizons, band.estimates, lo, hi, blo, bhi)])
        summary[name] = {"horizons": list(es.horizons), "c_star": band.c_star,
                         "post_average": post, "failed": sorted(errors)}
    _write_json(out / "diagnostics.json", diagnostics)
    return summary


SIMULATE_KEYS = set(McDesign.__dataclass_fields__) | {"mode", "n_jobs", "output_dir"}


def design_from_config(cfg: dict) -> McDesign:
    unknown = set(cfg) - SIMULATE_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {k: v for k, v in cfg.items() if k in McDesign.__dataclass_fields__}
    if "horizons" in kw:
        kw["horizons"] = tuple(parse_horizons(kw["horizons"]))
    if "estimators" in kw:
        kw["estimators"] = tuple(kw["estimators"])
    try:
        return McDesign(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid campaign design: {exc}") from exc


def run_simulate(cfg: dict, n_jobs: int | None = None, base_dir: Path = Path(".")) -> dict:
    design = design_from_config(cfg)
    jobs = int(cfg.get("n_jobs", 1) if n_jobs is None else n_jobs)
    report = run_campaign(design, n_jobs=jobs)
    out = Path(cfg.get("output_dir", "drlpdid_out"))
    report.write(out if out.is_absolute() else base_dir / out)
    return {"config_hash": design.digest(), "seed": design.seed, "rows": report.rows,
            "runtime_s": round(report.runtime, 2)}


def run_validate(path: str, columns: dict | None = None) -> dict:
    try:
        panel = ingest_csv(path, columns)
    except FileNotFoundError as exc:
        raise ConfigError(f"input file not found: {path}") from exc
    times = np.asarray(panel.times)
    treated = ~panel.never_treated
    cohorts, counts = np.unique(times[panel.first_treat[treated] - 1], return_counts=True)
    return {"n_units": panel.n_units, "n_periods": panel.n_periods,
            "first_time": int(times[0]), "last_time": int(times[-1]),
            "n_clusters": panel.n_clusters, "n_never_treated": int(panel.never_treated.sum()),
            "cohorts": {str(int(c)): int(n) for c, n in zip(cohorts, counts)},
            "covariates": list(panel.covariate_names),
            "time_varying_covariates": panel.covariates_by_period is not None}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drlpdid", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    e = sub.add_parser("estimate", help="estimate event studies from a CSV panel")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int, help="override the bootstrap seed")
    e.add_argument("--out", help="override the output directory")
    s = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int, help="override the campaign seed")
    s.add_argument("--out", help="override the output directory")
    s.add_argument("--jobs", type=int, help="worker processes for replications")
    v = sub.add_parser("validate", help="check a CSV panel against the input schema")
    v.add_argument("--input", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate":
            result = run_validate(args.input)
        else:
            cfg = _load_config(args.config, args.command)
            base = Path(args.config).resolve().parent
            if args.out:
                cfg["output_dir"] = str(Path(args.out).resolve())
            if args.command == "estimate":
                if args.seed is not None:
                    cfg.setdefault("bootstrap", {})
                    cfg["bootstrap"] = dict(cfg["bootstrap"], seed=args.seed)
                result = run_estimate(EstimateConfig.from_dict(cfg, base))
            else:
                if args.seed is not None:
                    cfg["seed"] = args.seed
                result = run_simulate(cfg, args.jobs, base)
    except DrlpdidError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_status
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
