"""Long-format CSV ingestion and export of panels."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (DuplicateObservation, InvalidEntryDate, MissingColumn, MissingValue,
                     NonIntegerTime, TimeGap)
from .panel import NEVER, Panel


@dataclass
class Columns:
    unit: str = "unit_id"
    time: str = "time"
    outcome: str = "outcome"
    first_treat: str = "first_treat"
    cluster: str | None = "cluster"
    covariates: list | None = None  # None: every remaining column

    @classmethod
    def from_dict(cls, d: dict | None) -> "Columns":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown column keys {sorted(unknown)}")
        return cls(**d)


def _line(idx) -> int:
    # 1-based CSV line number of a data row (line 1 is the header)
    return int(idx) + 2


def _as_int(series: pd.Series, what: str, err):
    num = pd.to_numeric(series, errors="coerce")
    bad = num.isna() | (num != np.floor(num))
    if bad.any():
        i = series.index[bad.to_numpy()][0]
        raise err(f"{what} value {series[i]!r} is not an integer", row=_line(i))
    return num.astype(np.int64)


def ingest_frame(df: pd.DataFrame, columns: Columns | dict | None = None) -> Panel:
    """Validate a long-format frame and turn it into a :class:`Panel`."""
    cols = columns if isinstance(columns, Columns) else Columns.from_dict(columns)
    df = df.reset_index(drop=True)
    required = [cols.unit, cols.time, cols.outcome, cols.first_treat]
    missing = [c for c in required if c not in df.columns]
    if cols.covariates is not None:
        missing += [c for c in cols.covariates if c not in df.columns]
    if missing:
        raise MissingColumn(f"missing column(s): {', '.join(map(str, missing))}")
    cluster_col = cols.cluster if cols.cluster in df.columns else None
    if cols.covariates is None:
        skip = set(required) | {cluster_col}
        cov_names = [c for c in df.columns if c not in skip]
    else:
        cov_names = list(cols.covariates)

    time = _as_int(df[cols.time], "time", NonIntegerTime)
    dup = pd.DataFrame({"u": df[cols.unit], "t": time}).duplicated(keep="first")
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise DuplicateObservation(
            f"duplicate observation for unit {df[cols.unit].iloc[i]!r}, time {time.iloc[i]}",
            row=_line(i))
    for c in [cols.outcome] + cov_names:
        v = pd.to_numeric(df[c], errors="coerce")
        if v.isna().any():
            i = int(np.flatnonzero(v.isna().to_numpy())[0])
            raise MissingValue(f"column {c!r} has a missing or non-numeric value", row=_line(i))

    t_min, t_max = int(time.min()), int(time.max())
    T = t_max - t_min + 1
    units = pd.unique(df[cols.unit])
    uidx = pd.Index(units)
    codes = uidx.get_indexer(df[cols.unit])
    n = len(units)
    counts = np.bincount(codes, minlength=n)
    if np.any(counts != T):
        u = units[int(np.flatnonzero(counts != T)[0])]
        raise TimeGap(f"unit {u!r} does not cover every period {t_min}..{t_max}; "
                      "unbalanced panels are not supported")

    ft_raw = df[cols.first_treat]
    blank = ft_raw.isna() | (ft_raw.astype(str).str.strip() == "")
    ft = pd.Series(np.zeros(len(df), dtype=np.int64), index=df.index)
    if (~blank).any():
        ft[~blank] = _as_int(ft_raw[~blank], "first_treat", InvalidEntryDate)
    out_of_range = ~blank & ((ft < t_min) | (ft > t_max))
    if out_of_range.any():
        i = int(np.flatnonzero(out_of_range.to_numpy())[0])
        raise InvalidEntryDate(f"first_treat {ft_raw.iloc[i]!r} outside the sample periods "
                               f"{t_min}..{t_max}", row=_line(i))
    period_ft = np.where(blank, NEVER, ft - t_min + 1)
    first = np.full(n, -1, dtype=np.int64)
    for r in range(len(df)):
        c = codes[r]
        if first[c] == -1:
            first[c] = period_ft[r]
        elif first[c] != period_ft[r]:
            raise InvalidEntryDate(f"unit {units[c]!r} has conflicting first_treat values",
                                   row=_line(r))

    pos = time.to_numpy() - t_min
    Y = np.empty((n, T))
    Y[codes, pos] = pd.to_numeric(df[cols.outcome]).to_numpy(dtype=float)
    k = len(cov_names)
    Xp = np.empty((n, T, k))
    for j, c in enumerate(cov_names):
        Xp[codes, pos, j] = pd.to_numeric(df[c]).to_numpy(dtype=float)
    time_varying = k > 0 and bool(np.any(Xp != Xp[:, :1, :]))

    if cluster_col is not None:
        cl = df[cluster_col].to_numpy()
        unit_cluster = np.empty(n, dtype=object)
        unit_cluster[codes] = cl
        if np.any(unit_cluster[codes] != cl):
            r = int(np.flatnonzero(unit_cluster[codes] != cl)[0])
            raise InvalidEntryDate(f"unit {units[codes[r]]!r} changes cluster", row=_line(r))
        cluster = unit_cluster.astype(str)
    else:
        cluster = np.asarray(units).astype(str)

    return Panel(Y, first, Xp[:, 0, :], cluster, covariate_names=tuple(cov_names),
                 unit_ids=np.asarray(units), times=np.arange(t_min, t_max + 1),
                 covariates_by_period=Xp if time_varying else None)


def ingest_csv(path, columns: Columns | dict | None = None) -> Panel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, skipinitialspace=True, keep_default_na=True,
                     float_precision="round_trip")
    return ingest_frame(df, columns)


def panel_to_frame(panel: Panel) -> pd.DataFrame:
    n, T = panel.outcome.shape
    times = np.asarray(panel.times)
    ft = np.where(panel.never_treated, None, times[np.maximum(panel.first_treat, 1) - 1])
    data = {
        "unit_id": np.repeat(panel.unit_ids, T),
        "time": np.tile(times, n),
        "outcome": panel.outcome.ravel(),
        "first_treat": np.repeat(ft, T),
        "cluster": np.repeat(panel.cluster_labels[panel.cluster], T),
    }
    for j, c in enumerate(panel.covariate_names):
        if panel.covariates_by_period is not None:
            data[c] = panel.covariates_by_period[:, :, j].ravel()
        else:
            data[c] = np.repeat(panel.covariates[:, j], T)
    df = pd.DataFrame(data)
    df["first_treat"] = df["first_treat"].astype("Int64")
    return df


def write_panel_csv(panel: Panel, path) -> None:
    panel_to_frame(panel).to_csv(path, index=False, float_format="%.17g")
