"""Hot loops used by stack construction, cluster aggregation and the
multiplier bootstrap.

Each kernel has a numba implementation and a pure-numpy implementation with
the same signature. The numba path is used when numba imports cleanly and the
environment variable ``DRLPDID_DISABLE_NUMBA`` is unset (or ``0``). Both paths
are importable directly as ``<name>_numba`` / ``<name>_numpy`` for testing and
benchmarking.
"""

import os

import numpy as np

NEVER = 0  # first_treat code for never-treated units

_flag = os.environ.get("DRLPDID_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _flag not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in CI
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = HAVE_NUMBA


# --------------------------------------------------------------------------- #
# stack rows
# --------------------------------------------------------------------------- #


def _stack_rows_py(first_treat, outcome, entry_dates, h, lags, weights):
    n_units = first_treat.shape[0]
    n_rows = 0
    for k in range(entry_dates.shape[0]):
        t = entry_dates[k]
        s_max = t + h if h >= 0 else t
        for i in range(n_units):
            g = first_treat[i]
            if g == t or g == NEVER or g > s_max:
                n_rows += 1

    unit = np.empty(n_rows, dtype=np.int64)
    entry = np.empty(n_rows, dtype=np.int64)
    treated = np.empty(n_rows, dtype=np.int8)
    delta = np.empty(n_rows, dtype=np.float64)
    r = 0
    for k in range(entry_dates.shape[0]):
        t = entry_dates[k]
        s_max = t + h if h >= 0 else t
        for i in range(n_units):
            g = first_treat[i]
            if g == t or g == NEVER or g > s_max:
                base = 0.0
                for j in range(lags.shape[0]):
                    base += weights[j] * outcome[i, t - lags[j] - 1]
                unit[r] = i
                entry[r] = t
                treated[r] = 1 if g == t else 0
                delta[r] = outcome[i, t + h - 1] - base
                r += 1
    return unit, entry, treated, delta


def stack_rows_numpy(first_treat, outcome, entry_dates, h, lags, weights):
    """Rows of a horizon-``h`` stack: treated entrants plus clean controls.

    Returns ``(unit, entry, treated, delta)``; periods are 1-based.
    """
    units, entries, treats, deltas = [], [], [], []
    never = first_treat == NEVER
    for t in entry_dates:
        s_max = t + h if h >= 0 else t
        is_treated = first_treat == t
        keep = is_treated | never | (first_treat > s_max)
        idx = np.flatnonzero(keep)
        base = outcome[idx][:, t - lags - 1] @ weights
        units.append(idx)
        entries.append(np.full(idx.size, t, dtype=np.int64))
        treats.append(is_treated[idx].astype(np.int8))
        deltas.append(outcome[idx, t + h - 1] - base)
    if not units:
        return (np.empty(0, np.int64), np.empty(0, np.int64),
                np.empty(0, np.int8), np.empty(0, np.float64))
    return (np.concatenate(units).astype(np.int64), np.concatenate(entries),
            np.concatenate(treats), np.concatenate(deltas))


# --------------------------------------------------------------------------- #
# cluster sums
# --------------------------------------------------------------------------- #


def _cluster_sums_py(values, codes, n_clusters):
    out = np.zeros((n_clusters, values.shape[1]))
    for r in range(values.shape[0]):
        c = codes[r]
        for j in range(values.shape[1]):
            out[c, j] += values[r, j]
    return out


def cluster_sums_numpy(values, codes, n_clusters):
    """Sum the rows of ``values`` (n x p) within cluster ``codes``."""
    out = np.zeros((n_clusters, values.shape[1]))
    np.add.at(out, codes, values)
    return out


# --------------------------------------------------------------------------- #
# sup-t statistic over multiplier draws
# --------------------------------------------------------------------------- #


def _sup_t_py(xi, infl, inv_scale):
    n_draws = xi.shape[0]
    n_clusters = infl.shape[0]
    n_h = infl.shape[1]
    out = np.empty(n_draws)
    acc = np.empty(n_h)
    for b in range(n_draws):
        for k in range(n_h):
            acc[k] = 0.0
        for c in range(n_clusters):
            w = xi[b, c]
            for k in range(n_h):
                acc[k] += w * infl[c, k]
        m = 0.0
        for k in range(n_h):
            v = abs(acc[k]) * inv_scale[k]
            if v > m:
                m = v
        out[b] = m
    return out


def sup_t_numpy(xi, infl, inv_scale):
    """``max_h |sum_c xi[b, c] infl[c, h]| * inv_scale[h]`` for every draw ``b``."""
    return np.max(np.abs(xi @ infl) * inv_scale, axis=1)


if HAVE_NUMBA:
    stack_rows_numba = njit(cache=True)(_stack_rows_py)
    cluster_sums_numba = njit(cache=True)(_cluster_sums_py)
    sup_t_numba = njit(cache=True)(_sup_t_py)
else:  # pragma: no cover
    stack_rows_numba = _stack_rows_py
    cluster_sums_numba = _cluster_sums_py
    sup_t_numba = _sup_t_py


def stack_rows(first_treat, outcome, entry_dates, h, lags, weights):
    args = (np.ascontiguousarray(first_treat, dtype=np.int64),
            np.ascontiguousarray(outcome, dtype=np.float64),
            np.ascontiguousarray(entry_dates, dtype=np.int64), int(h),
            np.ascontiguousarray(lags, dtype=np.int64),
            np.ascontiguousarray(weights, dtype=np.float64))
    if USE_NUMBA:
        return stack_rows_numba(*args)
    return stack_rows_numpy(*args)


def cluster_sums(values, codes, n_clusters):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        return cluster_sums(values[:, None], codes, n_clusters)[:, 0]
    codes = np.ascontiguousarray(codes, dtype=np.int64)
    if USE_NUMBA:
        return cluster_sums_numba(values, codes, int(n_clusters))
    return cluster_sums_numpy(values, codes, int(n_clusters))


def sup_t(xi, infl, inv_scale):
    args = (np.ascontiguousarray(xi, dtype=np.float64),
            np.ascontiguousarray(infl, dtype=np.float64),
            np.ascontiguousarray(inv_scale, dtype=np.float64))
    if USE_NUMBA:
        return sup_t_numba(*args)
    return sup_t_numpy(*args)
