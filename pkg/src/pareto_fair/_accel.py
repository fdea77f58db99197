"""Hot kernels with a numba path and a pure-numpy fallback.

Set ``PARETO_FAIR_NUMBA=0`` to force the numpy path (also used when
numba is not importable).  Both paths return identical results; the
test-suite runs them against each other.
"""

import os

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def deco(fn):
            return fn
        return deco


def numba_enabled() -> bool:
    return _HAVE_NUMBA and os.environ.get("PARETO_FAIR_NUMBA", "1") != "0"


# -- non-dominated filtering (maximisation) ---------------------------------

@njit(cache=True)
def _nondominated_mask_nb(values):
    n, d = values.shape
    keep = np.ones(n, dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            ge_all = True
            gt_any = False
            for k in range(d):
                a = values[j, k]
                b = values[i, k]
                if a < b:
                    ge_all = False
                    break
                if a > b:
                    gt_any = True
            if ge_all and gt_any:
                keep[i] = False
                break
    return keep


def _nondominated_mask_np(values, chunk=256):
    n = values.shape[0]
    keep = np.ones(n, dtype=bool)
    for start in range(0, n, chunk):
        block = values[start:start + chunk]  # candidates i
        ge = (values[None, :, :] >= block[:, None, :]).all(axis=2)
        gt = (values[None, :, :] > block[:, None, :]).any(axis=2)
        keep[start:start + chunk] = ~(ge & gt).any(axis=1)
    return keep


def nondominated_mask(values) -> np.ndarray:
    """Mask of rows not dominated by any other row (larger is better)."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError("values must be a 2-d array")
    if v.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    if numba_enabled():
        return _nondominated_mask_nb(v)
    return _nondominated_mask_np(v)


# -- threshold sweep: correct-prediction counts per (threshold, group) -------

@njit(cache=True)
def _sweep_counts_nb(scores, labels, group_ids, n_groups, thresholds):
    # predicted positive iff score >= t, i.e. for thresholds t_j with j < c,
    # c = number of thresholds <= score; histogram rows by c then accumulate
    n_t = thresholds.shape[0]
    pos = np.zeros((n_t + 1, n_groups), dtype=np.int64)
    neg = np.zeros((n_t + 1, n_groups), dtype=np.int64)
    for i in range(scores.shape[0]):
        c = np.searchsorted(thresholds, scores[i], side="right")
        if labels[i] == 1:
            pos[c, group_ids[i]] += 1
        else:
            neg[c, group_ids[i]] += 1
    tp = np.zeros((n_t, n_groups), dtype=np.int64)
    tn = np.zeros((n_t, n_groups), dtype=np.int64)
    for gi in range(n_groups):
        acc = 0
        for j in range(n_t - 1, -1, -1):
            acc += pos[j + 1, gi]
            tp[j, gi] = acc
        acc = 0
        for j in range(n_t):
            acc += neg[j, gi]
            tn[j, gi] = acc
    return tp, tn


def _sweep_counts_np(scores, labels, group_ids, n_groups, thresholds):
    n_t = thresholds.shape[0]
    tp = np.empty((n_t, n_groups), dtype=np.int64)
    tn = np.empty((n_t, n_groups), dtype=np.int64)
    for gi in range(n_groups):
        m = group_ids == gi
        pos = np.sort(scores[m & (labels == 1)])
        neg = np.sort(scores[m & (labels == 0)])
        tp[:, gi] = pos.size - np.searchsorted(pos, thresholds, side="left")
        tn[:, gi] = np.searchsorted(neg, thresholds, side="left")
    return tp, tn


def sweep_counts(scores, labels, group_ids, n_groups, thresholds):
    """True-positive and true-negative counts per threshold and group.

    Thresholds must be increasing; prediction is ``score >= t``.
    """
    s = np.ascontiguousarray(scores, dtype=np.float64)
    y = np.ascontiguousarray(labels, dtype=np.int64)
    g = np.ascontiguousarray(group_ids, dtype=np.int64)
    t = np.ascontiguousarray(thresholds, dtype=np.float64)
    if numba_enabled():
        return _sweep_counts_nb(s, y, g, int(n_groups), t)
    return _sweep_counts_np(s, y, g, int(n_groups), t)
