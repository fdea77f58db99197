"""Operating-point geometry over threshold sweeps.

A sweep thresholds one score per example (``score >= t`` is positive)
and records per-group and overall hard accuracy.  On top of it live
non-dominated filtering, weighted p-norm scalarisation, the
Pareto-penalty threshold selector, the parity-constrained accuracy
frontier, and a Monte Carlo estimate of the disalignment between a
given classifier and the plug-in threshold rule.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .core import GroupPartition, OperatingPoint
from .metrics import PseudoOptima, penalty_from_eps

log = logging.getLogger(__name__)


def default_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


@dataclass(frozen=True, eq=False)
class ThresholdSweep:
    thresholds: np.ndarray
    keys: tuple
    accuracy: np.ndarray  # [n_thresholds, n_groups]
    overall: np.ndarray   # [n_thresholds]

    def __len__(self):
        return self.thresholds.size

    def point(self, i: int) -> OperatingPoint:
        return OperatingPoint(dict(zip(self.keys, self.accuracy[i].tolist())),
                              float(self.overall[i]), float(self.thresholds[i]))

    @property
    def points(self) -> list:
        return [self.point(i) for i in range(len(self))]

    def parity(self) -> np.ndarray:
        """Parity loss at every threshold."""
        return np.abs(self.accuracy - self.overall[:, None]).sum(axis=1)

    def group_optima(self) -> PseudoOptima:
        """Best accuracy each group reaches anywhere on the sweep."""
        return PseudoOptima(self.keys, self.accuracy.max(axis=0))


def sweep_thresholds(scores, labels, partition: GroupPartition, grid=None) -> ThresholdSweep:
    """Per-group and overall accuracy of ``score >= t`` for each ``t`` in ``grid``."""
    t = default_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("threshold grid must be a non-empty 1-d sequence")
    if t.size > 1 and not (np.diff(t) > 0).all():
        raise ValueError("threshold grid must be strictly increasing")
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.shape != partition.group_ids.shape:
        raise ValueError("scores, labels and partition differ in length")
    G = partition.n_groups
    tp, tn = _accel.sweep_counts(s, y, partition.group_ids, G, t)
    correct = tp + tn
    size = np.bincount(partition.group_ids, minlength=G)
    with np.errstate(invalid="ignore", divide="ignore"):
        acc = np.where(size > 0, correct / np.maximum(size, 1), np.nan)
    overall = correct.sum(axis=1) / y.size
    return ThresholdSweep(t, tuple(partition.keys), acc, overall)


# -- dominance ---------------------------------------------------------------

def dominates(a, b) -> bool:
    a, b = np.asarray(a), np.asarray(b)
    return bool((a >= b).all() and (a > b).any())


def pareto_front_mask(values) -> np.ndarray:
    return _accel.nondominated_mask(values)


def extract_pareto_front(points):
    """Non-dominated subset, stably ordered by the first coordinate.

    ``points`` is either a list of :class:`OperatingPoint` (compared on
    their per-group vectors) or a 2-d array of coordinates; the same kind
    is returned.
    """
    if isinstance(points, np.ndarray):
        v = np.asarray(points, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] == 0:
            raise ValueError("need a non-empty 2-d array of points")
        idx = np.flatnonzero(pareto_front_mask(v))
        idx = idx[np.argsort(v[idx, 0], kind="stable")]
        return v[idx]
    points = list(points)
    if not points:
        raise ValueError("need at least one point")
    keys = list(points[0].per_group)
    v = np.array([p.vector(keys) for p in points])
    idx = np.flatnonzero(pareto_front_mask(v))
    idx = idx[np.argsort(v[idx, 0], kind="stable")]
    return [points[i] for i in idx]


# -- scalarisation -----------------------------------------------------------

@dataclass(frozen=True)
class ScalarizationConfig:
    weights: tuple
    p: float
    reference: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or not (w > 0).all():
            raise ValueError("weights must be positive")
        if len(self.reference) != w.size:
            raise ValueError("reference point and weights differ in length")
        if not self.p >= 1:
            raise ValueError("p must be >= 1 (math.inf for the max form)")


def scalarize(point, config: ScalarizationConfig) -> float:
    """``(sum w |f - z|^p)^(1/p)``; ``p = inf`` gives ``max w |f - z|``."""
    f = point.vector() if isinstance(point, OperatingPoint) else np.asarray(point, dtype=np.float64)
    w = np.asarray(config.weights, dtype=np.float64)
    z = np.asarray(config.reference, dtype=np.float64)
    if f.shape != w.shape:
        raise ValueError("point and weights differ in length")
    d = np.abs(f - z)
    if math.isinf(config.p):
        return float((w * d).max())
    return float(np.sum(w * d ** config.p) ** (1.0 / config.p))


@dataclass(frozen=True)
class GeometryFit:
    residual: float
    constant: float
    degenerate: bool
    ok: bool


def geometry_check(front, exponents, tol: float = 1e-8) -> GeometryFit:
    """Least-squares fit of ``sum_g f_g^{p_g} = C`` over the front points.

    ``residual`` is the RMS misfit at the optimal ``C`` (the mean of the
    per-point sums).  A single point always fits and is flagged degenerate.
    """
    v = np.asarray([p.vector() if isinstance(p, OperatingPoint) else p for p in front],
                   dtype=np.float64)
    if v.ndim != 2 or v.shape[0] == 0:
        raise ValueError("front must be a non-empty list of points")
    e = np.asarray(exponents, dtype=np.float64)
    if e.shape != (v.shape[1],):
        raise ValueError("one exponent per coordinate is required")
    s = (v ** e).sum(axis=1)
    C = float(s.mean())
    res = float(np.sqrt(np.mean((s - C) ** 2)))
    degenerate = v.shape[0] == 1
    return GeometryFit(0.0 if degenerate else res, C, degenerate, degenerate or res < tol)


# -- threshold selectors -----------------------------------------------------

@dataclass(frozen=True)
class Selection:
    index: int
    threshold: float
    point: OperatingPoint
    objective: np.ndarray  # value at every grid threshold
    dominated_by: tuple = ()


def _argmin_first(obj) -> int:
    # exact ties go to the smallest threshold
    return int(np.flatnonzero(obj == obj.min())[0])


def pef_objective(sweep: ThresholdSweep, opt: PseudoOptima, alpha: float, weights=None
                  ) -> np.ndarray:
    if tuple(opt.keys) != tuple(sweep.keys):
        raise ValueError("pseudo-optima groups do not match the sweep")
    eps = np.maximum(1.0 - sweep.accuracy / opt.values, 0.0)
    return np.array([penalty_from_eps(row, alpha, weights) for row in eps])


def select_pef_threshold(sweep: ThresholdSweep, opt: PseudoOptima | None = None,
                         alpha: float = 0.5, weights=None) -> Selection:
    """Grid threshold minimising the Pareto penalty of the clipped errors.

    ``opt`` defaults to each group's best accuracy along the sweep.  The
    chosen point is checked against every other sweep point; if one
    dominates it, that is logged and listed in ``dominated_by``.
    """
    opt = sweep.group_optima() if opt is None else opt
    obj = pef_objective(sweep, opt, alpha, weights)
    i = _argmin_first(obj)
    dom = tuple(float(sweep.thresholds[j]) for j in range(len(sweep))
                if j != i and dominates(sweep.accuracy[j], sweep.accuracy[i]))
    if dom:
        log.warning("selected threshold %.4g is dominated by thresholds %s",
                    sweep.thresholds[i], dom[:5])
    return Selection(i, float(sweep.thresholds[i]), sweep.point(i), obj, dom)


def select_parity_threshold(sweep: ThresholdSweep) -> Selection:
    obj = sweep.parity()
    i = _argmin_first(obj)
    return Selection(i, float(sweep.thresholds[i]), sweep.point(i), obj)


# -- disalignment ------------------------------------------------------------

def estimate_disalignment(h, t: float, b_lambda, samples) -> tuple[float, float]:
    """Monte Carlo mean and standard error of ``(t - h(x)) (b(x) - [h(x) > t])``."""
    x = np.asarray(samples)
    hx = np.asarray(h(x), dtype=np.float64)
    bx = np.asarray(b_lambda(x), dtype=np.float64)
    if hx.shape != bx.shape or hx.ndim != 1:
        raise ValueError("h and b_lambda must return one value per sample")
    vals = (t - hx) * (bx - (hx > t))
    n = vals.size
    if n == 0:
        raise ValueError("need at least one sample")
    se = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(vals.mean()), se


def disalignment_expectation(h, t: float, b_lambda, support, probs) -> float:
    """Exact expectation over a finite support with probabilities ``probs``."""
    x = np.asarray(support)
    w = np.asarray(probs, dtype=np.float64)
    hx = np.asarray(h(x), dtype=np.float64)
    bx = np.asarray(b_lambda(x), dtype=np.float64)
    return float(np.sum(w * (t - hx) * (bx - (hx > t))) / w.sum())


# -- fairness frontier -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FrontierCurve:
    tau: np.ndarray
    accuracy: np.ndarray    # NaN where infeasible
    thresholds: np.ndarray  # achieving threshold, NaN where infeasible
    feasible: np.ndarray
    gradient: np.ndarray    # d accuracy / d tau over the feasible stretch

    def steepness(self) -> float:
        """Largest absolute slope of the curve (0 if fewer than two feasible points)."""
        g = self.gradient[self.feasible]
        return float(np.abs(g).max()) if g.size else 0.0


def fairness_frontier(sweep: ThresholdSweep, tau_grid) -> FrontierCurve:
    """Best overall accuracy among sweep thresholds whose parity loss is <= tau."""
    tau = np.asarray(tau_grid, dtype=np.float64)
    if tau.ndim != 1 or tau.size == 0 or (tau < 0).any():
        raise ValueError("tau grid must be non-empty and non-negative")
    if tau.size > 1 and not (np.diff(tau) > 0).all():
        raise ValueError("tau grid must be increasing")
    par = sweep.parity()
    acc = np.full(tau.size, np.nan)
    thr = np.full(tau.size, np.nan)
    for i, budget in enumerate(tau):
        ok = np.flatnonzero(par <= budget)
        if ok.size:
            j = ok[_argmin_first(-sweep.overall[ok])]
            acc[i] = sweep.overall[j]
            thr[i] = sweep.thresholds[j]
    feas = ~np.isnan(acc)
    grad = np.full(tau.size, np.nan)
    idx = np.flatnonzero(feas)
    # feasibility is monotone in tau, so the feasible entries are one suffix
    if idx.size >= 2:
        grad[idx] = np.gradient(acc[idx], tau[idx])
    elif idx.size == 1:
        grad[idx] = 0.0
    return FrontierCurve(tau, acc, thr, feas, grad)


def efficiency_diagnostic(curve: FrontierCurve, pef_gain: float) -> dict:
    """Frontier steepness reported next to an observed accuracy gain."""
    return {"frontier_steepness": curve.steepness(), "observed_gain": float(pef_gain),
            "strict_accuracy": float(curve.accuracy[curve.feasible][0])
            if curve.feasible.any() else None}


# -- plot data ---------------------------------------------------------------

def _group_label(key) -> str:
    if not isinstance(key, tuple):
        return str(key)
    return "|".join(str(v) for v in key)


def sweep_csv(sweep: ThresholdSweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["threshold", *(_group_label(k) for k in sweep.keys), "overall", "parity_loss"])
    par = sweep.parity()
    for i, t in enumerate(sweep.thresholds):
        w.writerow([repr(float(t)), *map(repr, sweep.accuracy[i].tolist()),
                    repr(float(sweep.overall[i])), repr(float(par[i]))])
    return buf.getvalue()


def frontier_csv(curve: FrontierCurve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "accuracy", "threshold", "feasible", "gradient"])
    for row in zip(curve.tau.tolist(), curve.accuracy.tolist(), curve.thresholds.tolist(),
                   curve.feasible.tolist(), curve.gradient.tolist()):
        w.writerow([repr(row[0]), repr(row[1]), repr(row[2]), int(row[3]), repr(row[4])])
    return buf.getvalue()
