"""Performance and fairness quantities.

Hard metrics (accuracy, FPR, FNR) are what reports show.  The soft
accuracy is the differentiable stand-in used inside training losses.
Pareto errors are clipped at zero; the signed value is kept alongside
because the outer training loop uses it to raise pseudo-optima.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroupPartition

METRIC_NAMES = ("accuracy", "fpr", "fnr", "parity_loss", "pareto_loss", "pef_penalty")


@dataclass(frozen=True, eq=False)
class GroupPerformance:
    """Per-group values aligned with ``keys``; NaN marks an undefined entry."""

    keys: tuple
    values: np.ndarray
    overall: float
    kind: str = "accuracy"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.keys),):
            raise ValueError("one value per group is required")
        object.__setattr__(self, "values", v)

    @property
    def undefined(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def per_group(self) -> dict:
        return dict(zip(self.keys, self.values.tolist()))


@dataclass(frozen=True, eq=False)
class PseudoOptima:
    """Reference (best attainable) performance per group, strictly positive."""

    keys: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.keys),):
            raise ValueError("one pseudo-optimum per group is required")
        if not (v > 0).all() or not (v <= 1).all():
            raise ValueError(f"pseudo-optima must lie in (0, 1], got {v}")
        object.__setattr__(self, "values", v)

    @property
    def per_group(self) -> dict:
        return dict(zip(self.keys, self.values.tolist()))

    def raised_to(self, perf: np.ndarray) -> "PseudoOptima":
        return PseudoOptima(self.keys, np.maximum(self.values, perf))


@dataclass(frozen=True, eq=False)
class ParetoError:
    keys: tuple
    raw: np.ndarray  # 1 - f_g / f_opt_g, signed

    @property
    def eps(self) -> np.ndarray:
        return np.maximum(self.raw, 0.0)

    @property
    def l1(self) -> float:
        return float(self.eps.sum())

    @property
    def mean(self) -> float:
        """The reported ``pareto_loss``."""
        return float(self.eps.mean())

    @property
    def variance(self) -> float:
        return float(self.eps.var())


def _rate(num, den):
    return np.where(den > 0, num / np.maximum(den, 1), np.nan)


def group_metrics(predictions, labels, partition: GroupPartition, threshold: float = 0.5
                  ) -> dict[str, GroupPerformance]:
    """Accuracy, FPR and FNR per group and overall.

    ``predictions`` are probabilities or hard 0/1 values; an example is
    predicted positive when its value is strictly above ``threshold``.
    Rates whose denominator is empty come back as NaN.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    p = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    hard = (p > threshold).astype(np.int64)
    gid, G = partition.group_ids, partition.n_groups
    if gid.shape != y.shape:
        raise ValueError("partition does not match the predictions")

    correct = np.bincount(gid, weights=(hard == y), minlength=G)
    size = np.bincount(gid, minlength=G)
    fp = np.bincount(gid, weights=(hard == 1) & (y == 0), minlength=G)
    neg = np.bincount(gid, weights=(y == 0), minlength=G)
    fn = np.bincount(gid, weights=(hard == 0) & (y == 1), minlength=G)
    pos = np.bincount(gid, weights=(y == 1), minlength=G)

    n, n_neg, n_pos = y.size, neg.sum(), pos.sum()
    keys = partition.keys
    return {
        "accuracy": GroupPerformance(keys, _rate(correct, size),
                                     float(correct.sum() / n), "accuracy"),
        "fpr": GroupPerformance(keys, _rate(fp, neg),
                                float(fp.sum() / n_neg) if n_neg else float("nan"), "fpr"),
        "fnr": GroupPerformance(keys, _rate(fn, pos),
                                float(fn.sum() / n_pos) if n_pos else float("nan"), "fnr"),
    }


def equalized_odds_gaps(metrics: dict[str, GroupPerformance]) -> dict[str, float]:
    """Largest between-group gaps in TPR and FPR (diagnostic only)."""
    tpr = 1.0 - metrics["fnr"].values
    fpr = metrics["fpr"].values
    return {"tpr_gap": float(np.nanmax(tpr) - np.nanmin(tpr)),
            "fpr_gap": float(np.nanmax(fpr) - np.nanmin(fpr))}


def soft_correct(probabilities, labels) -> np.ndarray:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return y * p + (1.0 - y) * (1.0 - p)


def soft_group_accuracy(probabilities, labels, partition: GroupPartition) -> GroupPerformance:
    """Mean of ``p`` over positives and ``1 - p`` over negatives, per group."""
    s = soft_correct(probabilities, labels)
    size = np.bincount(partition.group_ids, minlength=partition.n_groups)
    if (size == 0).any():
        empty = [k for k, c in zip(partition.keys, size) if c == 0]
        raise ValueError(f"groups with no examples: {empty}")
    sums = np.bincount(partition.group_ids, weights=s, minlength=partition.n_groups)
    return GroupPerformance(partition.keys, sums / size, float(s.mean()), "soft_accuracy")


def parity_loss(perf: GroupPerformance) -> float:
    """Sum over groups of ``|f_g - f|``."""
    return float(np.abs(perf.values - perf.overall).sum())


def pareto_error(perf: GroupPerformance, opt: PseudoOptima) -> ParetoError:
    if tuple(perf.keys) != tuple(opt.keys):
        missing = set(perf.keys) ^ set(opt.keys)
        raise ValueError(f"group mismatch between performance and optima: {sorted(missing)}")
    return ParetoError(perf.keys, 1.0 - perf.values / opt.values)


def penalty_from_eps(eps, alpha: float, weights=None) -> float:
    """``alpha * sum(w*eps) + (1 - alpha) * var(w*eps)`` with population variance."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    v = np.asarray(eps, dtype=np.float64)
    if weights is not None:
        v = v * np.asarray(weights, dtype=np.float64)
    return float(alpha * v.sum() + (1.0 - alpha) * v.var())


def pef_penalty(err: ParetoError, alpha: float, weights=None) -> float:
    """Pareto penalty; ``weights`` is None (equal) or a prevalence map/vector."""
    if isinstance(weights, dict):
        weights = [weights[k] for k in err.keys]
    return penalty_from_eps(err.eps, alpha, weights)


def pef_loss(ce_loss: float, penalty: float, lam: float) -> float:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return ce_loss + lam * penalty
