"""Trainers: per-group bootstrap, the iterative Pareto loop, and baselines.

All trainers share one minibatch stream (group-proportionate batches
drawn from the run seed) and one initialisation, so a trainer whose
extra loss term has weight zero follows the plain cross-entropy
trajectory exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Iterator

import numpy as np

from . import nn
from .core import Dataset, GroupPartition, partition_from_keys, stratified_split_indices
from .metrics import PseudoOptima, group_metrics

log = logging.getLogger(__name__)

LOSS_KINDS = ("plain", "pef", "parity", "adversarial")


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1.0
    alpha: float = 0.5
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 0.01
    max_outer_iters: int = 10
    improvement_delta: float = 1e-3
    seed: int = 0
    loss_kind: str = "pef"
    prevalence_weighting: bool = False
    layer_spec: nn.LayerSpec = field(default_factory=nn.LayerSpec)
    min_group_size: int = 30
    validation_fraction: float = 0.2
    adv_head_weight: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.max_outer_iters < 1 or not self.improvement_delta > 0:
            raise ValueError("max_outer_iters >= 1 and improvement_delta > 0 are required")
        if isinstance(self.layer_spec, (list, tuple)):
            object.__setattr__(self, "layer_spec", nn.LayerSpec(tuple(self.layer_spec)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layer_spec"] = list(self.layer_spec.hidden_sizes)
        return d


@dataclass(eq=False)
class TrainedModel:
    params: nn.NetworkParams
    pseudo_optima: PseudoOptima | None
    history: list
    config: TrainConfig
    kind: str = "plain"
    hit_max_iters: bool = False

    def predict_proba(self, features):
        return nn.predict_proba(self.params, features)


def _seed_stream(seed: int, *key) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def group_quotas(prevalence, batch_size: int) -> np.ndarray:
    """Per-group batch quotas: round(prevalence * batch), each >= 1.

    The largest group absorbs the rounding so quotas sum to ``batch_size``.
    """
    prev = np.asarray(prevalence, dtype=np.float64)
    G = prev.size
    if batch_size < G:
        raise ValueError(f"batch_size {batch_size} is smaller than the number of groups {G}")
    q = np.maximum(np.floor(prev * batch_size + 0.5).astype(np.int64), 1)
    big = int(np.argmax(prev))
    q[big] += batch_size - q.sum()
    if q[big] < 1:
        raise ValueError("batch_size too small to give every group an example")
    return q


def batches_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def group_proportionate_batches(partition: GroupPartition, batch_size: int, seed: int,
                                epoch: int = 0) -> Iterator[np.ndarray]:
    """Index batches for one epoch.

    Each batch holds ``quota_g`` rows of every group g.  Per group, rows
    are drawn from back-to-back fresh permutations (reshuffled whenever a
    group is exhausted), so within an epoch every row of g appears either
    floor or ceil of ``B * quota_g / n_g`` times, B = ceil(n / batch_size).
    """
    q = group_quotas(partition.prevalence_vector(), batch_size)
    B = batches_per_epoch(partition.n_examples, batch_size)
    streams = []
    for gi, key in enumerate(partition.keys):
        members = partition.groups[key]
        need = B * q[gi]
        rng = _seed_stream(seed, 2, epoch, gi)
        reps = math.ceil(need / len(members))
        seq = np.concatenate([members[rng.permutation(len(members))] for _ in range(reps)])
        streams.append(seq[:need].reshape(B, q[gi]))
    for b in range(B):
        yield np.concatenate([s[b] for s in streams])


def _loss_spec(kind, config, optima=None, partition=None):
    if kind == "plain":
        return nn.CrossEntropy()
    if kind == "pef":
        w = tuple(partition.prevalence_vector()) if config.prevalence_weighting else None
        return nn.PEFLoss(config.lam, config.alpha, tuple(optima.values), w)
    if kind == "parity":
        return nn.ParityLoss(config.lam)
    if kind == "adversarial":
        return nn.AdversarialLoss(config.lam, config.adv_head_weight)
    raise ValueError(f"unknown loss kind {kind!r}")


def fit(dataset: Dataset, partition: GroupPartition, spec, config: TrainConfig,
        seed: int | None = None) -> nn.NetworkParams:
    """Minibatch SGD on ``dataset`` with group-proportionate batches."""
    seed = config.seed if seed is None else seed
    adv = partition.n_groups if isinstance(spec, nn.AdversarialLoss) else None
    params = nn.init_params(config.layer_spec, dataset.n_features, seed, adversary_groups=adv)
    X, y, gid = dataset.features, dataset.labels, partition.group_ids
    for epoch in range(config.epochs):
        for idx in group_proportionate_batches(partition, config.batch_size, seed, epoch):
            batch = nn.Batch(X[idx], y[idx], gid[idx], partition.n_groups)
            _, grads = nn.loss_and_grad(params, batch, spec)
            params = nn.sgd_step(params, grads, config.learning_rate)
    return params


def evaluate_groups(params, dataset: Dataset, partition: GroupPartition) -> np.ndarray:
    """Hard accuracy per group (NaN for a group with no rows)."""
    p = nn.predict_proba(params, dataset.features)
    return group_metrics(p, dataset.labels, partition)["accuracy"].values


def _align(dataset: Dataset, keys) -> GroupPartition:
    return partition_from_keys(dataset.sensitive, keys)


def split_validation(dataset: Dataset, config: TrainConfig) -> tuple[Dataset, Dataset]:
    tr, va = stratified_split_indices(dataset.sensitive, dataset.labels,
                                      config.validation_fraction, config.seed)
    return dataset.subset(tr), dataset.subset(va)


def bootstrap_pseudo_optima(dataset: Dataset, partition: GroupPartition, config: TrainConfig,
                            validation: Dataset | None = None):
    """Train one plain model per group on that group alone.

    ``f_opt_g`` is the model's hard accuracy on held-out rows of its own
    group: ``validation`` if given, else a stratified split of the group.
    Returns ``(PseudoOptima, {key: params})``.
    """
    keys = partition.keys
    sizes = partition.sizes()
    small = [(k, int(s)) for k, s in zip(keys, sizes) if s < config.min_group_size]
    if small:
        raise ValueError(f"groups below min_group_size={config.min_group_size}: {small}")
    val_part = _align(validation, keys) if validation is not None else None
    optima, models = [], {}
    for gi, key in enumerate(keys):
        rows = partition.groups[key]
        d_g = dataset.subset(rows)
        seed_g = config.seed + 1009 * (gi + 1)
        if validation is None:
            tr, va = stratified_split_indices(d_g.sensitive, d_g.labels,
                                              config.validation_fraction, seed_g)
            d_fit, d_eval = d_g.subset(tr), d_g.subset(va)
        else:
            d_fit = d_g
            va_rows = val_part.groups[key]
            if len(va_rows) == 0:
                raise ValueError(f"group {key!r} has no validation rows")
            d_eval = validation.subset(va_rows)
        one = partition_from_keys(d_fit.sensitive, [key])
        params = fit(d_fit, one, nn.CrossEntropy(), config, seed=seed_g)
        acc = float(np.mean(nn.predict(params, d_eval.features) == d_eval.labels))
        if acc <= 0:
            raise ValueError(f"group {key!r}: bootstrap accuracy is zero")
        optima.append(acc)
        models[key] = params
    return PseudoOptima(keys, np.array(optima)), models


def train_pef(dataset: Dataset, partition: GroupPartition, opt: PseudoOptima,
              config: TrainConfig, validation: Dataset | None = None) -> TrainedModel:
    """One joint training phase on CE + lam * Pareto penalty against fixed ``opt``."""
    spec = _loss_spec("pef", config, opt, partition)
    params = fit(dataset, partition, spec, config)
    ev = validation if validation is not None else dataset
    f = evaluate_groups(params, ev, _align(ev, partition.keys))
    hist = [{"iteration": 0, "f": f.tolist(), "f_opt": opt.values.tolist()}]
    return TrainedModel(params, opt, hist, config, "pef")


def algorithm1(dataset: Dataset, partition: GroupPartition, config: TrainConfig,
               validation: Dataset | None = None, bootstrap=None) -> TrainedModel:
    """Iterative Pareto-efficient training.

    Bootstrap per-group optima, then repeat: raise ``f_opt`` to the last
    evaluated group accuracies, retrain on the Pareto loss, evaluate on
    the validation rows.  Stops once no group beats its optimum by more
    than ``improvement_delta`` or after ``max_outer_iters`` rounds.
    """
    if validation is None:
        dataset, validation = split_validation(dataset, config)
        partition = _align(dataset, partition.keys)
    if bootstrap is None:
        bootstrap, _ = bootstrap_pseudo_optima(dataset, partition, config, validation)
    val_part = _align(validation, partition.keys)
    opt = bootstrap
    f = None
    history = []
    model = None
    capped = False
    for it in range(config.max_outer_iters):
        if f is not None:
            opt = opt.raised_to(np.nan_to_num(f, nan=0.0))
        params = fit(dataset, partition, _loss_spec("pef", config, opt, partition), config)
        f = evaluate_groups(params, validation, val_part)
        improved = bool(np.any(f > opt.values + config.improvement_delta))
        history.append({"iteration": it, "f": f.tolist(), "f_opt": opt.values.tolist(),
                        "improved": improved})
        model = params
        log.info("outer iteration %d: f=%s f_opt=%s", it, np.round(f, 4), np.round(opt.values, 4))
        if not improved:
            break
    else:
        capped = True
    final = opt.raised_to(np.nan_to_num(f, nan=0.0))
    return TrainedModel(model, final, history, config, "algorithm1", capped)


def train_baseline(dataset: Dataset, partition: GroupPartition, config: TrainConfig,
                   kind: str = "plain", validation: Dataset | None = None) -> TrainedModel:
    """Plain CE, parity-penalised CE, or gradient-reversal adversarial training."""
    if kind not in ("plain", "parity", "adversarial"):
        raise ValueError(f"baseline kind must be plain, parity or adversarial, not {kind!r}")
    params = fit(dataset, partition, _loss_spec(kind, config), config)
    ev = validation if validation is not None else dataset
    f = evaluate_groups(params, ev, _align(ev, partition.keys))
    return TrainedModel(params, None, [{"iteration": 0, "f": f.tolist()}], config, kind)


def train(kind: str, dataset: Dataset, partition: GroupPartition, config: TrainConfig,
          validation: Dataset | None = None, bootstrap: PseudoOptima | None = None
          ) -> TrainedModel:
    """Dispatch by trainer name: plain, parity, adversarial, pef, algorithm1."""
    if kind in ("plain", "parity", "adversarial"):
        return train_baseline(dataset, partition, config, kind, validation)
    if kind == "pef":
        if bootstrap is None:
            bootstrap, _ = bootstrap_pseudo_optima(dataset, partition, config, validation)
        return train_pef(dataset, partition, bootstrap, config, validation)
    if kind == "algorithm1":
        return algorithm1(dataset, partition, config, validation, bootstrap)
    raise ValueError(f"unknown trainer {kind!r}")


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
