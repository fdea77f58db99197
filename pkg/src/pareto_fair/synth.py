"""Synthetic confounder distributions.

Sensitive bits ``a, b[, d]`` drive a confounder ``C``; the target is
``T0 ~ Bern(clip(C, 0, 1))``.  Only ``C`` enters the feature matrix.

Randomness comes from one Philox (counter-based) generator per column,
keyed off the run seed, so adding a column never perturbs the others.

Dependency kinds:

``Linear``   mu_C = w . bits, e.g. ``"2*a + 1*b"``
``Table``    mu_C looked up per (a, b) cell
``Branches`` per-(a, b) branch: ``("normal", mean)`` draws C ~ N(mean, sigma^2);
             ``("uniform", coupled)`` draws C ~ U(0, 1) and, unless
             ``coupled``, an independent Bernoulli parameter for T0
``EdgeCase`` the skewed scenario: B=1 uniform (uninformative), B=0 normal
             around p -/+ c for A=0/1
"""

from __future__ import annotations

import csv
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .core import Dataset

# stream keys; fixed forever so datasets stay reproducible
_STREAMS = {"a": 0, "b": 1, "d": 2, "normal": 3, "uniform": 4, "label": 5,
            "label_param": 6, "order": 7}
BIT_NAMES = ("a", "b", "d")


class DeterministicGroupWarning(UserWarning):
    """Every Bernoulli parameter of a group was clipped to 0 or 1."""


def _rng(seed, name):
    ss = np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Linear:
    weights: tuple

    @property
    def n_bits(self):
        return len(self.weights)


@dataclass(frozen=True)
class Table:
    means: Mapping

    def __post_init__(self):
        m = {tuple(int(v) for v in k): float(x) for k, x in dict(self.means).items()}
        missing = {(0, 0), (0, 1), (1, 0), (1, 1)} - set(m)
        if missing:
            raise ValueError(f"table dependency misses cells {sorted(missing)}")
        object.__setattr__(self, "means", m)

    n_bits = 2


@dataclass(frozen=True)
class Branches:
    branches: Mapping

    def __post_init__(self):
        b = {tuple(int(v) for v in k): tuple(x) for k, x in dict(self.branches).items()}
        missing = {(0, 0), (0, 1), (1, 0), (1, 1)} - set(b)
        if missing:
            raise ValueError(f"branch dependency misses cells {sorted(missing)}")
        for k, (kind, arg) in b.items():
            if kind not in ("normal", "uniform"):
                raise ValueError(f"unknown branch kind {kind!r} for cell {k}")
        object.__setattr__(self, "branches", b)

    n_bits = 2


@dataclass(frozen=True)
class EdgeCase:
    """``uniform_label``: "independent" (default) or "coupled" (T0 ~ Bern(C))."""

    uniform_label: str = "independent"
    n_bits = 2

    def branches(self, p, c) -> Branches:
        coupled = self.uniform_label == "coupled"
        return Branches({(0, 1): ("uniform", coupled), (1, 1): ("uniform", coupled),
                         (0, 0): ("normal", p - c), (1, 0): ("normal", p + c)})


_TERM = re.compile(r"\s*([+-]?)\s*(\d+(?:\.\d+)?)?\s*\*?\s*([abd])\b")


def parse_linear(expr: str) -> Linear:
    """Parse ``"2*a + 1*b"``, ``"8*b"``, ``"2*b - 2*a"`` into weights over a, b[, d]."""
    s = expr.strip()
    pos, w = 0, {}
    for m in _TERM.finditer(s):
        gap = s[pos:m.start()]
        if gap.strip() or (pos and not m.group(1)):  # later terms need an explicit sign
            raise ValueError(f"cannot parse dependency {expr!r}")
        sign = -1.0 if m.group(1) == "-" else 1.0
        coef = float(m.group(2)) if m.group(2) else 1.0
        w[m.group(3)] = w.get(m.group(3), 0.0) + sign * coef
        pos = m.end()
    if s[pos:].strip() or not w:
        raise ValueError(f"cannot parse dependency {expr!r}")
    n_bits = 3 if "d" in w else 2
    return Linear(tuple(w.get(k, 0.0) for k in BIT_NAMES[:n_bits]))


@dataclass(frozen=True)
class SynthConfig:
    n_examples: int
    seed: int = 0
    p: float = 0.5
    sigma: float = 0.1
    dependency: object = field(default_factory=EdgeCase)
    prevalence_ratios: Mapping | None = None
    c: float = 0.2

    def __post_init__(self):
        if self.n_examples <= 0:
            raise ValueError("n_examples must be positive")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if isinstance(self.dependency, EdgeCase) and not 0 < self.c < self.p:
            raise ValueError("edge case requires 0 < c < p")
        if isinstance(self.dependency, Linear) and self.dependency.n_bits not in (2, 3):
            raise ValueError("linear dependency needs 2 or 3 sensitive bits")
        if self.prevalence_ratios is not None:
            r = {tuple(int(v) for v in k): float(x) for k, x in dict(self.prevalence_ratios).items()}
            if any(x < 0 for x in r.values()) or sum(r.values()) <= 0:
                raise ValueError("prevalence ratios must be non-negative with a positive sum")
            for k in r:
                if len(k) != self.dependency.n_bits:
                    raise ValueError(f"prevalence key {k} does not match {self.dependency.n_bits} bits")
            object.__setattr__(self, "prevalence_ratios", r)


def _counts_from_ratios(ratios: dict, n: int):
    keys = sorted(ratios)
    w = np.array([ratios[k] for k in keys])
    counts = np.floor(w / w.sum() * n).astype(np.int64)
    counts[int(np.argmax(w))] += n - counts.sum()  # remainder to the largest group
    return keys, counts


def _sample_bits(cfg: SynthConfig):
    n, k = cfg.n_examples, cfg.dependency.n_bits
    if cfg.prevalence_ratios is None:
        return np.stack([(_rng(cfg.seed, BIT_NAMES[j]).random(n) < cfg.p).astype(np.int64)
                         for j in range(k)], axis=1)
    keys, counts = _counts_from_ratios(cfg.prevalence_ratios, n)
    bits = np.repeat(np.array(keys, dtype=np.int64).reshape(len(keys), k), counts, axis=0)
    return bits[_rng(cfg.seed, "order").permutation(n)]


def generate_arrays(cfg: SynthConfig):
    """Return ``(bits, C, bern_param, labels)`` as arrays."""
    n = cfg.n_examples
    bits = _sample_bits(cfg)
    z = _rng(cfg.seed, "normal").standard_normal(n)
    u = _rng(cfg.seed, "uniform").random(n)
    u_label = _rng(cfg.seed, "label").random(n)
    dep = cfg.dependency

    if isinstance(dep, Linear):
        mu = bits @ np.asarray(dep.weights, dtype=np.float64)
        C = mu + cfg.sigma * z
        param = C
    elif isinstance(dep, Table):
        mu = np.array([dep.means[(a, b)] for a, b in bits])
        C = mu + cfg.sigma * z
        param = C
    else:
        br = dep.branches(cfg.p, cfg.c) if isinstance(dep, EdgeCase) else dep
        indep = _rng(cfg.seed, "label_param").random(n)
        C = np.empty(n)
        param = np.empty(n)
        for cell, (kind, arg) in br.branches.items():
            m = (bits[:, 0] == cell[0]) & (bits[:, 1] == cell[1])
            if kind == "normal":
                C[m] = arg + cfg.sigma * z[m]
                param[m] = C[m]
            else:
                C[m] = u[m]
                param[m] = u[m] if arg else indep[m]
    param = np.clip(param, 0.0, 1.0)
    labels = (u_label < param).astype(np.int64)

    for key in sorted({tuple(r) for r in bits.tolist()}):
        m = (bits == np.array(key)).all(axis=1)
        pm = param[m]
        if ((pm == 0.0) | (pm == 1.0)).all():
            warnings.warn(f"group {key}: every Bernoulli parameter clipped to 0 or 1; "
                          "its labels are deterministic", DeterministicGroupWarning,
                          stacklevel=2)
    return bits, C, param, labels


def generate_synthetic(cfg: SynthConfig, include_sensitive: bool = False) -> Dataset:
    bits, C, _, labels = generate_arrays(cfg)
    names = BIT_NAMES[:bits.shape[1]]
    X = C[:, None]
    fnames = ("C",)
    if include_sensitive:
        X = np.column_stack([X, bits.astype(np.float64)])
        fnames += tuple(f"bit_{n}" for n in names)
    return Dataset(X, labels, tuple(map(tuple, bits.tolist())), fnames, names)


def edge_case_config(n_examples=20000, seed=0, p=0.5, c=0.2, sigma=0.1) -> SynthConfig:
    return SynthConfig(n_examples, seed, p, sigma, EdgeCase(), None, c)


def pareto_parity_config(n_examples=20000, seed=0) -> SynthConfig:
    """Four groups: B=1 cells are uninformative, B=0 cells have T0 ~ Bern(C).

    Under a threshold rule on ``C`` the B=1 groups sit at chance for every
    threshold; the B=0 groups start at chance (everything predicted
    positive) and climb to 0.75 at ``t = 0.5``.
    """
    dep = Branches({(0, 1): ("uniform", False), (1, 1): ("uniform", False),
                    (0, 0): ("uniform", True), (1, 0): ("uniform", True)})
    return SynthConfig(n_examples, seed, 0.5, 0.1, dep)


def dependency_from_config(d) -> object:
    """Build a dependency from its config form.

    Accepts a linear expression string, ``{"table": {"0,1": 11, ...}}``,
    ``{"edge_case": {"uniform_label": ...}}`` or ``{"branches": {...}}``.
    """
    if isinstance(d, str):
        if d == "edge_case":
            return EdgeCase()
        return parse_linear(d)
    if "linear" in d:
        return parse_linear(d["linear"]) if isinstance(d["linear"], str) else Linear(tuple(d["linear"]))
    if "table" in d:
        return Table({_cell(k): v for k, v in d["table"].items()})
    if "edge_case" in d:
        return EdgeCase(**(d["edge_case"] or {}))
    if "branches" in d:
        return Branches({_cell(k): tuple(v) for k, v in d["branches"].items()})
    raise ValueError(f"unknown dependency spec {d!r}")


def _cell(k):
    if isinstance(k, str):
        return tuple(int(v) for v in k.replace("(", "").replace(")", "").split(","))
    return tuple(int(v) for v in k)


def config_from_dict(d: dict) -> SynthConfig:
    if d.get("preset") == "pareto_parity":
        return pareto_parity_config(d.get("n_examples", 20000), d.get("seed", 0))
    ratios = d.get("prevalence_ratios")
    if ratios is not None:
        ratios = {_cell(k): v for k, v in ratios.items()}
    return SynthConfig(
        n_examples=int(d["n_examples"]), seed=int(d.get("seed", 0)),
        p=float(d.get("p", 0.5)), sigma=float(d.get("sigma", 0.1)),
        dependency=dependency_from_config(d.get("dependency", "edge_case")),
        prevalence_ratios=ratios, c=float(d.get("c", 0.2)))


def write_csv(dataset: Dataset, path) -> None:
    """Write features, sensitive columns and ``label`` with a header row.

    Floats use ``repr`` so a reload is exact.
    """
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*dataset.feature_names, *dataset.sensitive_names, "label"])
        for x, s, y in zip(dataset.features.tolist(), dataset.sensitive, dataset.labels.tolist()):
            w.writerow([*map(repr, x), *s, y])


def csv_schema(dataset: Dataset):
    """Column schema that :func:`pareto_fair.ingest.load_csv` reads back."""
    from .ingest import ColumnSchema
    cols = [ColumnSchema(n, "numeric") for n in dataset.feature_names]
    cols += [ColumnSchema(n, "sensitive") for n in dataset.sensitive_names]
    cols.append(ColumnSchema("label", "label", ("0", "1")))
    return cols
