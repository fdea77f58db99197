"""Tabular ingestion: fetch, parse, encode, and define subgroups.

The data cache lives in ``$PARETO_FAIR_DATA_DIR`` (default ``./data``).
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import re
import shutil
import tempfile
import time
import urllib.request
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from filelock import FileLock

from .core import Dataset

log = logging.getLogger(__name__)

KINDS = ("numeric", "categorical", "label", "sensitive")
DEFAULT_NA = ("?", "")


class ChecksumError(RuntimeError):
    pass


class SchemaError(ValueError):
    pass


class ConstantColumnWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ColumnSchema:
    """One column of a delimited file.

    ``position`` is the zero-based column index in headerless files; by
    default a column is matched by name when the file has a header and by
    its order in the schema otherwise.  For the label column,
    ``categories`` lists the raw values for labels 0 and 1.
    """

    name: str
    kind: str
    categories: tuple | None = None
    position: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.categories is not None:
            cats = tuple(self.categories)
            if len(set(cats)) != len(cats):
                raise SchemaError(f"column {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
        if self.kind == "label" and (self.categories is None or len(self.categories) != 2):
            raise SchemaError(f"label column {self.name!r} needs exactly two categories")


def validate_schema(schema: Sequence[ColumnSchema]) -> None:
    kinds = [c.kind for c in schema]
    if kinds.count("label") != 1:
        raise SchemaError("schema needs exactly one label column")
    if "sensitive" not in kinds:
        raise SchemaError("schema needs at least one sensitive column")
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate column names in schema")


@dataclass(frozen=True)
class FetchSpec:
    url: str
    sha256: str
    local_path: str

    def __post_init__(self):
        if not re.fullmatch(r"[0-9a-fA-F]{64}", self.sha256):
            raise ValueError("sha256 must be 64 hex characters")


def data_dir() -> Path:
    return Path(os.environ.get("PARETO_FAIR_DATA_DIR", "data"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url, dest, attempts, backoff):
    last = None
    for i in range(attempts):
        try:
            with urllib.request.urlopen(url, timeout=60) as resp, open(dest, "wb") as out:
                shutil.copyfileobj(resp, out)
            return
        except OSError as exc:  # URLError subclasses OSError
            last = exc
            log.warning("download of %s failed (attempt %d/%d): %s", url, i + 1, attempts, exc)
            if i + 1 < attempts:
                time.sleep(backoff * (i + 1))
    raise ConnectionError(f"could not download {url} after {attempts} attempts: {last}")


def fetch_dataset(spec: FetchSpec, attempts: int = 3, backoff: float = 0.5) -> Path:
    """Return a verified local copy of ``spec.url``.

    A cached file with the right digest is reused without touching the
    network; a corrupt one is replaced.  Writers serialise on a lock file
    next to the target.
    """
    path = Path(spec.local_path)
    if not path.is_absolute():
        path = data_dir() / path
    path.parent.mkdir(parents=True, exist_ok=True)
    want = spec.sha256.lower()
    with FileLock(str(path) + ".lock"):
        if path.exists():
            if sha256_file(path) == want:
                return path
            log.warning("cached %s fails checksum; downloading again", path)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        os.close(fd)
        try:
            _download(spec.url, tmp, attempts, backoff)
            got = sha256_file(tmp)
            if got != want:
                raise ChecksumError(f"{spec.url}: expected sha256 {want}, got {got}")
            os.replace(tmp, path)
        finally:
            if os.path.exists(tmp):
                os.unlink(tmp)
    return path


@dataclass
class RawTable:
    """Parsed rows by column; numeric columns hold floats, the rest strings."""

    columns: dict
    schema: list
    dropped_missing: int = 0
    dropped_unknown: int = 0

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def take(self, indices) -> "RawTable":
        idx = np.asarray(indices, dtype=np.int64)
        return RawTable({k: v[idx] for k, v in self.columns.items()}, self.schema)


def _clean_label(v: str) -> str:
    # UCI test files end labels with a period
    return v[:-1] if v.endswith(".") else v


def load_csv(path, schema: Sequence[ColumnSchema], *, header: bool | None = None,
             delimiter: str = ",", na_values=DEFAULT_NA, unknown: str = "drop",
             comment_prefix: str = "|") -> RawTable:
    """Parse a delimited file under ``schema``.

    Rows with a missing value in any schema column are dropped and
    counted.  Values outside a declared category list drop the row
    (``unknown="drop"``) or raise (``unknown="fail"``).
    """
    validate_schema(schema)
    if unknown not in ("drop", "fail"):
        raise ValueError("unknown must be 'drop' or 'fail'")
    na = set(na_values)
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith(comment_prefix)]
    if delimiter == " ":
        rows = [ln.split() for ln in lines]
    else:
        rows = [[c.strip() for c in r] for r in csv.reader(lines, delimiter=delimiter)]
    names = [c.name for c in schema]
    if header is None:
        header = bool(rows) and all(n in rows[0] for n in names)
    if header:
        if not rows:
            raise ValueError(f"{path}: no data rows")
        head, rows = rows[0], rows[1:]
        try:
            pos = [head.index(c.name) if c.position is None else c.position for c in schema]
        except ValueError as exc:
            raise SchemaError(f"{path}: header lacks a schema column ({exc})") from None
    else:
        pos = [i if c.position is None else c.position for i, c in enumerate(schema)]
    if not rows:
        raise ValueError(f"{path}: no data rows")

    cols = {n: [] for n in names}
    missing = unknown_count = 0
    for r in rows:
        vals = [r[p] if p < len(r) else "" for p in pos]
        if any(v in na for v in vals):
            missing += 1
            continue
        ok = True
        parsed = []
        for c, v in zip(schema, vals):
            if c.kind == "numeric":
                try:
                    parsed.append(float(v))
                except ValueError:
                    raise ValueError(f"{path}: column {c.name!r} value {v!r} is not numeric")
                continue
            if c.kind == "label":
                v = _clean_label(v)
            if c.categories is not None and v not in c.categories:
                if unknown == "fail":
                    raise ValueError(f"{path}: column {c.name!r} has undeclared value {v!r}")
                ok = False
                break
            parsed.append(v)
        if not ok:
            unknown_count += 1
            continue
        for n, v in zip(names, parsed):
            cols[n].append(v)
    if not cols[names[0]]:
        raise ValueError(f"{path}: no data rows left after dropping missing values")
    out = {}
    for c in schema:
        out[c.name] = np.array(cols[c.name], dtype=np.float64 if c.kind == "numeric" else object)
    return RawTable(out, list(schema), missing, unknown_count)


def concat_tables(*tables: RawTable) -> RawTable:
    cols = {k: np.concatenate([t.columns[k] for t in tables]) for k in tables[0].columns}
    return RawTable(cols, tables[0].schema, sum(t.dropped_missing for t in tables),
                    sum(t.dropped_unknown for t in tables))


@dataclass
class EncoderState:
    """Train-split statistics reused on every later table."""

    means: dict = field(default_factory=dict)
    stds: dict = field(default_factory=dict)
    categories: dict = field(default_factory=dict)
    dropped: tuple = ()
    include_sensitive: bool = False

    def feature_names(self, schema) -> list:
        out = []
        for c in schema:
            if c.name in self.dropped:
                continue
            if c.kind == "numeric":
                out.append(c.name)
            elif c.kind == "categorical" or (c.kind == "sensitive" and self.include_sensitive):
                out.extend(f"{c.name}={v}" for v in self.categories[c.name])
        return out


def _encode(table: RawTable, state: EncoderState, sensitive, sensitive_names):
    schema = table.schema
    blocks = []
    for c in schema:
        if c.name in state.dropped:
            continue
        col = table.columns[c.name]
        if c.kind == "numeric":
            blocks.append(((col - state.means[c.name]) / state.stds[c.name])[:, None])
        elif c.kind == "categorical" or (c.kind == "sensitive" and state.include_sensitive):
            cats = state.categories[c.name]
            index = {v: i for i, v in enumerate(cats)}
            onehot = np.zeros((len(col), len(cats)))
            for r, v in enumerate(col):
                i = index.get(v)
                if i is not None:
                    onehot[r, i] = 1.0  # unseen test categories encode as all-zero
            blocks.append(onehot)
    X = np.hstack(blocks) if blocks else np.zeros((table.n_rows, 0))
    label = next(c for c in schema if c.kind == "label")
    y = (table.columns[label.name] == label.categories[1]).astype(np.int64)
    if sensitive is None:
        sens_cols = [c.name for c in schema if c.kind == "sensitive"]
        sensitive = list(zip(*(table.columns[n].tolist() for n in sens_cols)))
        sensitive_names = tuple(sens_cols)
    return Dataset(X, y, tuple(sensitive), tuple(state.feature_names(schema)),
                   tuple(sensitive_names))


def fit_apply_encoder(table: RawTable, schema=None, *, sensitive=None, sensitive_names=(),
                      include_sensitive: bool = False) -> tuple[Dataset, EncoderState]:
    """Fit z-scoring and one-hot maps on ``table`` and encode it.

    Numeric columns use population standard deviation; constant ones are
    dropped with a :class:`ConstantColumnWarning`.  Sensitive columns stay
    out of the features unless ``include_sensitive``.  ``sensitive`` may
    pass per-row group tuples (e.g. from :func:`define_subgroups`).
    """
    schema = list(schema or table.schema)
    table = RawTable(table.columns, schema)
    state = EncoderState(include_sensitive=include_sensitive)
    dropped = []
    for c in schema:
        col = table.columns[c.name]
        if c.kind == "numeric":
            sd = float(col.std())
            if not sd > 0:
                warnings.warn(f"numeric column {c.name!r} is constant; dropped",
                              ConstantColumnWarning, stacklevel=2)
                dropped.append(c.name)
                continue
            state.means[c.name] = float(col.mean())
            state.stds[c.name] = sd
        elif c.kind in ("categorical", "sensitive"):
            state.categories[c.name] = tuple(c.categories) if c.categories is not None \
                else tuple(sorted(set(col.tolist())))
    state.dropped = tuple(dropped)
    return _encode(table, state, sensitive, sensitive_names), state


def apply_encoder(table: RawTable, state: EncoderState, *, sensitive=None,
                  sensitive_names=()) -> Dataset:
    return _encode(table, state, sensitive, sensitive_names)


# -- subgroups -----------------------------------------------------------------

@dataclass(frozen=True)
class SubgroupRule:
    """Map one raw column to a categorical sensitive value per row.

    ``op``: "identity" (raw value), "equals"/"in" (membership), "ge"
    (numeric threshold) or "ge_median" (threshold at the column median).
    For the boolean ops ``labels`` names the (false, true) outcomes.
    """

    column: str
    op: str = "identity"
    value: object = None
    labels: tuple = (0, 1)
    name: str | None = None

    def predicate(self, col: np.ndarray) -> Callable:
        if self.op == "identity":
            return lambda v: v
        if self.op == "equals":
            return lambda v: v == self.value
        if self.op == "in":
            vals = set(self.value)
            return lambda v: v in vals
        if self.op == "ge":
            return lambda v: float(v) >= float(self.value)
        if self.op == "ge_median":
            med = float(np.median(col.astype(np.float64)))
            return lambda v: float(v) >= med
        raise ValueError(f"unknown subgroup op {self.op!r}")

    @classmethod
    def from_config(cls, d: dict) -> "SubgroupRule":
        return cls(d["column"], d.get("op", "identity"), d.get("value"),
                   tuple(d.get("labels", (0, 1))), d.get("name"))


def define_subgroups(table: RawTable, rules) -> tuple[list, tuple]:
    """Per-row sensitive tuples and their names.

    ``rules`` holds :class:`SubgroupRule` objects or ``(column, predicate)``
    pairs.  Predicates must return bool, int or str.
    """
    names, per_col = [], []
    for rule in rules:
        if isinstance(rule, SubgroupRule):
            col_name, labels = rule.column, rule.labels
            if col_name not in table.columns:
                raise KeyError(f"subgroup rule references unknown column {col_name!r}")
            fn = rule.predicate(table.columns[col_name])
            names.append(rule.name or col_name)
        else:
            col_name, fn = rule
            labels = None
            if col_name not in table.columns:
                raise KeyError(f"subgroup rule references unknown column {col_name!r}")
            names.append(col_name)
        out = []
        for v in table.columns[col_name].tolist():
            r = fn(v)
            if isinstance(r, (bool, np.bool_)):
                r = labels[int(r)] if labels is not None else int(r)
            elif isinstance(r, (np.integer,)):
                r = int(r)
            elif not isinstance(r, (int, str)):
                raise TypeError(f"subgroup predicate for {col_name!r} returned "
                                f"{type(r).__name__}; expected bool, int or str")
            out.append(r)
        per_col.append(out)
    return list(zip(*per_col)), tuple(names)


# -- known UCI datasets ------------------------------------------------------------

ADULT_COLUMNS = [
    ("age", "numeric"), ("workclass", "categorical"), ("fnlwgt", "numeric"),
    ("education", "categorical"), ("education-num", "numeric"),
    ("marital-status", "categorical"), ("occupation", "categorical"),
    ("relationship", "categorical"), ("race", "sensitive"), ("sex", "sensitive"),
    ("capital-gain", "numeric"), ("capital-loss", "numeric"),
    ("hours-per-week", "numeric"), ("native-country", "categorical"),
]
ADULT_SCHEMA = [ColumnSchema(n, k) for n, k in ADULT_COLUMNS] + [
    ColumnSchema("income", "label", ("<=50K", ">50K"))]
ADULT_RULES = [SubgroupRule("sex", "identity", name="sex"),
               SubgroupRule("race", "equals", "White", ("non-White", "White"), "race")]

_UCI = "https://archive.ics.uci.edu/ml/machine-learning-databases"
ADULT_FILES = [
    FetchSpec(f"{_UCI}/adult/adult.data",
              "5b00264637dbfec36bdeaab5676b0b309ff9eb788d63554ca0a249491c86603d",
              "adult/adult.data"),
    FetchSpec(f"{_UCI}/adult/adult.test",
              "a2a9044bc167a35b2361efbabec64e89d69ce82d9790d2980119aac5fd7e9c05",
              "adult/adult.test"),
]

# German credit: attribute 9 ("A91".."A95") encodes personal status and sex
GERMAN_COLUMNS = [
    ("checking", "categorical"), ("duration", "numeric"), ("credit_history", "categorical"),
    ("purpose", "categorical"), ("amount", "numeric"), ("savings", "categorical"),
    ("employment", "categorical"), ("installment_rate", "numeric"),
    ("personal_status", "sensitive"), ("other_debtors", "categorical"),
    ("residence", "numeric"), ("property", "categorical"), ("age", "sensitive"),
    ("other_plans", "categorical"), ("housing", "categorical"), ("credits", "numeric"),
    ("job", "categorical"), ("liable", "numeric"), ("telephone", "categorical"),
    ("foreign", "categorical"),
]
GERMAN_SCHEMA = [ColumnSchema(n, k) for n, k in GERMAN_COLUMNS] + [
    ColumnSchema("credit", "label", ("2", "1"))]
GERMAN_RULES = [
    SubgroupRule("age", "ge_median", labels=("young", "old"), name="age"),
    SubgroupRule("personal_status", "in", ("A92", "A95"), ("male", "female"), "gender"),
    SubgroupRule("personal_status", "in", ("A93", "A95"), ("not-single", "single"),
                 "personal_status"),
]
GERMAN_FILES = [
    FetchSpec(f"{_UCI}/statlog/german/german.data",
              "b21f3d81db8071257d5ff1deaeba1fd4303b62712e6fcc9715c7a86202cb5871",
              "german/german.data"),
]

UCI_DATASETS = {
    "adult": {"files": ADULT_FILES, "schema": ADULT_SCHEMA, "rules": ADULT_RULES,
              "delimiter": ","},
    "german": {"files": GERMAN_FILES, "schema": GERMAN_SCHEMA, "rules": GERMAN_RULES,
               "delimiter": " "},
}


def load_uci(name: str, fetch: bool = True) -> tuple[RawTable, list, tuple]:
    """Load a registered UCI dataset: raw table, sensitive tuples, names.

    For Adult, ``adult.data`` and ``adult.test`` are concatenated.
    """
    try:
        entry = UCI_DATASETS[name]
    except KeyError:
        raise KeyError(f"unknown dataset {name!r}; known: {sorted(UCI_DATASETS)}") from None
    tables = []
    for spec in entry["files"]:
        path = fetch_dataset(spec) if fetch else data_dir() / spec.local_path
        tables.append(load_csv(path, entry["schema"], header=False,
                               delimiter=entry["delimiter"]))
    table = concat_tables(*tables)
    sensitive, names = define_subgroups(table, entry["rules"])
    return table, sensitive, names


def subgroup_names_by_size(keys, sizes) -> dict:
    """``"Subgroup k"`` labels, k = 1 for the largest group."""
    order = sorted(range(len(keys)), key=lambda i: (-sizes[i], i))
    return {keys[i]: f"Subgroup {r + 1}" for r, i in enumerate(order)}
