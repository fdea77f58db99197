"""Config-driven experiment runs, parameter sweeps, and report tables.

A run spec is a JSON document (schema in ``schemas/runspec.schema.json``)
naming a data source, trainers and analyses.  ``run_experiment`` writes
``report.json``, ``table.md``/``table.csv``, plot-data CSVs under
``plots/`` and model checkpoints under ``models/``.  Everything except
the ``timing`` block of the report is a deterministic function of the
spec and seed.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import ingest, nn, pareto, synth
from . import training as T
from .core import Dataset, partition_from_keys, stratified_split, stratified_split_indices
from .metrics import (GroupPerformance, equalized_odds_gaps, group_metrics, pareto_error,
                      parity_loss, pef_penalty)

log = logging.getLogger(__name__)

REPORT_SCHEMA_ID = "pareto-fair/report/v1"
SWEEP_SCHEMA_ID = "pareto-fair/sweep/v1"
TABLE_COLUMNS = ("method", "accuracy", "fpr", "fnr", "parity_loss", "pareto_loss")
VOLATILE_KEYS = ("timing",)


class SpecError(ValueError):
    """The run spec failed schema or semantic validation."""


def load_schema(name: str) -> dict:
    text = resources.files("pareto_fair").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _validate(doc, name):
    v = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(v.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise SpecError("invalid run spec:\n  " + "\n  ".join(msgs))


@dataclass
class RunSpec:
    data: dict
    seed: int = 0
    name: str = "run"
    subgroups: list | None = None
    test_fraction: float = 0.2
    train: dict = field(default_factory=dict)
    trainers: list = field(default_factory=list)
    analyses: list = field(default_factory=list)
    analysis: dict = field(default_factory=dict)
    sweep: dict | None = None
    output_dir: str = "runs/out"
    checkpoints: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        _validate(d, "runspec")
        return cls(**copy.deepcopy(d))

    @classmethod
    def from_file(cls, path) -> "RunSpec":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = {"name": self.name, "seed": self.seed, "data": self.data,
             "test_fraction": self.test_fraction, "train": self.train,
             "trainers": self.trainers, "analyses": self.analyses,
             "analysis": self.analysis, "output_dir": self.output_dir,
             "checkpoints": self.checkpoints}
        if self.subgroups is not None:
            d["subgroups"] = self.subgroups
        if self.sweep is not None:
            d["sweep"] = self.sweep
        return copy.deepcopy(d)

    def train_config(self, seed: int | None = None) -> T.TrainConfig:
        kw = dict(self.train)
        if "layer_spec" in kw:
            kw["layer_spec"] = nn.LayerSpec(tuple(kw["layer_spec"]))
        return T.TrainConfig(seed=self.seed if seed is None else seed, **kw)


# -- data ----------------------------------------------------------------------

def _label_vector(table: ingest.RawTable) -> np.ndarray:
    lab = next(c for c in table.schema if c.kind == "label")
    return (table.columns[lab.name] == lab.categories[1]).astype(np.int64)


def _split_table(table, sensitive, names, spec: RunSpec):
    y = _label_vector(table)
    tr, te = stratified_split_indices(sensitive, y, spec.test_fraction, spec.seed)
    s_tr = [sensitive[i] for i in tr]
    s_te = [sensitive[i] for i in te]
    train, state = ingest.fit_apply_encoder(table.take(tr), sensitive=s_tr, sensitive_names=names)
    test = ingest.apply_encoder(table.take(te), state, sensitive=s_te, sensitive_names=names)
    return train, test


def prepare_data(spec: RunSpec) -> tuple[Dataset, Dataset, dict]:
    """Train/test datasets plus a description of where they came from."""
    src = spec.data
    if "synthetic" in src:
        d = dict(src["synthetic"])
        include = bool(d.pop("include_sensitive", False))
        d.setdefault("seed", spec.seed)
        cfg = synth.config_from_dict(d)
        ds = synth.generate_synthetic(cfg, include_sensitive=include)
        train, test = stratified_split(ds, spec.test_fraction, spec.seed)
        return train, test, {"source": "synthetic"}
    if "uci" in src:
        table, sens, names = ingest.load_uci(src["uci"])
        if spec.subgroups:
            sens, names = ingest.define_subgroups(
                table, [ingest.SubgroupRule.from_config(r) for r in spec.subgroups])
        train, test = _split_table(table, sens, names, spec)
        return train, test, {"source": f"uci:{src['uci']}", "dropped_missing": table.dropped_missing}
    c = src["csv"]
    schema = [ingest.ColumnSchema(col["name"], col["kind"],
                                  tuple(col["categories"]) if "categories" in col else None)
              for col in c["columns"]]
    table = ingest.load_csv(c["path"], schema, header=c.get("header"),
                            delimiter=c.get("delimiter", ","))
    if spec.subgroups:
        rules = [ingest.SubgroupRule.from_config(r) for r in spec.subgroups]
    else:
        rules = [ingest.SubgroupRule(col.name) for col in schema if col.kind == "sensitive"]
    sens, names = ingest.define_subgroups(table, rules)
    train, test = _split_table(table, sens, names, spec)
    return train, test, {"source": f"csv:{Path(c['path']).name}",
                         "dropped_missing": table.dropped_missing}


# -- evaluation ----------------------------------------------------------------

def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def _vec(a):
    return [_num(v) for v in np.asarray(a, dtype=np.float64)]


def group_label(key) -> str:
    return "|".join(str(v) for v in key)


def evaluate_method(proba, test: Dataset, keys, opt, config: T.TrainConfig, train_prev) -> dict:
    """Metric block for one trained model on the test split."""
    part = partition_from_keys(test.sensitive, keys)
    m = group_metrics(proba, test.labels, part)
    acc = m["accuracy"]
    block = {"accuracy": _num(acc.overall), "fpr": _num(m["fpr"].overall),
             "fnr": _num(m["fnr"].overall)}
    defined = GroupPerformance(keys, np.nan_to_num(acc.values, nan=acc.overall), acc.overall)
    block["parity_loss"] = parity_loss(defined)
    if opt is not None:
        err = pareto_error(defined, opt)
        w = train_prev if config.prevalence_weighting else None
        block["pareto_loss"] = err.mean
        block["pef_penalty"] = pef_penalty(err, config.alpha, w)
        block["pareto_error"] = _vec(err.eps)
    else:
        block["pareto_loss"] = block["pef_penalty"] = None
    block["per_group"] = {k: _vec(m[k].values) for k in ("accuracy", "fpr", "fnr")}
    block["equalized_odds"] = {k: _num(v) for k, v in equalized_odds_gaps(m).items()}
    return block


def _score_source(spec: RunSpec, test: Dataset, models: dict):
    """Scores for the threshold analyses and a name for them."""
    src = spec.analysis.get("scores")
    if src is None:
        src = next(iter(models), None) or f"feature:{test.feature_names[0]}"
    if src.startswith("feature:"):
        name = src.split(":", 1)[1]
        if name not in test.feature_names:
            raise SpecError(f"analysis scores: unknown feature {name!r}")
        return src, test.features[:, test.feature_names.index(name)], False
    if src not in models:
        raise SpecError(f"analysis scores: trainer {src!r} was not run")
    return src, nn.predict_proba(models[src].params, test.features), True


def run_analyses(spec: RunSpec, test: Dataset, keys, models: dict, opt) -> tuple[dict, dict]:
    """Returns ``(analysis block, {plot file name: csv text})``."""
    out, plots = {}, {}
    if not spec.analyses:
        return out, plots
    a = spec.analysis
    part = partition_from_keys(test.sensitive, keys)
    name, scores, is_proba = _score_source(spec, test, models)
    n_grid = int(a.get("grid_size", 101))
    if is_proba:
        grid = pareto.default_grid(n_grid)
    else:
        grid = np.linspace(float(scores.min()), float(scores.max()), n_grid)
    sweep = pareto.sweep_thresholds(scores, test.labels, part, grid)
    alpha = float(a.get("alpha", spec.train.get("alpha", 0.5)))

    if "sweep" in spec.analyses:
        out["sweep"] = {"scores": name, "thresholds": _vec(sweep.thresholds),
                        "accuracy": [_vec(r) for r in sweep.accuracy],
                        "overall": _vec(sweep.overall), "parity_loss": _vec(sweep.parity())}
        plots["sweep.csv"] = pareto.sweep_csv(sweep)

    if "front" in spec.analyses:
        z = opt if opt is not None else sweep.group_optima()
        sel = pareto.select_pef_threshold(sweep, z, alpha)
        par = pareto.select_parity_threshold(sweep)
        mask = pareto.pareto_front_mask(sweep.accuracy)
        idx = np.flatnonzero(mask)
        idx = idx[np.argsort(sweep.accuracy[idx, 0], kind="stable")]
        exps = a.get("geometry_exponents", [1.0] * len(keys))
        geo = pareto.geometry_check(sweep.accuracy[idx], exps)
        out["front"] = {
            "scores": name,
            "reference": "bootstrap" if opt is not None else "sweep_max",
            "front_thresholds": _vec(sweep.thresholds[idx]),
            "front_accuracy": [_vec(sweep.accuracy[i]) for i in idx],
            "pef_threshold": sel.threshold, "pef_point": _vec(sweep.accuracy[sel.index]),
            "pef_dominated_by": list(sel.dominated_by),
            "parity_threshold": par.threshold, "parity_point": _vec(sweep.accuracy[par.index]),
            "geometry": {"exponents": [float(e) for e in exps], "residual": geo.residual,
                         "constant": geo.constant, "degenerate": geo.degenerate},
        }

    if "frontier" in spec.analyses:
        tau = a.get("tau_grid")
        if tau is None:
            tau = np.linspace(0.0, float(sweep.parity().max()), 21)
        curve = pareto.fairness_frontier(sweep, tau)
        out["frontier"] = {"scores": name, "tau": _vec(curve.tau), "accuracy": _vec(curve.accuracy),
                           "threshold": _vec(curve.thresholds),
                           "feasible": curve.feasible.tolist(), "gradient": _vec(curve.gradient),
                           "steepness": curve.steepness()}
        plots["frontier.csv"] = pareto.frontier_csv(curve)

    if "disalignment" in spec.analyses:
        t = float(a.get("threshold", 0.5))
        h_scores = np.clip(scores, 0.0, 1.0)
        est = {}
        X = test.features
        rows = np.arange(X.shape[0])
        for kind, model in models.items():
            if kind == name:
                continue
            b = nn.predict(model.params, X, t)
            # samples are row indices into the test split
            m, se = pareto.estimate_disalignment(lambda i: h_scores[i], t, lambda i, b=b: b[i],
                                                 rows)
            est[kind] = {"estimate": m, "std_error": se}
        out["disalignment"] = {"reference": name, "threshold": t, "estimates": est}
    return out, plots


# -- runs ----------------------------------------------------------------------

def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def canonical_bytes(report: dict) -> bytes:
    """Report serialisation with volatile keys removed (for determinism checks)."""
    return _dumps({k: v for k, v in report.items() if k not in VOLATILE_KEYS}).encode()


def run_experiment(spec: RunSpec, out_dir=None, train_seed: int | None = None,
                   write: bool = True) -> dict:
    """Run every requested trainer and analysis; returns the report document.

    ``train_seed`` overrides the seed used for model training only (the
    data and split keep ``spec.seed``).  On failure a partial report with
    ``status: failed`` is written before the exception propagates.
    """
    t0 = time.perf_counter()
    out = Path(out_dir or spec.output_dir)
    cfg = spec.train_config(train_seed)
    report = {"schema": REPORT_SCHEMA_ID, "status": "failed", "spec": spec.to_dict(),
              "seed": spec.seed, "train_seed": cfg.seed, "data": {}, "groups": [],
              "pseudo_optima": None, "methods": {}, "analyses": {}}
    try:
        _run_into(report, spec, cfg, out, write)
        report["status"] = "complete"
    except Exception as exc:
        report["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        report["timing"] = {"wall_clock_seconds": time.perf_counter() - t0}
        if write:
            out.mkdir(parents=True, exist_ok=True)
            (out / "report.json").write_text(_dumps(report), encoding="utf-8")
            if report["status"] != "complete":
                (out / "FAILED").write_text(report.get("error", "") + "\n", encoding="utf-8")
            elif (out / "FAILED").exists():
                (out / "FAILED").unlink()
    return report


def _run_into(report, spec: RunSpec, cfg: T.TrainConfig, out: Path, write: bool):
    train, test, info = prepare_data(spec)
    keys = partition_from_keys(train.sensitive).keys
    part_tr = partition_from_keys(train.sensitive, keys)
    part_te = partition_from_keys(test.sensitive, keys)
    report["data"] = {"n_train": train.n_examples, "n_test": test.n_examples,
                      "n_features": train.n_features, "sensitive_names": list(train.sensitive_names),
                      **info}
    ranks = ingest.subgroup_names_by_size(keys, part_tr.sizes().tolist())
    report["groups"] = [{"key": list(k), "label": group_label(k), "name": ranks[k],
                         "n_train": int(a), "n_test": int(b)}
                        for k, a, b in zip(keys, part_tr.sizes(), part_te.sizes())]
    prev = part_tr.prevalence_vector()

    models, opt = {}, None
    if spec.trainers:
        trn, val = T.split_validation(train, cfg)
        pt = partition_from_keys(trn.sensitive, keys)
        opt, _ = T.bootstrap_pseudo_optima(trn, pt, cfg, val)
        report["pseudo_optima"] = _vec(opt.values)
        for kind in spec.trainers:
            log.info("training %s", kind)
            model = T.train(kind, trn, pt, cfg, val, opt)
            models[kind] = model
            block = evaluate_method(model.predict_proba(test.features), test, keys, opt, cfg, prev)
            block["history"] = model.history
            block["hit_max_iters"] = model.hit_max_iters
            if model.pseudo_optima is not None:
                block["pseudo_optima"] = _vec(model.pseudo_optima.values)
            block["checkpoint"] = None
            if write and spec.checkpoints:
                path = out / "models" / f"{kind}.pfnn"
                path.parent.mkdir(parents=True, exist_ok=True)
                nn.save_params(model.params, path)
                block["checkpoint"] = f"models/{kind}.pfnn"
            report["methods"][kind] = block

    analyses, plots = run_analyses(spec, test, keys, models, opt)
    report["analyses"] = analyses
    if write:
        out.mkdir(parents=True, exist_ok=True)
        for fname, text in plots.items():
            (out / "plots").mkdir(exist_ok=True)
            (out / "plots" / fname).write_text(text, encoding="utf-8")
        (out / "table.md").write_text(emit_table(report, "markdown"), encoding="utf-8")
        (out / "table.csv").write_text(emit_table(report, "csv"), encoding="utf-8")


def validate_report(report: dict) -> None:
    jsonschema.Draft202012Validator(load_schema("report")).validate(report)


# -- tables --------------------------------------------------------------------

def table_rows(report: dict) -> tuple[list, list]:
    labels = [g["label"] for g in report.get("groups", [])]
    header = [*TABLE_COLUMNS, *labels]
    rows = []
    for name, m in report.get("methods", {}).items():
        rows.append([name, *(m[c] for c in TABLE_COLUMNS[1:]), *m["per_group"]["accuracy"]])
    return header, rows


def emit_table(report: dict, fmt: str = "markdown") -> str:
    """Comparison table: one row per method, groups in key order."""
    header, rows = table_rows(report)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([r[0], *("" if v is None else repr(float(v)) for v in r[1:])])
        return buf.getvalue()
    if fmt != "markdown":
        raise ValueError("format must be 'markdown' or 'csv'")
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        cells = [r[0], *("n/a" if v is None else f"{v:.3f}" for v in r[1:])]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_table_csv(text: str) -> tuple[list, list]:
    rd = list(csv.reader(io.StringIO(text)))
    header, rows = rd[0], []
    for r in rd[1:]:
        rows.append([r[0], *(None if v == "" else float(v) for v in r[1:])])
    return header, rows


# -- sweeps --------------------------------------------------------------------

SWEEP_AXES = ("lambda", "model_size", "prevalence")


def _point_spec(spec: RunSpec, axis: str, value) -> RunSpec:
    s = copy.deepcopy(spec)
    s.sweep = None
    if axis == "lambda":
        s.train["lam"] = float(value)
    elif axis == "model_size":
        s.train["layer_spec"] = [int(v) for v in value]
    elif axis == "prevalence":
        s.train["prevalence_weighting"] = bool(value)
    else:
        raise SpecError(f"unknown sweep axis {axis!r}")
    return s


def _run_point(args):
    spec, axis, value, index, out = args
    point = _point_spec(spec, axis, value)
    try:
        rep = run_experiment(point, out, train_seed=spec.seed + index)
        return {"index": index, "value": value, "report": rep}
    except Exception as exc:  # one bad point must not sink the sweep
        log.error("sweep point %d (%s=%r) failed: %s", index, axis, value, exc)
        return {"index": index, "value": value, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(spec: RunSpec, axis: str | None = None, values=None, out_dir=None,
              workers: int = 1) -> dict:
    """One run per axis value; point ``i`` trains with seed ``spec.seed + i``."""
    t0 = time.perf_counter()
    sw = spec.sweep or {}
    axis = axis or sw.get("axis")
    if axis not in SWEEP_AXES:
        raise SpecError(f"sweep axis must be one of {SWEEP_AXES}")
    if values is None:
        values = sw.get("values", [False, True] if axis == "prevalence" else None)
    if values is None or len(values) < 2:
        raise SpecError("a sweep needs at least two axis values")
    out = Path(out_dir or spec.output_dir)
    jobs = [(spec, axis, v, i, out / "points" / f"{i:03d}") for i, v in enumerate(values)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_point, jobs))
    else:
        results = [_run_point(j) for j in jobs]

    points, failures, series = [], [], []
    for r in results:
        if "error" in r:
            failures.append({"index": r["index"], "value": r["value"], "error": r["error"]})
            continue
        rep = r["report"]
        points.append({"index": r["index"], "value": r["value"], "train_seed": rep["train_seed"],
                       "report": f"points/{r['index']:03d}/report.json",
                       "methods": {k: {c: m[c] for c in ("accuracy", "parity_loss", "pareto_loss",
                                                          "pef_penalty")}
                                   | {"group_accuracy": m["per_group"]["accuracy"],
                                      "pareto_error": m.get("pareto_error")}
                                   for k, m in rep["methods"].items()}})
        for k, m in rep["methods"].items():
            series.append([r["index"], r["value"], k, m["accuracy"], m["parity_loss"],
                           m["pareto_loss"], m["pef_penalty"], *m["per_group"]["accuracy"],
                           *(m.get("pareto_error") or [])])
    groups = next((r["report"]["groups"] for r in results if "report" in r), [])
    doc = {"schema": SWEEP_SCHEMA_ID, "axis": axis, "values": list(values),
           "spec": spec.to_dict(), "groups": groups, "points": points, "failures": failures,
           "timing": {"wall_clock_seconds": time.perf_counter() - t0}}
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(_dumps(doc), encoding="utf-8")
    (out / "failures.json").write_text(_dumps(failures), encoding="utf-8")
    labels = [g["label"] for g in groups]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", axis, "method", "accuracy", "parity_loss", "pareto_loss", "pef_penalty",
                *(f"acc:{g}" for g in labels), *(f"eps:{g}" for g in labels)])
    for row in series:
        val = row[1]
        val = json.dumps(val) if isinstance(val, (list, bool)) else repr(val)
        w.writerow([row[0], val, row[2],
                    *("" if v is None else repr(float(v)) for v in row[3:])])
    (out / "sweep_series.csv").write_text(buf.getvalue(), encoding="utf-8")
    return doc
