"""``pareto-fair`` command line: run, sweep, gen-synth, fetch, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ingest, report, synth

log = logging.getLogger("pareto_fair")


def _load_spec(args) -> report.RunSpec:
    spec = report.RunSpec.from_file(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    if args.out is not None:
        spec.output_dir = args.out
    return spec


def cmd_run(args) -> int:
    spec = _load_spec(args)
    if spec.sweep is not None:
        log.info("spec has a sweep block; use the sweep command to run it")
    rep = report.run_experiment(spec)
    print(report.emit_table(rep, "markdown"), end="")
    print(f"report written to {Path(spec.output_dir) / 'report.json'}")
    return 0


def _parse_values(text, axis):
    vals = json.loads(text) if text.lstrip().startswith("[") else text.split(",")
    if axis == "lambda":
        return [float(v) for v in vals]
    if axis == "prevalence":
        return [v if isinstance(v, bool) else str(v).lower() in ("1", "true", "on") for v in vals]
    return vals


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    axis = args.axis or (spec.sweep or {}).get("axis")
    values = _parse_values(args.values, axis) if args.values else None
    doc = report.run_sweep(spec, axis, values, workers=args.workers)
    for p in doc["points"]:
        for k, m in p["methods"].items():
            print(f"{axis}={p['value']!s:>12}  {k:<12} parity_loss={m['parity_loss']:.4f} "
                  f"pareto_loss={m['pareto_loss']:.4f}")
    for f in doc["failures"]:
        print(f"FAILED {axis}={f['value']}: {f['error']}", file=sys.stderr)
    return 1 if doc["failures"] else 0


def cmd_gen_synth(args) -> int:
    d = json.loads(Path(args.config).read_text(encoding="utf-8"))
    d = d.get("data", {}).get("synthetic", d)  # accept a run spec or a bare synth config
    d = dict(d)
    include = bool(d.pop("include_sensitive", False))
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = synth.config_from_dict(d)
    ds = synth.generate_synthetic(cfg, include_sensitive=include)
    out = Path(args.out or "synthetic.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    synth.write_csv(ds, out)
    print(f"{ds.n_examples} rows written to {out}")
    return 0


def cmd_fetch(args) -> int:
    names = args.names or sorted(ingest.UCI_DATASETS)
    for name in names:
        if name not in ingest.UCI_DATASETS:
            print(f"unknown dataset {name!r}; known: {sorted(ingest.UCI_DATASETS)}", file=sys.stderr)
            return 2
        for spec in ingest.UCI_DATASETS[name]["files"]:
            path = ingest.fetch_dataset(spec)
            print(f"{name}: {path}")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    report.validate_report(doc)
    print(report.emit_table(doc, args.format), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pareto-fair",
                                description="Pareto-efficient fairness experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON run spec")
        sp.add_argument("--seed", type=int, help="override the spec seed")
        sp.add_argument("--out", help="output directory (or file for gen-synth)")
        sp.add_argument("--workers", type=int, default=1, help="parallel sweep points")

    sp = sub.add_parser("run", help="run trainers and analyses from a spec")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run a spec across lambda, model size or prevalence")
    common(sp)
    sp.add_argument("--axis", choices=report.SWEEP_AXES)
    sp.add_argument("--values", help="comma list or JSON array of axis values")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("gen-synth", help="write a synthetic dataset as CSV")
    common(sp)
    sp.set_defaults(func=cmd_gen_synth)

    sp = sub.add_parser("fetch", help="download and verify registered UCI datasets")
    sp.add_argument("names", nargs="*", help="dataset names (default: all)")
    sp.set_defaults(func=cmd_fetch)

    sp = sub.add_parser("report", help="re-render tables from a stored report.json")
    sp.add_argument("report")
    sp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except report.SpecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError, ingest.ChecksumError, ConnectionError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
