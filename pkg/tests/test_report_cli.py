import json

import numpy as np
import pytest

from pareto_fair import nn, report, synth
from pareto_fair.cli import main
from pareto_fair.core import partition_from_keys
from pareto_fair.report import RunSpec, SpecError

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")

TINY = {"epochs": 2, "batch_size": 16, "layer_spec": [4], "min_group_size": 10,
        "max_outer_iters": 2}


def small_spec(**kw):
    d = {"name": "tiny", "seed": 0,
         "data": {"synthetic": {"n_examples": 600, "dependency": "edge_case"}},
         "train": dict(TINY), "trainers": ["plain", "algorithm1"],
         "analyses": ["sweep", "front", "frontier", "disalignment"], "checkpoints": True}
    d.update(kw)
    return RunSpec.from_dict(d)


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rep = report.run_experiment(small_spec(), out)
    return rep, out


def test_report_validates_and_writes_artifacts(tiny_run):
    rep, out = tiny_run
    report.validate_report(rep)
    assert rep["status"] == "complete"
    on_disk = json.loads((out / "report.json").read_text())
    report.validate_report(on_disk)
    for f in ("table.md", "table.csv", "plots/sweep.csv", "plots/frontier.csv",
              "models/plain.pfnn", "models/algorithm1.pfnn"):
        assert (out / f).exists(), f
    assert not (out / "FAILED").exists()
    names = sorted(g["name"] for g in rep["groups"])
    assert names == [f"Subgroup {k}" for k in range(1, 5)]
    assert set(rep["analyses"]) == {"sweep", "front", "frontier", "disalignment"}


def test_run_is_deterministic(tiny_run, tmp_path):
    rep, _ = tiny_run
    again = report.run_experiment(small_spec(), tmp_path)
    assert report.canonical_bytes(again) == report.canonical_bytes(rep)
    assert "timing" in again and b"timing" not in report.canonical_bytes(again)


def test_checkpoint_reproduces_metrics(tiny_run):
    rep, out = tiny_run
    spec = small_spec()
    _, test, _ = report.prepare_data(spec)
    keys = [tuple(g["key"]) for g in rep["groups"]]
    params = nn.load_params(out / rep["methods"]["plain"]["checkpoint"])
    cfg = spec.train_config()
    prev = partition_from_keys(test.sensitive, keys).prevalence_vector()
    block = report.evaluate_method(nn.predict_proba(params, test.features), test, keys,
                                   None, cfg, prev)
    m = rep["methods"]["plain"]
    assert block["accuracy"] == m["accuracy"]
    assert block["per_group"] == m["per_group"]


def test_tables(tiny_run):
    rep, out = tiny_run
    md = report.emit_table(rep, "markdown").splitlines()
    assert len(md) == 2 + len(rep["methods"])
    header, rows = report.parse_table_csv(report.emit_table(rep, "csv"))
    assert header[:6] == list(report.TABLE_COLUMNS)
    for r in rows:
        m = rep["methods"][r[0]]
        assert r[1] == m["accuracy"] and r[6:] == m["per_group"]["accuracy"]
    empty = dict(rep, methods={})
    assert len(report.emit_table(empty).splitlines()) == 2
    with pytest.raises(ValueError):
        report.emit_table(rep, "html")


def test_spec_validation_errors():
    with pytest.raises(SpecError, match="data"):
        RunSpec.from_dict({"trainers": ["plain"]})
    with pytest.raises(SpecError):
        RunSpec.from_dict({"data": {"uci": "heart"}, "trainers": ["plain"]})
    with pytest.raises(SpecError):
        RunSpec.from_dict({"data": {"uci": "adult"}, "trainers": []})
    with pytest.raises(SpecError):
        RunSpec.from_dict({"data": {"uci": "adult"}, "trainers": ["magic"]})


def test_unknown_score_feature_fails_with_marker(tmp_path):
    spec = small_spec(trainers=[], analyses=["sweep"], analysis={"scores": "feature:nope"})
    with pytest.raises(SpecError):
        report.run_experiment(spec, tmp_path)
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["status"] == "failed" and (tmp_path / "FAILED").exists()


def test_sweep_records_failed_point(tmp_path):
    spec = small_spec(trainers=["plain"], analyses=[])
    doc = report.run_sweep(spec, "lambda", [0.0, -1.0, 1.0], tmp_path)
    assert [p["index"] for p in doc["points"]] == [0, 2]
    assert doc["failures"][0]["index"] == 1
    assert json.loads((tmp_path / "failures.json").read_text()) == doc["failures"]
    series = (tmp_path / "sweep_series.csv").read_text().splitlines()
    assert len(series) == 3
    assert doc["points"][1]["train_seed"] == 2


def test_sweep_workers_match_serial(tmp_path):
    spec = small_spec(trainers=["plain"], analyses=[])
    a = report.run_sweep(spec, "model_size", [[3], [5]], tmp_path / "a", workers=1)
    b = report.run_sweep(spec, "model_size", [[3], [5]], tmp_path / "b", workers=2)
    strip = lambda d: {k: v for k, v in d.items() if k != "timing"}  # noqa: E731
    assert strip(a) == strip(b)
    for i in range(2):
        ra = json.loads((tmp_path / "a" / "points" / f"{i:03d}" / "report.json").read_text())
        rb = json.loads((tmp_path / "b" / "points" / f"{i:03d}" / "report.json").read_text())
        assert report.canonical_bytes(ra) == report.canonical_bytes(rb)


def test_cli_gen_synth_and_report(tmp_path, tiny_run, capsys):
    cfg = tmp_path / "synth.json"
    cfg.write_text(json.dumps({"n_examples": 50, "dependency": "8*b"}))
    out = tmp_path / "s.csv"
    assert main(["gen-synth", "--config", str(cfg), "--seed", "3", "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 51
    ds = synth.generate_synthetic(synth.config_from_dict({"n_examples": 50,
                                                          "dependency": "8*b", "seed": 3}))
    first = out.read_text().splitlines()[1].split(",")
    assert float(first[0]) == ds.features[0, 0]
    _, run_dir = tiny_run
    capsys.readouterr()
    assert main(["report", str(run_dir / "report.json"), "--format", "csv"]) == 0
    assert capsys.readouterr().out == (run_dir / "table.csv").read_text()


def test_cli_run_and_bad_spec(tmp_path, capsys):
    spec = small_spec(trainers=["plain"], analyses=["sweep"]).to_dict()
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    out = tmp_path / "o"
    assert main(["run", "--config", str(path), "--seed", "1", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["seed"] == 1 and rep["status"] == "complete"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"trainers": ["plain"]}))
    assert main(["run", "--config", str(bad)]) == 2
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_fetch_unknown_name(capsys):
    assert main(["fetch", "nosuch"]) == 2
