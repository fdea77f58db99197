import warnings

import numpy as np
import pytest

from pareto_fair import ingest, synth
from pareto_fair.core import partition_by_groups


def test_parse_linear():
    assert synth.parse_linear("2*a + 1*b").weights == (2.0, 1.0)
    assert synth.parse_linear("8*b").weights == (0.0, 8.0)
    assert synth.parse_linear("2*b - 2*a").weights == (-2.0, 2.0)
    assert synth.parse_linear("a + b + 3*d").weights == (1.0, 1.0, 3.0)
    assert synth.parse_linear(" 2 * a+b ").weights == (2.0, 1.0)
    for bad in ("", "2*x", "2*a +", "a b", "2a3b", "ab"):
        with pytest.raises(ValueError):
            synth.parse_linear(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        synth.SynthConfig(0)
    with pytest.raises(ValueError):
        synth.SynthConfig(10, sigma=0.0)
    with pytest.raises(ValueError):
        synth.SynthConfig(10, p=1.0)
    with pytest.raises(ValueError, match="0 < c < p"):
        synth.SynthConfig(10, c=0.6)
    with pytest.raises(ValueError, match="misses cells"):
        synth.Table({(0, 0): 1})


def test_deterministic_and_byte_identical():
    cfg = synth.edge_case_config(500, seed=4)
    a, b = synth.generate_arrays(cfg), synth.generate_arrays(cfg)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    c = synth.generate_arrays(synth.edge_case_config(500, seed=5))
    assert a[1].tobytes() != c[1].tobytes()


@pytest.mark.filterwarnings("ignore::pareto_fair.synth.DeterministicGroupWarning")
def test_column_streams_are_independent():
    # two-bit and three-bit linear specs share the a, b and C noise streams
    two = synth.generate_arrays(synth.SynthConfig(300, 1, dependency=synth.parse_linear("a + b")))
    three = synth.generate_arrays(synth.SynthConfig(300, 1, dependency=synth.parse_linear("a + b + 0*d")))
    np.testing.assert_array_equal(two[0], three[0][:, :2])
    np.testing.assert_array_equal(two[1], three[1])


@pytest.mark.filterwarnings("ignore::pareto_fair.synth.DeterministicGroupWarning")
def test_bit_means_within_tolerance():
    n, p = 20000, 0.3
    bits, *_ = synth.generate_arrays(synth.SynthConfig(n, 0, p=p, dependency=synth.parse_linear("a+b")))
    tol = 3 * np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(bits.mean(axis=0) - p) < tol)


@pytest.mark.filterwarnings("ignore::pareto_fair.synth.DeterministicGroupWarning")
def test_linear_group_means_of_c():
    cfg = synth.SynthConfig(20000, 2, sigma=0.1, dependency=synth.parse_linear("2*a + 1*b"))
    bits, C, param, _ = synth.generate_arrays(cfg)
    for a in (0, 1):
        for b in (0, 1):
            m = (bits[:, 0] == a) & (bits[:, 1] == b)
            assert abs(C[m].mean() - (2 * a + b)) < 3 * 0.1 / np.sqrt(m.sum())
    assert (param >= 0).all() and (param <= 1).all()


def test_prevalence_ratios_exact_counts():
    dep = synth.Table({(0, 0): 3, (0, 1): 11, (1, 0): 4, (1, 1): 9})
    cfg = synth.SynthConfig(1001, 0, dependency=dep,
                            prevalence_ratios={(0, 0): 1, (0, 1): 9, (1, 0): 1, (1, 1): 9})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", synth.DeterministicGroupWarning)
        bits, *_ = synth.generate_arrays(cfg)
    keys, counts = np.unique(bits, axis=0, return_counts=True)
    # floor(1001 * w / 20) per cell; the single leftover goes to the first largest cell
    assert dict(zip(map(tuple, keys.tolist()), counts.tolist())) == {
        (0, 0): 50, (0, 1): 451, (1, 0): 50, (1, 1): 450}


def test_clipped_group_warns():
    with pytest.warns(synth.DeterministicGroupWarning):
        synth.generate_arrays(synth.SynthConfig(400, 0, dependency=synth.parse_linear("8*b")))


def test_edge_case_structure():
    cfg = synth.edge_case_config(20000, 0)
    bits, C, param, y = synth.generate_arrays(cfg)
    for a in (0, 1):
        uni = (bits[:, 0] == a) & (bits[:, 1] == 1)
        assert 0 <= C[uni].min() and C[uni].max() <= 1
        assert abs(C[uni].mean() - 0.5) < 0.02
        # uninformative: C carries no information about the label
        assert abs(np.corrcoef(C[uni], y[uni])[0, 1]) < 0.05
    lo = (bits[:, 0] == 0) & (bits[:, 1] == 0)
    hi = (bits[:, 0] == 1) & (bits[:, 1] == 0)
    assert abs(C[lo].mean() - 0.3) < 0.01 and abs(C[hi].mean() - 0.7) < 0.01
    assert abs(C[lo].std() - 0.1) < 0.01


def test_edge_case_coupled_variant():
    cfg = synth.SynthConfig(20000, 0, dependency=synth.EdgeCase("coupled"))
    bits, C, param, y = synth.generate_arrays(cfg)
    uni = bits[:, 1] == 1
    np.testing.assert_array_equal(param[uni], C[uni])


def test_generate_synthetic_features():
    ds = synth.generate_synthetic(synth.edge_case_config(200, 0))
    assert ds.feature_names == ("C",) and ds.sensitive_names == ("a", "b")
    assert len(partition_by_groups(ds).keys) == 4
    ds2 = synth.generate_synthetic(synth.edge_case_config(200, 0), include_sensitive=True)
    assert ds2.feature_names == ("C", "bit_a", "bit_b")
    np.testing.assert_array_equal(ds2.features[:, 0], ds.features[:, 0])


def test_config_from_dict_forms():
    c = synth.config_from_dict({"n_examples": 10, "dependency": "2*a + 1*b"})
    assert c.dependency == synth.Linear((2.0, 1.0))
    t = synth.config_from_dict({"n_examples": 10,
                                "dependency": {"table": {"0,0": 3, "0,1": 1, "1,0": 4, "1,1": 8}},
                                "prevalence_ratios": {"(0,0)": 1, "(0,1)": 9, "(1,0)": 1, "(1,1)": 9}})
    assert t.dependency.means[(1, 1)] == 8.0 and t.prevalence_ratios[(0, 1)] == 9.0
    e = synth.config_from_dict({"n_examples": 10, "dependency": {"edge_case": {"uniform_label": "coupled"}}})
    assert e.dependency == synth.EdgeCase("coupled")
    pp = synth.config_from_dict({"preset": "pareto_parity", "n_examples": 50, "seed": 3})
    assert pp.n_examples == 50 and pp.seed == 3
    with pytest.raises(ValueError):
        synth.dependency_from_config({"nope": 1})


def test_csv_round_trip(tmp_path):
    ds = synth.generate_synthetic(synth.edge_case_config(300, 1), include_sensitive=True)
    path = tmp_path / "s.csv"
    synth.write_csv(ds, path)
    table = ingest.load_csv(path, synth.csv_schema(ds), header=True)
    assert table.n_rows == 300
    for j, name in enumerate(ds.feature_names):
        np.testing.assert_array_equal(table.columns[name], ds.features[:, j])
    assert (table.columns["label"] == ds.labels.astype(str)).all()
    back, _ = ingest.fit_apply_encoder(table)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.sensitive == tuple(tuple(str(v) for v in s) for s in ds.sensitive)
