import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pareto_fair.core import partition_from_keys
from pareto_fair.metrics import (METRIC_NAMES, GroupPerformance, ParetoError, PseudoOptima,
                                 equalized_odds_gaps, group_metrics, pareto_error, parity_loss,
                                 pef_loss, pef_penalty, penalty_from_eps, soft_group_accuracy)

from oracles import hand_accuracy_rates, population_variance

unit = st.floats(0.0, 1.0, allow_nan=False)


def one_group(n):
    return partition_from_keys([("g",)] * n)


def test_metric_names_fixed():
    assert METRIC_NAMES == ("accuracy", "fpr", "fnr", "parity_loss", "pareto_loss", "pef_penalty")


def test_group_metrics_hand_example():
    preds, labels = [1, 0, 1, 1], [1, 0, 0, 1]
    m = group_metrics(preds, labels, one_group(4))
    acc, fpr, fnr = hand_accuracy_rates(preds, labels)
    assert (acc, fpr, fnr) == (0.75, 0.5, 0.0)
    assert m["accuracy"].values[0] == acc and m["accuracy"].overall == acc
    assert m["fpr"].values[0] == fpr and m["fnr"].values[0] == fnr


def test_group_metrics_perfect_and_undefined():
    part = partition_from_keys([("a",), ("a",), ("b",), ("b",)])
    m = group_metrics([1, 0, 1, 1], [1, 0, 1, 1], part)
    assert m["accuracy"].values.tolist() == [1.0, 1.0]
    assert m["fpr"].values[0] == 0.0
    # group b has no negatives, so its FPR is undefined rather than 0
    assert m["fpr"].undefined.tolist() == [False, True]
    assert m["fnr"].values.tolist() == [0.0, 0.0]


def test_group_metrics_empty_group_flagged():
    part = partition_from_keys([("a",), ("a",)], keys=[("a",), ("b",)])
    m = group_metrics([0.9, 0.1], [1, 0], part)
    assert m["accuracy"].undefined.tolist() == [False, True]


def test_group_metrics_threshold_is_strict():
    m = group_metrics([0.5, 0.5], [0, 1], one_group(2), threshold=0.5)
    assert m["fnr"].values[0] == 1.0 and m["fpr"].values[0] == 0.0
    with pytest.raises(ValueError):
        group_metrics([0.5], [1], one_group(1), threshold=1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(), st.integers(0, 2)), min_size=1,
                max_size=60))
def test_group_metrics_match_counting(rows):
    preds = [int(p) for p, _, _ in rows]
    labels = [int(y) for _, y, _ in rows]
    groups = [(g,) for _, _, g in rows]
    part = partition_from_keys(groups)
    m = group_metrics(preds, labels, part)
    for gi, k in enumerate(part.keys):
        idx = [i for i, g in enumerate(groups) if g == k]
        acc, fpr, fnr = hand_accuracy_rates([preds[i] for i in idx], [labels[i] for i in idx])
        assert m["accuracy"].values[gi] == pytest.approx(acc)
        for name, ref in (("fpr", fpr), ("fnr", fnr)):
            got = m[name].values[gi]
            assert (math.isnan(got) and math.isnan(ref)) or got == pytest.approx(ref)


def test_soft_accuracy_examples():
    part = one_group(2)
    assert soft_group_accuracy([0.9, 0.2], [1, 0], part).values[0] == pytest.approx(0.85)
    assert soft_group_accuracy([0.5, 0.5], [1, 0], part).values[0] == 0.5
    with pytest.raises(ValueError, match="no examples"):
        soft_group_accuracy([0.5], [1], partition_from_keys([("a",)], keys=[("a",), ("b",)]))


def test_soft_accuracy_saturates_to_hard():
    rng = np.random.default_rng(0)
    y = rng.integers(0, 2, 200)
    hard = rng.integers(0, 2, 200)
    p = np.where(hard == 1, 0.999, 0.001)
    part = partition_from_keys([(i % 2,) for i in range(200)])
    soft = soft_group_accuracy(p, y, part).values
    ref = group_metrics(hard, y, part)["accuracy"].values
    np.testing.assert_allclose(soft, ref, atol=1e-3)


def test_parity_loss_examples():
    assert parity_loss(GroupPerformance(("a", "b"), [0.8, 0.6], 0.7)) == pytest.approx(0.2)
    assert parity_loss(GroupPerformance(("a", "b"), [0.7, 0.7], 0.7)) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.lists(unit, min_size=1, max_size=8), unit, st.randoms(use_true_random=False))
def test_parity_loss_invariances(vals, overall, rnd):
    keys = tuple(range(len(vals)))
    base = parity_loss(GroupPerformance(keys, vals, overall))
    perm = list(vals)
    rnd.shuffle(perm)
    assert parity_loss(GroupPerformance(keys, perm, overall)) == pytest.approx(base)
    more = parity_loss(GroupPerformance(keys + (99,), list(vals) + [overall], overall))
    assert more == pytest.approx(base)


def test_pareto_error_table_example():
    keys = tuple(range(4))
    f = GroupPerformance(keys, [0.890, 0.883, 0.818, 0.784], 0.85)
    opt = PseudoOptima(keys, [0.934, 0.894, 0.815, 0.783])
    err = pareto_error(f, opt)
    # 1 - f/f_opt by hand
    np.testing.assert_allclose(err.eps, [1 - 0.890 / 0.934, 1 - 0.883 / 0.894, 0, 0])
    assert err.eps[0] == pytest.approx(0.0471, abs=1e-4)
    assert err.eps[1] == pytest.approx(0.0123, abs=1e-4)
    assert err.raw[2] < 0 and err.raw[3] < 0  # signed value kept
    assert err.mean == pytest.approx((0.0471 + 0.0123) / 4, abs=1e-4)


def test_pareto_error_validation():
    with pytest.raises(ValueError, match="mismatch"):
        pareto_error(GroupPerformance(("a",), [0.5], 0.5), PseudoOptima(("b",), [0.5]))
    with pytest.raises(ValueError):
        PseudoOptima(("a",), [0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(unit, st.floats(0.01, 1.0)), min_size=1, max_size=6))
def test_l1_zero_iff_all_meet_optimum(pairs):
    keys = tuple(range(len(pairs)))
    f = GroupPerformance(keys, [a for a, _ in pairs], 0.5)
    opt = PseudoOptima(keys, [b for _, b in pairs])
    err = pareto_error(f, opt)
    assert (err.l1 == 0) == all(a >= b for a, b in pairs)


def test_penalty_examples():
    assert penalty_from_eps([0.1, 0.3], 1.0) == pytest.approx(0.4)
    assert penalty_from_eps([0.1, 0.3], 0.0) == pytest.approx(0.01)
    assert penalty_from_eps([0.0, 0.0, 0.0], 0.37) == 0.0
    with pytest.raises(ValueError):
        penalty_from_eps([0.1], 1.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(unit, min_size=1, max_size=6), unit)
def test_penalty_matches_formula(eps, alpha):
    expect = alpha * sum(eps) + (1 - alpha) * population_variance(eps)
    assert penalty_from_eps(eps, alpha) == pytest.approx(expect, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(3, 8), st.floats(0.01, 0.9), unit, st.data())
def test_prevalence_weighting_mutes_minority(G, eps_max, alpha, data):
    # largest error on a minority group (prevalence < 1/G), all others zero
    minority_share = data.draw(st.floats(0.001, 0.999 / G))
    rest = (1 - minority_share) / (G - 1)
    prev = [minority_share] + [rest] * (G - 1)
    eps = [eps_max] + [0.0] * (G - 1)
    assert penalty_from_eps(eps, alpha, prev) <= penalty_from_eps(eps, alpha) + 1e-15


def test_pef_penalty_accepts_map_or_vector():
    err = ParetoError(("a", "b"), np.array([0.2, -0.1]))
    assert pef_penalty(err, 1.0, {"a": 0.5, "b": 0.5}) == pytest.approx(0.1)
    assert pef_penalty(err, 1.0, [0.5, 0.5]) == pytest.approx(0.1)


def test_pef_loss():
    assert pef_loss(0.5, 0.2, 2.0) == pytest.approx(0.9)
    assert pef_loss(0.5, 0.2, 0.0) == 0.5
    assert pef_loss(0.5, 0.2, 1.0) < pef_loss(0.5, 0.2, 1.5)
    with pytest.raises(ValueError):
        pef_loss(0.5, 0.2, -1.0)


def test_equalized_odds_gaps():
    part = partition_from_keys([("a",)] * 4 + [("b",)] * 4)
    m = group_metrics([1, 1, 0, 0, 1, 0, 0, 0], [1, 1, 0, 0, 1, 1, 0, 0], part)
    gaps = equalized_odds_gaps(m)
    assert gaps == {"tpr_gap": 0.5, "fpr_gap": 0.0}
