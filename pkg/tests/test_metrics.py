import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from censorkit.errors import IntractableOracleError, UndefinedMetricError
from censorkit.metrics import (
    FairnessReport, Predictions, accuracy, adversary_proxy_divergence, default_t_grid, delta, delta_curve,
    discretize, discrimination, empirical_h_divergence, empirical_h_divergence_exact, fairness_report,
    lemma2_certificate, proxy_and_oracle,
)
from censorkit.nn import Affine, Network, Sigmoid

from . import oracles


# -- discrimination / accuracy / delta --


def test_constant_classifier_no_discrimination():
    assert discrimination(Predictions([1, 1, 1, 1], [0, 1, 0, 1])) == 0.0


def test_discrimination_hand_example():
    assert discrimination(Predictions([1, 0, 1, 1], [0, 0, 1, 1])) == 0.5


def test_maximal_disparity():
    assert discrimination(Predictions([1, 1, 0, 0], [0, 0, 1, 1])) == 1.0


def test_empty_group_undefined():
    with pytest.raises(UndefinedMetricError):
        discrimination(Predictions([1, 0], [1, 1]))


def test_accuracy_examples():
    y = [0, 1, 1, 0]
    assert accuracy(Predictions(y, [0, 1, 0, 1], y)) == 1.0
    assert accuracy(Predictions([1 - v for v in y], [0, 1, 0, 1], y)) == 0.0
    assert accuracy(Predictions([0, 1, 1, 1], [0, 1, 0, 1], y)) == 0.75


def test_accuracy_needs_labels():
    with pytest.raises(UndefinedMetricError):
        accuracy(Predictions([0, 1], [0, 1]))


def test_delta_examples():
    assert delta(0.8, 0.1, 1) == pytest.approx(0.7)
    assert delta(0.83, 0.4, 0) == 0.83
    assert delta(0.9, 0.2, 3) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        delta(0.9, 0.2, -1)


def test_t_grid():
    grid = default_t_grid()
    assert len(grid) == 31 and grid[0] == 0.0 and grid[-1] == 3.0 and grid[1] == pytest.approx(0.1)


def test_delta_curve_affine():
    curve = delta_curve(0.8, 0.15, default_t_grid())
    slopes = [(v2 - v1) / (t2 - t1) for (t1, v1), (t2, v2) in zip(curve, curve[1:])]
    assert slopes == pytest.approx([-0.15] * 30)


binary_rows = st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1)), min_size=2, max_size=40)


@settings(max_examples=200)
@given(binary_rows)
def test_metrics_match_oracle(rows):
    y_hat, s, y = (list(c) for c in zip(*rows))
    p = Predictions(y_hat, s, y)
    assert accuracy(p) == float(oracles.accuracy(y_hat, y))
    if 0 < sum(s) < len(s):
        assert discrimination(p) == float(oracles.discrimination(y_hat, s))


@settings(max_examples=100)
@given(binary_rows, st.randoms(use_true_random=False))
def test_discrimination_symmetries(rows, rnd):
    y_hat, s, _ = (list(c) for c in zip(*rows))
    if not 0 < sum(s) < len(s):
        return
    d = discrimination(Predictions(y_hat, s))
    order = list(range(len(s)))
    rnd.shuffle(order)
    assert discrimination(Predictions([y_hat[i] for i in order], [s[i] for i in order])) == d
    assert discrimination(Predictions(y_hat, [1 - v for v in s])) == d


# -- H-divergence --


def test_identical_distributions_zero():
    assert empirical_h_divergence([1, 2, 2, 3], [2, 3, 1, 2]) == 0.0


def test_four_thirds_fixture():
    assert empirical_h_divergence_exact([0, 0, 1], [1, 1, 1]) == Fraction(4, 3)


def test_disjoint_supports_two():
    assert empirical_h_divergence([0, 1, 2], [5, 6]) == 2.0


def test_vector_samples():
    a = [np.array([0, 1]), np.array([0, 1])]
    b = [np.array([0, 1]), np.array([1, 1])]
    assert empirical_h_divergence(a, b) == 1.0


def test_empty_sample_undefined():
    with pytest.raises(UndefinedMetricError):
        empirical_h_divergence([], [1])


def test_support_cap():
    with pytest.raises(IntractableOracleError):
        empirical_h_divergence(list(range(3000)), list(range(3000, 6000)))


def test_large_support_uses_decomposition():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 40, 300).tolist()
    b = rng.integers(10, 50, 200).tolist()
    assert empirical_h_divergence_exact(a, b) == 2 * oracles.total_variation(a, b)


samples = st.lists(st.integers(0, 7), min_size=1, max_size=25)


@settings(max_examples=200)
@given(samples, samples)
def test_divergence_is_twice_tv(a, b):
    assert empirical_h_divergence_exact(a, b) == 2 * oracles.total_variation(a, b)


@settings(max_examples=60)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=12), st.lists(st.integers(0, 4), min_size=1, max_size=12))
def test_divergence_matches_brute_force(a, b):
    assert empirical_h_divergence_exact(a, b) == oracles.brute_force_divergence(a, b)


@settings(max_examples=100)
@given(samples, samples)
def test_thresholds_bounded_by_all(a, b):
    assert empirical_h_divergence_exact(a, b, "thresholds") <= empirical_h_divergence_exact(a, b, "all")


def test_thresholds_on_ordered_shift():
    # a single cut at 1 separates these perfectly
    assert empirical_h_divergence([0, 1, 1], [2, 3]) == empirical_h_divergence([0, 1, 1], [2, 3], "thresholds") == 2.0


def test_unknown_class():
    with pytest.raises(ValueError):
        empirical_h_divergence([1], [2], "linear")


# -- discretization and the disparity certificate --


def test_discretize_bins():
    r = np.array([[0.0, 5.0], [1.0, 5.0], [0.5, 5.0], [0.999, 5.0]])
    d = discretize(r, bins=4)
    assert d[:, 0].tolist() == [0, 3, 2, 3]
    assert d[:, 1].tolist() == [0, 0, 0, 0]


def test_constant_classifier_certificate():
    rng = np.random.default_rng(0)
    cert = lemma2_certificate(Predictions([1] * 20, [0, 1] * 10), rng.standard_normal((20, 2)))
    assert cert.y_disc == 0.0 and cert.half_divergence >= 0 and cert.holds


def test_single_value_indicator():
    reps = np.array([0, 1, 2, 0, 1, 2, 2, 2], dtype=float)
    s = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    y_hat = (reps == 2).astype(int)
    cert = lemma2_certificate(Predictions(y_hat, s), reps, bins=3)
    gap = abs(Fraction(int(y_hat[s == 0].sum()), 4) - Fraction(int(y_hat[s == 1].sum()), 4))
    assert cert.y_disc == float(gap) == 0.5
    assert cert.half_divergence == float(oracles.brute_force_divergence(reps[s == 0].tolist(), reps[s == 1].tolist()) / 2)
    assert cert.holds and cert.margin >= 0


def test_identical_groups_zero_right_side():
    reps = np.array([0.0, 1.0, 0.0, 1.0])
    y_hat = [1, 0, 1, 0]
    cert = lemma2_certificate(Predictions(y_hat, [0, 0, 1, 1]), reps)
    assert cert.half_divergence == 0.0 and cert.y_disc == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_certificate_always_holds(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 60))
    reps = rng.integers(0, 4, size=(n, 2)).astype(float)
    s = rng.permutation(np.arange(n) % 2)
    table = rng.integers(0, 2, size=(4, 4))
    y_hat = table[reps[:, 0].astype(int), reps[:, 1].astype(int)]
    assert lemma2_certificate(Predictions(y_hat, s), reps).holds


def _adversary(w, b):
    net = Network([Affine(1, 1), Sigmoid()], (1,))
    net.parameters[0][...] = w
    net.parameters[1][...] = b
    return net


def test_proxy_constant_adversary_zero():
    assert adversary_proxy_divergence(_adversary(0.0, 0.0), np.arange(6.0)[:, None], [0, 1] * 3) == 0.0


def test_proxy_perfect_adversary_two():
    reps = np.array([[0.0], [0.0], [1.0], [1.0]])
    assert adversary_proxy_divergence(_adversary(50.0, -25.0), reps, [0, 0, 1, 1]) == 2.0


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_proxy_below_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 50))
    reps = rng.standard_normal((n, 1))
    s = rng.permutation(np.arange(n) % 2)
    proxy, oracle = proxy_and_oracle(_adversary(rng.normal(0, 3), rng.normal()), reps, s)
    assert proxy <= oracle


# -- reports --


def test_report_roundtrip(tmp_path):
    p = Predictions([1, 0, 1, 1], [0, 0, 1, 1], [1, 0, 0, 1])
    rep = fairness_report(p, [0.0, 1.0], representations=np.array([[0.0], [1.0], [0.0], [1.0]]))
    rep.write_json(tmp_path / "r.json")
    back = FairnessReport.from_dict(json.loads((tmp_path / "r.json").read_text()))
    assert back == rep
    assert rep.delta_curve == [(0.0, 0.75), (1.0, 0.25)]


def test_report_delta_csv(tmp_path):
    rep = fairness_report(Predictions([1, 0, 1, 1], [0, 0, 1, 1], [1, 0, 0, 1]), [0.0, 0.5])
    rep.write_delta_csv(tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines == ["t,delta,acc,disc", "0.0,0.75,0.75,0.5", "0.5,0.5,0.75,0.5"]


def test_report_without_labels_is_strict_json(tmp_path):
    rep = fairness_report(Predictions([1, 0, 1, 1], [0, 0, 1, 1]))
    assert rep.y_acc is None and rep.delta_curve == []
    rep.write_json(tmp_path / "r.json")
    json.loads((tmp_path / "r.json").read_text(), parse_constant=lambda c: pytest.fail(f"non-JSON constant {c}"))
