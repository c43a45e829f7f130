import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dpaa.errors import ConfigError, FormatError, ParameterError
from dpaa.graph import build_graph
from dpaa.weights import (PretrainedIIWCache, WeightPlan, blend_iiw, combined_weight, edge_iiw,
                          embedding_delta, inverse_interaction_weight, layer_weights,
                          lemma1_reduction, make_cache, stability_beta)

vec = st.lists(st.floats(-10, 10), min_size=3, max_size=3).map(np.array)


@pytest.mark.parametrize("a, b, expected", [
    ((1, 0), (2, 0), 0.0),
    ((1, 0), (0, 3), 1.0),
    ((1, 0), (-1, 0), 2.0),
])
def test_iiw_examples(a, b, expected):
    assert inverse_interaction_weight(a, b) == pytest.approx(expected, abs=1e-15)


def test_iiw_zero_norm_is_neutral():
    assert inverse_interaction_weight((0, 0), (1, 2)) == 1.0
    np.testing.assert_array_equal(edge_iiw(np.zeros((2, 3)), np.ones((2, 3))), [1.0, 1.0])


def test_iiw_dimension_mismatch():
    with pytest.raises(ParameterError):
        inverse_interaction_weight((1, 0), (1, 0, 0))


@settings(max_examples=200, deadline=None)
@given(vec, vec, st.floats(0.01, 100), st.floats(0.01, 100))
def test_iiw_symmetry_scale_and_bounds(a, b, s, t):
    assume(np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3)
    r = inverse_interaction_weight(a, b)
    assert r == inverse_interaction_weight(b, a)
    assert -1e-12 <= r <= 2 + 1e-12
    assert inverse_interaction_weight(s * a, t * b) == pytest.approx(r, abs=1e-12)
    assert edge_iiw(a[None], b[None])[0] == pytest.approx(r, abs=1e-12)


@pytest.mark.parametrize("delta, C, beta", [(1e-3, 1e-3, 0.5), (0.0, 1e-3, 0.0),
                                            (0.7, 0.0, 1.0), (0.0, 0.0, 1.0)])
def test_beta_examples(delta, C, beta):
    assert stability_beta(delta, C) == pytest.approx(beta)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 10), st.floats(0, 10), st.floats(1e-6, 10), st.floats(1e-6, 10))
def test_beta_monotone(d1, d2, c1, c2):
    lo, hi = sorted((d1, d2))
    assert stability_beta(lo, c1) <= stability_beta(hi, c1)
    if lo > 0:
        clo, chi = sorted((c1, c2))
        assert stability_beta(lo, clo) >= stability_beta(lo, chi)
    assert 0 <= stability_beta(lo, c1) <= 1


def test_beta_negative_inputs():
    with pytest.raises(ParameterError):
        stability_beta(-1.0, 1.0)
    with pytest.raises(ParameterError):
        stability_beta(1.0, -1.0)


@pytest.mark.parametrize("beta, expected", [(1.0, 0.8), (0.0, 0.2), (0.5, 0.5)])
def test_blend_examples(beta, expected):
    assert blend_iiw(0.8, 0.2, beta) == pytest.approx(expected)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 1))
def test_blend_between_inputs(a, b, beta):
    r = blend_iiw(a, b, beta)
    assert min(a, b) - 1e-12 <= r <= max(a, b) + 1e-12


def test_blend_rejects_bad_beta():
    with pytest.raises(ParameterError):
        blend_iiw(0.1, 0.2, 1.5)


@pytest.mark.parametrize("L, eta, expected", [
    (3, 0, [1, 1, 1]),
    (2, 1, [2 / 3, 4 / 3]),
    (3, 2, [3 / 14, 12 / 14, 27 / 14]),
])
def test_layer_weight_examples(L, eta, expected):
    np.testing.assert_allclose(layer_weights(L, eta), expected, rtol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(0, 5), st.floats(0, 5))
def test_layer_weight_shape_and_ratio_growth(L, e1, e2):
    lam = layer_weights(L, e1)
    assert lam.mean() == pytest.approx(1.0, rel=1e-12)
    assert np.all(lam > 0) and np.all(np.diff(lam) >= -1e-12)
    lo, hi = sorted((e1, e2))
    assume(hi - lo > 1e-3 and L > 1)
    a, b = layer_weights(L, lo), layer_weights(L, hi)
    for la in range(L):
        for lb in range(la + 1, L):
            assert b[lb] / b[la] > a[lb] / a[la]


def test_layer_weight_errors():
    with pytest.raises(ParameterError):
        layer_weights(0, 1.0)
    with pytest.raises(ParameterError):
        layer_weights(2, -1.0)


def _plan_with_lambda(gamma, L, target_layer, target_value):
    plan = WeightPlan(gamma=gamma, num_layers=L, eta=0.0)
    lam = np.ones(L)
    lam[target_layer] = target_value
    object.__setattr__(plan, "normalized_layer_weights", lam)
    return plan


def test_combined_weight_examples():
    assert combined_weight(_plan_with_lambda(1, 3, 0, 1.0), 0, 0.3) == pytest.approx(0.3)
    assert combined_weight(_plan_with_lambda(1, 3, 2, 1.5), 2, 0.3) == pytest.approx(1.5)
    assert combined_weight(_plan_with_lambda(0, 3, 2, 1.5), 2, 0.3) == pytest.approx(0.45)
    with pytest.raises(ParameterError):
        combined_weight(WeightPlan(num_layers=2), 2, 0.3)


def test_combined_weight_gating_vectorised():
    plan = WeightPlan(gamma=1, num_layers=3, eta=1.0)
    r = np.array([0.1, 0.9, 1.7])
    np.testing.assert_allclose(combined_weight(plan, 1, r), plan.normalized_layer_weights[1])
    np.testing.assert_allclose(combined_weight(plan, 0, r), plan.normalized_layer_weights[0] * r)


def test_plan_validation_and_cached_layers():
    assert WeightPlan(gamma=1, num_layers=2).cached_layers == (0,)
    assert WeightPlan(gamma=0, num_layers=4).cached_layers == (0, 1, 2, 3)
    for bad in (dict(C=-1), dict(gamma=2), dict(delta=1.5)):
        with pytest.raises(ParameterError):
            WeightPlan(**bad)


def test_embedding_delta_examples(rng):
    a = rng.normal(size=(5, 3))
    assert embedding_delta(a, a) == 0.0
    prev = np.zeros((2, 2))
    curr = np.array([[1.0, 0.0], [0.0, 3.0]])
    assert embedding_delta(prev, curr) == pytest.approx(2.0)
    b = rng.normal(size=(5, 3))
    loop = sum(math.sqrt(sum((b[v, k] - a[v, k]) ** 2 for k in range(3))) for v in range(5)) / 5
    assert embedding_delta(a, b) == pytest.approx(loop, rel=1e-13)
    with pytest.raises(ParameterError):
        embedding_delta(a, b[:4])


# -- contribution-ratio reduction ------------------------------------------------

def ratio_difference_oracle(d_p, d_q, norm_p, norm_q, rbar_p, rbar_q):
    """Exact rational ratios built by summing each neighbour's message."""
    def contribution(degree, norm, weight):
        return sum((Fraction(weight) * Fraction(norm) for _ in range(degree)), Fraction(0))

    plain = contribution(d_p, norm_p, 1) / contribution(d_q, norm_q, 1)
    weighted = contribution(d_p, norm_p, rbar_p) / contribution(d_q, norm_q, rbar_q)
    return plain - weighted


def test_lemma1_example():
    assert lemma1_reduction(4, 2, 1.0, 1.0, 0.2, 0.8) == pytest.approx(1.5, rel=1e-15)
    assert float(ratio_difference_oracle(4, 2, 1.0, 1.0, 0.2, 0.8)) == pytest.approx(1.5)


def test_lemma1_vanishing_gap():
    values = [lemma1_reduction(3, 1, 0.5, 0.7, 0.6 * (1 - eps), 0.6) for eps in (1e-1, 1e-4, 1e-8)]
    assert values[0] > values[1] > values[2] > 0
    assert values[2] < 1e-7


def test_lemma1_randomised_against_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        d_p, d_q = (int(x) for x in rng.integers(1, 60, 2))
        norm_p, norm_q = rng.uniform(0.01, 2.0, 2)
        rbar_q = rng.uniform(0.05, 2.0)
        rbar_p = rbar_q * rng.uniform(0.0, 0.999)
        if rbar_p <= 0:
            continue
        got = lemma1_reduction(d_p, d_q, norm_p, norm_q, rbar_p, rbar_q)
        want = float(ratio_difference_oracle(d_p, d_q, norm_p, norm_q, rbar_p, rbar_q))
        assert got > 0
        assert abs(got - want) <= 1e-12 * abs(want)


def test_lemma1_preconditions():
    with pytest.raises(ParameterError):
        lemma1_reduction(4, 2, 1, 1, 0.8, 0.8)
    with pytest.raises(ParameterError):
        lemma1_reduction(0, 2, 1, 1, 0.2, 0.8)


# -- cache file ------------------------------------------------------------------

def test_cache_roundtrip_and_text(tmp_path, rng):
    g = build_graph([(0, 0), (0, 1), (1, 1)], 2, 2)
    rows = [rng.normal(size=(4, 3)) for _ in range(3)]
    cache = make_cache(rows, g, (0, 2))
    assert cache.values.shape == (2, 3)
    assert np.all((cache.values >= 0) & (cache.values <= 2))
    path = tmp_path / "c.bin"
    cache.save(path)
    raw = path.read_bytes()
    assert raw[:8] == b"DPAAIIW\x00" and len(raw) == 8 + 16 + 8 + 4 * 6
    back = PretrainedIIWCache.load(path)
    assert back.layers == (0, 2)
    np.testing.assert_array_equal(back.values, cache.values)
    cache.export_text(tmp_path / "c.txt")
    lines = (tmp_path / "c.txt").read_text().splitlines()
    assert len(lines) == 6
    e, layer, v = lines[4].split("\t")
    assert (int(e), int(layer)) == (1, 2)
    assert np.float32(float(v)) == np.float32(cache.values[1, 1])


def test_cache_plan_checks(tmp_path):
    cache = PretrainedIIWCache(layers=(0,), values=np.ones((1, 3)))
    cache.check_plan(WeightPlan(gamma=1, num_layers=4), 3)
    with pytest.raises(ConfigError):
        cache.check_plan(WeightPlan(gamma=0, num_layers=2), 3)
    with pytest.raises(ConfigError):
        cache.check_plan(WeightPlan(gamma=1, num_layers=2), 4)
    with pytest.raises(ConfigError):
        cache.layer(1)
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTACACHE" + b"\0" * 20)
    with pytest.raises(FormatError):
        PretrainedIIWCache.load(bad)
    cache.save(bad)
    bad.write_bytes(bad.read_bytes()[:-2])
    with pytest.raises(FormatError):
        PretrainedIIWCache.load(bad)
