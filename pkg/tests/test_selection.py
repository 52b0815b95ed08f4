import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autos.data import LabeledDomain
from autos.errors import DegenerateClusterError, EmptyCluster, EmptyDomain, ShapeError
from autos.nn import Hyperparams, init_model
from autos.selection import (assign_targets, cluster_centers, cluster_radius, compute_adjustments, cosine_distance,
                             cosine_distances, domain_statistics, domain_weights, keep_rule, renew_domain,
                             select_confident, select_domains, target_density, thresholds)


def test_cluster_centers():
    c = cluster_centers(np.array([[3.0, 4.0], [0.0, 2.0]]))
    assert c == pytest.approx(np.array([[0.6, 0.8], [0.0, 1.0]]), abs=1e-15)
    assert np.array_equal(cluster_centers(c), c)
    with pytest.raises(DegenerateClusterError):
        cluster_centers(np.array([[1.0, 0.0], [0.0, 0.0]]))


@pytest.mark.parametrize("a, b, d", [((1, 2), (1, 2), 0.0), ((1, 0), (0, 3), 1.0), ((1, 0), (-1, 0), 2.0)])
def test_cosine_distance_spot_values(a, b, d):
    assert cosine_distance(a, b) == pytest.approx(d, abs=1e-15)
    assert cosine_distance(b, a) == cosine_distance(a, b)


def test_cosine_distance_zero_vector():
    with pytest.raises(DegenerateClusterError):
        cosine_distance([0, 0], [1, 0])


def test_assign_targets_ties_and_exact_centers():
    centers = cluster_centers(np.array([[1.0, 0.0], [0.0, 1.0]]))
    x = np.array([[1.0, 1.0], [0.0, 5.0], [2.0, 0.0]])
    assert assign_targets(x, centers).tolist() == [0, 1, 0]
    with pytest.raises(ShapeError):
        assign_targets(np.zeros((1, 3)) + 1, centers)


def _brute_assign(x, centers):
    out = []
    for row in x:
        best, best_d = 0, math.inf
        for c, center in enumerate(centers):
            d = cosine_distance(row, center)
            if d < best_d:
                best, best_d = c, d
        out.append(best)
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 200), st.integers(2, 6), st.integers(2, 8))
def test_assign_targets_matches_brute_force(seed, n, C, h):
    rng = np.random.default_rng(seed)
    x, centers = rng.normal(size=(n, h)), cluster_centers(rng.normal(size=(C, h)))
    assert assign_targets(x, centers).tolist() == _brute_assign(x, centers)


@pytest.mark.parametrize("metric, value", [("mean", 0.2), ("rms", 0.2160246899469287), ("max", 0.3)])
def test_cluster_radius(metric, value):
    assert cluster_radius([0.1, 0.2, 0.3], metric) == pytest.approx(value, abs=1e-12)
    assert cluster_radius([0.1, 0.2, 0.3], "rms") == pytest.approx(0.21602, abs=1e-5)


def test_cluster_radius_errors():
    with pytest.raises(EmptyCluster):
        cluster_radius([])
    with pytest.raises(ValueError):
        cluster_radius([0.1], "median")


def test_radius_power_mean_ordering_on_1000_lists():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        d = rng.uniform(0, 2, size=rng.integers(1, 50))
        mean, rms, mx = (cluster_radius(d, m) for m in ("mean", "rms", "max"))
        assert mean <= rms + 1e-15 and rms <= mx + 1e-15


def test_thresholds_and_adjustments():
    d_s, d_t = thresholds(0.2, 1.0, 0.05, 0.2 / 3)
    assert d_s == pytest.approx(0.25, abs=1e-15)
    assert d_t == pytest.approx(0.13333333333, abs=1e-10)
    assert thresholds(0.1, 1.0, 0.0, 0.5)[1] == 0.0
    with pytest.raises(ValueError):
        thresholds(-0.1, 1.0, 0.0, 0.0)
    assert compute_adjustments([0.1, 0.2, 0.3], 0.3) == pytest.approx((0.2, 0.1), abs=1e-15)
    assert compute_adjustments([0.1, 0.3], 0.2)[0] == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(EmptyCluster):
        compute_adjustments([], 0.1)


def test_density_spot_values():
    assert target_density(10, 0.5, 2) == pytest.approx(10 / (math.pi * 0.5), abs=1e-9)
    assert target_density(10, 0.5, 2) == pytest.approx(6.366, abs=1e-3)
    assert target_density(0, 0.0, 5) == 0.0
    assert target_density(20, 0.3, 7) == pytest.approx(2 * target_density(10, 0.3, 7), rel=1e-14)
    with pytest.raises(DegenerateClusterError):
        target_density(3, 0.0, 2)


@pytest.mark.parametrize("dim", range(1, 21))
@pytest.mark.parametrize("exponent", ["1", "d"])
def test_density_log_space_matches_direct(dim, exponent):
    n, r = 17, 0.37
    e = dim if exponent == "d" else 1
    direct = n / (math.pi ** (dim / 2) / math.gamma(dim / 2 + 1) * r ** e)
    assert target_density(n, r, dim, exponent) == pytest.approx(direct, rel=1e-10)


def test_domain_weights_examples():
    _, _, omega = domain_weights(np.array([4]), 10, np.array([[0.0, 0.0]]), 0.5)
    assert omega[0] == pytest.approx(0.5 * 0.4 + 0.5 * 0.5)
    o1, o2, o = domain_weights(np.array([10]), 10, np.full((1, 3), 800.0), 0.5)
    assert (o1[0], o2[0], o[0]) == (1.0, 1.0, 1.0)
    # an invalid (k, c) cell is left out of the class average
    _, o2, _ = domain_weights(np.array([0]), 10, np.array([[0.0, 50.0]]), 0.5, valid=np.array([[True, False]]))
    assert o2[0] == 0.5


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=5), st.integers(0, 4), st.floats(1e-3, 5))
def test_omega2_increases_with_each_density(rho, c, step):
    c = c % len(rho)
    base = np.array([rho])
    bumped = base.copy()
    bumped[0, c] += step
    # past |rho| ~ 25 the sigmoid increment drops below one ulp of the class average
    if abs(rho[c]) < 20:
        assert domain_weights(np.array([1]), 10, bumped, 0.5)[1][0] > domain_weights(np.array([1]), 10, base, 0.5)[1][0]


def test_keep_rule_examples():
    assert keep_rule((0.5, 0.4, 0.05), 3, 0.1).tolist() == [True, True, False]
    assert keep_rule(np.full(4, 0.25), 4, 0.01).all()
    assert keep_rule((0.0, 0.9), 2, 0.5).all()
    with pytest.raises(ValueError):
        keep_rule((0.5,), 0, 0.1)


def test_confident_selection_boundaries():
    src = np.array([[0.0, 1.0], [0.3, 1.0]])
    tgt = np.array([[0.21, 1.0], [0.19, 1.0]])
    d_s, d_t = np.array([0.25, 0.25]), np.array([0.2, 0.2])
    s, t = select_confident(src, np.array([0, 0]), tgt, np.array([0, 0]), d_s, d_t)
    assert s.tolist() == [0] and t.tolist() == [1]
    # strict inequality at the threshold itself
    _, t = select_confident(src, np.array([0, 0]), np.array([[0.2, 1.0]]), np.array([0]), d_s, d_t)
    assert t.size == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 200), st.integers(1, 200), st.integers(2, 5))
def test_select_confident_matches_brute_force(seed, n_s, n_t, C):
    rng = np.random.default_rng(seed)
    src, tgt = rng.uniform(0, 2, size=(n_s, C)), rng.uniform(0, 2, size=(n_t, C))
    y, a = rng.integers(0, C, n_s), rng.integers(0, C, n_t)
    d_s, d_t = rng.uniform(0, 2, C), rng.uniform(0, 2, C)
    s, t = select_confident(src, y, tgt, a, d_s, d_t)
    assert s.tolist() == [i for i in range(n_s) if src[i][y[i]] < d_s[y[i]]]
    assert t.tolist() == [j for j in range(n_t) if tgt[j][a[j]] < d_t[a[j]]]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 2.0), st.floats(0.01, 1.0))
def test_threshold_monotonicity(seed, alpha, bump):
    rng = np.random.default_rng(seed)
    C = 3
    src, y = rng.uniform(0, 1, size=(60, C)), rng.integers(0, C, 60)
    tgt, a = rng.uniform(0, 1, size=(60, C)), rng.integers(0, C, 60)
    r = np.full(C, 0.4)
    small = select_confident(src, y, tgt, a, *np.vectorize(thresholds)(r, alpha, 0.05, 0.1))
    large = select_confident(src, y, tgt, a, *np.vectorize(thresholds)(r, alpha + bump, 0.05, 0.1))
    assert set(small[0]) <= set(large[0])
    tighter = select_confident(src, y, tgt, a, *np.vectorize(thresholds)(r, alpha, 0.05, 0.1 + bump))
    assert set(tighter[1]) <= set(small[1])


def test_renew_domain_sizes_and_labels():
    rng = np.random.default_rng(0)
    src = LabeledDomain("s", rng.normal(size=(60, 3)), rng.integers(0, 2, 60), 2)
    tgt = rng.normal(size=(30, 3))
    keep_src, keep_tgt = np.arange(40), np.arange(5, 15)
    out = renew_domain(src, keep_src, tgt, keep_tgt, np.ones(10, dtype=int))
    assert len(out) == 50
    assert out.labels[40:].tolist() == [1] * 10
    assert not set(out.ids) & {src.ids[i] for i in range(40, 60)}
    same = renew_domain(src, np.arange(60), tgt, [], [])
    assert same.features.tobytes() == src.features.tobytes() and same.ids == src.ids
    with pytest.raises(EmptyDomain):
        renew_domain(src, [], tgt, [], [])


def _problem(seed=0, K=3, n=40):
    rng = np.random.default_rng(seed)
    models = [init_model(4, 6, 3, rng) for _ in range(K)]
    sources = [LabeledDomain(f"s{k}", rng.normal(size=(n, 4)), rng.integers(0, 3, n), 3) for k in range(K)]
    return models, sources, rng.normal(size=(n, 4))


def test_domain_statistics_consistency():
    models, sources, x_t = _problem()
    s = domain_statistics(models[0], sources[0], x_t, Hyperparams())
    assert s.centers.shape == (3, 6)
    assert np.all(s.target_counts == np.bincount(s.assignments[s.confident_tgt], minlength=3))
    assert np.all(s.d_t <= s.d_s)
    assert len(s.pseudo_labels) == len(s.confident_tgt)


def test_select_domains_outcome():
    models, sources, x_t = _problem()
    out = select_domains(models, sources, x_t, Hyperparams(), sigma=0.5)
    assert out.keep.all()  # sigma above 1/K keeps everyone
    assert out.omega == pytest.approx(0.5 * out.omega1 + 0.5 * out.omega2, abs=1e-15)
    assert out.threshold == pytest.approx(1 / 3 - 0.5)
    for k, r in enumerate(out.renewed_domains):
        assert len(r) == len(out.confident_src[k]) + len(out.confident_tgt[k])


def test_select_domains_never_drops_everything():
    models, sources, x_t = _problem(seed=3)
    out = select_domains(models, sources, x_t, Hyperparams(), sigma=0.0, domain_count=1)
    assert out.kept_count == 1
    assert out.keep[int(np.argmax(out.omega))]
