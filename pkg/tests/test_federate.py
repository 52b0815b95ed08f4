import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from autos.errors import ShapeError
from autos.federate import aggregate, predict_target, renormalize
from autos.nn import Model, forward, init_model


def _models(k, seed=0, dims=(3, 4, 2)):
    rng = np.random.default_rng(seed)
    return [init_model(*dims, rng) for _ in range(k)]


def _max_diff(a: Model, b: Model) -> float:
    return max(float(np.max(np.abs(p - q))) for p, q in zip(a.params(), b.params()))


def test_single_kept_model_is_returned():
    models = _models(3)
    out = aggregate(models, [0.1, 0.7, 0.2], [False, True, False])
    assert _max_diff(out, models[1]) <= 1e-12


def test_identical_models():
    m = _models(1)[0]
    assert _max_diff(aggregate([m, m.copy()], [0.3, 0.7]), m) <= 1e-12


def test_zero_and_one_models_average():
    m = _models(1)[0]
    zero = Model.from_params([np.zeros_like(p) for p in m.params()])
    one = Model.from_params([np.ones_like(p) for p in m.params()])
    out = aggregate([zero, one], [0.25, 0.75])
    assert all(np.all(np.abs(p - 0.75) <= 1e-12) for p in out.params())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 5), st.data())
def test_permutation_invariance(seed, k, data):
    models = _models(k, seed)
    omega = np.random.default_rng(seed).uniform(0.01, 1, k)
    perm = data.draw(st.permutations(range(k)))
    a = aggregate(models, omega)
    b = aggregate([models[i] for i in perm], omega[list(perm)])
    assert _max_diff(a, b) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=6), st.data())
def test_renormalized_weights_on_simplex(omega, data):
    keep = data.draw(st.lists(st.booleans(), min_size=len(omega), max_size=len(omega)))
    if not any(keep):
        keep[0] = True
    w = renormalize(omega, keep).omega_kept
    assert w.size == sum(keep)
    assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)


def test_zero_weight_model_does_not_matter():
    models = _models(3)
    a = aggregate(models, [0.4, 0.0, 0.6])
    b = aggregate(models, [0.4, 0.0, 0.6], [True, False, True])
    assert _max_diff(a, b) <= 1e-12


def test_aggregate_errors():
    a, b = _models(1)[0], _models(1, dims=(3, 5, 2))[0]
    with pytest.raises(ShapeError):
        aggregate([a, b], [0.5, 0.5])
    with pytest.raises(ValueError):
        aggregate([a, a], [0.5, 0.5], [False, False])
    with pytest.raises(ShapeError):
        renormalize([0.5], [True, True])


def test_predict_target():
    m = _models(1)[0]
    x = np.random.default_rng(1).normal(size=(6, 3))
    p = predict_target(m, x)
    assert np.array_equal(p, forward(m, x)[1])
    assert np.all(np.abs(p.sum(axis=1) - 1) <= 1e-12)
    # BLAS may order the sums differently for one row, so equality is to rounding
    assert np.allclose(predict_target(m, x[2:3])[0], p[2], rtol=0, atol=1e-15)
    zero = Model.from_params([np.zeros_like(q) for q in m.params()])
    assert np.all(predict_target(zero, x) == 0.5)
