import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from stsyn.data import synthetic_logistic, synthetic_quadratic
from stsyn.errors import NonFiniteError
from stsyn.sgd import (
    LogisticObjective, MiniBatch, QuadraticObjective, aggregate, estimate_variance_bound,
    exact_variance_bound, full_loss_and_grad, local_update, local_updates, minibatch_gradient,
)


@pytest.fixture(scope="module")
def quad():
    return synthetic_quadratic(300, 6, seed=1)


@pytest.fixture(scope="module")
def logi():
    return synthetic_logistic(300, 6, seed=1)


def central_difference(f, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("name", ["quad", "logi"])
def test_full_gradient_finite_difference(name, request):
    obj = request.getfixturevalue(name)
    rng = np.random.default_rng(0)
    for _ in range(10):
        w = rng.standard_normal(obj.dim)
        _, g = obj.loss_and_grad(w)
        np.testing.assert_allclose(g, central_difference(obj.loss, w), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("name", ["quad", "logi"])
def test_minibatch_gradient_finite_difference(name, request):
    obj = request.getfixturevalue(name)
    rng = np.random.default_rng(1)
    idx = rng.integers(0, obj.n_samples, size=17)
    w = rng.standard_normal(obj.dim)
    g = minibatch_gradient(obj, w, MiniBatch(idx))
    fd = central_difference(lambda v: float(np.mean(obj.sample_losses(v, idx))), w)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_batched_gradients_match_single(logi):
    rng = np.random.default_rng(2)
    W = rng.standard_normal((5, logi.dim))
    idx = rng.integers(0, logi.n_samples, size=(5, 8))
    G = logi.batch_gradients(W, idx)
    for r in range(5):
        np.testing.assert_allclose(G[r], logi.per_sample_gradients(W[r])[idx[r]].mean(axis=0), rtol=1e-12)


def test_local_update_bit_identical_to_stack(quad):
    rng = np.random.default_rng(3)
    W = rng.standard_normal((4, quad.dim))
    idx = rng.integers(0, quad.n_samples, size=(4, 5))
    stacked = local_updates(quad, W, idx, 0.05)
    for r in range(4):
        assert np.array_equal(local_update(quad, W[r], MiniBatch(idx[r]), 0.05), stacked[r])


def test_quadratic_constants(quad):
    assert np.linalg.norm(quad.loss_and_grad(quad.minimizer)[1]) < 1e-10
    rng = np.random.default_rng(4)
    for _ in range(20):
        x, y = rng.standard_normal((2, quad.dim)) * 3
        gx, gy = quad.loss_and_grad(x)[1], quad.loss_and_grad(y)[1]
        assert np.linalg.norm(gx - gy) <= quad.smoothness * np.linalg.norm(x - y) * (1 + 1e-12)
    assert quad.loss(rng.standard_normal(quad.dim)) >= quad.f_star


def test_logistic_smoothness_and_minimum(logi):
    rng = np.random.default_rng(5)
    for _ in range(20):
        x, y = rng.standard_normal((2, logi.dim)) * 3
        gx, gy = logi.loss_and_grad(x)[1], logi.loss_and_grad(y)[1]
        assert np.linalg.norm(gx - gy) <= logi.smoothness * np.linalg.norm(x - y) * (1 + 1e-12)
    w, f = logi.reference_minimum()
    assert np.linalg.norm(logi.loss_and_grad(w)[1]) < 1e-6
    assert f < logi.loss(np.zeros(logi.dim))
    assert 0.5 < logi.accuracy(w) <= 1.0


def test_logistic_extreme_margin_is_finite():
    obj = LogisticObjective(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
    assert np.isfinite(obj.loss(np.array([1e4])))
    assert obj.loss(np.array([-1e4])) == pytest.approx(1e4 / 2, rel=1e-12)


def test_logistic_rejects_bad_labels():
    with pytest.raises(ValueError):
        LogisticObjective(np.ones((2, 1)), np.array([0.0, 1.0]))


def test_variance_enumeration_vs_sampling(quad):
    w = np.ones(quad.dim)
    exact = quad.gradient_variance(w)
    # variance of a size-1 minibatch gradient, sampled
    rng = np.random.default_rng(6)
    idx = rng.integers(0, quad.n_samples, size=(40000, 1))
    G = quad.batch_gradients(np.tile(w, (40000, 1)), idx)
    full = quad.loss_and_grad(w)[1]
    sampled = np.mean(np.sum((G - full) ** 2, axis=1))
    assert sampled == pytest.approx(exact, rel=0.03)
    assert estimate_variance_bound(quad, [w], trials=40000, inflation=1.0) == pytest.approx(exact, rel=0.03)
    assert exact_variance_bound(quad, [w, 2 * w]) >= exact


def test_quadratic_variance_ball_bound(quad):
    rng = np.random.default_rng(7)
    bound = quad.variance_bound(2.0)
    for _ in range(20):
        d = rng.standard_normal(quad.dim)
        w = quad.minimizer + 2.0 * d / np.linalg.norm(d) * rng.random()
        assert quad.gradient_variance(w) <= bound


class TestAggregate:
    def test_mean(self):
        np.testing.assert_allclose(aggregate([[1.0, 2.0], [3.0, 6.0]]), [2.0, 4.0])

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 4)),
                      elements=st.floats(-1e6, 1e6)), st.randoms())
    @settings(max_examples=200, deadline=None)
    def test_permutation_invariant(self, X, rnd):
        perm = list(range(len(X)))
        rnd.shuffle(perm)
        assert np.array_equal(aggregate(X), aggregate(X[perm]))

    @given(hnp.arrays(np.float64, st.integers(1, 5), elements=st.floats(-1e300, 1e300)), st.integers(1, 12))
    @settings(max_examples=100, deadline=None)
    def test_identical_copies_exact(self, w, n):
        assert np.array_equal(aggregate([w] * n), w)

    @given(hnp.arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 4)), elements=st.floats(-1e6, 1e6)))
    @settings(max_examples=100, deadline=None)
    def test_within_hull(self, X):
        m = aggregate(X)
        assert np.all(m >= X.min(axis=0)) and np.all(m <= X.max(axis=0))

    def test_errors(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([np.ones(2), np.ones(3)])
        with pytest.raises(NonFiniteError):
            aggregate([np.array([np.nan])])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_detection(quad):
    with pytest.raises(NonFiniteError):
        full_loss_and_grad(quad, np.full(quad.dim, np.inf))
    with pytest.raises(ValueError):
        local_update(quad, np.zeros(quad.dim), MiniBatch(np.arange(3)), 0.0)
    with pytest.raises(ValueError):
        MiniBatch(np.array([], dtype=int))


def test_objective_shape_checks():
    with pytest.raises(ValueError):
        QuadraticObjective(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        QuadraticObjective(np.ones((3, 2)), np.ones(2))
