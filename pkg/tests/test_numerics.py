import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffrnn.numerics import (
    DegenerateDataError,
    ShapeMismatchError,
    elementwise_mul,
    matvec,
    pca_apply,
    pca_fit,
    pca_reconstruct,
    seeded_rng,
    sigmoid,
    softmax,
    tanh,
    uniform,
)
from reference import ref_softmax_mp

finite_vec = arrays(np.float64, st.integers(1, 8),
                    elements=st.floats(-50, 50, allow_nan=False))


class TestMatvec:
    def test_identity(self):
        assert np.array_equal(matvec(np.eye(3), np.array([1.0, 2, 3])), [1, 2, 3])

    def test_zeros_annihilate(self):
        assert np.array_equal(matvec(np.zeros((2, 3)), np.array([4.0, 5, 6])), [0, 0])

    def test_hand_product(self):
        m = np.array([[1.0, 2], [3, 4]])
        assert np.array_equal(matvec(m, np.array([1.0, 1])), [3, 7])

    def test_mismatch_names_shapes(self):
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*length 2"):
            matvec(np.zeros((2, 3)), np.zeros(2))

    @given(arrays(np.float64, (10, 10), elements=st.floats(-10, 10)),
           arrays(np.float64, 10, elements=st.floats(-10, 10)),
           arrays(np.float64, 10, elements=st.floats(-10, 10)))
    def test_distributes_over_addition(self, m, a, b):
        lhs = matvec(m, a + b)
        rhs = matvec(m, a) + matvec(m, b)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))


class TestSoftmax:
    def test_uniform_logits(self):
        assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)

    def test_large_logits_no_overflow(self):
        p = softmax(np.array([1000.0, 0.0]))
        assert np.all(np.isfinite(p))
        assert p[0] > 1 - 1e-12 and p[1] < 1e-12

    def test_matches_high_precision(self):
        logits = [1.0, 2.0, 3.0]
        expected = ref_softmax_mp(logits)
        assert np.allclose(softmax(np.array(logits)), expected, atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ShapeMismatchError):
            softmax(np.array([]))

    @given(finite_vec)
    def test_sums_to_one(self, v):
        assert abs(softmax(v).sum() - 1.0) <= 1e-12

    @given(finite_vec, st.floats(-30, 30))
    def test_shift_invariance(self, v, c):
        assert np.max(np.abs(softmax(v) - softmax(v + c))) <= 1e-12


class TestActivations:
    def test_sigmoid_zero(self):
        assert sigmoid(np.zeros(1))[0] == 0.5

    def test_sigmoid_extremes_stable(self):
        v = sigmoid(np.array([-1000.0, 1000.0]))
        assert np.all(np.isfinite(v))
        assert 0 <= v[0] < 1e-12 and 1 - 1e-12 < v[1] <= 1

    def test_tanh_zero(self):
        assert tanh(np.zeros(1))[0] == 0.0

    def test_elementwise_mul(self):
        assert np.array_equal(elementwise_mul(np.array([1.0, 2]), np.array([3.0, 4])),
                              [3, 8])

    def test_elementwise_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            elementwise_mul(np.zeros(2), np.zeros(3))

    @given(finite_vec)
    def test_ranges(self, v):
        assert np.all((sigmoid(v) >= 0) & (sigmoid(v) <= 1))
        assert np.all((tanh(v) >= -1) & (tanh(v) <= 1))


class TestPca:
    def test_rank1_line_needs_one_component(self):
        d = np.array([1.0, 2.0, -1.0])
        samples = [t * d for t in np.linspace(-2, 2, 9)]
        t = pca_fit(samples, energy=0.9)
        assert t.n_components == 1

    def test_isotropic_cloud_needs_both(self):
        # equal eigenvalues: one component covers ~50% < 90%
        rng = seeded_rng(5)
        theta = rng.uniform(0, 2 * np.pi, size=400)
        samples = list(np.stack([np.cos(theta), np.sin(theta)], axis=1))
        t = pca_fit(samples, energy=0.9)
        assert t.n_components == 2

    def test_energy_one_keeps_all(self):
        rng = seeded_rng(6)
        samples = list(rng.normal(size=(20, 4)))
        t = pca_fit(samples, energy=1.0)
        assert t.n_components == 4

    def test_mean_maps_to_zero(self):
        rng = seeded_rng(7)
        samples = list(rng.normal(size=(10, 3)))
        t = pca_fit(samples, energy=1.0)
        mean = np.mean(samples, axis=0)
        assert np.allclose(pca_apply(t, mean), 0.0, atol=1e-12)

    def test_rank1_round_trip(self):
        d = np.array([2.0, -1.0, 0.5])
        samples = [t * d for t in np.linspace(-1, 3, 7)]
        t = pca_fit(samples, energy=0.9)
        for s in samples:
            back = pca_reconstruct(t, pca_apply(t, s))
            assert np.allclose(back, s, atol=1e-8)

    def test_orthonormal_basis(self):
        rng = seeded_rng(8)
        samples = list(rng.normal(size=(50, 6)) @ np.diag([3, 2, 1, 0.5, 0.2, 0.1]))
        t = pca_fit(samples, energy=0.95)
        gram = t.basis @ t.basis.T
        assert np.max(np.abs(gram - np.eye(t.n_components))) <= 1e-8

    def test_degenerate_rejected(self):
        with pytest.raises(DegenerateDataError):
            pca_fit([np.ones(3)] * 5, energy=0.9)

    def test_dimension_mismatch(self):
        t = pca_fit([np.array([float(i), 0.0]) for i in range(5)], energy=1.0)
        with pytest.raises(ShapeMismatchError):
            pca_apply(t, np.zeros(3))

    def test_deterministic(self):
        rng = seeded_rng(9)
        samples = list(rng.normal(size=(30, 4)))
        a = pca_fit(samples, 0.9)
        b = pca_fit(samples, 0.9)
        assert np.array_equal(a.basis, b.basis)
        assert np.array_equal(a.mean, b.mean)


class TestRng:
    def test_same_seed_same_stream(self):
        a = seeded_rng(42).uniform(size=10)
        b = seeded_rng(42).uniform(size=10)
        assert np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = seeded_rng(1).uniform(size=10)
        b = seeded_rng(2).uniform(size=10)
        assert not np.array_equal(a, b)

    def test_uniform_mean(self):
        rng = seeded_rng(3)
        draws = uniform(rng, 0.0, 1.0, size=100_000)
        assert 0.49 <= draws.mean() <= 0.51
