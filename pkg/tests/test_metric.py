"""Tests for the square-root cosine ground metric and its gradients."""

import math

import numpy as np
import pytest

from otalign.metric import (
    pairwise_distance_backward,
    pairwise_distance_matrix,
    sqrt_cos_dist,
)

# The triple on which the plain cosine distance 1 - cos fails the triangle
# inequality while the square-root form passes it.
TRIPLE = (
    np.array([1.0, 0.0]),
    np.array([math.sqrt(2) / 2, math.sqrt(2) / 2]),
    np.array([0.0, 1.0]),
)


class TestScalar:
    def test_orthogonal_unit_vectors(self):
        assert sqrt_cos_dist(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(
            math.sqrt(2), abs=1e-12
        )

    def test_identical_vectors(self):
        # the square root amplifies cosine round-off to ~sqrt(eps), so the
        # fixed point sits at ~1e-8 rather than machine precision
        v = np.array([0.3, -1.2, 4.0])
        assert sqrt_cos_dist(v, v) == pytest.approx(0.0, abs=1e-7)

    def test_forty_five_degrees(self):
        a, b, _ = TRIPLE
        assert sqrt_cos_dist(a, b) == pytest.approx(math.sqrt(2 - math.sqrt(2)), abs=1e-12)
        assert sqrt_cos_dist(a, b) == pytest.approx(0.765367, abs=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=6), rng.normal(size=6)
        assert sqrt_cos_dist(3.7 * a, b) == pytest.approx(sqrt_cos_dist(a, b), abs=1e-12)
        assert sqrt_cos_dist(a, 0.002 * b) == pytest.approx(sqrt_cos_dist(a, b), abs=1e-12)

    def test_degenerate_vector_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            sqrt_cos_dist(np.zeros(3), np.ones(3))


class TestPairwise:
    def test_orthonormal_rows(self):
        m = pairwise_distance_matrix(np.eye(3), np.eye(3))
        expected = np.full((3, 3), math.sqrt(2))
        np.fill_diagonal(expected, 0.0)
        np.testing.assert_allclose(m, expected, atol=1e-12)

    def test_single_rows_match_scalar(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=5), rng.normal(size=5)
        m = pairwise_distance_matrix(a[None, :], b[None, :])
        assert m.shape == (1, 1)
        assert m[0, 0] == pytest.approx(sqrt_cos_dist(a, b), abs=1e-12)

    def test_elementwise_crosscheck(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(5, 8))
        b = rng.normal(size=(5, 8))
        m = pairwise_distance_matrix(a, b)
        for i in range(5):
            for j in range(5):
                assert m[i, j] == pytest.approx(sqrt_cos_dist(a[i], b[j]), abs=1e-12)

    def test_range(self):
        rng = np.random.default_rng(3)
        m = pairwise_distance_matrix(rng.normal(size=(20, 4)), rng.normal(size=(20, 4)))
        assert np.all(m >= 0)
        assert np.all(m <= 2)

    def test_degenerate_row_rejected(self):
        a = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="row 1"):
            pairwise_distance_matrix(a, np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions differ"):
            pairwise_distance_matrix(np.eye(2), np.eye(3))


def fd_gradient(f, x, step=1e-5):
    grad = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += step
        xm = x.copy()
        xm[idx] -= step
        grad[idx] = (f(xp) - f(xm)) / (2 * step)
    return grad


class TestBackward:
    def test_zero_upstream_gives_zero(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        da, db = pairwise_distance_backward(a, b, np.zeros((3, 3)))
        assert np.all(da == 0)
        assert np.all(db == 0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(4, 6))
        upstream = rng.normal(size=(4, 4))
        da, db = pairwise_distance_backward(a, b, upstream)

        def loss_a(x):
            return float(np.sum(upstream * pairwise_distance_matrix(x, b)))

        def loss_b(x):
            return float(np.sum(upstream * pairwise_distance_matrix(a, x)))

        fa = fd_gradient(loss_a, a)
        fb = fd_gradient(loss_b, b)
        assert np.linalg.norm(da - fa) / np.linalg.norm(fa) <= 1e-5
        assert np.linalg.norm(db - fb) / np.linalg.norm(fb) <= 1e-5

    def test_gradient_scales_inversely_with_input(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(3, 4))
        upstream = rng.normal(size=(3, 3))
        m1 = pairwise_distance_matrix(a, b)
        m3 = pairwise_distance_matrix(3.0 * a, b)
        np.testing.assert_allclose(m1, m3, atol=1e-12)
        da1, _ = pairwise_distance_backward(a, b, upstream)
        da3, _ = pairwise_distance_backward(3.0 * a, b, upstream)
        np.testing.assert_allclose(da3, da1 / 3.0, atol=1e-12)


class TestMetricAxioms:
    def test_axioms_on_random_triples(self):
        # nonnegativity, symmetry, and the triangle inequality over 10k triples
        for d in (2, 50):
            rng = np.random.default_rng(100 + d)
            a = rng.normal(size=(10000, d))
            b = rng.normal(size=(10000, d))
            c = rng.normal(size=(10000, d))
            for m in (a, b, c):
                m /= np.linalg.norm(m, axis=1, keepdims=True)

            def paired(u, v):
                cos = np.sum(u * v, axis=1)
                return np.sqrt(np.maximum(0.0, 2.0 - 2.0 * cos))

            dab, dba = paired(a, b), paired(b, a)
            dbc, dac = paired(b, c), paired(a, c)
            assert np.all(dab >= 0)
            assert np.max(np.abs(dab - dba)) <= 1e-12
            assert np.all(dac <= dab + dbc + 1e-9)

    def test_equals_euclidean_after_normalization(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            a, b = rng.normal(size=9), rng.normal(size=9)
            euclid = np.linalg.norm(a / np.linalg.norm(a) - b / np.linalg.norm(b))
            assert sqrt_cos_dist(a, b) == pytest.approx(euclid, abs=1e-9)

    def test_plain_cosine_distance_violates_triangle_inequality(self):
        # documents why the square-root form is used as the ground metric
        a, b, c = TRIPLE

        def cos_dist(u, v):
            return 1.0 - float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v)))

        assert cos_dist(a, c) > cos_dist(a, b) + cos_dist(b, c)
        assert sqrt_cos_dist(a, c) <= sqrt_cos_dist(a, b) + sqrt_cos_dist(b, c) + 1e-9

    def test_footnote_triple_values(self):
        a, b, c = TRIPLE
        assert sqrt_cos_dist(a, b) == pytest.approx(0.765367, abs=1e-6)
        assert sqrt_cos_dist(b, c) == pytest.approx(0.765367, abs=1e-6)
        assert sqrt_cos_dist(a, c) == pytest.approx(1.414214, abs=1e-6)
        assert 0.765367 + 0.765367 >= 1.414214
