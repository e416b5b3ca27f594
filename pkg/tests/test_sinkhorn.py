"""Tests for the entropic-transport recursion, its unrolled gradient, and the oracle."""

import math

import numpy as np
import pytest

from otalign.sinkhorn import (
    SinkhornConfig,
    SinkhornError,
    exact_ot_uniform,
    sinkhorn_backward,
    sinkhorn_distance,
    sinkhorn_plan,
)

UNIFORM2 = np.array([0.5, 0.5])


def uniform(b):
    return np.full(b, 1.0 / b)


class TestForward:
    def test_zero_cost_matrix(self):
        cfg = SinkhornConfig(lam=10, iterations=20)
        r = np.array([0.3, 0.7])
        c = np.array([0.6, 0.4])
        _, dist = sinkhorn_plan(np.zeros((2, 2)), r, c, cfg)
        assert dist == pytest.approx(0.0, abs=1e-15)

    def test_symmetric_two_by_two_closed_form(self):
        # swap-cost matrix with uniform marginals: the scaled kernel is the
        # plan itself, giving distance exp(-lam) / (1 + exp(-lam))
        m = np.array([[0.0, 1.0], [1.0, 0.0]])
        cfg = SinkhornConfig(lam=10, iterations=20)
        plan, dist = sinkhorn_plan(m, UNIFORM2, UNIFORM2, cfg)
        expected = math.exp(-10) / (1 + math.exp(-10))
        assert dist == pytest.approx(expected, abs=1e-9)
        np.testing.assert_allclose(plan.plan.sum(axis=0), UNIFORM2, atol=1e-9)

    def test_single_cell(self):
        cfg = SinkhornConfig(lam=7, iterations=5)
        one = np.array([1.0])
        assert sinkhorn_distance(np.array([[0.83]]), one, one, cfg) == pytest.approx(0.83)

    def test_plan_factorization(self):
        rng = np.random.default_rng(0)
        m = rng.uniform(0, 2, size=(5, 5))
        cfg = SinkhornConfig(lam=10, iterations=20)
        plan, _ = sinkhorn_plan(m, uniform(5), uniform(5), cfg)
        rebuilt = plan.u[:, None] * plan.kernel * plan.v[None, :]
        np.testing.assert_allclose(plan.plan, rebuilt, atol=1e-9)

    def test_column_sums_exact_after_final_update(self):
        rng = np.random.default_rng(1)
        m = rng.uniform(0, 2, size=(6, 6))
        c = rng.uniform(0.5, 1.5, size=6)
        c /= c.sum()
        r = uniform(6)
        plan, _ = sinkhorn_plan(m, r, c, SinkhornConfig(lam=10, iterations=3))
        np.testing.assert_allclose(plan.plan.sum(axis=0), c, atol=1e-9)

    def test_row_marginal_error_shrinks_with_iterations(self):
        rng = np.random.default_rng(2)
        m = rng.uniform(0, 2, size=(10, 10))
        r = rng.uniform(0.5, 1.5, size=10)
        r /= r.sum()
        c = rng.uniform(0.5, 1.5, size=10)
        c /= c.sum()
        errs = []
        for its in (1, 5, 20, 80, 200):
            plan, _ = sinkhorn_plan(m, r, c, SinkhornConfig(lam=10, iterations=its))
            errs.append(np.max(np.abs(plan.plan.sum(axis=1) - r)))
        assert all(e2 <= e1 + 1e-15 for e1, e2 in zip(errs, errs[1:]))
        assert errs[-1] <= 1e-6

    def test_kernel_underflow_reported(self):
        m = np.full((2, 2), 1e5)
        with pytest.raises(SinkhornError, match="underflow"):
            sinkhorn_plan(m, UNIFORM2, UNIFORM2, SinkhornConfig(lam=10, iterations=5))

    def test_non_finite_cost_rejected(self):
        m = np.array([[0.0, np.inf], [1.0, 0.0]])
        with pytest.raises(SinkhornError, match="non-finite"):
            sinkhorn_plan(m, UNIFORM2, UNIFORM2, SinkhornConfig())

    def test_marginal_validation(self):
        m = np.zeros((2, 2))
        cfg = SinkhornConfig()
        with pytest.raises(ValueError, match="strictly positive"):
            sinkhorn_plan(m, np.array([1.0, 0.0]), UNIFORM2, cfg)
        with pytest.raises(ValueError, match="sum to 1"):
            sinkhorn_plan(m, np.array([0.9, 0.3]), UNIFORM2, cfg)

    def test_transpose_symmetry_at_convergence(self):
        rng = np.random.default_rng(3)
        m = rng.uniform(0, 2, size=(5, 4))
        r = rng.uniform(0.5, 1.5, size=5)
        r /= r.sum()
        c = rng.uniform(0.5, 1.5, size=4)
        c /= c.sum()
        cfg = SinkhornConfig(lam=5, iterations=2000)
        d1 = sinkhorn_distance(m, r, c, cfg)
        d2 = sinkhorn_distance(m.T, c, r, cfg)
        assert d1 == pytest.approx(d2, abs=1e-9)


class TestExactOracle:
    def test_swap_matrix(self):
        assert exact_ot_uniform(np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0

    def test_identity_favoring_matrix(self):
        assert exact_ot_uniform(np.array([[1.0, 0.0], [0.0, 1.0]])) == 0.0

    def test_hand_computed_two_by_two(self):
        assert exact_ot_uniform(np.array([[2.0, 1.0], [1.0, 2.0]])) == 1.0

    def test_size_guard(self):
        with pytest.raises(ValueError, match="b <= 8"):
            exact_ot_uniform(np.zeros((9, 9)))

    def test_matches_bruteforce_average(self):
        rng = np.random.default_rng(4)
        m = rng.uniform(0, 2, size=(4, 4))
        from itertools import permutations

        best = min(sum(m[i, p[i]] for i in range(4)) for p in permutations(range(4)))
        assert exact_ot_uniform(m) == pytest.approx(best / 4)


class TestConvergenceToExact:
    def test_entropic_value_bounds_and_approaches_oracle(self):
        rng = np.random.default_rng(5)
        m = rng.uniform(0, 2, size=(6, 6))
        u6 = uniform(6)
        oracle = exact_ot_uniform(m)
        values = [
            sinkhorn_distance(m, u6, u6, SinkhornConfig(lam=lam, iterations=500))
            for lam in (5, 10, 25, 50)
        ]
        assert all(v2 <= v1 + 1e-12 for v1, v2 in zip(values, values[1:]))
        assert all(v >= oracle - 1e-9 for v in values)
        assert values[-1] <= oracle + 0.02


def fd_cost_gradient(m, r, c, cfg, step=1e-6):
    grad = np.zeros_like(m)
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            mp = m.copy()
            mp[i, j] += step
            mm = m.copy()
            mm[i, j] -= step
            grad[i, j] = (
                sinkhorn_distance(mp, r, c, cfg) - sinkhorn_distance(mm, r, c, cfg)
            ) / (2 * step)
    return grad


class TestBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(6)
        m = rng.uniform(0, 2, size=(4, 4))
        g = sinkhorn_backward(m, uniform(4), uniform(4), SinkhornConfig(), upstream=0.0)
        assert np.all(g == 0)

    def test_single_cell_gradient(self):
        one = np.array([1.0])
        g = sinkhorn_backward(np.array([[0.4]]), one, one, SinkhornConfig(), upstream=2.0)
        np.testing.assert_allclose(g, [[2.0]], atol=1e-12)

    def test_matches_finite_differences(self):
        cfg = SinkhornConfig(lam=10, iterations=20)
        rng = np.random.default_rng(7)
        m = rng.uniform(0, 2, size=(5, 5))
        grad = sinkhorn_backward(m, uniform(5), uniform(5), cfg)
        fd = fd_cost_gradient(m, uniform(5), uniform(5), cfg)
        assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-4

    def test_matches_finite_differences_many_seeds(self):
        cfg = SinkhornConfig(lam=10, iterations=20)
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            b = int(rng.integers(2, 7))
            m = rng.uniform(0, 2, size=(b, b))
            r = rng.uniform(0.5, 1.5, size=b)
            r /= r.sum()
            c = rng.uniform(0.5, 1.5, size=b)
            c /= c.sum()
            grad = sinkhorn_backward(m, r, c, cfg)
            fd = fd_cost_gradient(m, r, c, cfg)
            assert np.linalg.norm(grad - fd) / np.linalg.norm(fd) <= 1e-4, seed

    def test_upstream_scales_linearly(self):
        rng = np.random.default_rng(8)
        m = rng.uniform(0, 2, size=(3, 3))
        g1 = sinkhorn_backward(m, uniform(3), uniform(3), SinkhornConfig(), upstream=1.0)
        g3 = sinkhorn_backward(m, uniform(3), uniform(3), SinkhornConfig(), upstream=3.0)
        np.testing.assert_allclose(g3, 3.0 * g1, atol=1e-12)

    def test_envelope_mode_returns_scaled_plan(self):
        rng = np.random.default_rng(9)
        m = rng.uniform(0, 2, size=(4, 4))
        cfg = SinkhornConfig()
        plan, _ = sinkhorn_plan(m, uniform(4), uniform(4), cfg)
        g = sinkhorn_backward(m, uniform(4), uniform(4), cfg, upstream=2.0, method="envelope")
        np.testing.assert_allclose(g, 2.0 * plan.plan, atol=1e-12)

    def test_unknown_method_rejected(self):
        with pytest.raises(ValueError, match="unknown gradient method"):
            sinkhorn_backward(np.zeros((2, 2)), UNIFORM2, UNIFORM2, SinkhornConfig(), method="magic")


class TestConfig:
    def test_defaults(self):
        cfg = SinkhornConfig()
        assert cfg.lam == 10.0
        assert cfg.iterations == 20

    def test_validation(self):
        with pytest.raises(ValueError):
            SinkhornConfig(lam=0.0)
        with pytest.raises(ValueError):
            SinkhornConfig(iterations=0)
