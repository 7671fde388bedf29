import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from decopt.objectives import (gen_lasso, gen_logreg, gen_quadratic,
                               gram_spectral_norm, lasso_local, load_instance,
                               logreg_local, quadratic_local, save_instance,
                               soft_threshold)
from oracles import finite_diff_grad, naive_matmul


class TestLogregLocal:
    def test_value_and_grad_at_zero_single_sample(self):
        a = np.array([[1.0, -2.0, 0.5]])
        for y in (1.0, -1.0):
            loc = logreg_local(a, np.array([y]), lam=0.1)
            value, grad = loc.smooth_eval(np.zeros(3))
            assert value == pytest.approx(math.log(2.0), abs=1e-15)
            assert np.allclose(grad, -(y / 2.0) * a[0], atol=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((12, 6))
        y = np.where(rng.random(12) < 0.5, 1.0, -1.0)
        loc = logreg_local(a, y, lam=0.05)
        for _ in range(5):
            x = rng.standard_normal(6)
            _, grad = loc.smooth_eval(x)
            fd = finite_diff_grad(lambda v: loc.smooth_eval(v)[0], x)
            assert np.linalg.norm(grad - fd) <= 1e-6 * (1.0 + np.linalg.norm(grad))

    def test_midpoint_convexity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((8, 4))
        y = np.where(rng.random(8) < 0.5, 1.0, -1.0)
        loc = logreg_local(a, y, lam=0.01)
        for _ in range(20):
            u, v = rng.standard_normal(4), rng.standard_normal(4)
            fu, fv = loc.smooth_eval(u)[0], loc.smooth_eval(v)[0]
            fm = loc.smooth_eval(0.5 * (u + v))[0]
            assert fm <= 0.5 * (fu + fv) + 1e-12

    def test_rejects_bad_labels(self):
        with pytest.raises(ValueError):
            logreg_local(np.ones((2, 2)), np.array([1.0, 0.0]), lam=0.1)

    def test_large_margin_stability(self):
        loc = logreg_local(np.array([[100.0]]), np.array([1.0]), lam=1e-2)
        value, grad = loc.smooth_eval(np.array([50.0]))
        assert np.isfinite(value) and np.isfinite(grad).all()
        loss_only = value - 0.5 * 1e-2 * 50.0 ** 2
        assert 0.0 <= loss_only < 1e-300 or loss_only == 0.0


class TestLassoLocal:
    def test_prox_soft_threshold_example(self):
        loc = lasso_local(np.eye(3), np.zeros(3), lam=2.0, n_agents=2)
        # effective level nu * lam / n = 1
        out = loc.nonsmooth.prox(np.array([2.0, -0.5, 0.0]), 1.0)
        assert np.array_equal(out, np.array([1.0, 0.0, 0.0]))

    def test_gradient_matches_naive_matmul(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal(5)
        loc = lasso_local(a, b, lam=0.3, n_agents=3)
        x = rng.standard_normal(4)
        _, grad = loc.smooth_eval(x)
        residual = naive_matmul(a, x[:, None]).ravel() - b
        expected = naive_matmul(a.T, residual[:, None]).ravel()
        assert np.abs(grad - expected).max() <= 1e-12

    def test_zero_gradient_at_least_squares_solution(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)
        b = rng.standard_normal(4)
        loc = lasso_local(a, b, lam=1e-12, n_agents=1)
        x_star = np.linalg.solve(a, b)
        _, grad = loc.smooth_eval(x_star)
        assert np.linalg.norm(grad) <= 1e-9

    def test_prox_optimality_inclusion(self):
        # (x - prox(x, nu)) / nu must be a subgradient of the l1 share at the prox
        rng = np.random.default_rng(4)
        loc = lasso_local(np.eye(2), np.zeros(2), lam=1.5, n_agents=3)
        share = 1.5 / 3
        for _ in range(200):
            x = 3.0 * rng.standard_normal(2)
            nu = float(rng.uniform(0.1, 2.0))
            p = loc.nonsmooth.prox(x, nu)
            sub = (x - p) / nu
            for pj, sj in zip(p, sub):
                if pj != 0.0:
                    assert sj == pytest.approx(share * np.sign(pj), abs=1e-12)
                else:
                    assert abs(sj) <= share + 1e-12


class TestLipschitzHints:
    @given(st.integers(0, 200))
    @settings(max_examples=25, deadline=None)
    def test_hint_bounds_gradient_variation(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((6, 4))
        y = np.where(rng.random(6) < 0.5, 1.0, -1.0)
        for loc in (logreg_local(a, y, lam=0.1),
                    lasso_local(a, rng.standard_normal(6), lam=0.2, n_agents=2)):
            u, v = rng.standard_normal(4), rng.standard_normal(4)
            gu = loc.smooth_eval(u)[1]
            gv = loc.smooth_eval(v)[1]
            lhs = np.linalg.norm(gu - gv)
            assert lhs <= (loc.lipschitz_hint + 1e-8) * np.linalg.norm(u - v)

    def test_power_iteration_matches_svd(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = rng.standard_normal((8, 5))
            exact = np.linalg.norm(a, 2) ** 2
            assert gram_spectral_norm(a) == pytest.approx(exact, rel=1e-10)

    def test_zero_matrix(self):
        assert gram_spectral_norm(np.zeros((3, 2))) == 0.0


class TestGenerators:
    def test_logreg_defaults(self):
        inst = gen_logreg(seed=1)
        assert inst.n == 10 and inst.d == 1000
        assert inst.meta.m_per_agent == (40,) * 10
        assert inst.meta.lam == pytest.approx(1e-2)
        labels = np.concatenate([rec["labels"] for rec in inst.agent_data])
        assert set(np.unique(labels)) <= {-1.0, 1.0}

    def test_logreg_round_robin_remainder(self):
        inst = gen_logreg(n=4, d=5, m_total=10, seed=0)
        assert inst.meta.m_per_agent == (3, 3, 2, 2)

    def test_logreg_deterministic(self):
        a = gen_logreg(n=3, d=8, m_total=9, seed=5)
        b = gen_logreg(n=3, d=8, m_total=9, seed=5)
        for ra, rb in zip(a.agent_data, b.agent_data):
            assert np.array_equal(ra["features"], rb["features"])
            assert np.array_equal(ra["labels"], rb["labels"])

    def test_lasso_defaults(self):
        inst = gen_lasso(seed=2)
        assert inst.n == 20 and inst.d == 1000
        assert inst.meta.m_per_agent == (10,) * 20
        assert inst.meta.lam > 0.0

    def test_lasso_lambda_formula(self):
        inst = gen_lasso(n=2, d=30, m_total=20, lam_c=0.05, seed=3)
        stacked = inst.stacked()
        expected = 0.05 * np.abs(stacked["A"].T @ stacked["b"].ravel()).max()
        assert inst.meta.lam == pytest.approx(expected, rel=1e-15)

    def test_lambda_formula_hand_instance(self):
        # lam_c * |A^T b|_inf with A = [[1,0],[0,2]], b = (1,1) gives 0.2
        a = np.array([[1.0, 0.0], [0.0, 2.0]])
        b = np.array([1.0, 1.0])
        assert 0.1 * np.abs(a.T @ b).max() == pytest.approx(0.2, abs=1e-15)

    def test_lasso_support_density(self):
        sizes = []
        for seed in range(10):
            inst = gen_lasso(n=2, d=400, m_total=20, seed=seed)
            # recover the planted support from the generator determinism
            rng = np.random.default_rng([seed, 3])
            mask = rng.random(400) < 0.1
            sizes.append(mask.sum())
            assert mask.sum() >= 1
        avg = np.mean(sizes)
        assert 20 <= avg <= 60  # binomial(400, 0.1) concentrates near 40

    def test_lasso_deterministic(self):
        a = gen_lasso(n=4, d=12, m_total=8, seed=9)
        b = gen_lasso(n=4, d=12, m_total=8, seed=9)
        for ra, rb in zip(a.agent_data, b.agent_data):
            assert np.array_equal(ra["A"], rb["A"])
            assert np.array_equal(ra["b"], rb["b"])

    def test_lasso_unit_columns(self):
        inst = gen_lasso(n=4, d=12, m_total=8, seed=9)
        stacked = inst.stacked()
        assert np.allclose(np.linalg.norm(stacked["A"], axis=0), 1.0, atol=1e-12)

    def test_quadratic_family(self):
        inst = gen_quadratic(3, 2, seed=0)
        x = np.zeros((3, 2))
        grads = inst.smooth_grads(x)
        centers = np.stack([rec["center"] for rec in inst.agent_data])
        assert np.array_equal(grads, -centers)


class TestBatchedPaths:
    def test_batched_matches_per_agent(self):
        rng = np.random.default_rng(11)
        for inst in (gen_logreg(n=4, d=7, m_total=12, seed=4),
                     gen_lasso(n=3, d=6, m_total=9, seed=4)):
            x = rng.standard_normal((inst.n, inst.d))
            grads = inst.smooth_grads(x)
            values = inst.smooth_values(x)
            for i, loc in enumerate(inst.locals):
                v, g = loc.smooth_eval(x[i])
                assert np.abs(grads[i] - g).max() <= 1e-12 * (1.0 + np.abs(g).max())
                assert values[i] == pytest.approx(v, rel=1e-12)

    def test_prox_matches_per_agent(self):
        inst = gen_lasso(n=3, d=6, m_total=9, seed=5)
        rng = np.random.default_rng(12)
        x = rng.standard_normal((3, 6))
        batched = inst.prox(x, 0.7)
        for i, loc in enumerate(inst.locals):
            assert np.array_equal(batched[i], loc.nonsmooth.prox(x[i], 0.7))


class TestSerialization:
    @pytest.mark.parametrize("family", ["logreg", "lasso", "quadratic"])
    def test_roundtrip(self, tmp_path, family):
        if family == "logreg":
            inst = gen_logreg(n=3, d=6, m_total=9, lam=0.05, seed=8)
        elif family == "lasso":
            inst = gen_lasso(n=3, d=6, m_total=9, lam_c=0.2, seed=8)
        else:
            inst = gen_quadratic(3, 6, seed=8)
        save_instance(inst, tmp_path / family)
        loaded = load_instance(tmp_path / family)
        assert loaded.meta == inst.meta
        x = np.random.default_rng(0).standard_normal((3, 6))
        assert np.array_equal(loaded.smooth_grads(x), inst.smooth_grads(x))
        assert np.array_equal(loaded.prox(x, 0.3), inst.prox(x, 0.3))


def test_soft_threshold_cases():
    x = np.array([2.0, -0.5, 0.0, 1.0])
    assert np.array_equal(soft_threshold(x, 1.0), np.array([1.0, 0.0, 0.0, 0.0]))


def test_quadratic_local_gradient():
    loc = quadratic_local(np.array([1.0, -2.0]))
    value, grad = loc.smooth_eval(np.array([3.0, 0.0]))
    assert value == pytest.approx(0.5 * (4.0 + 4.0))
    assert np.array_equal(grad, np.array([2.0, 2.0]))
