import numpy as np
import pytest

from kgboost.boosting import BoostConfig
from kgboost.errors import CapacityError, NumericalError
from kgboost.oracle import (
    GPPosterior,
    check_kernel_update,
    check_orthogonality,
    check_shrinkage_contraction,
    eigenvalue_range,
    gp_posterior_cov,
    greedy_kernel,
    krr_solve,
    mixture_kernel,
    ridgeless_fit,
    run_checks,
    stationary_kernel,
    verify_convergence,
    weak_kernel,
)
from kgboost.rng import make_rng
from kgboost.tree import TreeStructure, enumerate_structures, sample_tree_indices

from conftest import binned

FOUR = binned([[0], [0], [1], [1]], n=1)


class TestKernels:
    def test_weak_two_leaves(self):
        K = weak_kernel(TreeStructure(((0, 0),)), FOUR)
        expected = np.kron(np.eye(2), np.full((2, 2), 2.0))
        np.testing.assert_array_equal(K, expected)

    def test_weak_root_is_ones(self, grid8):
        np.testing.assert_array_equal(weak_kernel(TreeStructure(), grid8), np.ones((8, 8)))

    def test_weak_queries(self):
        K = weak_kernel(TreeStructure(((0, 0),)), FOUR, A=[[1]], B=[[0], [1]])
        np.testing.assert_array_equal(K, [[0.0, 2.0]])

    def test_stationary_single_structure(self):
        # one candidate, depth 1: the only structure is the split itself
        np.testing.assert_array_equal(stationary_kernel(FOUR, 1), weak_kernel(TreeStructure(((0, 0),)), FOUR))

    def test_stationary_is_uniform_mixture(self, grid8):
        sts = enumerate_structures(grid8.candidates(), 2)
        K = sum(weak_kernel(s, grid8) for s in sts) / len(sts)
        np.testing.assert_allclose(stationary_kernel(grid8, 2), K, rtol=1e-14)

    def test_diagonal_and_symmetry(self, small_random):
        K = stationary_kernel(small_random, 2)
        assert np.all(np.diag(K) >= 1 - 1e-12)
        np.testing.assert_array_equal(K, K.T)
        low, _, high = eigenvalue_range(K)
        assert low >= -1e-10 and high <= 1 + 1e-10

    def test_monte_carlo_average(self, grid8):
        draws = 40_000
        idx = sample_tree_indices(grid8, np.zeros(8), 2, 1.0, make_rng(2), draws)
        cands = grid8.candidates()
        keys, counts = np.unique(np.sort(idx, axis=1), axis=0, return_counts=True)
        sts = [TreeStructure(tuple(cands[s] for s in row)) for row in keys]
        K_mc = mixture_kernel(sts, counts / draws, grid8)
        K = stationary_kernel(grid8, 2)
        # entries are bounded by N = 8
        assert np.abs(K_mc - K).max() <= 4 * 8 / np.sqrt(draws)

    def test_greedy_zero_residuals_is_stationary(self, grid8):
        Kg = greedy_kernel(grid8, grid8.targets, 0.05, 2)
        np.testing.assert_allclose(Kg, stationary_kernel(grid8, 2), rtol=1e-12)

    def test_greedy_at_fstar_is_stationary(self, grid8, fixture8):
        Kg = greedy_kernel(grid8, fixture8.reference_fit, 0.05, 2)
        np.testing.assert_allclose(Kg, stationary_kernel(grid8, 2), rtol=1e-10)

    def test_greedy_large_beta(self, small_random):
        Kg = greedy_kernel(small_random, np.zeros(small_random.n_samples), 1e7, 2)
        np.testing.assert_allclose(Kg, stationary_kernel(small_random, 2), rtol=1e-5)

    def test_greedy_small_beta_concentrates(self, grid8):
        Kg = greedy_kernel(grid8, np.zeros(8), 1e-4, 1)
        assert any(np.allclose(Kg, weak_kernel(s, grid8)) for s in enumerate_structures(grid8.candidates(), 1))

    def test_capacity(self, small_random):
        with pytest.raises(CapacityError):
            stationary_kernel(small_random, 4, max_structures=100)


class TestSolves:
    def test_scalar(self):
        post = krr_solve(np.array([[2.0]]), np.array([3.0]), 1.0)
        assert post.fit[0] == pytest.approx(2.0)
        assert post.weights[0] == pytest.approx(1.0)

    def test_large_ridge(self, grid8):
        K = stationary_kernel(grid8, 2)
        assert np.abs(krr_solve(K, grid8.targets, 1e12).fit).max() < 1e-10

    def test_ridgeless_interpolates(self):
        rng = np.random.default_rng(0)
        A = rng.normal(size=(6, 6))
        K = A @ A.T + np.eye(6)
        y = rng.normal(size=6)
        np.testing.assert_allclose(ridgeless_fit(K, y), y, atol=1e-10)

    def test_ridgeless_singular_fixture(self, grid8, fixture8):
        K = stationary_kernel(grid8, 2)
        np.testing.assert_allclose(ridgeless_fit(K, grid8.targets), fixture8.reference_fit, atol=1e-12)

    def test_ridge_limit(self, grid8, fixture8):
        K = stationary_kernel(grid8, 2)
        np.testing.assert_allclose(krr_solve(K, grid8.targets, 1e-9).fit, fixture8.reference_fit, atol=1e-7)

    def test_ridge_matches_dense_inverse(self, small_random):
        K = stationary_kernel(small_random, 2)
        y = small_random.targets
        ref = K @ np.linalg.solve(K + 0.3 * np.eye(len(y)), y)
        np.testing.assert_allclose(krr_solve(K, y, 0.3).fit, ref, atol=1e-10)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            krr_solve(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2), 1.0)

    def test_rejects_negative_l2(self):
        with pytest.raises(ValueError):
            krr_solve(np.eye(2), np.zeros(2), -1.0)

    def test_delta_default(self):
        post = krr_solve(np.eye(2), np.zeros(2), 0.25, sigma=2.0)
        assert post.delta == pytest.approx(1.0)


class TestPosteriorCov:
    def test_no_training_points(self):
        post = GPPosterior(np.zeros(0), 1.0, np.zeros((0, 0)), sigma=2.0, delta=0.5)
        np.testing.assert_allclose(gp_posterior_cov([3.0], np.zeros((1, 0)), post), [0.25 + 4 * 3.0])

    def test_scalar(self):
        # k = 2, l2 = 1: 2 - 2 * 2 / 3 = 2/3
        post = krr_solve(np.array([[2.0]]), np.array([1.0]), 1.0, sigma=1.0, delta=1.0)
        assert gp_posterior_cov([2.0], [[2.0]], post)[0] == pytest.approx(1 + 2 / 3)

    def test_interpolated_point_has_noise_only(self):
        K = np.array([[2.0, 1.0], [1.0, 2.0]])
        post = krr_solve(K, np.zeros(2), 0.0, sigma=3.0, delta=0.1)
        np.testing.assert_allclose(gp_posterior_cov(np.diag(K), K, post), 0.01, atol=1e-12)

    def test_schur_bounds(self, small_random):
        data = small_random
        q = np.array([[0, 0, 0], [4, 4, 4], [2, 1, 3], [1, 3, 0]])
        K = stationary_kernel(data, 2)
        Kq = stationary_kernel(data, 2, A=q)
        kqq = np.diag(stationary_kernel(data, 2, A=q, B=q))
        post = krr_solve(K, data.targets, 0.5, sigma=1.5, delta=0.2)
        v = gp_posterior_cov(kqq, Kq, post)
        assert np.all(v >= 0.04 - 1e-12)
        assert np.all(v <= 0.04 + 2.25 * kqq + 1e-12)

    def test_shape_mismatch(self):
        post = krr_solve(np.eye(2), np.zeros(2), 1.0)
        with pytest.raises(ValueError):
            gp_posterior_cov([1.0], np.zeros((1, 3)), post)

    def test_negative_detected(self):
        post = krr_solve(np.eye(1), np.zeros(1), 1e-3)
        with pytest.raises(NumericalError):
            gp_posterior_cov([0.0], [[5.0]], post)


class TestChecks:
    def test_kernel_update(self, small_random):
        res = check_kernel_update(small_random, BoostConfig(learning_rate=0.2, l2=1.0, iterations=20, depth=2, beta=0.5))
        assert res.status == "pass", res.detail

    def test_contraction(self, grid8, fixture8):
        cfg = BoostConfig(learning_rate=0.1, l2=0.5, iterations=200, depth=2, beta=1.0)
        assert check_shrinkage_contraction(grid8, cfg, fixture8.reference_fit).status == "pass"

    def test_orthogonality_detects_tampering(self, grid8, fixture8):
        assert check_orthogonality(grid8, 2, fixture8.reference_fit).status == "pass"
        bad = fixture8.reference_fit.copy()
        bad[2] += 0.1
        assert check_orthogonality(grid8, 2, bad).status == "fail"

    def test_suite_on_fixture(self, grid8, fixture8):
        cfg = BoostConfig(learning_rate=0.1, l2=0.5, iterations=100, depth=2, beta=1.0)
        res = {r.name: r for r in run_checks(grid8, cfg, fixture8.reference_fit)}
        assert all(r.ok for r in res.values()), [r for r in res.values() if not r.ok]
        assert res["greedy_kernel_at_fstar_is_stationary"].status == "pass"
        assert res["stationary_kernel_eigenvalues_lower"].status in ("pass", "warn")

    def test_suite_beta_zero(self, grid8):
        res = run_checks(grid8, BoostConfig(iterations=5, depth=2, beta=0.0))
        assert sum(r.status == "skipped" for r in res) == 5


def test_convergence_report(grid8, tmp_path):
    cfg = BoostConfig(learning_rate=0.1, l2=0.5, iterations=2000, depth=2, beta=1.0)
    rep = verify_convergence(grid8, cfg, trials=2, checkpoints=[0, 100, 500, 1000, 2000])
    assert rep.gap[0] > 10 * rep.gap[-1]
    assert rep.floor_estimate == pytest.approx(rep.gap[-2:].mean())
    rep.write_csv(tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().splitlines()[0] == "T,mean_squared_gap,trials"
