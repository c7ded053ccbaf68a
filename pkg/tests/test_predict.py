import numpy as np
import pytest
from numpy.testing import assert_allclose

from nonstatgp.covariance import KernelConfig, build_cov_y, build_cov_z, cross_cov_y, matern
from nonstatgp.design import DesignMatrices, ThetaState, eval_range, eval_sigma
from nonstatgp.neighbors import knn_predict_sets
from nonstatgp.predict import PredictionResult, local_krige_one, predict_field

from conftest import make_problem


class TestLocalKrigeOne:
    def test_one_neighbor_closed_form(self):
        # unit variances, tau2 = 0, observed z = 5: mean = 5r, var = 1 - r^2
        s_star = np.zeros(3)
        nbr = np.array([[0.7, 0.0, 0.0]])
        r = matern(0.7, 0.5)
        mean, var = local_krige_one(
            s_star, 1.0, 1.0, nbr, [1.0], [1.0], [5.0], mu=0.0, tau2=0.0
        )
        assert_allclose(mean, 5 * r, rtol=1e-14)
        assert_allclose(var, 1 - r**2, rtol=1e-12)

    def test_coincident_neighbor_interpolates(self):
        s_star = np.array([1.0, 2.0, 3.0])
        nbr = np.array([[1.0, 2.0, 3.0], [2.0, 2.0, 3.0]])
        mean, var = local_krige_one(
            s_star, 1.3, 0.9, nbr, [1.3, 1.1], [0.9, 0.9], [4.2, -1.0],
            mu=0.5, tau2=0.0,
        )
        assert_allclose(mean, 4.2, atol=1e-9)
        assert var == pytest.approx(0.0, abs=1e-9)

    def test_target_z_adds_nugget(self):
        rng = np.random.default_rng(110)
        s_star = rng.normal(size=3)
        nbr = rng.normal(size=(5, 3))
        args = (s_star, 1.2, 1.1, nbr, rng.uniform(0.8, 1.5, 5),
                rng.uniform(0.5, 1.5, 5), rng.normal(size=5))
        mean_y, var_y = local_krige_one(*args, mu=0.3, tau2=0.4, target="y")
        mean_z, var_z = local_krige_one(*args, mu=0.3, tau2=0.4, target="z")
        assert mean_z == mean_y
        assert_allclose(var_z - var_y, 0.4, rtol=1e-12)

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            local_krige_one(np.zeros(3), 1, 1, np.ones((1, 3)), [1], [1], [0],
                            mu=0, tau2=0, target="w")


def _design_rows(problem, idx):
    return DesignMatrices(
        X_sigma=problem.design.X_sigma[idx], X_Sigma=problem.design.X_Sigma[idx]
    )


class TestPredictField:
    def _split(self, problem, n_held):
        rng = np.random.default_rng(0)
        held = rng.choice(problem.dataset.n, size=n_held, replace=False)
        obs = np.setdiff1d(np.arange(problem.dataset.n), held)
        return obs, held

    def test_single_draw_equals_pointwise_kriging(self):
        problem = make_problem(n=60, seed=111)
        obs, held = self._split(problem, 4)
        theta = problem.theta
        k = 7
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], k)
        result = predict_field(
            theta.to_vector()[None, :],
            problem.xyz[held],
            _design_rows(problem, held),
            problem.xyz[obs],
            _design_rows(problem, obs),
            problem.z[obs],
            nbr,
        )
        sig = eval_sigma(problem.design.X_sigma, theta.alpha)
        rho = eval_range(problem.design.X_Sigma, theta.phi)
        for i, h in enumerate(held):
            sel = obs[nbr[i]]
            mean, var = local_krige_one(
                problem.xyz[h], sig[h], rho[h], problem.xyz[sel],
                sig[sel], rho[sel], problem.z[sel],
                mu=theta.mu, tau2=theta.tau2,
            )
            assert_allclose(result.mean[i], mean, rtol=1e-12)
            assert_allclose(result.sd[i], np.sqrt(var), rtol=1e-10)

    def test_identical_draws_no_between_variance(self):
        problem = make_problem(n=50, seed=112)
        obs, held = self._split(problem, 3)
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], 5)
        vec = problem.theta.to_vector()
        single = predict_field(
            vec[None, :], problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
        )
        double = predict_field(
            np.vstack([vec, vec]), problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
        )
        assert_allclose(double.mean, single.mean, rtol=1e-14)
        assert_allclose(double.sd, single.sd, rtol=1e-12)

    def test_full_neighborhood_matches_dense_conditional(self):
        problem = make_problem(n=90, seed=113)
        obs, held = self._split(problem, 10)
        theta = problem.theta
        sig = eval_sigma(problem.design.X_sigma, theta.alpha)
        rho = eval_range(problem.design.X_Sigma, theta.phi)

        # dense conditional-Gaussian oracle over the joint covariance
        cov_obs = build_cov_z(
            build_cov_y(problem.xyz[obs], sig[obs], rho[obs], KernelConfig()), theta.tau2
        )
        cross = cross_cov_y(
            problem.xyz[held], problem.xyz[obs], sig[held], sig[obs], rho[held], rho[obs]
        )
        solve = np.linalg.solve(cov_obs, (problem.z[obs] - theta.mu))
        oracle_mean = theta.mu + cross @ solve
        oracle_var = sig[held] ** 2 - np.einsum(
            "ij,ij->i", cross, np.linalg.solve(cov_obs, cross.T).T
        )

        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], k=len(obs))
        result = predict_field(
            theta.to_vector()[None, :], problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
        )
        assert_allclose(result.mean, oracle_mean, rtol=1e-6)
        assert_allclose(result.sd, np.sqrt(np.maximum(oracle_var, 0)), rtol=1e-6)

    def test_z_variance_dominates_y_variance(self):
        problem = make_problem(n=60, seed=114)
        obs, held = self._split(problem, 5)
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], 6)
        common = (
            problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
        )
        vec = problem.theta.to_vector()
        res_y = predict_field(vec[None, :], *common, target="y")
        res_z = predict_field(vec[None, :], *common, target="z")
        assert_allclose(res_z.sd**2 - res_y.sd**2, problem.theta.tau2, rtol=1e-10)

    def test_far_locations_revert_to_prior(self):
        problem = make_problem(n=40, seed=115)
        theta = ThetaState(
            mu=300.0, tau2=0.2,
            alpha=np.array([0.3, 0, 0, 0, 0, 0, 0, 0]),
            phi=np.array([np.log(0.05), 0.0]),  # 50 km range: everything is far
        )
        obs = np.arange(problem.dataset.n)
        # a point well separated from every observation
        far = np.array([[0.0, 0.0, 6.371]])
        far_rows = DesignMatrices(
            X_sigma=problem.design.X_sigma[:1], X_Sigma=problem.design.X_Sigma[:1]
        )
        nbr = knn_predict_sets(problem.xyz[obs], far, 10)
        res_y = predict_field(
            theta.to_vector()[None, :], far, far_rows, problem.xyz[obs],
            _design_rows(problem, obs), problem.z[obs], nbr, target="y",
        )
        sigma_star = np.exp(0.3)
        assert_allclose(res_y.mean[0], 300.0, atol=1e-6)
        assert_allclose(res_y.sd[0] ** 2, sigma_star**2, atol=1e-6)
        res_z = predict_field(
            theta.to_vector()[None, :], far, far_rows, problem.xyz[obs],
            _design_rows(problem, obs), problem.z[obs], nbr, target="z",
        )
        assert_allclose(res_z.sd[0] ** 2, sigma_star**2 + 0.2, atol=1e-6)

    def test_draw_permutation_invariance(self):
        problem = make_problem(n=50, seed=116)
        obs, held = self._split(problem, 4)
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], 5)
        rng = np.random.default_rng(2)
        draws = problem.theta.to_vector()[None, :] + 0.01 * rng.normal(size=(8, 12))
        draws[:, 1] = np.abs(draws[:, 1])
        common = (
            problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
        )
        forward = predict_field(draws, *common)
        shuffled = predict_field(draws[::-1], *common)
        assert_allclose(shuffled.mean, forward.mean, rtol=1e-12)
        assert_allclose(shuffled.sd, forward.sd, rtol=1e-10)

    def test_more_neighbors_do_not_hurt(self):
        # smooth fields: k=15 predictions at least as good as k=2 on average
        mae2, mae15 = [], []
        theta = ThetaState(
            mu=300.0, tau2=0.01,
            alpha=np.array([0.2, 0, 0, 0, 0, 0, 0, 0]),
            phi=np.array([0.8, 0.0]),
        )
        for seed in range(20):
            problem = make_problem(n=120, seed=300 + seed, theta=theta)
            rng = np.random.default_rng(seed)
            held = rng.choice(120, size=10, replace=False)
            obs = np.setdiff1d(np.arange(120), held)
            common = (
                problem.xyz[held], _design_rows(problem, held),
                problem.xyz[obs], _design_rows(problem, obs), problem.z[obs],
            )
            vec = theta.to_vector()[None, :]
            for k, bucket in ((2, mae2), (15, mae15)):
                nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], k)
                res = predict_field(vec, *common, nbr)
                bucket.append(np.mean(np.abs(res.mean - problem.z[held])))
        assert np.mean(mae15) <= np.mean(mae2)

    def test_sampling_requires_rng(self):
        problem = make_problem(n=40, seed=117)
        obs, held = self._split(problem, 2)
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], 4)
        with pytest.raises(ValueError, match="rng"):
            predict_field(
                problem.theta.to_vector()[None, :],
                problem.xyz[held], _design_rows(problem, held),
                problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
                return_samples=True,
            )

    def test_samples_shape(self):
        problem = make_problem(n=40, seed=118)
        obs, held = self._split(problem, 3)
        nbr = knn_predict_sets(problem.xyz[obs], problem.xyz[held], 4)
        draws = np.vstack([problem.theta.to_vector()] * 5)
        res = predict_field(
            draws, problem.xyz[held], _design_rows(problem, held),
            problem.xyz[obs], _design_rows(problem, obs), problem.z[obs], nbr,
            return_samples=True, rng=np.random.default_rng(3),
        )
        assert res.samples.shape == (5, 3)

    def test_empty_draws_rejected(self):
        with pytest.raises(ValueError, match="draw"):
            predict_field(
                np.empty((0, 12)), np.zeros((1, 3)), None, np.zeros((2, 3)),
                None, np.zeros(2), np.zeros((1, 1), dtype=int),
            )


def test_result_metadata_records_sd_kind():
    res = PredictionResult(np.zeros(1), np.zeros(1), 1, "y")
    assert res.sd_kind == "total_variance"
