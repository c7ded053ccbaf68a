import numpy as np
import pytest
from numpy.testing import assert_allclose

from nonstatgp.extremes import (
    XI_TOL,
    GevParams,
    MaximaSeries,
    extract_annual_maxima,
    fit_gev,
    gev_cdf,
    gev_nll,
    return_value,
)


def sample_gumbel(rng, mu, sigma, n):
    return mu - sigma * np.log(-np.log(rng.random(n)))


class TestGevParams:
    def test_rejects_nonpositive_scale(self):
        with pytest.raises(ValueError):
            GevParams(0.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            GevParams(0.0, -1.0, 0.1)

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            GevParams(np.nan, 1.0, 0.0)


class TestGevCdf:
    def test_gumbel_at_location(self):
        # closed form: exp(-exp(0)) = exp(-1)
        assert_allclose(gev_cdf(0.0, GevParams(0.0, 1.0, 0.0)), np.exp(-1.0), rtol=1e-14)

    def test_upper_tail_limit(self):
        for xi in (0.0, 0.3):
            assert gev_cdf(1e12, GevParams(0.0, 1.0, xi)) == pytest.approx(1.0)

    def test_positive_shape_example(self):
        # hand evaluation: exp(-(1 + 0.5)^(-2)) = exp(-4/9)
        value = gev_cdf(1.0, GevParams(0.0, 1.0, 0.5))
        assert_allclose(value, np.exp(-4.0 / 9.0), rtol=1e-14)

    def test_outside_support_tails(self):
        # xi > 0: lower bound at mu - sigma/xi
        assert gev_cdf(-3.0, GevParams(0.0, 1.0, 0.5)) == 0.0
        # xi < 0: upper bound at mu - sigma/xi
        assert gev_cdf(3.0, GevParams(0.0, 1.0, -0.5)) == 1.0

    def test_nondecreasing_on_grids(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            p = GevParams(rng.normal(), rng.uniform(0.5, 3.0), rng.uniform(-0.4, 0.4))
            grid = np.linspace(p.mu - 5 * p.sigma, p.mu + 5 * p.sigma, 400)
            values = gev_cdf(grid, p)
            assert np.all(np.diff(values) >= 0)


class TestGevNll:
    def test_gumbel_single_obs_at_mode(self):
        # density at the mode is e^{-1}, so nll = 1
        assert_allclose(gev_nll([0.0], 0.0, 1.0, 0.0), 1.0, rtol=1e-14)

    def test_location_shift_invariance(self):
        rng = np.random.default_rng(6)
        x = sample_gumbel(rng, 10.0, 2.0, 50)
        base = gev_nll(x, 10.0, 2.0, 0.1)
        shifted = gev_nll(x + 7.5, 17.5, 2.0, 0.1)
        assert_allclose(shifted, base, rtol=1e-12)

    def test_support_violation_is_inf(self):
        # 1 + xi*(x - mu)/sigma <= 0 for x = -10, xi = 0.5
        assert gev_nll([-10.0], 0.0, 1.0, 0.5) == np.inf

    def test_nonpositive_scale_is_inf(self):
        assert gev_nll([1.0], 0.0, 0.0, 0.1) == np.inf
        assert gev_nll([1.0], 0.0, -2.0, 0.1) == np.inf


class TestFitGev:
    def test_gumbel_recovery_and_grid_oracle(self):
        rng = np.random.default_rng(7)
        x = sample_gumbel(rng, 300.0, 2.0, 500)
        fit = fit_gev(x)
        assert fit.converged
        assert abs(fit.params.mu - 300.0) < 0.3
        assert abs(fit.params.sigma - 2.0) < 0.3
        assert abs(fit.params.xi) < 0.1

        # independent oracle: coarse grid search over the same nll
        mus = np.linspace(299.0, 301.0, 11)
        sigmas = np.linspace(1.5, 2.5, 11)
        xis = np.linspace(-0.2, 0.2, 11)
        best = np.inf
        for m in mus:
            for s in sigmas:
                for c in xis:
                    best = min(best, gev_nll(x, m, s, c))
        assert fit.nll <= best + 1e-9

    def test_constant_series_not_converged(self):
        fit = fit_gev(np.full(20, 5.0))
        assert not fit.converged

    def test_refit_is_fixed_point(self):
        rng = np.random.default_rng(8)
        x = sample_gumbel(rng, 10.0, 1.5, 200)
        fit = fit_gev(x)
        nll_at_optimum = gev_nll(x, fit.params.mu, fit.params.sigma, fit.params.xi)
        assert nll_at_optimum >= fit.nll - 1e-6

    def test_beats_truth_nll(self):
        rng = np.random.default_rng(9)
        x = sample_gumbel(rng, 50.0, 3.0, 300)
        fit = fit_gev(x)
        assert fit.nll <= gev_nll(x, 50.0, 3.0, 0.0) + 1e-9

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            fit_gev(np.arange(5, dtype=float))


class TestReturnValue:
    def test_gumbel_20_year(self):
        # closed form: -log(-log(0.95))
        expected = -np.log(-np.log(0.95))
        assert_allclose(return_value(GevParams(0.0, 1.0, 0.0), 20), expected, atol=1e-12)
        assert_allclose(return_value(GevParams(0.0, 1.0, 0.0), 20), 2.970195, atol=1e-6)

    def test_shaped_20_year(self):
        # hand evaluation of the xi != 0 branch
        rv = return_value(GevParams(300.0, 2.0, 0.1), 20)
        y = -np.log1p(-1.0 / 20.0)
        assert_allclose(rv, 300.0 - (2.0 / 0.1) * (1.0 - y**-0.1), rtol=1e-14)
        assert_allclose(rv, 306.9169, atol=5e-4)
        # independent check: the CDF at the return value is 1 - 1/20
        assert_allclose(gev_cdf(rv, GevParams(300.0, 2.0, 0.1)), 0.95, atol=1e-12)

    def test_quantile_roundtrip_random_params(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            p = GevParams(rng.normal(0, 10), rng.uniform(0.1, 5.0), rng.uniform(-0.5, 0.5))
            assert_allclose(gev_cdf(return_value(p, 20), p), 0.95, atol=1e-10)

    def test_branch_continuity(self):
        for sigma in (0.1, 1.0, 10.0):
            at_tol = return_value(GevParams(0.0, sigma, XI_TOL), 20)
            gumbel = return_value(GevParams(0.0, sigma, 0.0), 20)
            assert abs(at_tol - gumbel) < 1e-6

    def test_location_equivariance_exact(self):
        p = GevParams(5.0, 2.0, 0.2)
        shifted = GevParams(5.0 + 3.25, 2.0, 0.2)
        assert return_value(shifted, 20) == return_value(p, 20) + 3.25

    def test_rejects_bad_period(self):
        with pytest.raises(ValueError):
            return_value(GevParams(0, 1, 0), 1.0)


class TestExtractAnnualMaxima:
    def test_max_of_three_members(self):
        series = extract_annual_maxima(["a", "a", "a"], [2000, 2000, 2000], [1.0, 2.0, 0.5])
        assert len(series) == 1
        assert_allclose(series[0].values, [2.0])

    def test_single_member_identity(self):
        series = extract_annual_maxima(
            ["a", "a", "a"], [2000, 2001, 2002], [3.0, 1.0, 2.0]
        )
        assert_allclose(series[0].values, [3.0, 1.0, 2.0])

    def test_two_cells_two_years_two_members(self):
        cells = ["a", "a", "a", "a", "b", "b", "b", "b"]
        years = [2000, 2000, 2001, 2001, 2000, 2000, 2001, 2001]
        vals = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]
        series = extract_annual_maxima(cells, years, vals)
        # enumerated by hand: per-year maxima
        assert [s.cell_id for s in series] == ["a", "b"]
        assert_allclose(series[0].values, [2.0, 4.0])
        assert_allclose(series[1].values, [6.0, 8.0])

    def test_missing_combination_errors(self):
        with pytest.raises(ValueError, match="missing"):
            extract_annual_maxima(["a", "a", "b"], [2000, 2001, 2000], [1.0, 2.0, 3.0])

    def test_first_appearance_cell_order(self):
        series = extract_annual_maxima(["z", "a"], [2000, 2000], [1.0, 2.0])
        assert [s.cell_id for s in series] == ["z", "a"]


def test_maxima_series_holds_values():
    s = MaximaSeries(cell_id="c1", values=np.array([1.0, 2.0]))
    assert s.cell_id == "c1"
    assert s.values.size == 2
