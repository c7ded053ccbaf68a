import numpy as np
import pytest
from numpy.testing import assert_allclose

from nonstatgp.design import (
    PARAM_NAMES,
    ThetaState,
    build_design,
    build_spline_basis,
    eval_range,
    eval_sigma,
)


@pytest.fixture
def lat_sample():
    rng = np.random.default_rng(20)
    return rng.uniform(-88.0, 88.0, size=400)


@pytest.fixture
def basis(lat_sample):
    return build_spline_basis(lat_sample, df=3)


class TestSplineBasis:
    def test_shape_and_knot_count(self, basis, lat_sample):
        assert basis.evaluate(lat_sample).shape == (400, 3)
        assert basis.interior_knots.size == 2
        lo, hi = basis.boundary_knots
        assert lo == lat_sample.min() and hi == lat_sample.max()

    def test_value_continuity_at_knots(self, basis):
        h = 1e-11
        for knot in basis.knots:
            left = basis.evaluate(knot - h)
            mid = basis.evaluate(knot)
            right = basis.evaluate(knot + h)
            assert np.max(np.abs(left - mid)) < 1e-12
            assert np.max(np.abs(right - mid)) < 1e-12

    def test_natural_condition_second_derivative(self, basis):
        # symmetric finite differences at and beyond the boundary knots
        h = 0.01
        for x0 in [basis.boundary_knots[0], basis.boundary_knots[1],
                   basis.boundary_knots[0] - 5.0, basis.boundary_knots[1] + 5.0]:
            second = (
                basis.evaluate(x0 + h) - 2 * basis.evaluate(x0) + basis.evaluate(x0 - h)
            ) / h**2
            assert np.max(np.abs(second)) < 1e-6

    def test_linear_beyond_boundaries(self, basis):
        lo, hi = basis.boundary_knots
        for side in (np.array([lo - 15, lo - 10, lo - 5]), np.array([hi + 5, hi + 10, hi + 15])):
            vals = basis.evaluate(side)
            # three equally spaced points: linearity means zero second difference
            assert_allclose(vals[1], 0.5 * (vals[0] + vals[2]), atol=1e-9)

    def test_affine_functions_reproduced(self, basis, lat_sample):
        design = np.column_stack([np.ones(lat_sample.size), basis.evaluate(lat_sample)])
        target = 2.5 - 0.03 * lat_sample
        coef, *_ = np.linalg.lstsq(design, target, rcond=None)
        residual = np.max(np.abs(design @ coef - target))
        assert residual < 1e-10

    def test_too_few_distinct_latitudes(self):
        with pytest.raises(ValueError):
            build_spline_basis([0.0, 1.0, 2.0, 0.0], df=3)

    def test_deterministic(self, lat_sample):
        a = build_spline_basis(lat_sample, df=3).evaluate(lat_sample)
        b = build_spline_basis(lat_sample, df=3).evaluate(lat_sample)
        assert np.array_equal(a, b)


class TestBuildDesign:
    def test_ocean_row(self, basis):
        d = build_design([10.0], [0], basis)
        assert_allclose(d.X_Sigma, [[1.0, 0.0]])
        # interaction columns vanish off-land
        assert_allclose(d.X_sigma[0, 4:], 0.0)

    def test_land_row(self, basis):
        d = build_design([10.0], [1], basis)
        assert_allclose(d.X_Sigma, [[1.0, 1.0]])
        assert d.X_sigma[0, 4] == 1.0
        assert_allclose(d.X_sigma[0, 5:], d.X_sigma[0, 1:4])

    def test_column_counts(self, basis, lat_sample):
        land = (lat_sample > 0).astype(int)
        d = build_design(lat_sample, land, basis)
        assert d.X_sigma.shape == (400, 8)
        assert d.X_Sigma.shape == (400, 2)

    def test_constant_land_rank_collapse(self, basis, lat_sample):
        d = build_design(lat_sample, np.zeros(400, dtype=int), basis)
        assert np.linalg.matrix_rank(d.X_sigma) <= 4

    def test_bad_land_value(self, basis):
        with pytest.raises(ValueError, match="land"):
            build_design([0.0], [2], basis)

    def test_no_land_interaction_drops_columns(self, basis, lat_sample):
        land = (lat_sample > 0).astype(int)
        d = build_design(lat_sample, land, basis, land_interaction=False)
        assert d.X_sigma.shape == (400, 4)
        assert d.X_Sigma.shape == (400, 1)
        assert d.n_alpha == 4 and d.n_phi == 1
        # land status no longer matters
        d_land = build_design([10.0], [1], basis, land_interaction=False)
        d_ocean = build_design([10.0], [0], basis, land_interaction=False)
        assert np.array_equal(d_land.X_sigma, d_ocean.X_sigma)

    def test_byte_identical_across_runs(self, basis, lat_sample):
        land = (lat_sample > 20).astype(int)
        a = build_design(lat_sample, land, basis)
        b = build_design(lat_sample, land, basis)
        assert a.X_sigma.tobytes() == b.X_sigma.tobytes()
        assert a.X_Sigma.tobytes() == b.X_Sigma.tobytes()


class TestEvaluation:
    def test_zero_coefficients_give_unit_sigma(self, basis, lat_sample):
        land = (lat_sample > 0).astype(int)
        d = build_design(lat_sample, land, basis)
        assert_allclose(eval_sigma(d.X_sigma, np.zeros(8)), 1.0)

    def test_intercept_only(self, basis):
        d = build_design([5.0], [0], basis)
        alpha = np.zeros(8)
        alpha[0] = np.log(2.0)
        assert_allclose(eval_sigma(d.X_sigma, alpha), 2.0)

    def test_zonal_structure(self, basis):
        d = build_design([33.0, 33.0], [1, 1], basis)
        rng = np.random.default_rng(21)
        alpha = rng.normal(size=8)
        sig = eval_sigma(d.X_sigma, alpha)
        assert sig[0] == sig[1]

    def test_range_land_and_ocean(self, basis):
        d = build_design([0.0, 0.0], [1, 0], basis)
        phi = np.array([np.log(2.0), np.log(3.0)])
        rho = eval_range(d.X_Sigma, phi)
        assert_allclose(rho, [6.0, 2.0], rtol=1e-14)

    def test_strict_positivity(self, basis, lat_sample):
        rng = np.random.default_rng(22)
        land = (lat_sample < -10).astype(int)
        d = build_design(lat_sample, land, basis)
        for _ in range(10):
            assert eval_sigma(d.X_sigma, rng.normal(size=8)).min() > 0
            assert eval_range(d.X_Sigma, rng.normal(size=2)).min() > 0


class TestThetaState:
    def test_vector_roundtrip(self):
        theta = ThetaState(1.0, 2.0, np.arange(8.0), np.array([0.1, 0.2]))
        vec = theta.to_vector()
        assert vec.shape == (12,)
        back = ThetaState.from_vector(vec)
        assert back.mu == 1.0 and back.tau2 == 2.0
        assert_allclose(back.alpha, np.arange(8.0))
        assert_allclose(back.phi, [0.1, 0.2])

    def test_param_names_align(self):
        assert len(PARAM_NAMES) == 12
        assert PARAM_NAMES[0] == "mu" and PARAM_NAMES[1] == "tau2"
        assert PARAM_NAMES[2] == "alpha1" and PARAM_NAMES[-1] == "phi2"

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            ThetaState.from_vector(np.zeros(9))
