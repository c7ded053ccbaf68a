"""Synthetic field generation from the exact dense Gaussian process.

Used by the verification suite and the ``simulate`` CLI subcommand to
produce model-ready datasets at a known parameter state. Limited to sizes
where a dense factorization is cheap.
"""

import numpy as np

from .covariance import KernelConfig, build_cov_y, build_cov_z
from .data import SpatialDataset, make_dataset
from .design import DesignMatrices, ThetaState, build_spline_basis, build_design, eval_range, eval_sigma

SIMULATE_MAX_N = 4000


def simulate_field(points, design: DesignMatrices, theta: ThetaState, nu: float, rng) -> np.ndarray:
    """One draw of the response vector z ~ N(mu 1, C_y + tau2 I)."""
    n = np.atleast_2d(points).shape[0]
    if n > SIMULATE_MAX_N:
        raise ValueError(f"dense simulation guarded to N <= {SIMULATE_MAX_N}, got {n}")
    sigma = eval_sigma(design.X_sigma, theta.alpha)
    rho = eval_range(design.X_Sigma, theta.phi)
    cov = build_cov_z(build_cov_y(points, sigma, rho, KernelConfig(nu=nu)), theta.tau2)
    chol = np.linalg.cholesky(cov + 1e-12 * np.mean(np.diag(cov)) * np.eye(n))
    return theta.mu + chol @ rng.standard_normal(n)


def simulate_dataset(
    n: int,
    theta: ThetaState,
    seed: int,
    nu: float = 0.5,
    df: int = 3,
    lat_limit: float = 85.0,
    land_prob: float = 0.5,
    missing_frac: float = 0.0,
    land_interaction: bool = True,
) -> SpatialDataset:
    """Random global locations plus a GP draw, packaged as a dataset.

    ``missing_frac`` blanks a random share of responses to exercise the
    gap-filling path.
    """
    if not 0.0 <= missing_frac < 1.0:
        raise ValueError("missing_frac must be in [0, 1)")
    rng = np.random.default_rng(seed)
    lon = rng.uniform(-180.0, 180.0, size=n)
    lat = rng.uniform(-lat_limit, lat_limit, size=n)
    land = (rng.random(n) < land_prob).astype(int)
    cell_id = np.array([f"c{i:06d}" for i in range(n)], dtype=object)

    dataset = make_dataset(cell_id, lon, lat, land, np.full(n, np.nan))
    basis = build_spline_basis(dataset.lat, df=df)
    design = build_design(dataset.lat, dataset.land, basis, land_interaction=land_interaction)

    z = simulate_field(dataset.xyz, design, theta, nu, rng)
    if missing_frac > 0:
        n_missing = int(round(missing_frac * dataset.n))
        drop = rng.choice(dataset.n, size=n_missing, replace=False)
        z = z.astype(float)
        z[drop] = np.nan
    dataset.rv = z
    return dataset
