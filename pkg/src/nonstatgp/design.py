"""Design matrices for the spatially-varying covariance parameters.

The log spatial standard deviation varies with latitude through a natural
cubic spline basis interacted with a land indicator; the log local
isotropic range is linear in the land indicator alone. Mean and nugget are
spatial constants, so the full parameter vector is
``theta = (mu, tau2, alpha[8], phi[2])`` for the default 3-df basis.
"""

from dataclasses import dataclass, field

import numpy as np

from .geo import EARTH_DIAMETER_MM

DEFAULT_SPLINE_DF = 3


def param_names(n_alpha: int = 8, n_phi: int = 2) -> list[str]:
    """Flat ordering of the sampled parameter vector."""
    return (
        ["mu", "tau2"]
        + [f"alpha{i}" for i in range(1, n_alpha + 1)]
        + [f"phi{i}" for i in range(1, n_phi + 1)]
    )


#: Canonical 12-parameter ordering (3-df basis with land interaction).
PARAM_NAMES = param_names()


@dataclass(frozen=True)
class SplineBasis:
    """Natural cubic spline basis on latitude.

    Boundary knots sit at the data extremes and the ``df - 1`` interior
    knots at equally spaced quantiles. Basis functions are cubic between
    the boundary knots and exactly linear beyond them; columns are scaled
    by their max absolute value over the build data so that all entries
    are O(1).
    """

    df: int
    interior_knots: np.ndarray
    boundary_knots: tuple[float, float]
    column_scales: np.ndarray = field(default=None)

    @property
    def knots(self) -> np.ndarray:
        lo, hi = self.boundary_knots
        return np.concatenate([[lo], self.interior_knots, [hi]])

    def evaluate(self, x) -> np.ndarray:
        """Evaluate the ``df`` basis columns at the given latitudes."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = self.knots
        k_last = t[-1]
        span = k_last - t[0]

        cols = np.empty((x.size, self.df))
        cols[:, 0] = (x - t[0]) / span

        def trunc_cube_slope(knot):
            # ((x - knot)_+^3 - (x - t_last)_+^3) / (t_last - knot)
            a = np.maximum(x - knot, 0.0) ** 3
            b = np.maximum(x - k_last, 0.0) ** 3
            return (a - b) / (k_last - knot)

        d_last = trunc_cube_slope(t[-2])
        for j in range(self.df - 1):
            cols[:, j + 1] = trunc_cube_slope(t[j]) - d_last

        if self.column_scales is not None:
            cols /= self.column_scales
        return cols


@dataclass(frozen=True)
class DesignMatrices:
    """Per-cell covariate rows for the two parameter processes.

    With the land interaction (the default), ``X_sigma`` has columns
    ``[1, b1..b_df, land, b1*land..b_df*land]`` and ``X_Sigma`` has
    ``[1, land]``; without it the land columns are absent.
    """

    X_sigma: np.ndarray
    X_Sigma: np.ndarray

    @property
    def n_alpha(self) -> int:
        return self.X_sigma.shape[1]

    @property
    def n_phi(self) -> int:
        return self.X_Sigma.shape[1]


@dataclass
class ThetaState:
    """Covariance-parameter state: constant mean, nugget variance, spatial
    SD coefficients, and isotropy-range coefficients."""

    mu: float
    tau2: float
    alpha: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        self.phi = np.atleast_1d(np.asarray(self.phi, dtype=float))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([[self.mu, self.tau2], self.alpha, self.phi])

    @classmethod
    def from_vector(cls, vec, n_alpha: int = 8, n_phi: int = 2) -> "ThetaState":
        vec = np.asarray(vec, dtype=float)
        if vec.size != 2 + n_alpha + n_phi:
            raise ValueError(f"expected {2 + n_alpha + n_phi} parameters, got {vec.size}")
        return cls(
            mu=float(vec[0]),
            tau2=float(vec[1]),
            alpha=vec[2 : 2 + n_alpha].copy(),
            phi=vec[2 + n_alpha :].copy(),
        )


def build_spline_basis(latitudes, df: int = DEFAULT_SPLINE_DF) -> SplineBasis:
    """Place knots from the supplied latitudes and freeze column scales.

    Boundary knots at the min/max latitude, interior knots at the
    ``i/df`` quantiles (``i = 1..df-1``).
    """
    lat = np.asarray(latitudes, dtype=float)
    if df < 1:
        raise ValueError("df must be >= 1")
    distinct = np.unique(lat)
    if distinct.size < df + 2:
        raise ValueError(
            f"need at least {df + 2} distinct latitudes for a df={df} basis, "
            f"got {distinct.size}"
        )
    lo, hi = float(distinct[0]), float(distinct[-1])
    levels = np.arange(1, df) / df
    interior = np.quantile(lat, levels) if df > 1 else np.empty(0)
    knots = np.concatenate([[lo], np.atleast_1d(interior), [hi]])
    if np.any(np.diff(knots) <= 0):
        raise ValueError(f"knots are not strictly increasing: {knots}")

    unscaled = SplineBasis(
        df=df,
        interior_knots=np.atleast_1d(interior).astype(float),
        boundary_knots=(lo, hi),
        column_scales=None,
    )
    scales = np.abs(unscaled.evaluate(lat)).max(axis=0)
    scales[scales == 0] = 1.0
    return SplineBasis(
        df=df,
        interior_knots=unscaled.interior_knots,
        boundary_knots=(lo, hi),
        column_scales=scales,
    )


def build_design(
    latitudes, land, basis: SplineBasis, land_interaction: bool = True
) -> DesignMatrices:
    """Assemble the spline-by-land and land-only design matrices.

    Works for fitting and prediction locations alike: the basis carries the
    knots, so rows for new latitudes are consistent with the build data.
    With ``land_interaction=False`` the land indicator drops out of both
    processes (zonal-only model).
    """
    lat = np.atleast_1d(np.asarray(latitudes, dtype=float))
    land = np.atleast_1d(np.asarray(land, dtype=float))
    if lat.shape != land.shape:
        raise ValueError("latitudes and land indicator must align")
    if not np.isfinite(lat).all():
        bad = int(np.flatnonzero(~np.isfinite(lat))[0])
        raise ValueError(f"non-finite latitude at cell index {bad}")
    if not np.isin(land, (0.0, 1.0)).all():
        bad = int(np.flatnonzero(~np.isin(land, (0.0, 1.0)))[0])
        raise ValueError(f"land indicator must be 0 or 1, offending cell index {bad}")

    b = basis.evaluate(lat)
    ones = np.ones((lat.size, 1))
    if not land_interaction:
        return DesignMatrices(X_sigma=np.hstack([ones, b]), X_Sigma=ones)
    land_col = land[:, None]
    x_sigma = np.hstack([ones, b, land_col, b * land_col])
    x_big_sigma = np.hstack([ones, land_col])
    return DesignMatrices(X_sigma=x_sigma, X_Sigma=x_big_sigma)


def eval_sigma(x_sigma, alpha) -> np.ndarray:
    """Spatial standard deviation field sigma(s) = exp(x . alpha)."""
    return np.exp(np.asarray(x_sigma, dtype=float) @ np.asarray(alpha, dtype=float))


def eval_range(x_big_sigma, phi) -> np.ndarray:
    """Local isotropic range rho(s) = exp(x . phi), in Mm.

    The kernel matrix at s is rho(s)^2 * I_3; identifiability requires
    max_s rho(s) < EARTH_DIAMETER_MM, which the prior enforces.
    """
    return np.exp(np.asarray(x_big_sigma, dtype=float) @ np.asarray(phi, dtype=float))


RANGE_CAP_MM = EARTH_DIAMETER_MM
