"""Generalized extreme value (GEV) distribution utilities.

Covers extraction of annual ensemble maxima, per-cell maximum-likelihood
fitting, and closed-form return values. A fit that fails to converge marks
the cell's return value as missing; the spatial model downstream treats
those cells as prediction targets only.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

# Below this |shape| the Gumbel limit of the family is used.
XI_TOL = 1e-8

# Minimum number of annual maxima required for a fit.
MIN_SERIES_LENGTH = 10

_EULER_GAMMA = 0.57722


@dataclass(frozen=True)
class GevParams:
    """Location/scale/shape triple; scale must be strictly positive."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not np.isfinite([self.mu, self.sigma, self.xi]).all():
            raise ValueError("GEV parameters must be finite")
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class GevFit:
    """Result of a per-cell fit. ``converged=False`` means the downstream
    return value is recorded as missing."""

    params: GevParams
    converged: bool
    nll: float


@dataclass(frozen=True)
class MaximaSeries:
    """Annual maxima for one grid cell, ordered by year."""

    cell_id: object
    values: np.ndarray


def extract_annual_maxima(cell_ids, years, values) -> list[MaximaSeries]:
    """Reduce an ensemble table to per-cell annual maxima.

    Parameters
    ----------
    cell_ids, years, values : array_like
        Parallel columns of the ensemble table, one row per
        (cell, year, member) value. The member column is irrelevant: only
        the per-(cell, year) maximum survives.

    Returns
    -------
    One :class:`MaximaSeries` per cell, cells in first-appearance order,
    values in ascending year order.

    Raises
    ------
    ValueError
        If the table does not cover the full cell-by-year cross product.
    """
    cell_ids = np.asarray(cell_ids)
    years = np.asarray(years)
    values = np.asarray(values, dtype=float)
    if not (len(cell_ids) == len(years) == len(values)):
        raise ValueError("cell_ids, years, values must have equal length")
    if len(values) == 0:
        raise ValueError("empty ensemble table")

    uniq_cells, first_pos, cell_inv = np.unique(
        cell_ids, return_index=True, return_inverse=True
    )
    cell_rank = np.argsort(np.argsort(first_pos))  # sorted-unique -> appearance order
    uniq_years, year_inv = np.unique(years, return_inverse=True)

    n_cells, n_years = len(uniq_cells), len(uniq_years)
    maxima = np.full((n_cells, n_years), -np.inf)
    np.maximum.at(maxima, (cell_inv, year_inv), values)

    if np.isneginf(maxima).any():
        missing = [
            f"(cell={uniq_cells[i]}, year={uniq_years[j]})"
            for i, j in zip(*np.nonzero(np.isneginf(maxima)))
        ]
        shown = ", ".join(missing[:20])
        more = "" if len(missing) <= 20 else f" and {len(missing) - 20} more"
        raise ValueError(f"missing (cell, year) combinations: {shown}{more}")

    order = np.argsort(cell_rank)
    return [
        MaximaSeries(cell_id=uniq_cells[i], values=maxima[i].copy()) for i in order
    ]


def gev_cdf(x, p: GevParams):
    """GEV cumulative distribution function.

    Outside the support the appropriate tail value (0 or 1) is returned.
    Shapes with ``|xi| < XI_TOL`` use the Gumbel limit.
    """
    x = np.asarray(x, dtype=float)
    s = (x - p.mu) / p.sigma
    if abs(p.xi) < XI_TOL:
        out = np.exp(-np.exp(-s))
    else:
        t = 1.0 + p.xi * s
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            # log1p on the product keeps full relative precision near xi ~ 0
            body = np.exp(-np.exp(-np.log1p(np.maximum(p.xi * s, -1.0)) / p.xi))
        tail = 0.0 if p.xi > 0 else 1.0
        out = np.where(t > 0, body, tail)
    return out if out.ndim else float(out)


def gev_nll(values, mu: float, sigma: float, xi: float) -> float:
    """Negative log-likelihood of a sample under GEV(mu, sigma, xi).

    Soft barriers: returns ``+inf`` (never raises) for ``sigma <= 0`` or any
    observation outside the support, so simplex search remains total.
    """
    if not np.isfinite([mu, sigma, xi]).all() or sigma <= 0:
        return np.inf
    x = np.asarray(values, dtype=float)
    s = (x - mu) / sigma
    n = x.size
    with np.errstate(over="ignore", invalid="ignore"):
        if abs(xi) < XI_TOL:
            nll = n * np.log(sigma) + np.sum(s) + np.sum(np.exp(-s))
        else:
            t = 1.0 + xi * s
            if np.any(t <= 0):
                return np.inf
            log_t = np.log1p(xi * s)
            nll = n * np.log(sigma) + (1.0 + 1.0 / xi) * np.sum(log_t) + np.sum(
                np.exp(-log_t / xi)
            )
    return float(nll) if np.isfinite(nll) else np.inf


def _support_margin(values, mu, sigma, xi) -> float:
    """min over observations of 1 + xi*(x - mu)/sigma (1.0 for Gumbel)."""
    if abs(xi) < XI_TOL:
        return 1.0
    return float(np.min(1.0 + xi * (np.asarray(values, dtype=float) - mu) / sigma))


def fit_gev(values) -> GevFit:
    """Fit GEV parameters to a series of maxima by simplex search.

    The start is moment-based (``sigma0 = sd*sqrt(6)/pi``,
    ``mu0 = mean - 0.57722*sigma0``, ``xi0 = 0.1``). The fit is flagged
    non-converged when the iteration cap is hit, the series is degenerate,
    or the optimum sits on a soft barrier (scale or support edge).
    """
    x = np.asarray(values, dtype=float)
    if x.size < MIN_SERIES_LENGTH:
        raise ValueError(
            f"need at least {MIN_SERIES_LENGTH} maxima to fit, got {x.size}"
        )
    if not np.isfinite(x).all():
        raise ValueError("maxima must be finite")

    mean, sd = float(np.mean(x)), float(np.std(x, ddof=1))
    if sd == 0.0:
        params = GevParams(mean, 1e-8, 0.0)
        return GevFit(params=params, converged=False, nll=np.inf)

    sigma0 = sd * np.sqrt(6.0) / np.pi
    mu0 = mean - _EULER_GAMMA * sigma0
    xi0 = 0.1
    if not np.isfinite(gev_nll(x, mu0, sigma0, xi0)):
        xi0 = 0.0  # Gumbel start is always inside the support

    f0 = gev_nll(x, mu0, sigma0, xi0)
    res = minimize(
        lambda p: gev_nll(x, p[0], p[1], p[2]),
        x0=np.array([mu0, sigma0, xi0]),
        method="Nelder-Mead",
        options={
            "maxiter": 2000,
            "fatol": 1e-10 * max(1.0, abs(f0)),
            "xatol": 1e-8,
        },
    )
    mu_h, sigma_h, xi_h = (float(v) for v in res.x)
    nll = float(res.fun)

    on_barrier = (
        sigma_h <= 0
        or not np.isfinite(nll)
        or _support_margin(x, mu_h, sigma_h, xi_h) <= 1e-10
    )
    converged = bool(res.success) and not on_barrier
    params = GevParams(mu_h, max(sigma_h, 1e-8), xi_h)
    return GevFit(params=params, converged=converged, nll=nll)


def return_value(p: GevParams, r: float) -> float:
    """The level exceeded on average once every ``r`` blocks.

    Closed form in the GEV parameters; the Gumbel branch is taken for
    ``|xi| < XI_TOL``.
    """
    if r <= 1:
        raise ValueError("return period must exceed 1")
    log_y = np.log(-np.log1p(-1.0 / r))  # log(-log(1 - 1/r))
    if abs(p.xi) < XI_TOL:
        return float(p.mu - p.sigma * log_y)
    # expm1 avoids cancellation in 1 - y^(-xi) for small shapes
    return float(p.mu + (p.sigma / p.xi) * np.expm1(-p.xi * log_y))
