"""Response log-likelihoods, priors, and the joint log posterior.

Two routes to the Gaussian marginal of the response field: a sparse
nearest-neighbor factorization whose cost is linear in the number of
cells, and a dense factorization kept as an exact oracle for small
problems. Log densities are plain floats where ``-inf`` encodes a
prior-support violation or a numerically inconsistent parameter value;
``NaN`` is never returned.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .covariance import KernelConfig, build_cov_y, build_cov_z, matern
from .design import DesignMatrices, ThetaState, eval_range, eval_sigma
from .geo import EARTH_DIAMETER_MM
from .neighbors import NeighborGraph

_LOG_2PI = math.log(2.0 * math.pi)

# Conditional variances in (-VAR_FLOOR, 0] are treated as roundoff and
# clamped; anything below -VAR_FLOOR signals an inconsistent theta.
VAR_FLOOR = 1e-12

EXACT_LOGLIK_MAX_N = 4000


class NumericalError(RuntimeError):
    """Dense factorization failed even after jitter."""


@dataclass(frozen=True)
class PriorSpec:
    """Diffuse independent priors on (mu, tau2, alpha, phi).

    The range cap (the globe diameter) keeps the isotropy range
    identifiable: the phi prior carries an indicator that the largest
    per-cell range stays below it.
    """

    mu_sd: float = 100.0
    tau2_upper: float = 100.0
    alpha_sd: float = 10.0
    phi_sd: float = 5.0
    range_cap: float = EARTH_DIAMETER_MM


class NngpWorkspace:
    """Per-dataset precomputation for repeated likelihood evaluations.

    Caches the neighbor gathers and distance tensors, which do not depend
    on theta; every evaluation recomputes the covariance entries from the
    current parameters. Also counts evaluations and inconsistent-theta
    events for diagnostics.
    """

    def __init__(self, points, graph: NeighborGraph, design: DesignMatrices, nu: float = 0.5):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        if graph.n != n:
            raise ValueError("graph and point set sizes differ")
        if design.X_sigma.shape[0] != n or design.X_Sigma.shape[0] != n:
            raise ValueError("design matrices must align with the point set")

        self.nu = float(nu)
        self.n = n
        self.k = graph.k
        self.graph = graph
        self.design = design
        self.order = graph.order

        nbr_idx, mask = graph.padded_cond_arrays()
        self.nbr_idx = nbr_idx
        self.mask = mask

        pts_ord = pts[self.order]
        pts_nbr = pts[nbr_idx]
        diff_in = pts_ord[:, None, :] - pts_nbr
        self.d_in = np.sqrt(np.einsum("iak,iak->ia", diff_in, diff_in))
        diff_nn = pts_nbr[:, :, None, :] - pts_nbr[:, None, :, :]
        self.d_nn = np.sqrt(np.einsum("iabk,iabk->iab", diff_nn, diff_nn))

        pair_mask = mask[:, :, None] & mask[:, None, :]
        self._mask_f = mask.astype(float)
        self._pair_mask_f = pair_mask.astype(float)
        self._pad_eye = np.eye(self.k)[None, :, :] * (1.0 - pair_mask)

        self.eval_count = 0
        self.inconsistent_count = 0

    def _correlation(self, scaled_sq):
        if self.nu == 0.5:
            return np.exp(-np.sqrt(scaled_sq))
        return matern(np.sqrt(scaled_sq), self.nu)


def nngp_loglik(z, theta: ThetaState, ws: NngpWorkspace) -> float:
    """Sparse nearest-neighbor log-likelihood of the response vector.

    Factorizes the joint Gaussian into per-point conditionals, each
    conditioning on at most k earlier points in the maxmin order; with
    full conditioning this reproduces the dense likelihood exactly.
    """
    ws.eval_count += 1
    z = np.asarray(z, dtype=float)
    if z.size != ws.n:
        raise ValueError("response length does not match workspace")

    with np.errstate(over="ignore", invalid="ignore"):
        sigma = eval_sigma(ws.design.X_sigma, theta.alpha)
        rho = eval_range(ws.design.X_Sigma, theta.phi)
    if not (np.isfinite(sigma).all() and np.isfinite(rho).all()):
        ws.inconsistent_count += 1
        return -np.inf
    if sigma.min() <= 0 or rho.min() <= 0:  # exp underflow to 0
        ws.inconsistent_count += 1
        return -np.inf

    tau2 = theta.tau2
    mu = theta.mu
    nbr, mask_f, pair_f = ws.nbr_idx, ws._mask_f, ws._pair_mask_f

    sig_o = sigma[ws.order]
    rho_o = rho[ws.order]
    sig_n = sigma[nbr]
    rho_n = rho[nbr]
    r2_n = rho_n * rho_n

    # k x k response-covariance blocks among each point's neighbors
    mean_sq = 0.5 * (r2_n[:, :, None] + r2_n[:, None, :])
    pref = (sig_n[:, :, None] * sig_n[:, None, :]) * (
        (rho_n[:, :, None] * rho_n[:, None, :]) / mean_sq
    ) ** 1.5
    cmat = pref * ws._correlation(ws.d_nn**2 / mean_sq)
    cmat *= pair_f
    cmat += ws._pad_eye
    diag = np.arange(ws.k)
    cmat[:, diag, diag] += tau2 * mask_f

    # cross-covariances point-to-neighbors (distinct points: no nugget)
    mean_sq_in = 0.5 * (rho_o[:, None] ** 2 + r2_n)
    pref_in = (sig_o[:, None] * sig_n) * (
        (rho_o[:, None] * rho_n) / mean_sq_in
    ) ** 1.5
    cvec = pref_in * ws._correlation(ws.d_in**2 / mean_sq_in) * mask_f

    try:
        w = np.linalg.solve(cmat, cvec[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        ws.inconsistent_count += 1
        return -np.inf

    cond_var = sig_o**2 + tau2 - np.einsum("ia,ia->i", cvec, w)
    if not np.isfinite(cond_var).all():
        ws.inconsistent_count += 1
        return -np.inf
    low = cond_var.min()
    if low <= 0:
        if low < -VAR_FLOOR:
            ws.inconsistent_count += 1
            return -np.inf
        cond_var = np.maximum(cond_var, VAR_FLOOR)

    z_o = z[ws.order]
    z_n = z[nbr]
    cond_mean = mu + np.einsum("ia,ia->i", w, (z_n - mu) * mask_f)

    resid = z_o - cond_mean
    ll = -0.5 * np.sum(np.log(2.0 * np.pi * cond_var) + resid * resid / cond_var)
    return float(ll) if np.isfinite(ll) else -np.inf


def dense_gaussian_loglik(z, mean, cov) -> float:
    """Multivariate normal log density via Cholesky, with jitter retry."""
    z = np.asarray(z, dtype=float)
    resid = z - np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    try:
        factor = sla.cho_factor(cov, lower=True)
    except np.linalg.LinAlgError:
        jitter = 1e-10 * float(np.mean(np.diag(cov)))
        try:
            factor = sla.cho_factor(cov + jitter * np.eye(cov.shape[0]), lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("covariance factorization failed after jitter") from exc
    half_logdet = np.sum(np.log(np.diag(factor[0])))
    quad = resid @ sla.cho_solve(factor, resid)
    return float(-0.5 * (z.size * _LOG_2PI + quad) - half_logdet)


def exact_loglik(
    z,
    theta: ThetaState,
    points,
    design: DesignMatrices,
    nu: float = 0.5,
    max_n: int = EXACT_LOGLIK_MAX_N,
) -> float:
    """Dense Gaussian log-likelihood; the small-scale oracle.

    Guarded to ``max_n`` points since cost grows cubically.
    """
    z = np.asarray(z, dtype=float)
    if z.size > max_n:
        raise ValueError(f"exact likelihood guarded to N <= {max_n}, got {z.size}")
    sigma = eval_sigma(design.X_sigma, theta.alpha)
    rho = eval_range(design.X_Sigma, theta.phi)
    cov_y = build_cov_y(points, sigma, rho, KernelConfig(nu=nu))
    cov_z = build_cov_z(cov_y, theta.tau2)
    return dense_gaussian_loglik(z, theta.mu, cov_z)


def log_prior(theta: ThetaState, design: DesignMatrices, priors: PriorSpec = PriorSpec()) -> float:
    """Joint log prior density; -inf outside the support.

    Support: tau2 in (0, upper) and every per-cell isotropy range strictly
    below the cap.
    """
    if not (0.0 < theta.tau2 < priors.tau2_upper):
        return -np.inf
    log_rho_max = float(np.max(design.X_Sigma @ theta.phi))
    if log_rho_max >= math.log(priors.range_cap):
        return -np.inf

    def normal_term(x, sd):
        x = np.atleast_1d(x)
        return float(
            -0.5 * x.size * (_LOG_2PI + 2.0 * math.log(sd))
            - 0.5 * float(np.sum(x * x)) / sd**2
        )

    lp = normal_term(theta.mu, priors.mu_sd)
    lp += -math.log(priors.tau2_upper)
    lp += normal_term(theta.alpha, priors.alpha_sd)
    lp += normal_term(theta.phi, priors.phi_sd)
    return lp


def log_posterior(
    z, theta: ThetaState, ws: NngpWorkspace, priors: PriorSpec = PriorSpec()
) -> float:
    """Unnormalized log posterior; skips the likelihood when the prior is -inf."""
    lp = log_prior(theta, ws.design, priors)
    if lp == -np.inf:
        return -np.inf
    ll = nngp_loglik(z, theta, ws)
    return lp + ll if ll != -np.inf else -np.inf


def make_log_posterior(z, ws: NngpWorkspace, priors: PriorSpec = PriorSpec()):
    """Closure over the data for samplers operating on flat theta vectors."""
    z = np.asarray(z, dtype=float)
    n_alpha = ws.design.X_sigma.shape[1]
    n_phi = ws.design.X_Sigma.shape[1]

    def logpost(vec) -> float:
        theta = ThetaState.from_vector(vec, n_alpha=n_alpha, n_phi=n_phi)
        return log_posterior(z, theta, ws, priors)

    return logpost
