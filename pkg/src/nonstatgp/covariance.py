"""Matern correlation and the nonstationary covariance function.

The latent-field covariance multiplies spatially-varying standard
deviations by a kernel-convolution prefactor and a Matern correlation of
the locally rescaled distance. With scalar (locally isotropic) kernels
``rho(s)^2 * I_3`` in three dimensions:

    C_y(s, s') = sigma(s) sigma(s')
                 * (rho(s) rho(s'))^{3/2} / ((rho(s)^2 + rho(s')^2)/2)^{3/2}
                 * M_nu( sqrt(2 ||s - s'||^2 / (rho(s)^2 + rho(s')^2)) )

The marginal (response) covariance adds a constant nugget variance on the
diagonal. The Matern here is unit-range: all range handling lives in the
rescaled argument.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, kv

from .geo import pairwise_distances


@dataclass(frozen=True)
class KernelConfig:
    """Smoothness and diagonal inflation for covariance assembly."""

    nu: float = 0.5
    jitter: float = 0.0

    def __post_init__(self):
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


def matern(d, nu: float):
    """Unit-range Matern correlation of nonnegative distances.

    ``nu = 0.5`` gives exp(-d); half-integer cases use closed forms and
    other smoothness values the Bessel-function representation with the
    sqrt(2 nu) scaling convention.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if nu <= 0:
        raise ValueError("nu must be positive")

    if nu == 0.5:
        out = np.exp(-d)
    elif nu == 1.5:
        a = np.sqrt(3.0) * d
        out = (1.0 + a) * np.exp(-a)
    elif nu == 2.5:
        a = np.sqrt(5.0) * d
        out = (1.0 + a + a * a / 3.0) * np.exp(-a)
    else:
        a = np.sqrt(2.0 * nu) * d
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            body = np.exp(
                (1.0 - nu) * np.log(2.0) - gammaln(nu) + nu * np.log(a)
            ) * kv(nu, a)
        out = np.where(a > 0, body, 1.0)
        out = np.where(np.isfinite(out), out, 0.0)  # Bessel underflow at large a
    return out if out.ndim else float(out)


def ns_cov_from_distance(d, sigma1, sigma2, rho1, rho2, nu: float = 0.5):
    """Nonstationary covariance given precomputed chordal distances.

    All arguments broadcast; this is the workhorse shared by the dense
    builder, the sparse likelihood, and kriging.
    """
    d = np.asarray(d, dtype=float)
    s1 = np.asarray(sigma1, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    r1 = np.asarray(rho1, dtype=float)
    r2 = np.asarray(rho2, dtype=float)

    mean_sq = 0.5 * (r1 * r1 + r2 * r2)
    prefactor = s1 * s2 * (r1 * r2 / mean_sq) ** 1.5
    q = d * d / mean_sq
    return prefactor * matern(np.sqrt(q), nu)


def ns_cov(s1, s2, sigma1, sigma2, rho1, rho2, cfg: KernelConfig = KernelConfig()):
    """Covariance between two locations with their local parameters."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    if rho1 <= 0 or rho2 <= 0:
        raise ValueError("ranges must be positive")
    d = np.linalg.norm(np.asarray(s1, dtype=float) - np.asarray(s2, dtype=float))
    return float(ns_cov_from_distance(d, sigma1, sigma2, rho1, rho2, cfg.nu))


def build_cov_y(points, sigmas, rhos, cfg: KernelConfig = KernelConfig()) -> np.ndarray:
    """Dense latent-field covariance matrix over a point set.

    Exact symmetry is guaranteed by mirroring the upper triangle; entries
    that fail to be finite raise with their indices.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    sig = np.atleast_1d(np.asarray(sigmas, dtype=float))
    rho = np.atleast_1d(np.asarray(rhos, dtype=float))
    n = pts.shape[0]
    if not (len(sig) == len(rho) == n):
        raise ValueError("points, sigmas, rhos must have equal length")
    if np.any(sig <= 0) or np.any(rho <= 0):
        raise ValueError("sigmas and rhos must be positive")

    d = pairwise_distances(pts)
    cov = ns_cov_from_distance(d, sig[:, None], sig[None, :], rho[:, None], rho[None, :], cfg.nu)
    cov = np.triu(cov)
    cov = cov + np.triu(cov, 1).T

    if not np.isfinite(cov).all():
        i, j = (int(v[0]) for v in np.nonzero(~np.isfinite(cov)))
        raise ValueError(f"non-finite covariance entry at ({i}, {j})")
    if cfg.jitter > 0:
        cov[np.diag_indices_from(cov)] += cfg.jitter
    return cov


def cross_cov_y(points_a, points_b, sig_a, sig_b, rho_a, rho_b, nu: float = 0.5) -> np.ndarray:
    """Rectangular latent-field covariance between two point sets."""
    d = pairwise_distances(points_a, points_b)
    sig_a = np.atleast_1d(np.asarray(sig_a, dtype=float))
    sig_b = np.atleast_1d(np.asarray(sig_b, dtype=float))
    rho_a = np.atleast_1d(np.asarray(rho_a, dtype=float))
    rho_b = np.atleast_1d(np.asarray(rho_b, dtype=float))
    return ns_cov_from_distance(
        d, sig_a[:, None], sig_b[None, :], rho_a[:, None], rho_b[None, :], nu
    )


def build_cov_z(cov_y: np.ndarray, tau2: float) -> np.ndarray:
    """Marginal (response) covariance: latent covariance plus nugget."""
    if tau2 < 0:
        raise ValueError("tau2 must be nonnegative")
    cov = np.array(cov_y, dtype=float, copy=True)
    cov[np.diag_indices_from(cov)] += tau2
    return cov
