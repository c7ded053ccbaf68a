"""Local-kriging prediction of the latent or response field.

Each prediction location conditions on its k nearest observed points
through the usual conditional-Gaussian formulas, evaluated per posterior
draw and Monte-Carlo averaged. Predictions are marginal per location: the
across-location predictive covariance is diagonal by construction, which
is recorded in the result metadata.
"""

from dataclasses import dataclass

import numpy as np

from .covariance import matern
from .design import DesignMatrices, ThetaState, eval_range, eval_sigma

#: How the reported predictive SD is formed from the per-draw pieces.
SD_KIND = "total_variance"  # mean within-draw variance + between-draw variance

_VAR_TOL = 1e-12


@dataclass
class PredictionResult:
    """Posterior predictive summaries per location."""

    mean: np.ndarray
    sd: np.ndarray
    n_draws: int
    target: str
    sd_kind: str = SD_KIND
    samples: np.ndarray | None = None


def local_krige_one(
    s_star,
    sigma_star,
    rho_star,
    nbr_points,
    nbr_sigma,
    nbr_rho,
    nbr_z,
    mu,
    tau2,
    nu: float = 0.5,
    target: str = "y",
) -> tuple[float, float]:
    """Conditional mean and variance at one unobserved location.

    The neighbor matrix carries the nugget on its diagonal (neighbors are
    observed responses); the cross-covariances do not, since the target
    location is never observed. ``target='z'`` adds the nugget to the
    variance.
    """
    if target not in ("y", "z"):
        raise ValueError("target must be 'y' or 'z'")
    s_star = np.asarray(s_star, dtype=float)
    pts = np.atleast_2d(np.asarray(nbr_points, dtype=float))
    sig = np.atleast_1d(np.asarray(nbr_sigma, dtype=float))
    rho = np.atleast_1d(np.asarray(nbr_rho, dtype=float))
    z = np.atleast_1d(np.asarray(nbr_z, dtype=float))

    d_nn = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    mean_sq = 0.5 * (rho[:, None] ** 2 + rho[None, :] ** 2)
    pref = (sig[:, None] * sig[None, :]) * ((rho[:, None] * rho[None, :]) / mean_sq) ** 1.5
    cmat = pref * matern(np.sqrt(d_nn**2 / mean_sq), nu)
    cmat[np.diag_indices_from(cmat)] += tau2

    d_in = np.linalg.norm(pts - s_star, axis=1)
    mean_sq_in = 0.5 * (rho_star**2 + rho**2)
    pref_in = (sigma_star * sig) * ((rho_star * rho) / mean_sq_in) ** 1.5
    cvec = pref_in * matern(np.sqrt(d_in**2 / mean_sq_in), nu)

    w = np.linalg.solve(cmat, cvec)
    mean = float(mu + w @ (z - mu))
    var = float(sigma_star**2 - cvec @ w)
    if var < -_VAR_TOL:
        raise FloatingPointError(f"negative kriging variance {var}")
    var = max(var, 0.0)
    if target == "z":
        var += tau2
    return mean, var


def predict_field(
    draws,
    pred_points,
    pred_design: DesignMatrices,
    obs_points,
    obs_design: DesignMatrices,
    z_obs,
    neighbor_sets,
    nu: float = 0.5,
    target: str = "y",
    rng=None,
    return_samples: bool = False,
) -> PredictionResult:
    """Monte-Carlo-averaged kriging over posterior draws.

    Parameters
    ----------
    draws : ndarray (L, 12) or ChainSamples
        Posterior parameter draws (already thinned).
    neighbor_sets : ndarray (P, k)
        Per-location indices into the observed set.
    return_samples : bool
        Also draw one predictive sample per (draw, location); requires
        ``rng``. Samples are independent across locations given theta.

    The reported variance is the total over draws: the average within-draw
    kriging variance plus the spread of the within-draw means.
    """
    if target not in ("y", "z"):
        raise ValueError("target must be 'y' or 'z'")
    draws = np.atleast_2d(getattr(draws, "draws", draws))
    if draws.shape[0] == 0:
        raise ValueError("need at least one posterior draw")
    if return_samples and rng is None:
        raise ValueError("return_samples requires an rng")

    pred = np.atleast_2d(np.asarray(pred_points, dtype=float))
    obs = np.atleast_2d(np.asarray(obs_points, dtype=float))
    z_obs = np.asarray(z_obs, dtype=float)
    nbr = np.atleast_2d(np.asarray(neighbor_sets, dtype=np.int64))
    n_pred, k = nbr.shape
    n_draws = draws.shape[0]

    # theta-independent geometry, shared across draws
    nbr_pts = obs[nbr]
    diff_in = pred[:, None, :] - nbr_pts
    d_in = np.sqrt(np.einsum("pak,pak->pa", diff_in, diff_in))
    diff_nn = nbr_pts[:, :, None, :] - nbr_pts[:, None, :, :]
    d_nn = np.sqrt(np.einsum("pabk,pabk->pab", diff_nn, diff_nn))
    z_nbr = z_obs[nbr]

    def correlation(scaled_sq):
        if nu == 0.5:
            return np.exp(-np.sqrt(scaled_sq))
        return matern(np.sqrt(scaled_sq), nu)

    sum_mean = np.zeros(n_pred)
    sum_mean_sq = np.zeros(n_pred)
    sum_var = np.zeros(n_pred)
    samples = np.empty((n_draws, n_pred)) if return_samples else None

    diag = np.arange(k)
    for ell in range(n_draws):
        theta = ThetaState.from_vector(
            draws[ell],
            n_alpha=obs_design.X_sigma.shape[1],
            n_phi=obs_design.X_Sigma.shape[1],
        )
        sig_o = eval_sigma(obs_design.X_sigma, theta.alpha)
        rho_o = eval_range(obs_design.X_Sigma, theta.phi)
        sig_p = eval_sigma(pred_design.X_sigma, theta.alpha)
        rho_p = eval_range(pred_design.X_Sigma, theta.phi)

        sig_n, rho_n = sig_o[nbr], rho_o[nbr]
        r2_n = rho_n * rho_n

        mean_sq = 0.5 * (r2_n[:, :, None] + r2_n[:, None, :])
        pref = (sig_n[:, :, None] * sig_n[:, None, :]) * (
            (rho_n[:, :, None] * rho_n[:, None, :]) / mean_sq
        ) ** 1.5
        cmat = pref * correlation(d_nn**2 / mean_sq)
        cmat[:, diag, diag] += theta.tau2

        mean_sq_in = 0.5 * (rho_p[:, None] ** 2 + r2_n)
        pref_in = (sig_p[:, None] * sig_n) * ((rho_p[:, None] * rho_n) / mean_sq_in) ** 1.5
        cvec = pref_in * correlation(d_in**2 / mean_sq_in)

        w = np.linalg.solve(cmat, cvec[:, :, None])[:, :, 0]
        mean_l = theta.mu + np.einsum("pa,pa->p", w, z_nbr - theta.mu)
        var_l = sig_p**2 - np.einsum("pa,pa->p", cvec, w)
        if var_l.min() < -_VAR_TOL:
            raise FloatingPointError(
                f"negative kriging variance {var_l.min()} at draw {ell}"
            )
        np.maximum(var_l, 0.0, out=var_l)
        if target == "z":
            var_l = var_l + theta.tau2

        sum_mean += mean_l
        sum_mean_sq += mean_l * mean_l
        sum_var += var_l
        if return_samples:
            samples[ell] = mean_l + np.sqrt(var_l) * rng.standard_normal(n_pred)

    mean = sum_mean / n_draws
    between = np.maximum(sum_mean_sq / n_draws - mean * mean, 0.0)
    total_var = sum_var / n_draws + between
    return PredictionResult(
        mean=mean,
        sd=np.sqrt(total_var),
        n_draws=n_draws,
        target=target,
        samples=samples,
    )


PREDICTION_CSV_HEADER = [
    "cell_id", "longitude", "latitude", "pred_mean", "pred_sd", "n_draws", "target",
]


def save_predictions_csv(path, result: PredictionResult, cell_id, lon, lat):
    from .data import atomic_write_text

    lines = [",".join(PREDICTION_CSV_HEADER)]
    for i in range(len(result.mean)):
        lines.append(
            f"{cell_id[i]},{lon[i]:.6f},{lat[i]:.6f},"
            f"{result.mean[i]:.17g},{result.sd[i]:.17g},"
            f"{result.n_draws},{result.target}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
