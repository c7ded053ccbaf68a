"""Adaptive random-walk Metropolis sampling of the covariance parameters.

Each sweep updates the constant mean and the nugget variance with
univariate random walks (the nugget on log scale) and the two coefficient
vectors with block proposals. Univariate proposal scales adapt toward a
0.44 acceptance rate by bounded log-scale nudges; block proposal
covariances are refreshed from the empirical covariance of the past draws
with the standard 2.38^2/d scaling. Everything is driven by a single
seeded generator, so chains are bit-reproducible.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .design import PARAM_NAMES, param_names

logger = logging.getLogger(__name__)

TARGET_ACCEPT_UNIVARIATE = 0.44
TARGET_ACCEPT_BLOCK = 0.234

_MU_IDX = 0
_TAU2_IDX = 1

_BLOCK_COV_RIDGE = 1e-10


@dataclass
class SamplerConfig:
    """Chain length, thinning, adaptation, and initial proposal settings."""

    n_iter: int = 20000
    n_burn: int = 10000
    thin: int = 5
    adapt_interval: int = 50
    target_accept_univ: float = TARGET_ACCEPT_UNIVARIATE
    target_accept_block: float = TARGET_ACCEPT_BLOCK
    rng_seed: int = 0
    # None -> sd(z)/sqrt(N) chosen at run time
    prop_sd_mu: float | None = None
    prop_sd_log_tau2: float = 0.5
    prop_sd_alpha: float = 0.05
    prop_sd_phi: float = 0.05

    def __post_init__(self):
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.n_iter < 0 or self.n_burn < 0:
            raise ValueError("iteration counts must be nonnegative")
        if self.n_iter > 0 and not self.n_burn < self.n_iter:
            raise ValueError("n_burn must be smaller than n_iter")
        if self.adapt_interval < 1:
            raise ValueError("adapt_interval must be >= 1")

    @property
    def n_saved(self) -> int:
        return (self.n_iter - self.n_burn) // self.thin if self.n_iter else 0


@dataclass
class ChainSamples:
    """Saved posterior draws with their log posteriors and diagnostics."""

    draws: np.ndarray
    log_post: np.ndarray
    iterations: np.ndarray
    accept_rates: dict
    param_names: list = field(default_factory=lambda: list(PARAM_NAMES))

    @property
    def n_saved(self) -> int:
        return self.draws.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.param_names.index(name)]


def rw_step_univariate(theta, idx, scale, log_post_fn, current_lp, rng, log_scale=False):
    """One random-walk Metropolis update of a single coordinate.

    With ``log_scale=True`` the proposal is made on the log of the
    parameter and the Jacobian correction applied, keeping positivity
    without a hard reflection.
    """
    proposal = theta.copy()
    jacobian = 0.0
    if log_scale:
        u = np.log(theta[idx])
        u_new = u + scale * rng.standard_normal()
        proposal[idx] = np.exp(u_new)
        jacobian = u_new - u
    else:
        proposal[idx] = theta[idx] + scale * rng.standard_normal()

    lp_new = log_post_fn(proposal)
    if lp_new == -np.inf:
        return theta, current_lp, False
    log_ratio = lp_new - current_lp + jacobian
    if log_ratio >= 0 or np.log(rng.random()) < log_ratio:
        return proposal, lp_new, True
    return theta, current_lp, False


def rw_step_block(theta, block_slice, chol, log_post_fn, current_lp, rng):
    """One block Metropolis update with a fixed proposal Cholesky factor."""
    dim = theta[block_slice].size
    proposal = theta.copy()
    proposal[block_slice] = theta[block_slice] + chol @ rng.standard_normal(dim)

    lp_new = log_post_fn(proposal)
    if lp_new == -np.inf:
        return theta, current_lp, False
    log_ratio = lp_new - current_lp
    if log_ratio >= 0 or np.log(rng.random()) < log_ratio:
        return proposal, lp_new, True
    return theta, current_lp, False


def adapt_scale(scale, accept_rate, target, adapt_round) -> float:
    """Nudge a univariate proposal scale toward the target acceptance rate.

    The nudge size min(0.01, round^{-1/2}) vanishes as the chain grows, so
    adaptation is diminishing.
    """
    delta = min(0.01, adapt_round ** -0.5)
    if accept_rate > target:
        return scale * np.exp(delta)
    if accept_rate < target:
        return scale * np.exp(-delta)
    return scale


def block_cov_from_history(history_block: np.ndarray) -> np.ndarray:
    """Scaled empirical covariance of past block draws, ridge-regularized."""
    dim = history_block.shape[1]
    emp = np.cov(history_block.T)
    emp = np.atleast_2d(emp)
    return (2.38**2 / dim) * emp + _BLOCK_COV_RIDGE * np.eye(dim)


def run_chain(
    z,
    log_post_fn,
    config: SamplerConfig,
    init: np.ndarray,
    n_alpha: int = 8,
    n_phi: int = 2,
) -> ChainSamples:
    """Run the four-sampler sweep over (mu, tau2, alpha block, phi block).

    ``log_post_fn`` maps a flat theta vector to an unnormalized log
    posterior. Raises on a non-finite initial value so bad inits surface
    immediately instead of producing a stuck chain.
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(init, dtype=float).copy()
    if theta.size != 2 + n_alpha + n_phi:
        raise ValueError(
            f"init has {theta.size} entries, expected {2 + n_alpha + n_phi}"
        )
    alpha_slice = slice(2, 2 + n_alpha)
    phi_slice = slice(2 + n_alpha, 2 + n_alpha + n_phi)
    rng = np.random.default_rng(config.rng_seed)

    lp = log_post_fn(theta)
    if not np.isfinite(lp):
        raise ValueError(
            "initial log posterior is not finite; choose different initial values"
        )

    n_saved = config.n_saved
    draws = np.empty((n_saved, theta.size))
    log_posts = np.empty(n_saved)
    saved_iters = np.empty(n_saved, dtype=np.int64)

    scale_mu = config.prop_sd_mu
    if scale_mu is None:
        scale_mu = float(np.std(z) / np.sqrt(max(z.size, 1))) or 1.0
    scale_ltau = config.prop_sd_log_tau2
    dim_a, dim_p = n_alpha, n_phi
    chol_alpha = config.prop_sd_alpha * np.eye(dim_a) * (2.38 / np.sqrt(dim_a))
    chol_phi = config.prop_sd_phi * np.eye(dim_p) * (2.38 / np.sqrt(dim_p))

    history = np.empty((config.n_iter, theta.size))
    window = {"mu": 0, "tau2": 0, "alpha": 0, "phi": 0}
    totals = {"mu": 0, "tau2": 0, "alpha": 0, "phi": 0}

    save_ptr = 0
    for it in range(1, config.n_iter + 1):
        theta, lp, acc = rw_step_univariate(
            theta, _MU_IDX, scale_mu, log_post_fn, lp, rng
        )
        window["mu"] += acc
        totals["mu"] += acc

        theta, lp, acc = rw_step_univariate(
            theta, _TAU2_IDX, scale_ltau, log_post_fn, lp, rng, log_scale=True
        )
        window["tau2"] += acc
        totals["tau2"] += acc

        theta, lp, acc = rw_step_block(
            theta, alpha_slice, chol_alpha, log_post_fn, lp, rng
        )
        window["alpha"] += acc
        totals["alpha"] += acc

        theta, lp, acc = rw_step_block(theta, phi_slice, chol_phi, log_post_fn, lp, rng)
        window["phi"] += acc
        totals["phi"] += acc

        history[it - 1] = theta

        if it % config.adapt_interval == 0:
            adapt_round = it // config.adapt_interval
            denom = config.adapt_interval
            scale_mu = adapt_scale(
                scale_mu, window["mu"] / denom, config.target_accept_univ, adapt_round
            )
            scale_ltau = adapt_scale(
                scale_ltau, window["tau2"] / denom, config.target_accept_univ, adapt_round
            )
            if it >= 2 * max(dim_a, dim_p):
                try:
                    chol_alpha = np.linalg.cholesky(
                        block_cov_from_history(history[:it, alpha_slice])
                    )
                    chol_phi = np.linalg.cholesky(
                        block_cov_from_history(history[:it, phi_slice])
                    )
                except np.linalg.LinAlgError:  # keep previous factor
                    pass
            window = {key: 0 for key in window}

        if it > config.n_burn and (it - config.n_burn) % config.thin == 0:
            draws[save_ptr] = theta
            log_posts[save_ptr] = lp
            saved_iters[save_ptr] = it
            save_ptr += 1

    denom = max(config.n_iter, 1)
    rates = {key: totals[key] / denom for key in totals}
    logger.info(
        "chain finished: acceptance mu=%.3f tau2=%.3f alpha=%.3f phi=%.3f",
        rates["mu"], rates["tau2"], rates["alpha"], rates["phi"],
    )
    return ChainSamples(
        draws=draws[:save_ptr],
        log_post=log_posts[:save_ptr],
        iterations=saved_iters[:save_ptr],
        accept_rates=rates,
        param_names=param_names(n_alpha, n_phi),
    )


def default_init(z, n_alpha: int = 8, n_phi: int = 2) -> np.ndarray:
    """Data-driven starting state: mean/variance from the response, flat
    coefficient vectors."""
    z = np.asarray(z, dtype=float)
    init = np.zeros(2 + n_alpha + n_phi)
    init[_MU_IDX] = float(np.mean(z))
    init[_TAU2_IDX] = max(0.01 * float(np.var(z)), 1e-6)
    return init


def fit_mcmc(z, workspace, priors=None, config: SamplerConfig | None = None, init=None) -> ChainSamples:
    """Sample the model posterior for a prepared dataset.

    Bundles the likelihood workspace, priors, and default initial values
    around :func:`run_chain`.
    """
    from .likelihood import PriorSpec, make_log_posterior

    priors = priors or PriorSpec()
    config = config or SamplerConfig()
    n_alpha = workspace.design.n_alpha
    n_phi = workspace.design.n_phi
    if init is None:
        theta0 = default_init(z, n_alpha=n_alpha, n_phi=n_phi)
    else:
        theta0 = np.asarray(init, dtype=float)
    log_post_fn = make_log_posterior(z, workspace, priors)
    return run_chain(z, log_post_fn, config, theta0, n_alpha=n_alpha, n_phi=n_phi)


def summarize(chain: ChainSamples, level: float = 0.99) -> list[dict]:
    """Posterior mean, sd, and equal-tailed interval per parameter."""
    if chain.n_saved < 2:
        raise ValueError("need at least 2 saved draws to summarize")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
    rows = []
    for j, name in enumerate(chain.param_names):
        col = chain.draws[:, j]
        rows.append(
            {
                "parameter": name,
                "mean": float(np.mean(col)),
                "sd": float(np.std(col, ddof=1)),
                "lower": float(np.quantile(col, lo_q)),
                "upper": float(np.quantile(col, hi_q)),
                "level": level,
            }
        )
    return rows


def split_rhat(traces) -> float:
    """Split-R-hat over one or more equal-length 1-D traces."""
    segments = []
    for trace in traces:
        trace = np.asarray(trace, dtype=float)
        half = trace.size // 2
        if half < 2:
            raise ValueError("traces too short to split")
        segments.append(trace[:half])
        segments.append(trace[half : 2 * half])
    seg = np.array(segments)
    m, length = seg.shape
    seg_means = seg.mean(axis=1)
    within = seg.var(axis=1, ddof=1).mean()
    between = length * seg_means.var(ddof=1)
    if within == 0:
        return 1.0
    var_plus = (length - 1) / length * within + between / length
    return float(np.sqrt(var_plus / within))


def effective_sample_size(trace) -> float:
    """ESS via the initial-positive-sequence autocorrelation estimator."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = np.dot(x, x) / n
    if var == 0:
        return float(n)
    acf = np.array([np.dot(x[: n - lag], x[lag:]) / (n * var) for lag in range(1, n // 2)])
    total = 0.0
    for t in range(0, len(acf) - 1, 2):
        pair = acf[t] + acf[t + 1]
        if pair <= 0:
            break
        total += pair
    return float(n / (1.0 + 2.0 * total))


CHAIN_CSV_HEADER = ["iteration"] + list(PARAM_NAMES) + ["log_post"]


def save_chain_csv(path, chain: ChainSamples):
    """Write draws in a fixed shortest-roundtrip format (byte-stable)."""
    from .data import atomic_write_text

    lines = [",".join(["iteration"] + list(chain.param_names) + ["log_post"])]
    for i in range(chain.n_saved):
        vals = [str(int(chain.iterations[i]))]
        vals += [format(v, ".17g") for v in chain.draws[i]]
        vals.append(format(chain.log_post[i], ".17g"))
        lines.append(",".join(vals))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_chain_csv(path) -> ChainSamples:
    raw = np.genfromtxt(path, delimiter=",", names=True)
    raw = np.atleast_1d(raw)
    names = list(raw.dtype.names or [])
    if (
        len(names) < 4
        or names[0] != "iteration"
        or names[-1] != "log_post"
        or names[1:3] != ["mu", "tau2"]
    ):
        raise ValueError(f"{path}: unexpected chain header {names}")
    params = names[1:-1]
    draws = np.column_stack([np.asarray(raw[name], dtype=float) for name in params])
    return ChainSamples(
        draws=draws,
        log_post=np.asarray(raw["log_post"], dtype=float),
        iterations=np.asarray(raw["iteration"], dtype=np.int64),
        accept_rates={},
        param_names=params,
    )
