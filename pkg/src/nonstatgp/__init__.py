"""Nonstationary Gaussian-process modeling of gridded return-value fields.

Pipeline pieces: GEV fitting of annual ensemble maxima into per-cell
return values, a nonstationary covariance over a 3-D globe embedding, a
sparse nearest-neighbor likelihood with a dense exact oracle, adaptive
Metropolis samplers, and local-kriging prediction.
"""

__version__ = "0.1.0"

from .covariance import KernelConfig, build_cov_y, build_cov_z, matern, ns_cov
from .data import SpatialDataset, load_return_values, make_dataset
from .design import (
    DesignMatrices,
    SplineBasis,
    ThetaState,
    build_design,
    build_spline_basis,
    eval_range,
    eval_sigma,
)
from .extremes import GevFit, GevParams, fit_gev, gev_cdf, gev_nll, return_value
from .geo import EARTH_RADIUS_MM, euclid, to_xyz
from .inference import ChainSamples, SamplerConfig, fit_mcmc, run_chain, summarize
from .likelihood import (
    NngpWorkspace,
    PriorSpec,
    exact_loglik,
    log_posterior,
    log_prior,
    nngp_loglik,
)
from .neighbors import NeighborGraph, build_neighbor_graph, knn_predict_sets, maxmin_order
from .predict import PredictionResult, local_krige_one, predict_field
from .simulate import simulate_dataset, simulate_field

__all__ = [
    "EARTH_RADIUS_MM",
    "ChainSamples",
    "DesignMatrices",
    "GevFit",
    "GevParams",
    "KernelConfig",
    "NeighborGraph",
    "NngpWorkspace",
    "PredictionResult",
    "PriorSpec",
    "SamplerConfig",
    "SpatialDataset",
    "SplineBasis",
    "ThetaState",
    "build_cov_y",
    "build_cov_z",
    "build_design",
    "build_neighbor_graph",
    "build_spline_basis",
    "euclid",
    "eval_range",
    "eval_sigma",
    "exact_loglik",
    "fit_gev",
    "fit_mcmc",
    "gev_cdf",
    "gev_nll",
    "knn_predict_sets",
    "load_return_values",
    "local_krige_one",
    "log_posterior",
    "log_prior",
    "make_dataset",
    "matern",
    "maxmin_order",
    "nngp_loglik",
    "ns_cov",
    "predict_field",
    "return_value",
    "run_chain",
    "simulate_dataset",
    "simulate_field",
    "summarize",
    "to_xyz",
]
