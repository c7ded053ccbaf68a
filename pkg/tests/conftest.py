"""Shared synthetic-problem builders for the test suite."""

from dataclasses import dataclass

import numpy as np
import pytest

from nonstatgp.data import SpatialDataset
from nonstatgp.design import DesignMatrices, ThetaState, build_design, build_spline_basis
from nonstatgp.simulate import simulate_dataset


@dataclass
class Problem:
    dataset: SpatialDataset
    design: DesignMatrices
    basis: object
    theta: ThetaState

    @property
    def xyz(self):
        return self.dataset.xyz

    @property
    def z(self):
        return self.dataset.rv


DEFAULT_THETA = ThetaState(
    mu=300.0,
    tau2=0.25,
    alpha=np.array([0.4, 0.1, -0.1, 0.05, 0.2, 0.0, 0.1, -0.05]),
    phi=np.array([0.3, -0.5]),
)


def random_theta(rng) -> ThetaState:
    """A random state inside the prior support with moderate ranges."""
    alpha = np.concatenate([[rng.uniform(-0.5, 0.8)], rng.normal(0.0, 0.15, size=7)])
    phi = np.array([rng.uniform(-0.3, 0.8), rng.normal(0.0, 0.3)])
    return ThetaState(
        mu=rng.uniform(280.0, 320.0),
        tau2=rng.uniform(0.05, 1.0),
        alpha=alpha,
        phi=phi,
    )


def make_problem(n=200, seed=0, theta=None, df=3, nu=0.5, missing_frac=0.0) -> Problem:
    theta = theta or DEFAULT_THETA
    dataset = simulate_dataset(n, theta, seed=seed, nu=nu, df=df, missing_frac=missing_frac)
    basis = build_spline_basis(dataset.lat, df=df)
    design = build_design(dataset.lat, dataset.land, basis)
    return Problem(dataset=dataset, design=design, basis=basis, theta=theta)


@pytest.fixture
def small_problem():
    return make_problem(n=120, seed=11)
