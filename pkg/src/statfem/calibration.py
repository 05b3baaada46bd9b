"""Empirical-Bayes estimation of the forcing-misspecification hyperparameters.

The objective is the negative log marginal likelihood of the observations,
accumulated from the filter's innovations, minus the log prior.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import Executor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .assimilation import InnovationRecord, ObservationModel, Observations, run_filter
from .errors import InvalidArgumentError, NoFeasiblePointError, NumericalError
from .forward import StochasticSystem

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class UniformPrior:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower < self.upper:
            raise InvalidArgumentError(f"prior bounds out of order: {self.lower} >= {self.upper}")

    def logpdf(self, x: float) -> float:
        if self.lower <= x <= self.upper:
            return -math.log(self.upper - self.lower)
        return -math.inf


@dataclass(frozen=True)
class LogNormalPrior:
    mu: float
    sigma: float

    def logpdf(self, x: float) -> float:
        if not x > 0:
            return -math.inf
        z = (math.log(x) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(x * self.sigma) - 0.5 * _LOG_2PI


@dataclass(frozen=True)
class HyperParams:
    """Hyperparameter values plus an optional prior per parameter name."""

    sigma_f: float
    l_f: Optional[float] = None
    sigma_e: Optional[float] = None
    priors: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if self.sigma_f < 0:
            raise InvalidArgumentError("sigma_f must be non-negative")

    def log_prior(self) -> float:
        total = 0.0
        for name, prior in self.priors.items():
            value = getattr(self, name)
            if value is None:
                raise InvalidArgumentError(f"prior given for unset parameter {name}")
            total += prior.logpdf(value)
        return total


def step_nll(innov: InnovationRecord) -> float:
    """0.5 [r^T S^-1 r + log|S| + n_y log 2 pi] via a Cholesky factor of S."""
    S = np.atleast_2d(innov.S)
    r = np.atleast_1d(innov.residual)
    try:
        c, low = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("innovation covariance is not positive definite") from exc
    logdet = 2.0 * float(np.sum(np.log(np.diag(c))))
    return 0.5 * (float(r @ cho_solve((c, low), r)) + logdet + r.size * _LOG_2PI)


@dataclass
class CalibrationProblem:
    """What a filter run needs besides the hyperparameters.

    ``make(theta)`` returns the system and observation model for ``theta``.
    """

    make: Callable[[HyperParams], tuple]
    data: Observations
    n_steps: int
    start_time: float = 0.0
    stop_time: float = math.inf
    update_material: bool = True


def innovations(theta: HyperParams, problem: CalibrationProblem) -> list:
    system, obs = problem.make(theta)
    res = run_filter(system, obs, problem.data, problem.n_steps, problem.update_material,
                     problem.start_time, problem.stop_time, record=False)
    return res.innovations


def batch_objective(theta: HyperParams, problem: CalibrationProblem) -> float:
    """Sum of per-step NLLs over observation instants minus log p(theta).

    Returns +inf outside the prior support and when the filter breaks down.
    """
    lp = theta.log_prior()
    if lp == -math.inf:
        return math.inf
    try:
        total = sum(step_nll(i) for i in innovations(theta, problem))
    except NumericalError as exc:
        log.warning("objective is +inf at %s: %s", theta, exc)
        return math.inf
    return total - lp


def window_objective(records: Sequence[InnovationRecord], dt: float, t0: float, t1: float) -> float:
    """NLL contribution of the innovations whose time lies in [t0, t1)."""
    return sum(step_nll(r) for r in records if t0 <= r.step * dt < t1)


def sigma_f_grid(lower: float, upper: float, count: int, spacing: str = "log",
                 priors: Optional[dict] = None) -> list:
    if count < 1:
        raise InvalidArgumentError("grid needs at least one point")
    if spacing == "log":
        values = np.geomspace(lower, upper, count)
    elif spacing == "linear":
        values = np.linspace(lower, upper, count)
    else:
        raise InvalidArgumentError(f"unknown spacing {spacing!r}")
    return [HyperParams(float(v), priors=dict(priors or {})) for v in values]


def map_search(grid: Sequence[HyperParams], problem: CalibrationProblem,
               executor: Optional[Executor] = None):
    """Grid minimiser of the objective; ties go to the smaller sigma_f.

    Returns (theta_star, objective values in grid order).
    """
    if len(grid) == 0:
        raise InvalidArgumentError("empty hyperparameter grid")
    if executor is None:
        values = [batch_objective(t, problem) for t in grid]
    else:
        values = list(executor.map(batch_objective, grid, [problem] * len(grid)))
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    if not finite.any():
        raise NoFeasiblePointError("objective is +inf at every grid point")
    best = values[finite].min()
    ties = [i for i in np.flatnonzero(values == best)]
    star = min(ties, key=lambda i: grid[i].sigma_f)
    return grid[star], values


def system_maker(build_system: Callable[..., StochasticSystem], obs: ObservationModel):
    """``make`` for problems where only sigma_f (and optionally sigma_e) vary."""
    def make(theta: HyperParams):
        o = obs if theta.sigma_e is None else obs.with_sigma_e(theta.sigma_e)
        return build_system(sigma_f=theta.sigma_f), o
    return make
