"""Sequential Bayesian filtering of the augmented (state, material) Gaussian."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (AlignmentError, InvalidArgumentError, PlacementError,
                     PointNotFoundError, SingularInnovationError)
from .forward import AugmentedGaussian, StochasticSystem, probe_moments, propagate_moments
from .mesh import Mesh, locate_point

log = logging.getLogger(__name__)

ALIGN_TOL = 1e-9
CONTRACTION_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Linear displacement sensors y = H v + e, e ~ N(0, C_e).

    Rows of H sum to one over the displacement columns, except where a
    sensor's element touches a Dirichlet node, whose weight multiplies a
    zero displacement and is dropped.
    """

    H: np.ndarray
    C_e: np.ndarray
    coords: np.ndarray

    @property
    def n_sensors(self) -> int:
        return self.H.shape[0]

    def with_sigma_e(self, sigma_e: float) -> "ObservationModel":
        if not sigma_e > 0:
            raise InvalidArgumentError("sigma_e must be positive")
        return ObservationModel(self.H, sigma_e ** 2 * np.eye(self.n_sensors), self.coords)


@dataclass(frozen=True, eq=False)
class InnovationRecord:
    residual: np.ndarray
    S: np.ndarray
    step: int


def build_observation(mesh: Mesh, coords, sigma_e: float) -> ObservationModel:
    """One interpolation row per sensor, mapped onto the free displacement DOFs."""
    if not sigma_e > 0:
        raise InvalidArgumentError(f"sigma_e must be positive, got {sigma_e}")
    pts = np.asarray(coords, dtype=float)
    if mesh.dimension == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[1] != mesh.dimension or len(pts) == 0:
        raise InvalidArgumentError("sensor coordinates must be a non-empty list of points")
    n = mesh.n_free
    H = np.zeros((len(pts), 2 * n))
    free_index = mesh.free_index
    for i, p in enumerate(pts):
        try:
            elem, w = locate_point(mesh, p)
        except PointNotFoundError as exc:
            raise PlacementError(f"sensor {i} at {tuple(p)} is outside the mesh") from exc
        dofs = free_index[mesh.elements[elem]]
        keep = (dofs >= 0) & (w > 0)
        if not np.any(keep):
            raise PlacementError(f"sensor {i} at {tuple(p)} only sees clamped nodes")
        np.add.at(H[i], dofs[keep], w[keep])
    return ObservationModel(H, sigma_e ** 2 * np.eye(len(pts)), pts)


def predict(posterior: AugmentedGaussian, system: StochasticSystem,
            update_material: bool = True) -> AugmentedGaussian:
    """Prediction with A and J linearised at the posterior means."""
    ops = system.transition(posterior.kappa_mean)
    J = system.jacobian(posterior.kappa_mean, posterior.v_mean)
    return propagate_moments(posterior, ops, J, system.force_at_step(posterior.time_index),
                             material_coupling=update_material)


def update(prior: AugmentedGaussian, obs: ObservationModel, y,
           update_material: bool = True):
    """Condition on one synchronous observation vector; returns (posterior, innovation)."""
    y = np.asarray(y, dtype=float)
    H = obs.H
    if y.shape != (H.shape[0],):
        raise InvalidArgumentError(f"expected {H.shape[0]} observations, got shape {y.shape}")
    if H.shape[1] != prior.n_state:
        raise InvalidArgumentError("observation matrix does not match the state size")
    HC = H @ prior.C_vv
    S = HC @ H.T + obs.C_e
    S = 0.5 * (S + S.T)
    try:
        fac = cho_factor(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError(
            f"innovation covariance is not positive definite at step {prior.time_index}") from exc
    r = y - H @ prior.v_mean
    Sr = cho_solve(fac, r)
    X = cho_solve(fac, HC)  # S^-1 H C_vv
    v = prior.v_mean + HC.T @ Sr
    C_vv = prior.C_vv - HC.T @ X
    C_vv = 0.5 * (C_vv + C_vv.T)
    if update_material:
        HCk = H @ prior.C_vk
        Y = cho_solve(fac, HCk)
        kappa = prior.kappa_mean + HCk.T @ Sr
        C_kk = prior.C_kk - HCk.T @ Y
        C_kk = 0.5 * (C_kk + C_kk.T)
        C_vk = prior.C_vk - HC.T @ Y
    else:
        kappa, C_kk, C_vk = prior.kappa_mean, prior.C_kk, prior.C_vk
    post = AugmentedGaussian(v, kappa, C_vv, C_vk, C_kk, prior.time_index)
    return post, InnovationRecord(r, S, prior.time_index)


def _contraction_excess(before: np.ndarray, after: np.ndarray) -> float:
    """Largest diagonal growth beyond a relative round-off slack."""
    return float(np.max(after - before - CONTRACTION_SLACK * np.abs(before), initial=-np.inf))


@dataclass
class Observations:
    """Synchronous sensor records: ``times`` (n_t,) and ``values`` (n_t, n_y)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.times.size:
            raise InvalidArgumentError("one observation row per time is required")

    def step_indices(self, dt: float) -> np.ndarray:
        ratio = self.times / dt
        k = np.rint(ratio)
        bad = np.abs(ratio - k) > ALIGN_TOL * np.maximum(1.0, np.abs(k))
        if np.any(bad):
            t = self.times[np.argmax(bad)]
            raise AlignmentError(f"observation time {t!r} is not a multiple of dt={dt!r}")
        return k.astype(int)


@dataclass
class FilterResult:
    times: np.ndarray
    means: Optional[np.ndarray]
    variances: Optional[np.ndarray]
    final: AugmentedGaussian
    innovations: list = field(default_factory=list)
    update_steps: list = field(default_factory=list)
    kappa_means: list = field(default_factory=list)
    kappa_variances: list = field(default_factory=list)
    contraction: list = field(default_factory=list)  # per update: (state excess, material excess)
    probe_means: Optional[np.ndarray] = None
    probe_variances: Optional[np.ndarray] = None


def run_filter(system: StochasticSystem, obs: ObservationModel, data: Optional[Observations],
               n_steps: int, update_material: bool = True, start_time: float = 0.0,
               stop_time: float = np.inf, record: bool = True,
               check_contraction: bool = False, probes=None) -> FilterResult:
    """Alternate prediction and update over ``n_steps`` steps.

    Observations outside [start_time, stop_time] or beyond the horizon are
    ignored. With ``record`` False only the innovations and the final density
    are kept, which is what calibration needs. ``probes`` (n_p, 2 n_free)
    selects linear functionals whose exact posterior variances are recorded.
    """
    schedule = {}
    if data is not None and data.times.size:
        if data.values.shape[1] != obs.n_sensors:
            raise InvalidArgumentError("observation columns do not match the sensor count")
        for row, k in enumerate(data.step_indices(system.dt)):
            t = k * system.dt
            if 0 < k <= n_steps and start_time - ALIGN_TOL * system.dt <= t <= stop_time + ALIGN_TOL * system.dt:
                schedule[int(k)] = row
    g = system.initial_density()
    n2 = g.n_state
    means = np.empty((n_steps + 1, n2)) if record else None
    var = np.empty((n_steps + 1, n2)) if record else None
    if record:
        means[0], var[0] = g.v_mean, np.diag(g.C_vv)
    res = FilterResult(np.arange(n_steps + 1) * system.dt, means, var, g)
    P = None if probes is None else np.atleast_2d(np.asarray(probes, dtype=float))
    if P is not None:
        res.probe_means = np.empty((n_steps + 1, len(P)))
        res.probe_variances = np.empty((n_steps + 1, len(P)))
        res.probe_means[0], res.probe_variances[0] = probe_moments(P, g)
    for k in range(1, n_steps + 1):
        g = predict(g, system, update_material)
        row = schedule.get(k)
        if row is not None:
            before = (np.diag(g.C_vv).copy(), np.diag(g.C_kk).copy()) if check_contraction else None
            g, innov = update(g, obs, data.values[row], update_material)
            res.innovations.append(innov)
            res.update_steps.append(k)
            if record:
                res.kappa_means.append(g.kappa_mean.copy())
                res.kappa_variances.append(np.diag(g.C_kk).copy())
            if before is not None:
                res.contraction.append((_contraction_excess(before[0], np.diag(g.C_vv)),
                                        _contraction_excess(before[1], np.diag(g.C_kk))))
            if update_material and log.isEnabledFor(logging.DEBUG):
                log.debug("step %d: min eig C_kk = %.3e", k, np.linalg.eigvalsh(g.C_kk)[0])
        if record:
            means[k], var[k] = g.v_mean, np.diag(g.C_vv)
        if P is not None:
            res.probe_means[k], res.probe_variances[k] = probe_moments(P, g)
    res.final = g
    return res


def rmse(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def probe_rows(mesh: Mesh, coords: Sequence) -> np.ndarray:
    """Displacement interpolation rows (no noise) for arbitrary output probes."""
    return build_observation(mesh, coords, 1.0).H
