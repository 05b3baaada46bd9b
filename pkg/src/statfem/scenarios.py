"""Turn a validated configuration into operators, priors, sensors and synthetic data."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import (assemble_gram, assemble_mass, assemble_stiffness,
                       rayleigh_damping)
from .assimilation import ObservationModel, Observations, build_observation
from .config import ScenarioConfig
from .dynamics import simulate_path, stability_limit
from .errors import ConfigError, PlacementError, PointNotFoundError
from .forward import StochasticSystem
from .mesh import (Mesh, build_interval_mesh, build_plate_with_hole, edge_submesh,
                   load_mesh, locate_point)
from .spde import (MaterialLaw, MaternParams, build_force_covariance,
                   build_material_covariance, nodal_to_element, psd_factor)


def nominal_period(cfg: ScenarioConfig) -> float:
    """Time unit for ``unit = period``: natural period (SDOF) or wave transit time."""
    t = cfg.time
    if t.period is not None:
        return t.period
    kind, mat, geo = cfg.scenario.kind, cfg.material, cfg.geometry
    if kind == "sdof":
        return 2.0 * math.pi * math.sqrt(mat.density / mat.base)
    speed = math.sqrt(mat.base / mat.density)
    if kind == "bar1d":
        return geo.length / speed
    if kind == "plate2d":
        return geo.ly / speed
    raise ConfigError("custom scenarios need an explicit period", "time.period")


def time_scale(cfg: ScenarioConfig) -> float:
    return nominal_period(cfg) if cfg.time.unit == "period" else 1.0


def build_mesh(cfg: ScenarioConfig) -> Mesh:
    kind, g = cfg.scenario.kind, cfg.geometry
    if kind == "sdof":
        return build_interval_mesh(1.0, 1)
    if kind == "bar1d":
        return build_interval_mesh(g.length, g.n_elements)
    if kind == "plate2d":
        return build_plate_with_hole(g.lx, g.ly, g.radius, (g.center_x, g.center_y),
                                     g.n_cells, g.n_ring, g.n_layers)
    path = g.mesh_file if os.path.isabs(g.mesh_file) else os.path.join(cfg.base_dir, g.mesh_file)
    with open(path, encoding="utf-8") as fh:
        return load_mesh(fh.read())


def _mass_density(cfg: ScenarioConfig) -> float:
    # the SDOF is one unit element whose free end carries half the element mass
    return 2.0 * cfg.material.density if cfg.scenario.kind == "sdof" else cfg.material.density


def _sensor_points(cfg: ScenarioConfig, mesh: Mesh) -> np.ndarray:
    s = cfg.sensors
    if s.coords is not None:
        pts = np.array(s.coords, dtype=float)
    else:
        x0, y0, x1, y1, n = s.line
        n = int(n)
        pts = np.column_stack([np.linspace(x0, x1, n), np.linspace(y0, y1, n)])
    if pts.shape[1] != mesh.dimension:
        raise ConfigError(f"sensor points need {mesh.dimension} coordinates", "sensors.coords")
    return pts


def _interp_row(mesh: Mesh, point) -> np.ndarray:
    elem, w = locate_point(mesh, np.atleast_1d(point))
    row = np.zeros(mesh.n_free)
    dofs = mesh.free_index[mesh.elements[elem]]
    keep = dofs >= 0
    np.add.at(row, dofs[keep], w[keep])
    return row


def _pulse(start, rise, fall, peak):
    def g(t):
        s = t - start
        if 0.0 <= s < rise:
            return peak * s / rise
        if rise <= s <= rise + fall:
            return peak * (1.0 - (s - rise) / fall)
        return 0.0
    return g


def _sines(amplitude, omegas):
    omegas = np.asarray(omegas, dtype=float)

    def g(t):
        return amplitude * float(np.sum(np.sin(omegas * t)))
    return g


@dataclass(eq=False)
class Scenario:
    """Discretised problem built from a configuration."""

    config: ScenarioConfig

    @cached_property
    def mesh(self) -> Mesh:
        return build_mesh(self.config)

    @property
    def period(self) -> float:
        return nominal_period(self.config)

    @property
    def dt(self) -> float:
        return self.config.time.dt * time_scale(self.config)

    @property
    def n_steps(self) -> int:
        return int(round(self.config.time.duration / self.config.time.dt))

    @property
    def observation_every(self) -> int:
        return self.config.time.observation_every

    @property
    def burn_in_time(self) -> float:
        return self.config.time.burn_in * time_scale(self.config)

    @property
    def stop_time(self) -> float:
        stop = self.config.time.stop
        return math.inf if stop is None else stop * time_scale(self.config)

    @cached_property
    def law(self) -> MaterialLaw:
        m = self.config.material
        return MaterialLaw(m.law, m.base, m.sigma if m.law == "lognormal" else 0.0)

    @cached_property
    def _operators(self):
        mesh = self.mesh
        base = self.config.material.base
        K, bank = assemble_stiffness(mesh, np.full(mesh.n_elements, base))
        M = assemble_mass(mesh, _mass_density(self.config))
        return K, bank, M

    @property
    def bank(self):
        return self._operators[1]

    @property
    def mass(self) -> np.ndarray:
        return self._operators[2].diagonal()

    @property
    def nominal_stiffness(self) -> sp.csr_matrix:
        return self._operators[0]

    @cached_property
    def damping(self) -> sp.csr_matrix:
        d = self.config.damping
        K, _, M = self._operators
        if d.kind == "none":
            return sp.csr_matrix(K.shape)
        if d.kind == "mass_proportional":
            return (d.a0 * M).tocsr()
        if d.kind == "rayleigh":
            w1, w2 = 2.0 * math.pi * d.frequency1, 2.0 * math.pi * d.frequency2
        else:
            mat = self.config.material
            speed = math.sqrt(mat.base / mat.density)
            extent = np.ptp(self.mesh.nodes[:, 0])
            w1, w2 = speed / extent, speed / (2.0 * self.mesh.min_edge_length())
        return rayleigh_damping(M, K, w1, w2, d.ratio)

    @cached_property
    def material_prior(self):
        """Element-level mean and covariance of kappa."""
        m = self.config.material
        n_e = self.mesh.n_elements
        if m.field == "independent" or self.config.scenario.kind == "sdof":
            return np.zeros(n_e), m.sigma ** 2 * np.eye(n_e)
        p = MaternParams(m.nu, m.length_scale, m.sigma, self.mesh.dimension)
        field = build_material_covariance(self.mesh, p)
        return nodal_to_element(self.mesh, np.zeros(self.mesh.n_nodes), field.nodal_covariance)

    @cached_property
    def load_vector(self) -> np.ndarray:
        """Nodal force for a unit load intensity on the free DOFs."""
        f = self.config.forcing
        mesh = self.mesh
        if f.load == "point":
            return _interp_row(mesh, f.point)
        if f.load == "body":
            return assemble_gram(mesh).diagonal()[mesh.free_nodes]
        sub, parent = self._edge
        share = assemble_gram(sub).diagonal()
        out = np.zeros(mesh.n_free)
        idx = mesh.free_index[parent]
        keep = idx >= 0
        out[idx[keep]] = share[keep]
        return out

    @cached_property
    def _edge(self):
        f = self.config.forcing
        return edge_submesh(self.mesh, f.edge_axis, f.edge_value)

    @cached_property
    def force_cov_unit(self) -> np.ndarray:
        """Nodal-force covariance per unit time for sigma_f = 1."""
        f = self.config.forcing
        if f.noise == "point":
            b = self.load_vector
            return np.outer(b, b)
        p = MaternParams(f.nu_f, f.l_f, 1.0, 1 if f.load == "edge" else self.mesh.dimension)
        if f.load == "body":
            return build_force_covariance(self.mesh, p)
        sub, parent = self._edge
        C_sub = build_force_covariance(sub, p)
        idx = self.mesh.free_index[parent]
        keep = np.flatnonzero(idx >= 0)
        P = np.zeros((self.mesh.n_free, len(parent)))
        P[idx[keep], keep] = 1.0
        return P @ C_sub @ P.T

    @cached_property
    def time_profile(self) -> Callable[[float], float]:
        f = self.config.forcing
        ts = time_scale(self.config)
        if f.law == "triangular_pulse":
            return _pulse(f.start * ts, f.rise * ts, f.fall * ts, f.amplitude)
        omegas = (f.angular_frequencies if f.angular_frequencies is not None
                  else [2.0 * math.pi * x for x in f.frequencies])
        return _sines(f.amplitude, omegas)

    def force_mean(self, t: float) -> np.ndarray:
        return self.time_profile(t) * self.load_vector

    @property
    def mean_load(self) -> float:
        """Time average of the deterministic load intensity over the horizon."""
        T = self.n_steps * self.dt
        ts = np.linspace(0.0, T, 20001)
        return float(np.trapezoid([self.time_profile(t) for t in ts], ts) / T)

    def system(self, sigma_f: Optional[float] = None, kappa_mean=None,
               kappa_cov=None) -> StochasticSystem:
        km, kc = self.material_prior
        return StochasticSystem(
            self.mass, self.damping, self.bank, self.law, self.force_mean, self.force_cov_unit,
            self.config.forcing.sigma_f if sigma_f is None else float(sigma_f), self.dt,
            km if kappa_mean is None else kappa_mean, kc if kappa_cov is None else kappa_cov)

    @cached_property
    def sensor_points(self) -> np.ndarray:
        return _sensor_points(self.config, self.mesh)

    def observation_model(self, sigma_e: float) -> ObservationModel:
        return build_observation(self.mesh, self.sensor_points, sigma_e)

    @cached_property
    def probe_points(self) -> np.ndarray:
        """Output probes: configured points, else the bar tip / SDOF mass, else sensors."""
        s = self.config.sensors
        kind = self.config.scenario.kind
        if kind == "plate2d":
            extra = np.array(s.probes, dtype=float) if s.probes else np.empty((0, 2))
            return np.vstack([self.sensor_points, extra])
        if s.probes:
            return np.array(s.probes, dtype=float)
        if kind in ("sdof", "bar1d"):
            return np.array([[self.mesh.nodes[:, 0].max()]])
        return self.sensor_points

    @cached_property
    def probe_rows(self) -> np.ndarray:
        return np.array([_interp_row(self.mesh, p) for p in self.probe_points])

    def observation_steps(self) -> np.ndarray:
        return np.arange(self.observation_every, self.n_steps + 1, self.observation_every)


def check_physics(cfg: ScenarioConfig) -> None:
    """Load-time checks that need the mesh: sensors inside, dt below the limit."""
    sc = Scenario(cfg)
    for i, p in enumerate(sc.sensor_points):
        try:
            locate_point(sc.mesh, p)
        except PointNotFoundError as exc:
            raise ConfigError(f"sensor {i} at {tuple(p)} lies outside the domain",
                              "sensors.coords") from exc
    for p in sc.probe_points:
        try:
            locate_point(sc.mesh, p)
        except PointNotFoundError as exc:
            raise ConfigError(f"probe {tuple(p)} lies outside the domain", "sensors.probes") from exc
    dt_max = stability_limit(sc.mass, sc.nominal_stiffness)
    if not sc.dt < dt_max:
        raise ConfigError(f"dt = {sc.dt:.6g} s is not below the stability limit {dt_max:.6g} s",
                          "time.dt")


@dataclass(eq=False)
class TruthRecord:
    kappa: np.ndarray
    coefficients: np.ndarray
    times: np.ndarray
    trajectory: np.ndarray
    observation_steps: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    sigma_e: float

    @property
    def observations(self) -> Observations:
        return Observations(self.times[self.observation_steps], self.noisy)


def make_truth(scenario: Scenario, truth_seed: Optional[int] = None,
               noise_seed: Optional[int] = None, sigma_f: Optional[float] = None) -> TruthRecord:
    """Draw a material field, simulate one noisy path and sample noisy sensors.

    The truth seed drives the material draw and the forcing path through two
    spawned streams; the noise seed drives the measurement errors.
    """
    cfg = scenario.config
    seeds = cfg.seeds
    truth_seed = seeds.truth if truth_seed is None else truth_seed
    noise_seed = seeds.noise if noise_seed is None else noise_seed
    mat_ss, path_ss = np.random.SeedSequence(truth_seed).spawn(2)
    km, kc = scenario.material_prior
    if cfg.material.true_coefficient is not None:
        coeff = np.full(scenario.mesh.n_elements, cfg.material.true_coefficient)
        if cfg.material.law == "additive":
            kappa = coeff - cfg.material.base
        else:
            kappa = np.log(coeff / scenario.law.coefficients(np.zeros_like(coeff)))
    else:
        kappa = km + psd_factor(kc) @ np.random.default_rng(mat_ss).standard_normal(km.size)
        coeff = scenario.law.coefficients(kappa)
    sf = cfg.forcing.sigma_f if sigma_f is None else sigma_f
    path = simulate_path(scenario.mass, scenario.damping, scenario.bank, coeff, scenario.force_mean,
                         sf ** 2 * scenario.force_cov_unit, scenario.dt, scenario.n_steps,
                         np.random.default_rng(path_ss))
    obs0 = scenario.observation_model(1.0)
    steps = scenario.observation_steps()
    clean = path[steps] @ obs0.H.T
    if cfg.sensors.sigma_e is not None:
        sigma_e = cfg.sensors.sigma_e
    else:
        sigma_e = cfg.sensors.sigma_e_relative * float(np.std(path @ obs0.H[0]))
        if not sigma_e > 0:
            raise PlacementError("first sensor never moves; relative noise level is zero")
    noisy = clean + sigma_e * np.random.default_rng(noise_seed).standard_normal(clean.shape)
    times = np.arange(scenario.n_steps + 1) * scenario.dt
    return TruthRecord(kappa, coeff, times, path, steps, clean, noisy, sigma_e)
