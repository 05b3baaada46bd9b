"""First-order perturbation propagation of the joint (state, material) Gaussian."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .assembly import ElementStiffnessBank
from .dynamics import TransitionOperators, build_transition
from .errors import InvalidArgumentError, NumericalError
from .spde import MaterialLaw

PSD_TOL = 1e-8


@dataclass(eq=False)
class AugmentedGaussian:
    """Mean and covariance blocks of the joint density of (v, kappa)."""

    v_mean: np.ndarray
    kappa_mean: np.ndarray
    C_vv: np.ndarray
    C_vk: np.ndarray
    C_kk: np.ndarray
    time_index: int = 0

    @classmethod
    def initial(cls, v0, kappa_mean, kappa_cov) -> "AugmentedGaussian":
        v0 = np.asarray(v0, dtype=float)
        km = np.asarray(kappa_mean, dtype=float)
        n, m = v0.size, km.size
        return cls(v0.copy(), km.copy(), np.zeros((n, n)), np.zeros((n, m)),
                   np.array(kappa_cov, dtype=float, copy=True), 0)

    @property
    def n_state(self) -> int:
        return self.v_mean.size

    def joint_mean(self) -> np.ndarray:
        return np.concatenate([self.v_mean, self.kappa_mean])

    def joint_cov(self) -> np.ndarray:
        return np.block([[self.C_vv, self.C_vk], [self.C_vk.T, self.C_kk]])

    def is_psd(self, tol: float = PSD_TOL) -> bool:
        C = self.joint_cov()
        if np.max(np.abs(C - C.T)) > 1e-10 * max(1.0, np.max(np.abs(C))):
            return False
        w = np.linalg.eigvalsh(0.5 * (C + C.T))
        return w.min() >= -tol * max(np.trace(C), np.finfo(float).tiny)

    def copy(self) -> "AugmentedGaussian":
        return AugmentedGaussian(self.v_mean.copy(), self.kappa_mean.copy(), self.C_vv.copy(),
                                 self.C_vk.copy(), self.C_kk.copy(), self.time_index)


@dataclass(eq=False)
class StochasticSystem:
    """Everything the moment recursions need about one discretised problem.

    ``force_cov_unit`` is the nodal-force covariance for sigma_f = 1; the
    covariance actually used is ``sigma_f**2 * force_cov_unit``.
    """

    mass: np.ndarray
    damping: sp.csr_matrix
    bank: ElementStiffnessBank
    law: MaterialLaw
    force_mean: Callable[[float], np.ndarray]
    force_cov_unit: np.ndarray
    sigma_f: float
    dt: float
    kappa_mean: np.ndarray
    kappa_cov: np.ndarray
    v0: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        n = self.mass.size
        if self.v0 is None:
            self.v0 = np.zeros(2 * n)
        self.kappa_mean = np.asarray(self.kappa_mean, dtype=float)
        self.kappa_cov = np.asarray(self.kappa_cov, dtype=float)
        if self.kappa_mean.shape != (self.bank.n_elements,):
            raise InvalidArgumentError("material mean must have one entry per element")
        if self.force_cov_unit.shape != (n, n):
            raise InvalidArgumentError("force covariance does not match the free DOFs")

    @property
    def n_free(self) -> int:
        return self.mass.size

    @property
    def force_cov(self) -> np.ndarray:
        return self.sigma_f ** 2 * self.force_cov_unit

    def with_sigma_f(self, sigma_f: float) -> "StochasticSystem":
        if sigma_f < 0:
            raise InvalidArgumentError("sigma_f must be non-negative")
        return dataclasses.replace(self, sigma_f=float(sigma_f), _cache={})

    def with_prior(self, kappa_mean=None, kappa_cov=None) -> "StochasticSystem":
        return dataclasses.replace(
            self,
            kappa_mean=self.kappa_mean if kappa_mean is None else kappa_mean,
            kappa_cov=self.kappa_cov if kappa_cov is None else kappa_cov,
            _cache={})

    @cached_property
    def C_zeta(self) -> np.ndarray:
        n = self.n_free
        return build_transition(self.mass, sp.csr_matrix((n, n)), sp.identity(n), self.dt,
                                self.force_cov).C_zeta

    def transition(self, kappa) -> TransitionOperators:
        """A(kappa), B and C_zeta; the last evaluation is cached."""
        kappa = np.asarray(kappa, dtype=float)
        key = kappa.tobytes()
        hit = self._cache.get("transition")
        if hit is not None and hit[0] == key:
            return hit[1]
        K = self.bank.assemble(self.law.coefficients(kappa))
        ops = build_transition(self.mass, self.damping, K, self.dt)
        ops = dataclasses.replace(ops, C_zeta=self.C_zeta)
        self._cache["transition"] = (key, ops)
        return ops

    def jacobian(self, kappa, v_mean) -> sp.csc_matrix:
        return material_jacobian(self.bank, self.mass, self.damping, self.dt, v_mean,
                                 scale=self.law.derivative(kappa))

    def initial_density(self) -> AugmentedGaussian:
        return AugmentedGaussian.initial(self.v0, self.kappa_mean, self.kappa_cov)

    def force_at_step(self, k: int) -> np.ndarray:
        return np.asarray(self.force_mean(k * self.dt), dtype=float)


def material_jacobian(bank: ElementStiffnessBank, M, D, dt: float, v_mean,
                      scale=None) -> sp.csc_matrix:
    """Sensitivity of A(kappa) v to each element's material value.

    Column a is [-(dt^2/2) w; -dt w] with w = M^-1 dK/dkappa_a (u + dt/2 du).
    ``scale`` holds d coefficient / d kappa per element (1 for a linear law).
    ``D`` is accepted for interface symmetry; damping does not depend on kappa.
    """
    m = M.diagonal() if sp.issparse(M) else np.asarray(M, dtype=float)
    v = np.asarray(v_mean, dtype=float)
    n = m.size
    if v.shape != (2 * n,):
        raise InvalidArgumentError(f"state must have length {2 * n}, got {v.shape}")
    if scale is not None and np.shape(scale) != (bank.n_elements,):
        raise InvalidArgumentError("scale must have one entry per element")
    act = bank.element_actions(v[:n] + 0.5 * dt * v[n:])
    if scale is not None:
        act = act * np.asarray(scale, dtype=float)[:, None]
    dofs = bank.dofs
    w = act * np.append(1.0 / m, 0.0)[dofs]
    # CSC built column by column: displacement rows, then velocity rows
    data = np.concatenate([-0.5 * dt ** 2 * w, -dt * w], axis=1)
    rows = np.concatenate([dofs, dofs + n], axis=1)
    keep = np.concatenate([dofs >= 0, dofs >= 0], axis=1)
    indptr = np.concatenate([[0], np.cumsum(keep.sum(axis=1))])
    return sp.csc_matrix((data[keep], rows[keep], indptr), shape=(2 * n, bank.n_elements))


def _symmetrize(C):
    return 0.5 * (C + C.T)


def propagate_moments(current: AugmentedGaussian, ops: TransitionOperators, J, f_mean,
                      material_coupling: bool = True) -> AugmentedGaussian:
    """One step of the mean / covariance / cross-covariance recursion.

    With ``material_coupling`` False the state-material cross covariance is
    taken as zero (material uncertainty held at its prior, not learned).
    """
    A = ops.A
    if not sp.issparse(J):
        J = sp.csc_matrix(J)
    f = np.asarray(f_mean, dtype=float)
    v = A @ current.v_mean + ops.dt * (ops.B @ f)

    AC = A @ current.C_vv
    C = np.asarray(A @ AC.T)
    if material_coupling:
        Z = np.asarray(A @ current.C_vk)
        ZJ = np.asarray(J @ Z.T).T
        C += ZJ + ZJ.T
    else:
        Z = np.zeros_like(current.C_vk)
    W = np.asarray(J @ current.C_kk)
    C += np.asarray(J @ W.T)
    C += ops.C_zeta
    C = _symmetrize(C)
    C_vk = Z + W if material_coupling else np.zeros_like(current.C_vk)

    d = np.diag(C)
    scale = max(np.max(np.abs(d)), np.finfo(float).tiny)
    if not np.all(np.isfinite(C)) or d.min() < -PSD_TOL * scale:
        raise NumericalError(f"predicted covariance lost positivity at step {current.time_index + 1}")
    return AugmentedGaussian(v, current.kappa_mean, C, C_vk, current.C_kk, current.time_index + 1)


def probe_moments(P, g: AugmentedGaussian):
    """Mean and variance of the linear functionals P v under ``g``."""
    return P @ g.v_mean, np.einsum("ij,ij->i", P @ g.C_vv, P)


@dataclass
class ForwardResult:
    times: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    final: AugmentedGaussian
    probe_means: Optional[np.ndarray] = None
    probe_variances: Optional[np.ndarray] = None


def forward_run(system: StochasticSystem, n_steps: int, probes=None) -> ForwardResult:
    """Propagate the prior density for ``n_steps``; record means and diag(C_vv).

    ``probes`` (n_p, 2 n_free) optionally selects linear functionals of the
    state whose exact variances are recorded as well.
    """
    g = system.initial_density()
    n2 = g.n_state
    means = np.empty((n_steps + 1, n2))
    var = np.empty((n_steps + 1, n2))
    P = None if probes is None else np.atleast_2d(np.asarray(probes, dtype=float))
    pm = None if P is None else np.empty((n_steps + 1, len(P)))
    pv = None if P is None else np.empty((n_steps + 1, len(P)))
    ops = system.transition(g.kappa_mean)
    for k in range(n_steps + 1):
        if k:
            J = system.jacobian(g.kappa_mean, g.v_mean)
            g = propagate_moments(g, ops, J, system.force_at_step(k - 1))
        means[k], var[k] = g.v_mean, np.diag(g.C_vv)
        if P is not None:
            pm[k], pv[k] = probe_moments(P, g)
    return ForwardResult(np.arange(n_steps + 1) * system.dt, means, var, g, pm, pv)
