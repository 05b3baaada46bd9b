"""Stochastic position-Verlet (explicit central difference) time stepping.

The state is v = [u; du/dt] over the free DOFs and one step reads

    v_{n+1} = A(kappa) v_n + dt B f_n + B dbeta_n,   dbeta_n ~ N(0, C_f dt).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .errors import DivergenceError, InvalidArgumentError, NumericalError
from .spde import psd_factor

DIVERGENCE_THRESHOLD = 1e12


def _inverse_mass(M) -> np.ndarray:
    m = M.diagonal() if sp.issparse(M) else np.asarray(M, dtype=float)
    if m.ndim == 2:
        if np.any(m - np.diag(np.diag(m))):
            raise InvalidArgumentError("explicit stepping needs a diagonal (lumped) mass")
        m = np.diag(m)
    if np.any(~(m > 0)):
        raise InvalidArgumentError("mass diagonal must be strictly positive")
    return 1.0 / m


@dataclass(frozen=True, eq=False)
class TransitionOperators:
    A: sp.csr_matrix
    B: sp.csr_matrix
    C_zeta: np.ndarray
    dt: float

    @property
    def n_free(self) -> int:
        return self.B.shape[1]


def build_transition(M, D, K, dt: float, force_cov=None) -> TransitionOperators:
    """Assemble A, B and the process-noise covariance B (C_f dt) B^T.

    ``M`` is the lumped mass (sparse diagonal or vector), ``D`` and ``K`` are
    free-DOF sparse or dense matrices.
    """
    if not dt > 0:
        raise InvalidArgumentError(f"time step must be positive, got {dt}")
    minv = _inverse_mass(M)
    n = minv.size
    Minv = sp.diags(minv)
    K = sp.csr_matrix(K)
    D = sp.csr_matrix(D) if D is not None else sp.csr_matrix((n, n))
    if K.shape != (n, n) or D.shape != (n, n):
        raise InvalidArgumentError("mass, damping and stiffness sizes differ")
    I = sp.identity(n, format="csr")
    MK = Minv @ K
    MD = Minv @ D
    A = sp.bmat([
        [I - 0.5 * dt ** 2 * MK, dt * (I - 0.5 * dt * MD - 0.25 * dt ** 2 * MK)],
        [-dt * MK, I - dt * MD - 0.5 * dt ** 2 * MK],
    ], format="csr")
    B = sp.vstack([0.5 * dt * Minv, Minv], format="csr")
    if force_cov is None:
        C_zeta = np.zeros((2 * n, 2 * n))
    else:
        C_f = np.asarray(force_cov, dtype=float)
        if C_f.shape != (n, n):
            raise InvalidArgumentError(f"force covariance must be {n}x{n}, got {C_f.shape}")
        BC = B @ (C_f * dt)
        C_zeta = np.asarray(B @ BC.T)
        C_zeta = 0.5 * (C_zeta + C_zeta.T)
    return TransitionOperators(A, B, C_zeta, float(dt))


def stability_limit(M, K, tol: float = 1e-6, max_iter: int = 10_000) -> float:
    """Largest stable undamped step 2 / sqrt(lambda_max(M^-1 K)), by power iteration."""
    minv = _inverse_mass(M)
    s = np.sqrt(minv)
    Ks = sp.diags(s) @ sp.csr_matrix(K) @ sp.diags(s)  # symmetric, same spectrum
    n = Ks.shape[0]
    x = np.random.default_rng(0).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = Ks @ x
        new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            raise NumericalError("stiffness is zero; no stability limit")
        x = y / norm
        if lam > 0 and abs(new - lam) <= tol * abs(new):
            # one more Rayleigh quotient from the improved vector
            lam = float(x @ (Ks @ x))
            return 2.0 / np.sqrt(lam)
        lam = new
    raise NumericalError(f"power iteration did not converge in {max_iter} steps")


def split_state(v):
    v = np.asarray(v)
    n = v.shape[0] // 2
    return v[:n], v[n:]


def step(ops: TransitionOperators, v, f_mean, noise=None) -> np.ndarray:
    """One affine Verlet step; ``noise`` is the already-mapped increment B dbeta."""
    v = np.asarray(v, dtype=float)
    f = np.asarray(f_mean, dtype=float)
    if v.shape != (ops.A.shape[0],) or f.shape != (ops.n_free,):
        raise InvalidArgumentError(
            f"state {v.shape} / force {f.shape} incompatible with {ops.n_free} free DOFs")
    out = ops.A @ v + ops.dt * (ops.B @ f)
    if noise is not None:
        noise = np.asarray(noise, dtype=float)
        if noise.shape != v.shape:
            raise InvalidArgumentError("noise must have the state's shape")
        out = out + noise
    return out


def simulate_path(M, D, bank, coefficients, force_mean: Callable[[float], np.ndarray],
                  force_cov, dt: float, n_steps: int, rng: Optional[np.random.Generator] = None,
                  v0=None) -> np.ndarray:
    """Sample one trajectory, shape (n_steps + 1, 2 n_free).

    A fresh Brownian increment sqrt(dt) L_f xi is drawn every step; with a zero
    force covariance the path is the deterministic Verlet trajectory.
    """
    K = bank.assemble(coefficients)
    ops = build_transition(M, D, K, dt)
    n = ops.n_free
    C_f = None if force_cov is None else np.asarray(force_cov, dtype=float)
    noisy = C_f is not None and np.any(C_f)
    if noisy:
        if rng is None:
            raise InvalidArgumentError("a random generator is required for a noisy path")
        L = psd_factor(C_f)
        noise_root = np.sqrt(dt) * L
    out = np.empty((n_steps + 1, 2 * n))
    out[0] = np.zeros(2 * n) if v0 is None else np.asarray(v0, dtype=float)
    for k in range(n_steps):
        zeta = ops.B @ (noise_root @ rng.standard_normal(n)) if noisy else None
        out[k + 1] = step(ops, out[k], force_mean(k * dt), zeta)
        if not np.all(np.isfinite(out[k + 1])) or np.linalg.norm(out[k + 1]) > DIVERGENCE_THRESHOLD:
            raise DivergenceError(f"state norm exceeded {DIVERGENCE_THRESHOLD:g} at step {k + 1}",
                                  step=k + 1)
    return out
