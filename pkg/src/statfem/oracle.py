"""Reference computations used to check the filter and the moment recursions.

Nothing here calls the propagation or update code it is meant to check: the
Monte Carlo integrator uses the half-step (kick-drift) form of the scheme and
the conditioning routines build joint Gaussians explicitly.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import gamma, kv

from .errors import DivergenceError, InvalidArgumentError, NumericalError, OracleLimitError
from .forward import StochasticSystem

MAX_BATCH_DOFS = 6
MAX_BATCH_OBS_STEPS = 3
MAX_BATCH_STEPS = 200
DEFAULT_CHUNK = 5000


@dataclass
class EnsembleStats:
    """Per-step sample mean and standard deviation of selected state entries."""

    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_samples: int

    @property
    def std_error(self) -> np.ndarray:
        """Standard error of the mean, std / sqrt(N)."""
        return self.std / math.sqrt(self.n_samples)

    @property
    def relative_std_error_of_std(self) -> float:
        """Large-sample relative standard error of a Gaussian sample std."""
        return 1.0 / math.sqrt(2.0 * (self.n_samples - 1))


def matern_kernel(r, nu: float, length_scale: float, sigma: float):
    """Closed-form Matérn covariance sigma^2 2^(1-nu)/Gamma(nu) (s)^nu K_nu(s), s = sqrt(2 nu) r / l."""
    r = np.abs(np.asarray(r, dtype=float))
    s = math.sqrt(2.0 * nu) * r / length_scale
    out = np.full(s.shape, sigma ** 2)
    pos = s > 0
    sp_ = s[pos]
    out[pos] = sigma ** 2 * 2.0 ** (1.0 - nu) / gamma(nu) * sp_ ** nu * kv(nu, sp_)
    return out


def matern32(r, length_scale: float, sigma: float):
    s = math.sqrt(3.0) * np.abs(np.asarray(r, dtype=float)) / length_scale
    return sigma ** 2 * (1.0 + s) * np.exp(-s)


def _stiffness_action(local, dofs, n, coeffs, U):
    """K(c_s) U_s for every sample column s; ``coeffs`` is (n_e, S)."""
    ext = np.vstack([U, np.zeros((1, U.shape[1]))])
    loc = ext[dofs]  # (n_e, k, S)
    r = np.einsum("aij,ajs->ais", local, loc) * coeffs[:, None, :]
    out = np.zeros((n + 1, U.shape[1]))
    np.add.at(out, dofs.ravel(), r.reshape(-1, U.shape[1]))
    return out[:n]


def _sqrt_psd(C):
    C = np.asarray(C, dtype=float)
    if not np.any(C):
        return np.zeros_like(C)
    w, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(w, 0.0, None))


def _chunk_moments(system: StochasticSystem, n_steps, n_samples, seed_seq, probes, kappa_root,
                   force_root):
    """Per-step mean and sum of squared deviations of ``probes @ [U; V]`` over one chunk."""
    rng = np.random.default_rng(seed_seq)
    n = system.n_free
    dt = system.dt
    minv = 1.0 / system.mass
    bank = system.bank
    kappa = system.kappa_mean[:, None] + kappa_root @ rng.standard_normal((kappa_root.shape[1], n_samples))
    coeffs = system.law.coefficients(kappa)
    D = sp.csr_matrix(system.damping)
    U = np.repeat(system.v0[:n, None], n_samples, axis=1)
    V = np.repeat(system.v0[n:, None], n_samples, axis=1)
    means = np.empty((n_steps + 1, len(probes)))
    m2 = np.empty((n_steps + 1, len(probes)))

    def record(k):
        X = probes @ np.vstack([U, V])
        mu = X.mean(axis=1)
        means[k] = mu
        m2[k] = ((X - mu[:, None]) ** 2).sum(axis=1)

    record(0)
    sdt = math.sqrt(dt)
    for k in range(n_steps):
        f = np.asarray(system.force_mean(k * dt), dtype=float)[:, None]
        Uh = U + 0.5 * dt * V
        acc = f - _stiffness_action(bank.local, bank.dofs, n, coeffs, Uh) - D @ V
        V = V + dt * (minv[:, None] * acc)
        if force_root is not None:
            V += minv[:, None] * (sdt * (force_root @ rng.standard_normal((n, n_samples))))
        U = Uh + 0.5 * dt * V
        bad = ~np.isfinite(U).all(axis=0) | (np.abs(U).max(axis=0) > 1e12)
        if np.any(bad):
            raise DivergenceError(f"Monte Carlo sample diverged at step {k + 1}", step=k + 1,
                                  sample=int(np.argmax(bad)))
        record(k + 1)
    return n_samples, means, m2


def mc_forward(system: StochasticSystem, n_steps: int, n_samples: int, seed: int,
               probes=None, chunk: int = DEFAULT_CHUNK,
               executor: Optional[Executor] = None) -> EnsembleStats:
    """Sample mean and std of ``probes @ v`` (default: every displacement).

    ``probes`` is an (n_p, 2 n_free) matrix or a sequence of state indices.
    Every sample draws its own material field and Brownian forcing path. Work
    is split into fixed-size chunks with seeds spawned from ``seed``, so the
    result does not depend on how chunks are scheduled.
    """
    if n_samples < 2:
        raise InvalidArgumentError("Monte Carlo needs at least two samples")
    n = system.n_free
    if probes is None:
        probes = np.eye(n, 2 * n)
    else:
        probes = np.asarray(probes)
        if probes.ndim == 1:
            probes = np.eye(2 * n)[probes.astype(int)]
        probes = probes.astype(float)
    kappa_root = _sqrt_psd(system.kappa_cov)
    C_f = system.force_cov
    force_root = _sqrt_psd(C_f) if np.any(C_f) else None
    sizes = [chunk] * (n_samples // chunk) + ([n_samples % chunk] if n_samples % chunk else [])
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    args = [(system, n_steps, s, ss, probes, kappa_root, force_root) for s, ss in zip(sizes, seeds)]
    if executor is None:
        parts = [_chunk_moments(*a) for a in args]
    else:
        parts = list(executor.map(_chunk_moments, *zip(*args)))
    # Chan et al. pairwise combination of per-chunk moments
    count, mean, m2 = parts[0]
    for nb, mb, m2b in parts[1:]:
        tot = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + delta ** 2 * (count * nb / tot)
        count = tot
    std = np.sqrt(m2 / (count - 1))
    return EnsembleStats(np.arange(n_steps + 1) * system.dt, mean, std, count)


def dense_condition(joint_mean, joint_cov, H_ext, C_e, y):
    """Condition x ~ N(m, P) on y = H x + e by forming the (x, y) joint explicitly."""
    m = np.asarray(joint_mean, dtype=float)
    P = np.asarray(joint_cov, dtype=float)
    H = np.atleast_2d(np.asarray(H_ext, dtype=float))
    R = np.atleast_2d(np.asarray(C_e, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    nx, ny = m.size, y.size
    if P.shape != (nx, nx) or H.shape != (ny, nx) or R.shape != (ny, ny):
        raise InvalidArgumentError("inconsistent shapes for dense conditioning")
    joint = np.zeros((nx + ny, nx + ny))
    joint[:nx, :nx] = P
    joint[:nx, nx:] = P @ H.T
    joint[nx:, :nx] = H @ P
    joint[nx:, nx:] = H @ P @ H.T + R
    mu = np.concatenate([m, H @ m])
    Sxx, Sxy, Syy = joint[:nx, :nx], joint[:nx, nx:], joint[nx:, nx:]
    if np.linalg.cond(Syy) > 1e14:
        raise NumericalError("observation covariance is singular")
    gain_t = np.linalg.solve(Syy, Sxy.T)
    cond_mean = mu[:nx] + gain_t.T @ (y - mu[nx:])
    cond_cov = Sxx - Sxy @ gain_t
    return cond_mean, 0.5 * (cond_cov + cond_cov.T)


def batch_linear_kalman(system: StochasticSystem, H, C_e, obs_steps: Sequence[int], values,
                        n_steps: Optional[int] = None):
    """Final-state marginal from one joint conditioning on every observation.

    Builds the stacked trajectory (v_1, ..., v_N) as an affine map of the
    process-noise increments, using the per-step matrices written out directly
    from the scheme. Restricted to fixed material (zero material covariance),
    at most 6 DOFs and at most 3 observation instants.
    """
    n = system.n_free
    if np.any(system.kappa_cov):
        raise OracleLimitError("batch oracle needs a fixed material field")
    if n > MAX_BATCH_DOFS:
        raise OracleLimitError(f"batch oracle limited to {MAX_BATCH_DOFS} DOFs, got {n}")
    obs_steps = [int(k) for k in obs_steps]
    if len(obs_steps) > MAX_BATCH_OBS_STEPS:
        raise OracleLimitError(f"batch oracle limited to {MAX_BATCH_OBS_STEPS} observation steps")
    N = max(obs_steps) if n_steps is None else int(n_steps)
    if N > MAX_BATCH_STEPS or min(obs_steps) < 1 or max(obs_steps) > N:
        raise OracleLimitError("observation steps must lie in 1..N with N <= %d" % MAX_BATCH_STEPS)
    dt = system.dt
    Minv = np.diag(1.0 / system.mass)
    K = system.bank.assemble(system.law.coefficients(system.kappa_mean)).toarray()
    D = sp.csr_matrix(system.damping).toarray()
    I = np.eye(n)
    # v+ = A v + dt B f + B dbeta, written from the half-step form
    A = np.block([
        [I - dt ** 2 / 2 * Minv @ K, dt * I - dt ** 2 / 2 * Minv @ D - dt ** 3 / 4 * Minv @ K],
        [-dt * Minv @ K, I - dt * Minv @ D - dt ** 2 / 2 * Minv @ K]])
    B = np.vstack([dt / 2 * Minv, Minv])
    Q = B @ (system.force_cov * dt) @ B.T
    d = 2 * n
    mean = np.zeros(N * d)
    cov = np.zeros((N * d, N * d))
    # state k (1-based) = A^k v0 + sum_j A^(k-1-j) (dt B f_j + w_j)
    powers = [np.eye(d)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    drive = [dt * B @ np.asarray(system.force_mean(j * dt), dtype=float) for j in range(N)]
    for k in range(1, N + 1):
        mk = powers[k] @ system.v0 + sum(powers[k - 1 - j] @ drive[j] for j in range(k))
        mean[(k - 1) * d:k * d] = mk
        for l in range(1, N + 1):
            c = np.zeros((d, d))
            for j in range(min(k, l)):
                c += powers[k - 1 - j] @ Q @ powers[l - 1 - j].T
            cov[(k - 1) * d:k * d, (l - 1) * d:l * d] = c
    H = np.atleast_2d(np.asarray(H, dtype=float))
    ny = H.shape[0]
    big_H = np.zeros((ny * len(obs_steps), N * d))
    for i, k in enumerate(obs_steps):
        big_H[i * ny:(i + 1) * ny, (k - 1) * d:k * d] = H
    big_R = np.kron(np.eye(len(obs_steps)), np.atleast_2d(C_e))
    y = np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in values])
    m_post, c_post = dense_condition(mean, cov, big_H, big_R, y)
    return m_post[(N - 1) * d:], c_post[(N - 1) * d:, (N - 1) * d:]
