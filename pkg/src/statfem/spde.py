"""Matérn random fields on the FE mesh through the discretised SPDE
tau (eta^2 - Laplacian)^beta s = white noise, with homogeneous Neumann
conditions on every boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cholesky
from scipy.sparse.linalg import splu

from .assembly import assemble_gram, assemble_stiffness
from .errors import InvalidArgumentError, UnsupportedSmoothnessError
from .mesh import Mesh

_BETA_TOL = 1e-9


@dataclass(frozen=True)
class MaternParams:
    nu: float
    length_scale: float
    sigma: float
    dim: int = 1

    def __post_init__(self):
        if not self.nu > 0:
            raise InvalidArgumentError(f"smoothness nu must be positive, got {self.nu}")
        if not self.length_scale > 0:
            raise InvalidArgumentError(f"length scale must be positive, got {self.length_scale}")
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be non-negative, got {self.sigma}")
        if self.dim not in (1, 2, 3):
            raise InvalidArgumentError(f"dimension must be 1, 2 or 3, got {self.dim}")

    @property
    def beta(self) -> float:
        return self.nu / 2.0 + self.dim / 4.0


def admissible_nu(dim: int, count: int = 3):
    """Smoothness values giving an integer operator exponent in ``dim`` dimensions."""
    return [2.0 * b - dim / 2.0 for b in range(1, count + 1)]


def matern_to_spde(p: MaternParams):
    """Map Matérn (nu, l, sigma) to the SPDE (eta, beta, tau).

    tau is ``inf`` for sigma = 0 (the field is identically zero).
    """
    beta = p.beta
    if abs(beta - round(beta)) > _BETA_TOL or round(beta) < 1:
        raise UnsupportedSmoothnessError(
            f"nu={p.nu} in d={p.dim} gives beta={beta:g}; only integer beta is supported, "
            f"use nu in {admissible_nu(p.dim)}")
    eta = math.sqrt(2.0 * p.nu) / p.length_scale
    if p.sigma == 0.0:
        return eta, int(round(beta)), math.inf
    d = p.dim
    log_tau2 = (math.lgamma(p.nu) - 2.0 * math.log(p.sigma) - math.lgamma(p.nu + d / 2.0)
                - (d / 2.0) * math.log(4.0 * math.pi) - p.nu * math.log(2.0 * p.nu / p.length_scale ** 2))
    return eta, int(round(beta)), math.exp(0.5 * log_tau2)


def psd_factor(C, jitter_scale: float = 1e-10) -> np.ndarray:
    """Lower-triangular L with L L^T ~= C.

    Plain Cholesky first; on failure a jitter of ``jitter_scale * trace / n``
    is added. A rank-deficient C (e.g. a point load) that still fails falls
    back to a symmetric eigen-factor, which is not triangular.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if n == 0 or not np.any(C):
        return np.zeros_like(C)
    try:
        return cholesky(C, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = jitter_scale * np.trace(C) / n
    try:
        return cholesky(C + jitter * np.eye(n), lower=True)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (C + C.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


@dataclass(frozen=True, eq=False)
class SpdeField:
    params: MaternParams
    operator: sp.csr_matrix  # eta^2 M + K of the auxiliary problem, scaled by tau
    gram: sp.csr_matrix
    beta: int
    nodal_covariance: np.ndarray
    cholesky_factor: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodal_covariance.shape[0]


def _whitened_inverse(mesh: Mesh, p: MaternParams):
    """Return (L^-1 M^{1/2}, gram, base operator, beta) for the lumped SPDE."""
    if p.dim != mesh.dimension:
        raise InvalidArgumentError(
            f"Matérn dimension {p.dim} does not match mesh dimension {mesh.dimension}")
    eta, beta, tau = matern_to_spde(p)
    gram = assemble_gram(mesh, lumped=True)
    n = mesh.n_nodes
    unconstrained = Mesh(mesh.dimension, mesh.nodes, mesh.elements)
    K, _ = assemble_stiffness(unconstrained, np.ones(mesh.n_elements))
    A = (eta ** 2 * gram + K).tocsc()
    if eta == 0.0:
        raise InvalidArgumentError("eta = 0 makes the Neumann SPDE operator singular")
    if math.isinf(tau):
        return np.zeros((n, n)), gram, A, beta, tau
    lu = splu(A)
    m = gram.diagonal()
    G = lu.solve(np.diag(np.sqrt(m)))
    for _ in range(beta - 1):
        G = lu.solve(m[:, None] * G)
    return G / tau, gram, A, beta, tau


def build_material_covariance(mesh: Mesh, p: MaternParams) -> SpdeField:
    """Nodal covariance L^-1 M L^-T of the Matérn field on every mesh node."""
    G, gram, A, beta, tau = _whitened_inverse(mesh, p)
    C = G @ G.T
    C = 0.5 * (C + C.T)
    op = (A if math.isinf(tau) else tau * A).tocsr()
    return SpdeField(p, op, gram, beta, C, psd_factor(C))


def build_force_covariance(mesh: Mesh, p: MaternParams) -> np.ndarray:
    """Nodal-force covariance M L^-1 M L^-T M on the free DOFs.

    The extra Gram factors turn the field covariance into one for forces
    obtained by integrating the field against the basis functions.
    """
    G, gram, _, _, _ = _whitened_inverse(mesh, p)
    m = gram.diagonal()
    F = m[:, None] * G
    C = F @ F.T
    C = 0.5 * (C + C.T)
    free = mesh.free_nodes
    return C[np.ix_(free, free)]


def sample_field(field: SpdeField, rng: np.random.Generator) -> np.ndarray:
    return field.cholesky_factor @ rng.standard_normal(field.n_nodes)


def element_averaging(mesh: Mesh) -> sp.csr_matrix:
    """Row ``a`` holds 1/k on the k nodes of element ``a``."""
    k = mesh.elements.shape[1]
    rows = np.repeat(np.arange(mesh.n_elements), k)
    return sp.csr_matrix((np.full(rows.size, 1.0 / k), (rows, mesh.elements.ravel())),
                         shape=(mesh.n_elements, mesh.n_nodes))


def nodal_to_element(mesh: Mesh, nodal_mean, nodal_cov):
    mean = np.asarray(nodal_mean, dtype=float)
    cov = np.asarray(nodal_cov, dtype=float)
    if mean.shape != (mesh.n_nodes,) or cov.shape != (mesh.n_nodes, mesh.n_nodes):
        raise InvalidArgumentError(
            f"expected mean ({mesh.n_nodes},) and covariance ({mesh.n_nodes}, {mesh.n_nodes}), "
            f"got {mean.shape} and {cov.shape}")
    P = element_averaging(mesh)
    cov_e = P @ (P @ cov).T
    return P @ mean, 0.5 * (cov_e + cov_e.T)


def lognormal_modulus(base: float, sigma_kappa: float, kappa_element) -> np.ndarray:
    """(base / exp(sigma^2 / 2)) exp(kappa): mean-preserving lognormal coefficients."""
    if not base > 0:
        raise InvalidArgumentError(f"base modulus must be positive, got {base}")
    scaled = base / math.exp(0.5 * sigma_kappa ** 2)
    return scaled * np.exp(np.asarray(kappa_element, dtype=float))


@dataclass(frozen=True)
class MaterialLaw:
    """Map from the Gaussian material field to element coefficients.

    ``lognormal``: c = base exp(kappa - sigma^2/2); ``additive``: c = base + kappa.
    """

    kind: str
    base: float
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in ("lognormal", "additive"):
            raise InvalidArgumentError(f"unknown material law {self.kind!r}")
        if not self.base > 0:
            raise InvalidArgumentError("base coefficient must be positive")

    def coefficients(self, kappa) -> np.ndarray:
        kappa = np.asarray(kappa, dtype=float)
        if self.kind == "lognormal":
            return lognormal_modulus(self.base, self.sigma, kappa)
        return self.base + kappa

    def derivative(self, kappa) -> np.ndarray:
        """d coefficient / d kappa, element-wise."""
        kappa = np.asarray(kappa, dtype=float)
        if self.kind == "lognormal":
            return lognormal_modulus(self.base, self.sigma, kappa)
        return np.ones_like(kappa)
