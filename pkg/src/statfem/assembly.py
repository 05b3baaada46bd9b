"""Scalar P1 finite element operators: stiffness, mass, Gram and damping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .mesh import Mesh


@dataclass(frozen=True, eq=False)
class ElementStiffnessBank:
    """Unit-coefficient element stiffness blocks and their scatter maps.

    ``local[a]`` is the stiffness of element ``a`` for coefficient 1 and
    ``dofs[a]`` the free-DOF index of each local node (-1 on Dirichlet nodes).
    Because the stiffness is linear in every element coefficient, the scattered
    ``local[a]`` is exactly dK/dc_a.
    """

    local: np.ndarray
    dofs: np.ndarray
    n_free: int

    @property
    def n_elements(self) -> int:
        return len(self.local)

    def assemble(self, coefficients) -> sp.csr_matrix:
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (self.n_elements,):
            raise InvalidArgumentError(
                f"expected {self.n_elements} element coefficients, got shape {c.shape}")
        k = self.dofs.shape[1]
        rows = np.repeat(self.dofs, k, axis=1).ravel()
        cols = np.tile(self.dofs, (1, k)).ravel()
        vals = (self.local * c[:, None, None]).ravel()
        keep = (rows >= 0) & (cols >= 0)
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                             shape=(self.n_free, self.n_free))

    def scatter(self, alpha: int) -> sp.csr_matrix:
        """The single-element block ``alpha`` placed in the free-DOF matrix."""
        d = self.dofs[alpha]
        mask = d >= 0
        blk = self.local[alpha][np.ix_(mask, mask)]
        idx = d[mask]
        r, c = np.meshgrid(idx, idx, indexing="ij")
        return sp.csr_matrix((blk.ravel(), (r.ravel(), c.ravel())),
                             shape=(self.n_free, self.n_free))

    def element_actions(self, u) -> np.ndarray:
        """(n_e, k) array whose row ``a`` is the local part of K_a u."""
        u = np.asarray(u, dtype=float)
        ext = np.append(u, 0.0)
        u_loc = ext[self.dofs]  # -1 picks the appended zero
        return np.einsum("aij,aj->ai", self.local, u_loc)

    def derivative_columns(self, u, scale=None) -> sp.csc_matrix:
        """Sparse (n_free, n_e) matrix with column ``a`` equal to scale_a K_a u."""
        act = self.element_actions(u)
        if scale is not None:
            act = act * np.asarray(scale, dtype=float)[:, None]
        n_e, k = act.shape
        cols = np.repeat(np.arange(n_e), k)
        rows = self.dofs.ravel()
        vals = act.ravel()
        keep = rows >= 0
        return sp.csc_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.n_free, n_e))


def _unit_local_stiffness(mesh: Mesh) -> np.ndarray:
    meas = mesh.element_measures()
    if mesh.dimension == 1:
        base = np.array([[1.0, -1.0], [-1.0, 1.0]])
        return base[None, :, :] / meas[:, None, None]
    p = mesh.nodes[mesh.elements]  # (n_e, 3, 2)
    # gradients of barycentric coordinates
    x, y = p[:, :, 0], p[:, :, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / (2.0 * meas[:, None, None])
    return meas[:, None, None] * np.einsum("aid,ajd->aij", grads, grads)


def assemble_stiffness(mesh: Mesh, element_coefficients):
    """Stiffness restricted to the free DOFs, plus its element bank.

    The coefficient is EA (axial bar) or the shear modulus (anti-plane shear).
    """
    c = np.asarray(element_coefficients, dtype=float).ravel()
    if c.shape != (mesh.n_elements,):
        raise InvalidArgumentError(
            f"expected {mesh.n_elements} element coefficients, got {c.shape[0]}")
    if np.any(~(c > 0.0)):
        raise InvalidArgumentError("element coefficients must be strictly positive")
    bank = ElementStiffnessBank(_unit_local_stiffness(mesh), mesh.free_index[mesh.elements],
                                mesh.n_free)
    return bank.assemble(c), bank


def _nodal_lumped(mesh: Mesh, density: float) -> np.ndarray:
    k = mesh.elements.shape[1]
    share = density * mesh.element_measures() / k
    out = np.zeros(mesh.n_nodes)
    np.add.at(out, mesh.elements.ravel(), np.repeat(share, k))
    return out


def _consistent(mesh: Mesh, density: float) -> sp.csr_matrix:
    k = mesh.elements.shape[1]
    base = (np.ones((k, k)) + np.eye(k)) / ((k + 1) * k)  # integrates to 1 per element
    vals = density * mesh.element_measures()[:, None, None] * base[None]
    rows = np.repeat(mesh.elements, k, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, k)).ravel()
    return sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def assemble_mass(mesh: Mesh, density: float, lumped: bool = True,
                  eliminate: bool = True) -> sp.csr_matrix:
    """Mass matrix; row-sum lumped by default, restricted to free DOFs unless
    ``eliminate`` is False."""
    if not density > 0:
        raise InvalidArgumentError(f"density must be positive, got {density}")
    if lumped:
        full = sp.diags(_nodal_lumped(mesh, density)).tocsr()
    else:
        full = _consistent(mesh, density)
    if not eliminate:
        return full
    free = mesh.free_nodes
    return full[free][:, free].tocsr()


def assemble_gram(mesh: Mesh, lumped: bool = True) -> sp.csr_matrix:
    """Unit-density mass matrix over all nodes (Neumann fields keep every node)."""
    return assemble_mass(mesh, 1.0, lumped=lumped, eliminate=False)


def rayleigh_coefficients(omega1: float, omega2: float, ratio: float):
    """(a0, a1) such that a0 M + a1 K has damping ``ratio`` at both frequencies."""
    if not (0.0 < omega1 < omega2):
        raise InvalidArgumentError(f"need 0 < omega1 < omega2, got {omega1}, {omega2}")
    if ratio < 0:
        raise InvalidArgumentError("damping ratio must be non-negative")
    a0 = 2.0 * ratio * omega1 * omega2 / (omega1 + omega2)
    a1 = 2.0 * ratio / (omega1 + omega2)
    return a0, a1


def rayleigh_damping(M, K, omega1: float, omega2: float, ratio: float) -> sp.csr_matrix:
    a0, a1 = rayleigh_coefficients(omega1, omega2, ratio)
    return (a0 * sp.csr_matrix(M) + a1 * sp.csr_matrix(K)).tocsr()


def modal_damping_ratio(a0: float, a1: float, omega):
    return a0 / (2.0 * np.asarray(omega)) + a1 * np.asarray(omega) / 2.0
