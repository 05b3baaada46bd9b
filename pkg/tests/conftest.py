import os

import numpy as np
import pytest
import scipy.sparse as sp

from statfem.assembly import assemble_mass, assemble_stiffness
from statfem.forward import StochasticSystem
from statfem.mesh import build_interval_mesh
from statfem.spde import MaterialLaw

CONFIG_DIR = os.path.join(os.path.dirname(__file__), os.pardir, "src", "statfem", "configs")

ACCEPTANCE_LINES = []


def config_path(name: str) -> str:
    return os.path.abspath(os.path.join(CONFIG_DIR, name))


def bar_system(n_el=5, length=1.0, coeff=3.0, density=1.0, sigma_f=0.0, force_cov_unit=None,
               kappa_cov=None, damping=0.0, dt=0.01, law="additive", force=None):
    """Small clamped bar with a sinusoidal tip load, additive material law."""
    mesh = build_interval_mesh(length, n_el)
    K, bank = assemble_stiffness(mesh, np.full(n_el, coeff))
    M = assemble_mass(mesh, density)
    n = mesh.n_free
    tip = np.zeros(n)
    tip[-1] = 1.0
    if force is None:
        def force(t):
            return np.sin(3.0 * t) * tip
    C_f = np.outer(tip, tip) if force_cov_unit is None else force_cov_unit
    kc = np.zeros((n_el, n_el)) if kappa_cov is None else kappa_cov
    return mesh, StochasticSystem(M.diagonal(), (damping * M).tocsr(), bank,
                                  MaterialLaw(law, coeff), force, C_f, sigma_f, dt,
                                  np.zeros(n_el), kc)


def sdof_system(k=100.0, m=1.0, gamma=1.0, dt=0.01, sigma_f=0.0, sigma_k=0.0):
    """One free DOF with mass m, stiffness k and mass-proportional damping gamma."""
    mesh = build_interval_mesh(1.0, 1)
    _, bank = assemble_stiffness(mesh, [k])
    M = assemble_mass(mesh, 2.0 * m)
    return StochasticSystem(M.diagonal(), sp.csr_matrix(gamma * M), bank, MaterialLaw("additive", k),
                            lambda t: np.array([np.sin(3.1 * t)]), np.eye(1), sigma_f, dt,
                            np.zeros(1), np.eye(1) * sigma_k ** 2)


@pytest.fixture
def record_acceptance():
    def record(tag: str, ok: bool, detail: str):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
