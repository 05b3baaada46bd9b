import math

import numpy as np
import pytest

from statfem.errors import InvalidArgumentError, UnsupportedSmoothnessError
from statfem.mesh import build_interval_mesh, build_plate_with_hole
from statfem.oracle import matern32, matern_kernel
from statfem.spde import (MaterialLaw, MaternParams, admissible_nu, build_force_covariance,
                          build_material_covariance, element_averaging, lognormal_modulus,
                          matern_to_spde, nodal_to_element, psd_factor, sample_field)


def test_spde_parameters_1d():
    eta, beta, tau = matern_to_spde(MaternParams(1.5, 2.5, 0.1, 1))
    assert beta == 1
    assert eta == pytest.approx(0.692820, abs=1e-6)
    assert tau > 0


def test_spde_parameters_2d():
    eta, beta, _ = matern_to_spde(MaternParams(1.0, 1.0, 1.0, 2))
    assert beta == 1 and eta == pytest.approx(math.sqrt(2.0))


def test_two_applications():
    assert matern_to_spde(MaternParams(3.5, 1.0, 1.0, 1))[1] == 2


def test_unsupported_smoothness():
    with pytest.raises(UnsupportedSmoothnessError) as err:
        matern_to_spde(MaternParams(1.0, 1.0, 1.0, 1))
    assert "1.5" in str(err.value)
    assert admissible_nu(1)[:2] == [1.5, 3.5]


def test_bad_params():
    with pytest.raises(InvalidArgumentError):
        MaternParams(1.5, 0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        MaternParams(1.5, 1.0, -1.0)


def test_zero_sigma_gives_zero_covariance():
    m = build_interval_mesh(10.0, 20)
    f = build_material_covariance(m, MaternParams(1.5, 2.5, 0.0, 1))
    assert not np.any(f.nodal_covariance)
    assert not np.any(build_force_covariance(m, MaternParams(1.5, 2.5, 0.0, 1)))
    assert not np.any(sample_field(f, np.random.default_rng(0)))


def test_closed_form_kernel_matches_bessel():
    r = np.linspace(0, 6, 50)
    assert np.allclose(matern_kernel(r, 1.5, 2.5, 0.1), matern32(r, 2.5, 0.1), rtol=1e-12)


def test_centre_variance():
    m = build_interval_mesh(40.0, 400, clamp_left=False)
    C = build_material_covariance(m, MaternParams(1.5, 2.5, 0.1, 1)).nodal_covariance
    assert C[200, 200] == pytest.approx(0.01, rel=0.10)


def test_second_order_operator_kernel():
    m = build_interval_mesh(60.0, 600, clamp_left=False)
    C = build_material_covariance(m, MaternParams(3.5, 3.0, 1.0, 1)).nodal_covariance
    r = np.abs(m.nodes[300, 0] - m.nodes[:, 0])
    sel = (r >= 0.5) & (r <= 5.0)
    ref = matern_kernel(r[sel], 3.5, 3.0, 1.0)
    assert np.max(np.abs(C[300, sel] - ref) / ref) < 0.05


def test_sample_covariance():
    m = build_interval_mesh(9.0, 9, clamp_left=False)
    f = build_material_covariance(m, MaternParams(1.5, 3.0, 0.5, 1))
    rng = np.random.default_rng(42)
    S = np.array([sample_field(f, rng) for _ in range(50_000)])
    emp = np.cov(S.T)
    C = f.nodal_covariance
    assert np.linalg.norm(emp - C) / np.linalg.norm(C) < 0.05


def test_sample_determinism():
    f = build_material_covariance(build_interval_mesh(5.0, 10), MaternParams(1.5, 1.0, 1.0, 1))
    a = sample_field(f, np.random.default_rng(3))
    b = sample_field(f, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_force_covariance_psd():
    m = build_plate_with_hole(n_cells=8, n_ring=10)
    C = build_force_covariance(m, MaternParams(1.0, 0.5, 1.0, 2))
    assert C.shape == (m.n_free, m.n_free)
    assert np.allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() > -1e-12 * np.abs(C).max()


def test_averaging():
    m = build_interval_mesh(2.0, 2)
    assert np.allclose(element_averaging(m) @ np.array([0.0, 2.0, 4.0]), [1.0, 3.0])
    mean, cov = nodal_to_element(m, np.full(3, 5.0), np.full((3, 3), 2.0))
    assert np.allclose(mean, 5.0) and np.allclose(cov, 2.0)
    with pytest.raises(InvalidArgumentError):
        nodal_to_element(m, np.zeros(2), np.zeros((3, 3)))


def test_material_law():
    law = MaterialLaw("lognormal", 5e5, 0.0)
    assert np.allclose(law.coefficients(np.zeros(4)), 5e5)
    assert np.allclose(lognormal_modulus(2.0, 0.3, [0.0]), 2.0 * math.exp(-0.045))
    add = MaterialLaw("additive", 100.0)
    assert np.allclose(add.coefficients([-5.52]), 94.48)
    assert np.allclose(add.derivative([1.0, 2.0]), 1.0)
    with pytest.raises(InvalidArgumentError):
        MaterialLaw("cubic", 1.0)


def test_psd_factor_rank_one():
    b = np.array([1.0, 2.0, 0.0])
    L = psd_factor(np.outer(b, b))
    assert np.allclose(L @ L.T, np.outer(b, b), atol=1e-9)
