import math
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from sgpdf.errors import ConfigurationError, DimensionError, NumericalError
from sgpdf.fem import assemble_mass, build_mesh
from sgpdf.kl import (
    CovarianceSpec,
    _swap_permutation,
    assemble_covariance_matrix,
    build_kl_field,
    evaluate_coefficient,
    load_eigenpairs,
    save_eigenpairs,
    solve_kl_eigenproblem,
)


def exponential_kernel_eigenvalues_1d(L, count):
    """Eigenvalues of exp(-|x - y|/L) on [0, 1] from the transcendental equation."""
    g = lambda w: (L * L * w * w - 1.0) * math.sin(w) - 2.0 * L * w * math.cos(w)
    grid = np.linspace(1e-6, 60.0, 60001)
    vals = [g(w) for w in grid]
    roots = [brentq(g, a, b) for a, b, fa, fb in zip(grid, grid[1:], vals, vals[1:]) if fa * fb < 0]
    return np.array([2.0 * L / (1.0 + L * L * w * w) for w in roots[:count]])


def box_integral(L):
    """int_0^1 int_0^1 exp(-|x - y|/L) dx dy."""
    return 2.0 * L - 2.0 * L * L * (1.0 - math.exp(-1.0 / L))


@pytest.fixture(scope="module")
def mesh2():
    return build_mesh(2)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        CovarianceSpec(0.0)
    with pytest.raises(ConfigurationError):
        CovarianceSpec(1.0, L=2.0)


@pytest.mark.parametrize("method", ["separable", "gauss"])
def test_covariance_total_mass(mesh2, method):
    spec = CovarianceSpec(0.7)
    C = assemble_covariance_matrix(mesh2, spec, method)
    exact = spec.sigma_gamma**2 * box_integral(spec.L) ** 2
    tol = 1e-12 if method == "separable" else 5e-2
    assert abs(C.sum() - exact) <= tol * exact
    assert np.allclose(C, C.T)


def test_leading_eigenvalues_match_analytic(mesh2):
    lam1d = exponential_kernel_eigenvalues_1d(0.1, 2)
    kl = build_kl_field(mesh2, CovarianceSpec(1.0), N=1, covariance_method="separable")
    assert abs(kl.eigenvalues[0] - lam1d[0] ** 2) < 1e-5 * lam1d[0] ** 2
    kl2 = build_kl_field(mesh2, CovarianceSpec(1.0), N=3, covariance_method="separable")
    assert np.allclose(kl2.eigenvalues[1:], lam1d[0] * lam1d[1], rtol=5e-4)


@pytest.mark.parametrize("method", ["separable", "gauss"])
def test_m_orthonormal_and_signed(mesh2, method):
    kl = build_kl_field(mesh2, CovarianceSpec(0.3), N=4, covariance_method=method)
    M = assemble_mass(mesh2).toarray()
    B = kl.eigenfunctions
    assert np.abs(B @ M @ B.T - np.eye(4)).max() < 1e-10
    for row in B:
        assert row[np.argmax(np.abs(row))] > 0
    assert np.all(np.diff(kl.eigenvalues) <= 0)


@pytest.mark.parametrize("s", [0.5, 2.0, 3.7])
def test_eigenvalues_scale_with_variance(mesh2, s):
    base = build_kl_field(mesh2, CovarianceSpec(0.4), N=2).eigenvalues
    scaled = build_kl_field(mesh2, CovarianceSpec(0.4 * s), N=2).eigenvalues
    assert np.allclose(scaled, s * s * base, rtol=1e-10, atol=0)


def test_truncated_degenerate_pair_uses_symmetric_mode(mesh2):
    mesh = mesh2
    C = assemble_covariance_matrix(mesh, CovarianceSpec(1.0), "gauss")
    lam, _ = solve_kl_eigenproblem(C, assemble_mass(mesh), 3)
    assert abs(lam[1] - lam[2]) < 1e-10 * lam[0]
    kl = build_kl_field(mesh, CovarianceSpec(1.0), N=2)
    b2 = kl.eigenfunctions[1]
    assert np.abs(b2[_swap_permutation(mesh)] - b2).max() < 1e-8


def test_coefficient_is_lognormal_shift():
    mesh = build_mesh(1)
    kl = build_kl_field(mesh, CovarianceSpec(0.5), N=2, a_min=0.01, mu_gamma=0.2)
    eps = np.array([0.3, -1.1])
    node = 12
    expected = 0.01 + math.exp(0.2 + np.sqrt(kl.eigenvalues) @ (kl.eigenfunctions[:, node] * eps))
    assert abs(evaluate_coefficient(kl, node, eps) - expected) < 1e-14
    with pytest.raises(DimensionError):
        evaluate_coefficient(kl, node, [1.0])


def test_exponent_overflow_is_reported():
    mesh = build_mesh(1)
    kl = build_kl_field(mesh, CovarianceSpec(1.0), N=1)
    with pytest.raises(NumericalError, match="overflow"):
        kl.coefficient_at_quadrature(np.array([1e5]))


def test_eigenpair_cache_roundtrip_and_hit(tmp_path):
    mesh = build_mesh(1)
    spec = CovarianceSpec(0.25)
    a = build_kl_field(mesh, spec, N=2, cache_dir=tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1
    stamp = files[0].stat().st_mtime_ns
    time.sleep(0.01)
    b = build_kl_field(mesh, spec, N=2, cache_dir=tmp_path)
    assert files[0].stat().st_mtime_ns == stamp
    assert np.array_equal(a.eigenvalues, b.eigenvalues)
    assert np.array_equal(a.eigenfunctions, b.eigenfunctions)


def test_cache_mismatch_is_ignored(tmp_path):
    path = tmp_path / "pairs.csv"
    spec = CovarianceSpec(0.25)
    save_eigenpairs(path, 1, spec, np.array([1.0]), np.ones((1, build_mesh(1).J_h)))
    assert load_eigenpairs(path, 1, CovarianceSpec(0.5), 1) == (None, None)
    lam, vec = load_eigenpairs(path, 1, spec, 1)
    assert lam.tolist() == [1.0] and vec.shape == (1, build_mesh(1).J_h)


def test_too_many_terms():
    mesh = build_mesh(0)
    C = assemble_covariance_matrix(mesh, CovarianceSpec(1.0))
    with pytest.raises(ConfigurationError):
        solve_kl_eigenproblem(C, assemble_mass(mesh), mesh.J_h + 1)
