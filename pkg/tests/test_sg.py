import numpy as np
import pytest

from sgpdf import hermite
from sgpdf.errors import ConfigurationError, UnsupportedQoIError
from sgpdf.fem import qoi_average, qoi_integral_square, solve_poisson
from sgpdf.sg import (
    assemble_sg_system,
    exact_moments,
    project_coefficient,
    qoi_polynomial,
    run_sg,
    sample_qoi_polynomial,
    solve_sg,
)


@pytest.fixture(scope="module")
def field(field_factory):
    return field_factory(0.5, level=2)


@pytest.fixture(scope="module")
def solution(field):
    return run_sg(field, p=4, q=5)


def test_projection_methods_agree(field):
    a = project_coefficient(field, 5, "quadrature").fields
    b = project_coefficient(field, 5, "closed_form").fields
    assert np.abs(a - b).max() < 1e-12 * np.abs(b).max()


def test_projection_mean_mode_is_lognormal_mean(field):
    exp_modes = project_coefficient(field, 3).fields
    var = np.sum(field.scaled_modes_at_quadrature() ** 2, axis=0)
    assert np.allclose(exp_modes[0], field.a_min + np.exp(field.mu_gamma + 0.5 * var), rtol=1e-12)


def test_projection_rule_guard(field):
    with pytest.raises(ConfigurationError):
        project_coefficient(field, 5, n_points=5)
    with pytest.raises(ConfigurationError):
        project_coefficient(field, 5, method="spectral")


def test_system_is_symmetric(field):
    coeff = project_coefficient(field, 3)
    sysm = assemble_sg_system(field.mesh, coeff, hermite.multi_index_set(2, 2))
    A = sysm.matrix
    assert abs(A - A.T).max() < 1e-12 * abs(A).max()
    assert sysm.rhs[sysm.block_size:].max() == 0.0


def test_cg_matches_direct(field):
    coeff = project_coefficient(field, 5)
    sysm = assemble_sg_system(field.mesh, coeff, hermite.multi_index_set(2, 4))
    a = solve_sg(sysm, "direct").modes
    b = solve_sg(sysm, "cg", rtol=1e-10).modes
    assert np.abs(a - b).max() < 1e-8 * np.abs(a).max()


def test_surrogate_matches_direct_solves(field, solution):
    mesh = field.mesh
    for eps in ([0.0, 0.0], [0.7, -0.4], [-1.2, 1.5]):
        u = solve_poisson(mesh, field.coefficient_at_quadrature(np.array(eps)))
        v = solution.evaluate(np.array(eps))
        assert np.abs(u - v).max() < 1e-3 * np.abs(u).max()


def test_average_polynomial_matches_surrogate(field, solution):
    q = qoi_polynomial(solution, "average")
    eps = np.array([0.4, -0.9])
    assert abs(q(eps) - qoi_average(solution.evaluate(eps), field.mesh)) < 1e-14


def test_strict_integral_square_is_exact(field, solution):
    q = qoi_polynomial(solution, "integral_square", strict=True)
    for eps in ([0.3, 0.2], [-1.5, 0.8]):
        e = np.array(eps)
        ref = qoi_integral_square(solution.evaluate(e), field.mesh)
        assert abs(q(e) - ref) < 1e-10 * ref


def test_printed_integral_square_coefficients(field, solution):
    q = qoi_polynomial(solution, "integral_square")
    for p in (0, 3, 7):
        assert abs(q.beta[p] - qoi_integral_square(solution.modes[p], field.mesh)) < 1e-16


def test_max_not_supported(solution):
    with pytest.raises(UnsupportedQoIError, match="Monte Carlo"):
        qoi_polynomial(solution, "max")


def test_exact_moments_against_sampling(solution):
    q = qoi_polynomial(solution, "average")
    m = exact_moments(q, 4).m
    s = sample_qoi_polynomial(q, 200_000, seed=3).values
    for l in range(1, 5):
        se = np.std(s**l) / np.sqrt(s.size)
        assert abs(np.mean(s**l) - m[l - 1]) < 5 * se


def test_moment_rule_is_exact_at_threshold(solution):
    q = qoi_polynomial(solution, "average")
    a = exact_moments(q, 6).m
    b = exact_moments(q, 6, n_points=30).m
    assert np.allclose(a, b, rtol=1e-12)


def test_mean_mode_is_first_moment(solution):
    q = qoi_polynomial(solution, "average")
    m = exact_moments(q, 2).m
    assert abs(m[0] - q.beta[0]) < 1e-13 * abs(q.beta[0])
    assert abs(m[1] - np.sum(q.beta**2)) < 1e-13 * m[1]


def test_degenerate_variance_collapses(field_factory):
    kl = field_factory(1e-9, level=2)
    sol = run_sg(kl, 4, 5)
    det = solve_poisson(kl.mesh, kl.a_min + 1.0)
    assert np.abs(sol.modes[0] - det).max() < 1e-10 * np.abs(det).max()
    assert np.abs(sol.modes[1:]).max() < 1e-10
