"""Truncated Karhunen-Loeve representation of the log-normal diffusion coefficient.

The Gaussian field ``gamma = log(a - a_min)`` has the separable exponential
covariance ``sigma^2 exp(-|x - x'|_1 / L)``.  Its eigenpairs are computed by a
Galerkin discretization on the Q2 mesh, giving the generalized problem
``C b = lambda M b``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import ConfigurationError, DimensionError, NumericalError, SolverError
from .fem import PHI, StructuredQuadMesh, _lagrange_q2, assemble_mass, build_mesh

log = logging.getLogger(__name__)

_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class CovarianceSpec:
    sigma_gamma: float
    L: float = 0.1
    d: int = 2

    def __post_init__(self):
        if not self.sigma_gamma > 0:
            raise ConfigurationError(f"sigma_gamma must be positive, got {self.sigma_gamma}")
        if not 0 < self.L:
            raise ConfigurationError(f"correlation length must be positive, got {self.L}")
        if self.L > math.sqrt(self.d) * (1 + 1e-12):
            raise ConfigurationError(f"correlation length {self.L} exceeds diam(D) = sqrt({self.d})")


def covariance(x, x_hat, spec: CovarianceSpec):
    """``sigma^2 exp(-(1/L) sum_i |x_i - x_hat_i|)``, broadcasting over leading axes."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    dist = np.sum(np.abs(x - x_hat), axis=-1)
    out = spec.sigma_gamma**2 * np.exp(-dist / spec.L)
    return out if np.ndim(out) else float(out)


def _lagrange_q2_values(t):
    return _lagrange_q2(t)[0]


def _interpolation_operator(mesh: StructuredQuadMesh) -> sp.csr_matrix:
    """Sparse map from nodal values to values at all Gauss points (row = e*9 + g)."""
    n_el = mesh.n_elements
    rows = np.repeat(np.arange(n_el * 9), 9)
    cols = np.repeat(mesh.elements, 9, axis=0).ravel()
    vals = np.tile(PHI.ravel(), n_el)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_el * 9, mesh.J_h))


def _covariance_1d(n_el: int, L: float, n_gauss: int = 24) -> np.ndarray:
    """``int_0^1 int_0^1 exp(-|x - x'|/L) l_i(x) l_j(x') dx dx'`` for the 1D Q2 basis.

    Off-diagonal element pairs factor exactly because ``x < x'`` throughout,
    so each is a product of two one-dimensional integrals.  Diagonal pairs
    are split along ``x = x'`` and integrated with nested Gauss rules.
    """
    h = 1.0 / n_el
    gx, gw = np.polynomial.legendre.leggauss(n_gauss)
    t = 0.5 * h * (gx + 1.0)
    w = 0.5 * h * gw
    basis = lambda s: _lagrange_q2_values(s / h)  # noqa: E731

    lt = basis(t)  # (n_gauss, 3)
    grow = w @ (np.exp((t - h) / L)[:, None] * lt)  # int exp((t-h)/L) l_a(t)
    decay = w @ (np.exp(-t / L)[:, None] * lt)  # int exp(-t/L) l_b(t)

    diag = np.zeros((3, 3))
    for tp, wp in zip(t, w):
        lo_x = 0.5 * tp * (gx + 1.0)
        lo_w = 0.5 * tp * gw
        hi_x = tp + 0.5 * (h - tp) * (gx + 1.0)
        hi_w = 0.5 * (h - tp) * gw
        xs = np.concatenate([lo_x, hi_x])
        ws = np.concatenate([lo_w, hi_w]) * np.exp(-np.abs(xs - tp) / L)
        diag += wp * np.outer(ws @ basis(xs), basis(np.array([tp]))[0])

    nn = 2 * n_el + 1
    C = np.zeros((nn, nn))
    for e in range(n_el):
        ie = slice(2 * e, 2 * e + 3)
        C[ie, ie] += diag
        for f in range(e + 1, n_el):
            # x in element e, x' in element f > e: exp(-(x'-x)/L) factors
            shift = np.exp(-(f - e - 1) * h / L)
            block = shift * np.outer(grow, decay)
            jf = slice(2 * f, 2 * f + 3)
            C[ie, jf] += block
            C[jf, ie] += block.T
    return 0.5 * (C + C.T)


def assemble_covariance_matrix(mesh: StructuredQuadMesh, spec: CovarianceSpec, method: str = "gauss") -> np.ndarray:
    """Dense ``C_ij = int int C(x, x') phi_j(x) phi_i(x') dx dx'``.

    ``method="separable"`` uses the product structure of both the kernel and
    the Q2 basis, ``C = sigma^2 kron(C_1d, C_1d)``, with the 1D factor
    integrated to roundoff.  ``method="gauss"`` applies the element 3x3 Gauss
    rule in both variables; it is cheap but only first-order accurate across
    the kernel cusp on diagonal element pairs.
    """
    if method == "separable":
        C1 = _covariance_1d(mesh.elements_per_side, spec.L)
        return spec.sigma_gamma**2 * np.kron(C1, C1)
    if method == "gauss":
        return _covariance_gauss(mesh, spec)
    raise ConfigurationError(f"unknown covariance assembly method {method!r}")


def _covariance_gauss(mesh: StructuredQuadMesh, spec: CovarianceSpec, chunk: int = 2048) -> np.ndarray:
    pts = mesh.quadrature_points().reshape(-1, 2)
    w = np.tile(mesh.quadrature_weights(), mesh.n_elements)
    P = _interpolation_operator(mesh)
    PT = P.T.tocsr()
    WPT = P.multiply(w[:, None]).T.tocsr()
    nq = pts.shape[0]
    C = np.zeros((mesh.J_h, mesh.J_h))
    for start in range(0, nq, chunk):
        stop = min(start + chunk, nq)
        K = np.exp(-np.abs(pts[start:stop, None, 0] - pts[None, :, 0]) / spec.L)
        K *= np.exp(-np.abs(pts[start:stop, None, 1] - pts[None, :, 1]) / spec.L)
        K *= w[start:stop, None]
        C += PT[:, start:stop] @ np.asarray(WPT @ K.T).T
    C *= spec.sigma_gamma**2
    return 0.5 * (C + C.T)


def solve_kl_eigenproblem(C: np.ndarray, M, N: int):
    """Leading ``N`` eigenpairs of ``C b = lambda M b``.

    Eigenvectors are scaled to unit ``M``-norm and signed so the entry of
    largest magnitude is positive.

    Returns
    -------
    eigenvalues : ndarray, shape (N,)
        Nonincreasing.
    eigenvectors : ndarray, shape (N, J_h)
    """
    M = M.toarray() if sp.issparse(M) else np.asarray(M)
    J = C.shape[0]
    if not 1 <= N <= J:
        raise ConfigurationError(f"requested {N} KL terms but only {J} degrees of freedom")
    try:
        lam, vec = sla.eigh(C, M, subset_by_index=[J - N, J - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SolverError(f"generalized eigensolve failed: {exc}") from exc
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    vec = vec[:, order].T.copy()
    norms = np.sqrt(np.einsum("nj,jk,nk->n", vec, M, vec))
    vec /= norms[:, None]
    for row in vec:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    if lam[-1] <= 0:
        log.warning("KL eigenvalue lambda_%d = %.3e is not positive; covariance rank is too low", N, lam[-1])
    return lam, vec


@dataclass(frozen=True, eq=False)
class KLField:
    """Log-normal coefficient ``a = a_min + exp(mu + sum_n sqrt(lambda_n) b_n eps_n)``."""

    mesh: StructuredQuadMesh
    a_min: float
    mu_gamma: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    spec: CovarianceSpec | None = None

    @property
    def N(self) -> int:
        return self.eigenvalues.shape[0]

    def scaled_modes(self) -> np.ndarray:
        """Nodal fields ``sqrt(lambda_n) b_n``, shape ``(N, J_h)``."""
        return np.sqrt(np.maximum(self.eigenvalues, 0.0))[:, None] * self.eigenfunctions

    def scaled_modes_at_quadrature(self) -> np.ndarray:
        """``sqrt(lambda_n) b_n`` interpolated to Gauss points, shape ``(N, n_el, 9)``."""
        return self.mesh.to_quadrature(self.scaled_modes())

    def _check_eps(self, eps):
        eps = np.asarray(eps, dtype=float)
        if eps.shape[-1] != self.N:
            raise DimensionError(f"parameter vector of length {eps.shape[-1]} for a field with N={self.N}")
        return eps

    def gamma_at_quadrature(self, eps) -> np.ndarray:
        eps = self._check_eps(eps)
        return self.mu_gamma + np.tensordot(eps, self.scaled_modes_at_quadrature(), axes=(-1, 0))

    def coefficient_at_quadrature(self, eps) -> np.ndarray:
        """Coefficient values at Gauss points for one or more parameter vectors."""
        g = self.gamma_at_quadrature(eps)
        _check_exponent(g, eps)
        return self.a_min + np.exp(g)


def _check_exponent(g, eps):
    if np.any(g > _EXP_LIMIT):
        raise NumericalError(f"exp overflow in coefficient for sample eps={np.asarray(eps).tolist()}")


def evaluate_gamma(field: KLField, node, eps):
    """``mu + sum_n sqrt(lambda_n) b_n(x_node) eps_n`` at nodal index ``node``."""
    eps = field._check_eps(eps)
    modes = field.scaled_modes()[:, node]
    return field.mu_gamma + np.tensordot(eps, modes, axes=(-1, 0))


def evaluate_coefficient(field: KLField, node, eps):
    """``a_min + exp(gamma)`` at nodal index ``node``."""
    g = evaluate_gamma(field, node, eps)
    _check_exponent(g, eps)
    return field.a_min + np.exp(g)


def _swap_permutation(mesh: StructuredQuadMesh) -> np.ndarray:
    ns = mesh.nodes_per_side
    idx = np.arange(mesh.J_h)
    return (idx % ns) * ns + idx // ns


def canonicalize_truncated_cluster(lam, vec, N: int, mesh: StructuredQuadMesh, M, rtol: float = 1e-8):
    """Fix the basis of a degenerate eigenspace that the truncation cuts.

    When ``lambda_N == lambda_{N+1}`` the kept modes are not unique.  Inside
    such a cluster the basis is rotated to eigenvectors of the reflection
    ``x <-> y`` (symmetric first), which makes the choice independent of the
    eigensolver.  ``lam``/``vec`` must hold more than ``N`` pairs.
    """
    lam = np.asarray(lam, dtype=float)
    vec = np.array(vec, dtype=float)
    if lam.size <= N:
        return lam[:N], vec[:N]
    tol = rtol * abs(lam[0])
    c0 = N - 1
    while c0 > 0 and abs(lam[c0 - 1] - lam[N - 1]) <= tol:
        c0 -= 1
    c1 = N
    while c1 < lam.size and abs(lam[c1] - lam[N - 1]) <= tol:
        c1 += 1
    if c1 == N:
        return lam[:N], vec[:N]
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    V = vec[c0:c1].T
    swap = _swap_permutation(mesh)
    S = V.T @ Md @ V[swap]
    _, Q = np.linalg.eigh(0.5 * (S + S.T))
    rotated = (V @ Q[:, ::-1]).T
    vec[c0:c1] = rotated
    log.info("KL eigenvalue cluster %d..%d cut by truncation at N=%d; using reflection-adapted basis", c0 + 1, c1, N)
    out = vec[:N]
    for row in out:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return lam[:N], out


def build_kl_field(
    mesh: StructuredQuadMesh,
    spec: CovarianceSpec,
    N: int = 2,
    a_min: float = 0.01,
    mu_gamma: float = 0.0,
    cache_dir: str | Path | None = None,
    covariance_method: str = "gauss",
) -> KLField:
    """Assemble and solve the covariance eigenproblem, optionally via an on-disk cache.

    ``covariance_method`` selects the assembly of the covariance matrix, see
    :func:`assemble_covariance_matrix`.
    """
    if a_min < 0:
        raise ConfigurationError(f"a_min must be nonnegative, got {a_min}")
    lam = vec = None
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / eigenpair_cache_name(mesh.refinement_level, spec, N, covariance_method)
        if path.exists():
            lam, vec = load_eigenpairs(path, mesh.refinement_level, spec, N, covariance_method)
    if lam is None:
        C = assemble_covariance_matrix(mesh, spec, covariance_method)
        M = assemble_mass(mesh)
        extra = min(mesh.J_h, N + 4)
        lam, vec = solve_kl_eigenproblem(C, M, extra)
        lam, vec = canonicalize_truncated_cluster(lam, vec, N, mesh, M)
        lam, vec = lam.copy(), vec.copy()
        if path is not None:
            save_eigenpairs(path, mesh.refinement_level, spec, lam, vec, covariance_method)
    lam.setflags(write=False)
    vec.setflags(write=False)
    return KLField(mesh, float(a_min), float(mu_gamma), lam, vec, spec)


def eigenpair_cache_name(level: int, spec: CovarianceSpec, N: int, method: str = "gauss") -> str:
    return f"kl_r{level}_s{spec.sigma_gamma!r}_L{spec.L!r}_N{N}_{method}.csv"


def _header(level, spec, N, J_h, method):
    return (f"kl-eigenpairs refinement={level} sigma_gamma={spec.sigma_gamma!r} L={spec.L!r} "
            f"N={N} J_h={J_h} covariance={method}")


def save_eigenpairs(path, level: int, spec: CovarianceSpec, eigenvalues, eigenvectors, method: str = "gauss") -> None:
    """Write eigenpairs as CSV: a ``#`` header with parameters, the eigenvalue
    row, then one row per node holding ``b_1..b_N``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    N, J = eigenvectors.shape
    data = np.vstack([eigenvalues[None, :], eigenvectors.T])
    np.savetxt(path, data, delimiter=",", fmt="%.17g", header=_header(level, spec, N, J, method))


def load_eigenpairs(path, level: int, spec: CovarianceSpec, N: int, method: str = "gauss"):
    """Read a cache written by :func:`save_eigenpairs`; returns ``(None, None)`` on mismatch."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline().lstrip("#").strip()
    expected = _header(level, spec, N, build_mesh(level).J_h, method)
    if first != expected:
        log.info("eigenpair cache %s does not match parameters, recomputing", path)
        return None, None
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    return data[0].copy(), data[1:].T.copy()
