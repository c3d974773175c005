"""Bi-quadratic (Q2) finite elements on the unit square.

The mesh is the uniform grid obtained from a 2x2 coarse grid by repeated
midpoint refinement.  Every element is an axis-aligned square of side ``h``,
so one set of reference shape functions and gradients serves all elements.
Node numbering is row-major: node ``(i, j)`` (``i`` along x) has index
``j * n_side_nodes + i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CoercivityError, ConfigurationError, DimensionError, SolverError

MAX_REFINEMENT = 6

# 3-point Gauss-Legendre on [0, 1]
_GAUSS_T = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


def _lagrange_q2(t):
    t = np.asarray(t, dtype=float)
    vals = np.stack([2.0 * (t - 0.5) * (t - 1.0), -4.0 * t * (t - 1.0), 2.0 * t * (t - 0.5)], axis=-1)
    ders = np.stack([4.0 * t - 3.0, 4.0 - 8.0 * t, 4.0 * t - 1.0], axis=-1)
    return vals, ders


def _reference_tables():
    v, d = _lagrange_q2(_GAUSS_T)  # (3 pts, 3 funcs)
    # quadrature point g = gb*3 + ga, local node k = b*3 + a
    phi = np.einsum("ga,hb->hgba", v, v).reshape(9, 9)
    dphi_dx = np.einsum("ga,hb->hgba", d, v).reshape(9, 9)
    dphi_dy = np.einsum("ga,hb->hgba", v, d).reshape(9, 9)
    weights = np.outer(_GAUSS_W, _GAUSS_W).reshape(9)
    # per-point contribution to the reference stiffness: grad phi_i . grad phi_j
    grad_outer = np.einsum("gi,gj->gij", dphi_dx, dphi_dx) + np.einsum("gi,gj->gij", dphi_dy, dphi_dy)
    return phi, dphi_dx, dphi_dy, weights, grad_outer


PHI, DPHI_DX, DPHI_DY, QUAD_WEIGHTS, GRAD_OUTER = _reference_tables()
for _a in (PHI, DPHI_DX, DPHI_DY, QUAD_WEIGHTS, GRAD_OUTER):
    _a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class StructuredQuadMesh:
    """Uniform Q2 quadrilateral mesh of ``[0, 1]^2``.

    Attributes
    ----------
    refinement_level : int
        Number of midpoint refinements of the 4-element coarse grid.
    nodes : ndarray, shape (J_h, 2)
    elements : ndarray, shape (n_elements, 9)
        Local node ``b*3 + a`` sits at reference position ``(a/2, b/2)``.
    boundary_nodes : ndarray of int
        Sorted indices of nodes on the boundary of the square.
    """

    refinement_level: int
    nodes: np.ndarray
    elements: np.ndarray
    boundary_nodes: np.ndarray
    interior_nodes: np.ndarray = field(repr=False)

    @property
    def J_h(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def elements_per_side(self) -> int:
        return 2 ** (self.refinement_level + 1)

    @property
    def nodes_per_side(self) -> int:
        return 2 * self.elements_per_side + 1

    @property
    def h(self) -> float:
        return 1.0 / self.elements_per_side

    def quadrature_points(self) -> np.ndarray:
        """Physical coordinates of the 3x3 Gauss points, shape ``(n_elements, 9, 2)``."""
        return _quadrature_points(self.refinement_level)

    def quadrature_weights(self) -> np.ndarray:
        """Physical quadrature weights (reference weights times ``h^2``)."""
        return QUAD_WEIGHTS * self.h**2

    def to_quadrature(self, nodal: np.ndarray) -> np.ndarray:
        """Interpolate nodal field(s) to Gauss points.

        ``nodal`` has shape ``(J_h,)`` or ``(k, J_h)``; the result has shape
        ``(n_elements, 9)`` or ``(k, n_elements, 9)``.
        """
        nodal = np.asarray(nodal, dtype=float)
        if nodal.shape[-1] != self.J_h:
            raise DimensionError(f"field of length {nodal.shape[-1]} does not match mesh with J_h={self.J_h}")
        return np.einsum("...ek,gk->...eg", nodal[..., self.elements], PHI)


@lru_cache(maxsize=None)
def _quadrature_points(level: int) -> np.ndarray:
    n = 2 ** (level + 1)
    h = 1.0 / n
    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    origin = np.stack([ex.ravel(), ey.ravel()], axis=-1) * h  # element order e = ey*n + ex
    gx, gy = np.meshgrid(_GAUSS_T, _GAUSS_T, indexing="xy")
    local = np.stack([gx.ravel(), gy.ravel()], axis=-1) * h  # g = gb*3 + ga
    pts = origin[:, None, :] + local[None, :, :]
    pts.setflags(write=False)
    return pts


@lru_cache(maxsize=None)
def build_mesh(refinement_level: int) -> StructuredQuadMesh:
    """Build the Q2 mesh after ``refinement_level`` midpoint refinements.

    Level 0 is the coarse grid of four elements (25 nodes); each level
    quadruples the element count.
    """
    if not isinstance(refinement_level, (int, np.integer)) or refinement_level < 0:
        raise ConfigurationError(f"refinement level must be a natural number, got {refinement_level!r}")
    if refinement_level > MAX_REFINEMENT:
        raise ConfigurationError(f"refinement level {refinement_level} exceeds the memory guard {MAX_REFINEMENT}")
    level = int(refinement_level)
    n = 2 ** (level + 1)
    ns = 2 * n + 1
    coords = np.linspace(0.0, 1.0, ns)
    X, Y = np.meshgrid(coords, coords, indexing="xy")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=-1)

    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    base = (2 * ey.ravel()) * ns + 2 * ex.ravel()
    a, b = np.meshgrid(np.arange(3), np.arange(3), indexing="xy")
    offsets = (b.ravel() * ns + a.ravel())
    elements = base[:, None] + offsets[None, :]

    ii, jj = np.meshgrid(np.arange(ns), np.arange(ns), indexing="xy")
    on_bnd = ((ii == 0) | (ii == ns - 1) | (jj == 0) | (jj == ns - 1)).ravel()
    boundary = np.flatnonzero(on_bnd)
    interior = np.flatnonzero(~on_bnd)
    for arr in (nodes, elements, boundary, interior):
        arr.setflags(write=False)
    return StructuredQuadMesh(level, nodes, elements, boundary, interior)


def _scatter(mesh: StructuredQuadMesh, local: np.ndarray) -> sp.csr_matrix:
    """Sum element matrices ``local`` (n_el, 9, 9) into a global CSR matrix."""
    rows = np.repeat(mesh.elements, 9, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, 9)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.J_h, mesh.J_h))
    return A.tocsr()


@lru_cache(maxsize=None)
def _mass_cached(level: int) -> sp.csr_matrix:
    mesh = build_mesh(level)
    w = mesh.quadrature_weights()
    Me = np.einsum("g,gi,gj->ij", w, PHI, PHI)
    M = _scatter(mesh, np.broadcast_to(Me, (mesh.n_elements, 9, 9)))
    return M


def assemble_mass(mesh: StructuredQuadMesh) -> sp.csr_matrix:
    """Consistent Q2 mass matrix ``M_ij = int phi_i phi_j``."""
    return _mass_cached(mesh.refinement_level).copy()


Coefficient = Union[float, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def coefficient_at_quadrature(mesh: StructuredQuadMesh, coeff: Coefficient) -> np.ndarray:
    """Resolve a coefficient spec to values at Gauss points, shape ``(n_el, 9)``.

    ``coeff`` may be a scalar, an array already laid out per Gauss point, or
    a callable taking points of shape ``(..., 2)``.
    """
    shape = (mesh.n_elements, 9)
    if callable(coeff):
        vals = np.asarray(coeff(mesh.quadrature_points()), dtype=float)
        vals = np.broadcast_to(vals, shape)
    else:
        vals = np.asarray(coeff, dtype=float)
        if vals.ndim == 0:
            vals = np.full(shape, float(vals))
        elif vals.shape != shape:
            raise DimensionError(f"coefficient array has shape {vals.shape}, expected {shape}")
    if not np.all(np.isfinite(vals)):
        raise CoercivityError("coefficient is not finite at some quadrature point")
    if np.any(vals <= 0.0):
        e, g = np.unravel_index(np.argmin(vals), shape)
        raise CoercivityError(
            f"coefficient {vals[e, g]:.3e} <= 0 at element {e}, quadrature point {g}"
        )
    return vals


def element_stiffness(coeff_qp: np.ndarray) -> np.ndarray:
    """Element stiffness blocks ``(n_el, 9, 9)`` from Gauss-point coefficients.

    On square elements the Jacobian factors cancel in 2D, so the block is the
    weighted sum of reference gradient products.
    """
    return np.einsum("eg,g,gij->eij", coeff_qp, QUAD_WEIGHTS, GRAD_OUTER)


def assemble_stiffness(mesh: StructuredQuadMesh, coeff: Coefficient = 1.0, check: bool = True) -> sp.csr_matrix:
    """Stiffness matrix ``K_ij = int a grad phi_i . grad phi_j``.

    Raises
    ------
    CoercivityError
        If the coefficient is non-positive at a Gauss point.
    """
    if check:
        a = coefficient_at_quadrature(mesh, coeff)
    else:
        a = np.broadcast_to(np.asarray(coeff, dtype=float), (mesh.n_elements, 9))
    return _scatter(mesh, element_stiffness(a))


@lru_cache(maxsize=None)
def _load_unit(level: int) -> np.ndarray:
    mesh = build_mesh(level)
    Fe = mesh.quadrature_weights() @ PHI  # int phi_k over one element
    F = np.zeros(mesh.J_h)
    np.add.at(F, mesh.elements, np.broadcast_to(Fe, (mesh.n_elements, 9)))
    F.setflags(write=False)
    return F


def assemble_load(mesh: StructuredQuadMesh, f: float = -1.0) -> np.ndarray:
    """Load vector for a constant forcing ``f``."""
    return float(f) * _load_unit(mesh.refinement_level)


def restrict_interior(mesh: StructuredQuadMesh, A: sp.spmatrix) -> sp.csc_matrix:
    """Eliminate Dirichlet rows and columns (homogeneous data keeps symmetry)."""
    idx = mesh.interior_nodes
    return sp.csr_matrix(A)[idx][:, idx].tocsc()


def solve_poisson(
    mesh: StructuredQuadMesh,
    coeff: Coefficient = 1.0,
    f: float = -1.0,
    method: str = "direct",
    rtol: float = 1e-10,
) -> np.ndarray:
    """Solve ``-div(a grad u) = f`` with ``u = 0`` on the boundary.

    Returns the nodal field of length ``J_h``; boundary entries are exactly 0.
    """
    K = restrict_interior(mesh, assemble_stiffness(mesh, coeff))
    F = assemble_load(mesh, f)[mesh.interior_nodes]
    if method == "direct":
        x = spla.spsolve(K, F)
    elif method == "cg":
        x, info = spla.cg(K, F, rtol=rtol * 1e-2, maxiter=10 * K.shape[0])
        if info != 0:
            res = np.linalg.norm(K @ x - F) / max(np.linalg.norm(F), 1e-300)
            raise SolverError(f"CG did not converge (info={info}, relative residual {res:.2e})", residual=res)
    else:
        raise ConfigurationError(f"unknown linear solver {method!r}")
    fnorm = np.linalg.norm(F)
    res = np.linalg.norm(K @ x - F) / fnorm if fnorm > 0 else np.linalg.norm(K @ x)
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"linear solve residual {res:.2e} exceeds {rtol:.0e}", residual=res)
    u = np.zeros(mesh.J_h)
    u[mesh.interior_nodes] = x
    return u


def _check_field(u, mesh):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != mesh.J_h:
        raise DimensionError(f"nodal field of length {u.shape[-1]} does not match mesh with J_h={mesh.J_h}")
    return u


@lru_cache(maxsize=None)
def _average_weights(level: int) -> np.ndarray:
    # 1^T M; exact for Q2 because sum_j phi_j = 1
    w = np.asarray(_mass_cached(level).sum(axis=0)).ravel()
    w.setflags(write=False)
    return w


def qoi_average(u, mesh: StructuredQuadMesh) -> float:
    """Spatial average ``(1/|D|) int u`` (``|D| = 1``), computed as ``1^T M u``."""
    u = _check_field(u, mesh)
    return u @ _average_weights(mesh.refinement_level)


def qoi_integral_square(u, mesh: StructuredQuadMesh) -> float:
    """``int u^2`` computed as ``u^T M u``."""
    u = _check_field(u, mesh)
    M = _mass_cached(mesh.refinement_level)
    return float(u @ (M @ u))


def qoi_max(u, mesh: StructuredQuadMesh) -> float:
    """Maximum over nodal values (element interiors are not searched)."""
    u = _check_field(u, mesh)
    return float(np.max(u))


QOI_FUNCTIONS = {
    "average": qoi_average,
    "integral_square": qoi_integral_square,
    "max": qoi_max,
}


def evaluate_qoi(kind: str, u, mesh: StructuredQuadMesh) -> float:
    try:
        fn = QOI_FUNCTIONS[kind]
    except KeyError:
        raise ConfigurationError(f"unknown QoI kind {kind!r}; expected one of {sorted(QOI_FUNCTIONS)}") from None
    return fn(u, mesh)
