"""Stochastic Galerkin solver with an orthonormal Hermite basis.

The coefficient is projected onto the total-degree space of degree ``q``
and the solution is sought in the space of degree ``p``.  The Galerkin
system couples the deterministic stiffness matrices of the coefficient
modes through the triple products ``E[H_q H_p H_p']``:

    sum_{p'} ( sum_q G[q, p, p'] K_q ) u_{p'} = E[H_p] F.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import hermite
from .errors import CoercivityError, ConfigurationError, DimensionError, SolverError, UnsupportedQoIError
from .fem import (
    StructuredQuadMesh,
    _average_weights,
    _mass_cached,
    assemble_load,
    assemble_stiffness,
    restrict_interior,
)
from .hermite import MultiIndexSet, multi_index_set
from .kl import KLField
from .mc import SampleSet, sample_parameters
from .series import MomentVector

log = logging.getLogger(__name__)

DEFAULT_PROJECTION_POINTS = 20


@dataclass(frozen=True, eq=False)
class CoefficientExpansion:
    """Hermite modes ``a_q`` of the coefficient at the mesh Gauss points.

    ``fields`` has shape ``(len(index_set), n_elements, 9)``.
    """

    index_set: MultiIndexSet
    fields: np.ndarray
    mesh: StructuredQuadMesh


def project_coefficient(
    kl: KLField,
    q: int,
    method: str = "quadrature",
    n_points: int = DEFAULT_PROJECTION_POINTS,
) -> CoefficientExpansion:
    """``a_q(x) = E[a(x, eps) H_q(eps)]`` for all ``q`` of total degree ``<= q``.

    ``method="quadrature"`` uses a tensor Gauss-Hermite rule with ``n_points``
    per dimension.  ``method="closed_form"`` uses
    ``E[exp(c.eps) H_q] = exp(|c|^2/2) prod_n c_n^{q_n} / sqrt(q_n!)``.
    """
    qset = multi_index_set(kl.N, q)
    modes = kl.scaled_modes_at_quadrature()  # (N, n_el, 9)
    if method == "quadrature":
        if n_points < q + 2:
            raise ConfigurationError(f"projection rule with {n_points} points per dimension is too coarse for q={q}")
        rule = hermite.tensor_rule(n_points, kl.N)
        H = hermite.eval_basis(qset, rule.nodes)  # (n_nodes, K)
        fields = np.zeros((len(qset),) + modes.shape[1:])
        for node, w, h in zip(rule.nodes, rule.weights, H):
            gamma = kl.mu_gamma + np.tensordot(node, modes, axes=(0, 0))
            fields += (w * np.exp(gamma))[None] * h[:, None, None]
        fields[0] += kl.a_min
    elif method == "closed_form":
        base = np.exp(kl.mu_gamma + 0.5 * np.sum(modes**2, axis=0))
        fields = np.empty((len(qset),) + modes.shape[1:])
        for k, idx in enumerate(qset.indices):
            term = base.copy()
            for n, qn in enumerate(idx):
                if qn:
                    term *= modes[n] ** qn / math.sqrt(math.factorial(int(qn)))
            fields[k] = term
        fields[0] += kl.a_min
    else:
        raise ConfigurationError(f"unknown projection method {method!r}")
    return CoefficientExpansion(qset, fields, kl.mesh)


@dataclass(frozen=True, eq=False)
class SGSystem:
    """Block system on interior nodes, unknowns ordered block-by-block in ``p``."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    index_set: MultiIndexSet
    mesh: StructuredQuadMesh
    mean_block: sp.csc_matrix
    f: float

    @property
    def n_blocks(self) -> int:
        return len(self.index_set)

    @property
    def block_size(self) -> int:
        return self.mesh.interior_nodes.size


def assemble_sg_system(
    mesh: StructuredQuadMesh,
    coeff_exp: CoefficientExpansion,
    index_set_p: MultiIndexSet,
    f: float = -1.0,
    drop_tol: float = 1e-14,
) -> SGSystem:
    """Assemble ``A = sum_q G_q (x) K_q`` with Dirichlet nodes eliminated."""
    if coeff_exp.index_set.N != index_set_p.N:
        raise DimensionError("coefficient and solution index sets have different dimensions")
    G = hermite.triple_products(coeff_exp.index_set, index_set_p)
    if np.min(coeff_exp.fields[0]) <= 0:
        raise CoercivityError("mean coefficient mode is not positive")
    blocks = []
    mean_block = None
    for k in range(len(coeff_exp.index_set)):
        Gq = G[k]
        if not np.any(np.abs(Gq) > drop_tol):
            continue
        Kq = restrict_interior(mesh, assemble_stiffness(mesh, coeff_exp.fields[k], check=(k == 0)))
        if k == 0:
            mean_block = Kq
        Gq = np.where(np.abs(Gq) > drop_tol, Gq, 0.0)
        blocks.append(sp.kron(sp.csr_matrix(Gq), Kq, format="csr"))
    A = blocks[0]
    for B in blocks[1:]:
        A = A + B
    F = assemble_load(mesh, f)[mesh.interior_nodes]
    rhs = np.zeros(len(index_set_p) * F.size)
    rhs[: F.size] = F  # E[H_p] = delta_{p,0}
    return SGSystem(A.tocsr(), rhs, index_set_p, mesh, mean_block, float(f))


@dataclass(frozen=True, eq=False)
class SGSolution:
    """Nodal modes ``u_p``, shape ``(len(index_set), J_h)``."""

    index_set: MultiIndexSet
    modes: np.ndarray
    mesh: StructuredQuadMesh
    residual: float

    def evaluate(self, eps) -> np.ndarray:
        """Nodal solution at parameter(s) ``eps``."""
        H = hermite.eval_basis(self.index_set, eps)
        return H @ self.modes


def solve_sg(system: SGSystem, method: str = "direct", rtol: float = 1e-8, maxiter: int = 2000) -> SGSolution:
    """Solve the block system.

    ``method="cg"`` runs conjugate gradients preconditioned by the mean block
    factorization applied to each block.
    """
    A, b = system.matrix, system.rhs
    bnorm = np.linalg.norm(b)
    history = []
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b)
    elif method == "cg":
        lu = spla.splu(system.mean_block.tocsc())
        nb, n = system.n_blocks, system.block_size

        def precond(r):
            return lu.solve(r.reshape(nb, n).T).T.ravel()

        Mop = spla.LinearOperator(A.shape, matvec=precond)
        x, info = spla.cg(
            A, b, rtol=rtol * 1e-2, maxiter=maxiter, M=Mop,
            callback=lambda xk: history.append(np.linalg.norm(A @ xk - b) / bnorm),
        )
        if info != 0:
            raise SolverError(
                f"stochastic Galerkin CG did not converge after {len(history)} iterations; "
                f"residual history tail {history[-5:]}",
                residual=history[-1] if history else None,
            )
    else:
        raise ConfigurationError(f"unknown SG solver {method!r}")
    res = np.linalg.norm(A @ x - b) / bnorm if bnorm > 0 else np.linalg.norm(A @ x)
    if not np.isfinite(res) or res > rtol:
        raise SolverError(f"stochastic Galerkin residual {res:.2e} exceeds {rtol:.0e}", residual=res)
    mesh = system.mesh
    modes = np.zeros((system.n_blocks, mesh.J_h))
    modes[:, mesh.interior_nodes] = x.reshape(system.n_blocks, -1)
    return SGSolution(system.index_set, modes, mesh, float(res))


@dataclass(frozen=True, eq=False)
class QoIPolynomial:
    """``Q(eps) = sum_p beta_p H_p(eps)`` in the orthonormal Hermite basis."""

    index_set: MultiIndexSet
    beta: np.ndarray
    kind: str = ""

    @property
    def degree(self) -> int:
        return self.index_set.p

    def __call__(self, eps):
        return hermite.eval_basis(self.index_set, eps) @ self.beta


def qoi_polynomial(sol: SGSolution, kind: str, mesh: StructuredQuadMesh | None = None, strict: bool = False) -> QoIPolynomial:
    """Hermite coefficients of a QoI of the SG solution.

    ``average``: ``beta_p = 1^T M u_p``.  ``integral_square``: by default
    ``beta_p = u_p^T M u_p``, one term per mode.  With ``strict=True`` the
    exact expansion of ``int u(., eps)^2`` is returned instead; it lives in
    the total-degree space of degree ``2p``.
    """
    mesh = mesh or sol.mesh
    if mesh.J_h != sol.modes.shape[1]:
        raise DimensionError("SG solution and mesh do not match")
    level = mesh.refinement_level
    if kind == "average":
        beta = sol.modes @ _average_weights(level)
        return QoIPolynomial(sol.index_set, beta, kind)
    if kind == "integral_square":
        M = _mass_cached(level)
        MU = (M @ sol.modes.T).T
        if not strict:
            return QoIPolynomial(sol.index_set, np.einsum("pj,pj->p", sol.modes, MU), kind)
        gram = sol.modes @ MU.T  # (P, P)
        rset = multi_index_set(sol.index_set.N, 2 * sol.index_set.p)
        G = hermite.triple_products(rset, sol.index_set)
        beta = np.einsum("rpq,pq->r", G, gram)
        return QoIPolynomial(rset, beta, kind + "_strict")
    if kind == "max":
        raise UnsupportedQoIError("the maximum QoI has no polynomial SG representation; use the Monte Carlo solver")
    raise ConfigurationError(f"unknown QoI kind {kind!r}")


def moment_rule_points(degree: int, L_max: int) -> int:
    """Gauss-Hermite points per dimension integrating ``Q^L_max`` exactly."""
    return hermite.points_for_degree(L_max * degree)


def exact_moments(qoi: QoIPolynomial, L_max: int, n_points: int | None = None) -> MomentVector:
    """``m_l = E[Q^l]`` for ``l = 1..L_max`` by tensor Gauss-Hermite quadrature.

    The default rule is exact for polynomials of degree ``L_max * p``.
    """
    needed = moment_rule_points(qoi.degree, L_max)
    n = needed if n_points is None else int(n_points)
    if n < needed:
        log.warning("moment rule with %d points per dimension is below the exactness threshold %d", n, needed)
    rule = hermite.tensor_rule(n, qoi.index_set.N)
    vals = qoi(rule.nodes)
    powers = vals[:, None] ** np.arange(1, L_max + 1)[None, :]
    return MomentVector(rule.weights @ powers)


def sample_qoi_polynomial(qoi: QoIPolynomial, M: int = 10_000, seed: int = 0) -> SampleSet:
    """Evaluate the QoI polynomial at ``M`` i.i.d. standard Gaussian draws (no PDE solves)."""
    eps = sample_parameters(M, qoi.index_set.N, seed)
    return SampleSet(qoi(eps), seed=seed, qoi_kind=qoi.kind, source="sg")


def run_sg(kl: KLField, p: int = 4, q: int = 5, f: float = -1.0, projection: str = "quadrature",
           solver: str = "direct") -> SGSolution:
    """Project, assemble and solve in one call."""
    coeff = project_coefficient(kl, q, method=projection)
    system = assemble_sg_system(kl.mesh, coeff, multi_index_set(kl.N, p), f)
    return solve_sg(system, method=solver)
