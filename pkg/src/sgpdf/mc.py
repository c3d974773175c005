"""Monte Carlo sampling of the PDE quantity of interest.

Each sample assembles the stiffness matrix on interior nodes directly in
LAPACK lower band storage and solves it with a banded Cholesky factorization.
With row-major numbering the half-bandwidth is ``2 * (n_side - 2) + 2``.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _backend
from .errors import ConfigurationError, DimensionError, NumericalError, SolverError
from .fem import GRAD_OUTER, QUAD_WEIGHTS, StructuredQuadMesh, _average_weights, _load_unit, _mass_cached, build_mesh
from .kl import KLField
from .series import MAX_ORDER, MomentVector

log = logging.getLogger(__name__)

QOI_CODES = {"average": 0, "integral_square": 1, "max": 2}
_STATUS_TEXT = {1: "coefficient exponent overflow", 2: "stiffness matrix not positive definite"}


@dataclass(frozen=True, eq=False)
class SampleSet:
    """QoI realizations with the provenance needed to reproduce them."""

    values: np.ndarray
    seed: int | None = None
    qoi_kind: str = ""
    source: str = "mc"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.isfinite(v)):
            raise NumericalError("sample set contains non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def M(self) -> int:
        return self.values.size

    def save(self, path) -> None:
        """Single-column CSV with ``#`` metadata lines."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {"seed": self.seed, "M": self.M, "qoi_kind": self.qoi_kind, "source": self.source, **self.metadata}
        header = "\n".join(f"{k}={v}" for k, v in meta.items()) + "\nvalue"
        np.savetxt(path, self.values, fmt="%.17g", header=header, comments="# ")

    @classmethod
    def load(cls, path) -> "SampleSet":
        meta = {}
        with Path(path).open() as fh:
            for line in fh:
                if not line.startswith("#"):
                    break
                text = line[1:].strip()
                if "=" in text:
                    k, v = text.split("=", 1)
                    meta[k.strip()] = v.strip()
        values = np.loadtxt(path, comments="#", ndmin=1)
        if values.size != int(meta.pop("M", values.size)):
            raise ConfigurationError(f"{path}: sample count does not match header")
        seed = meta.pop("seed", "None")
        return cls(
            values,
            seed=None if seed == "None" else int(seed),
            qoi_kind=meta.pop("qoi_kind", ""),
            source=meta.pop("source", "mc"),
            metadata=meta,
        )


def sample_parameters(M: int, N: int, seed: int) -> np.ndarray:
    """``M`` i.i.d. standard Gaussian ``N``-vectors from a Philox stream keyed by ``seed``."""
    if M < 1:
        raise ConfigurationError(f"number of samples must be >= 1, got {M}")
    if N < 1:
        raise ConfigurationError(f"parameter dimension must be >= 1, got {N}")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    return rng.standard_normal((int(M), int(N)))


@dataclass(frozen=True, eq=False)
class BandLayout:
    """Fixed per-mesh data shared by all samples."""

    band_pos: np.ndarray  # (n_el, 9, 9) int64 offsets, -1 for eliminated entries
    kd: int
    load_unit: np.ndarray  # interior load for f = 1
    avg_w: np.ndarray  # interior part of 1^T M
    mass_band: np.ndarray  # (n_int, kd + 1), mass_band[c, d] = M[c + d, c]
    grad_w: np.ndarray  # (9, 9, 9) quadrature-weighted gradient products


@lru_cache(maxsize=None)
def band_layout(level: int) -> BandLayout:
    mesh = build_mesh(level)
    n = mesh.interior_nodes.size
    to_int = np.full(mesh.J_h, -1, dtype=np.int64)
    to_int[mesh.interior_nodes] = np.arange(n)
    loc = to_int[mesh.elements]  # (n_el, 9)
    r = loc[:, :, None]
    c = loc[:, None, :]
    valid = (r >= 0) & (c >= 0) & (r >= c)
    kd = int(np.max(np.where(valid, r - c, 0)))
    pos = np.where(valid, c * (kd + 1) + (r - c), -1).astype(np.int64)
    M = _mass_cached(level).tocsr()[mesh.interior_nodes][:, mesh.interior_nodes].tocoo()
    lower = M.row >= M.col
    mass_band = np.zeros((n, kd + 1))
    mass_band[M.col[lower], (M.row - M.col)[lower]] = M.data[lower]
    grad_w = np.ascontiguousarray(QUAD_WEIGHTS[:, None, None] * GRAD_OUTER)
    return BandLayout(
        np.ascontiguousarray(pos),
        kd,
        np.ascontiguousarray(_load_unit(level)[mesh.interior_nodes]),
        np.ascontiguousarray(_average_weights(level)[mesh.interior_nodes]),
        mass_band,
        grad_w,
    )


def solve_batch(kl: KLField, qoi_kind: str, eps: np.ndarray, f: float = -1.0, backend: str | None = None):
    """QoI values and per-sample status codes (0 ok, 1 overflow, 2 not SPD)."""
    if qoi_kind not in QOI_CODES:
        raise ConfigurationError(f"unknown QoI kind {qoi_kind!r}; expected one of {sorted(QOI_CODES)}")
    layout = band_layout(kl.mesh.refinement_level)
    eps = np.ascontiguousarray(eps, dtype=float)
    out = np.empty(eps.shape[0])
    status = np.zeros(eps.shape[0], dtype=np.int32)
    _backend.get(backend).mc_solve_batch(
        eps,
        np.ascontiguousarray(kl.scaled_modes_at_quadrature()),
        float(kl.mu_gamma),
        float(kl.a_min),
        layout.grad_w,
        layout.band_pos,
        np.ascontiguousarray(float(f) * layout.load_unit),
        layout.avg_w,
        layout.mass_band,
        QOI_CODES[qoi_kind],
        layout.kd,
        out,
        status,
    )
    return out, status


def run_mc(
    mesh: StructuredQuadMesh,
    kl: KLField,
    qoi_kind: str,
    samples: np.ndarray,
    f: float = -1.0,
    fail_fast: bool = True,
    workers: int = 1,
    chunk: int = 2048,
    backend: str | None = None,
    seed: int | None = None,
) -> SampleSet:
    """Solve the PDE at every parameter vector and collect the QoI.

    Values are returned in input order.  ``workers > 1`` spreads chunks over
    threads; the compiled kernel releases the GIL, and results do not depend
    on the worker count.  With ``fail_fast=False`` failed samples are logged
    and dropped.

    Raises
    ------
    SolverError
        On the first failed sample when ``fail_fast`` is set.
    """
    if mesh.refinement_level != kl.mesh.refinement_level:
        raise DimensionError("mesh and KL field use different refinement levels")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    if samples.shape[1] != kl.N:
        raise DimensionError(f"samples have dimension {samples.shape[1]}, KL field has N={kl.N}")
    if samples.shape[0] == 0:
        raise ConfigurationError("no samples given")
    starts = range(0, samples.shape[0], chunk)

    def work(s):
        return solve_batch(kl, qoi_kind, samples[s : s + chunk], f, backend)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    values = np.concatenate([p[0] for p in parts])
    status = np.concatenate([p[1] for p in parts])
    bad = np.flatnonzero(status)
    if bad.size:
        first = int(bad[0])
        msg = f"sample {first} (eps={samples[first].tolist()}): {_STATUS_TEXT[int(status[first])]}"
        if fail_fast:
            raise SolverError(msg, sample_index=first)
        log.warning("%d of %d samples failed and were skipped; first: %s", bad.size, status.size, msg)
        values = values[status == 0]
    meta = {"sigma_gamma": kl.spec.sigma_gamma if kl.spec else "", "refinement": mesh.refinement_level}
    return SampleSet(values, seed=seed, qoi_kind=qoi_kind, source="mc", metadata=meta)


def mc_moments(sample_set: SampleSet, L_max: int = 6) -> MomentVector:
    """Sample moments ``m_l = mean(Q^l)`` with standard errors ``std(Q^l) / sqrt(M)``."""
    if sample_set.M == 0:
        raise ConfigurationError("cannot estimate moments from an empty sample set")
    if not 1 <= L_max <= MAX_ORDER:
        raise ConfigurationError(f"L_max must lie in [1, {MAX_ORDER}], got {L_max}")
    v = sample_set.values
    M = v.size
    m = np.empty(L_max)
    se = np.empty(L_max)
    power = np.ones_like(v)
    for l in range(L_max):
        power = power * v
        m[l] = math.fsum(power) / M
        if M > 1:
            se[l] = math.sqrt(max(math.fsum((power - m[l]) ** 2) / (M - 1), 0.0) / M)
        else:
            se[l] = float("nan")
    return MomentVector(m, stderr=se)
