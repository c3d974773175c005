"""NumPy/SciPy implementations of the compiled kernels (same signatures)."""
from __future__ import annotations

import numpy as np
from scipy.linalg import LinAlgError, cho_solve_banded, cholesky_banded

EXP_LIMIT = 700.0
_KDE_CHUNK = 4_000_000


def mc_solve_batch(eps, modes_qp, mu, a_min, grad_w, band_pos, load, avg_w, mass_band, kind, kd, out, status):
    n = load.shape[0]
    n_el = modes_qp.shape[1]
    flat_pos = band_pos.reshape(-1)
    keep = flat_pos >= 0
    pos = flat_pos[keep]
    size = (kd + 1) * n
    for m in range(eps.shape[0]):
        gamma = mu + np.tensordot(eps[m], modes_qp, axes=(0, 0))
        if np.max(gamma) > EXP_LIMIT:
            status[m], out[m] = 1, 0.0
            continue
        a = a_min + np.exp(gamma)
        ke = np.einsum("eg,gij->eij", a, grad_w).reshape(n_el * 81)
        ab = np.bincount(pos, weights=ke[keep], minlength=size).reshape(n, kd + 1).T
        try:
            c = cholesky_banded(ab, lower=True, check_finite=False)
        except LinAlgError:
            status[m], out[m] = 2, 0.0
            continue
        u = cho_solve_banded((c, True), load, check_finite=False)
        status[m] = 0
        if kind == 0:
            out[m] = avg_w @ u
        elif kind == 1:
            acc = mass_band[:, 0] @ (u * u)
            for d in range(1, kd + 1):
                acc += 2.0 * (mass_band[: n - d, d] * u[d:]) @ u[: n - d]
            out[m] = acc
        else:
            out[m] = max(0.0, float(np.max(u)))


def kde_eval(samples, x, h, out):
    samples = np.asarray(samples, dtype=float)
    x = np.asarray(x, dtype=float)
    norm = 1.0 / (h * samples.size * np.sqrt(2.0 * np.pi))
    step = max(1, _KDE_CHUNK // max(samples.size, 1))
    for s in range(0, x.size, step):
        z = (x[s : s + step, None] - samples[None, :]) / h
        out[s : s + step] = np.exp(-0.5 * z * z).sum(axis=1) * norm
