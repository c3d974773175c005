"""Moment/cumulant algebra and truncated Gram-Charlier / Edgeworth densities.

Both expansions correct a standard Gaussian kernel ``s(x)`` and are written
for a standardized variable (zero mean, unit variance).  With

    D^l s(x) = (-1)^l He_l(x) s(x)

every correction term becomes a Hermite polynomial times ``s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DegenerateDistributionError
from .hermite import he_table

MAX_ORDER = 8
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class MomentVector:
    """Raw moments ``m_1..m_L``; ``m[0]`` holds ``m_1``."""

    m: np.ndarray
    standardized: bool = False
    stderr: np.ndarray | None = None

    def __post_init__(self):
        m = np.asarray(self.m, dtype=float).ravel()
        if m.size > MAX_ORDER:
            raise ConfigurationError(f"at most {MAX_ORDER} moments are supported, got {m.size}")
        object.__setattr__(self, "m", m)

    @property
    def L(self) -> int:
        return self.m.size

    def __getitem__(self, l: int) -> float:
        """1-based access: ``mv[1]`` is the mean."""
        if l == 0:
            return 1.0
        return float(self.m[l - 1])


@dataclass(frozen=True)
class CumulantVector:
    """Cumulants ``kappa_1..kappa_L``; ``kappa[0]`` holds ``kappa_1``."""

    kappa: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=float).ravel())

    @property
    def L(self) -> int:
        return self.kappa.size

    def __getitem__(self, l: int) -> float:
        return float(self.kappa[l - 1])

    def is_standardized(self, tol: float = 1e-10) -> bool:
        return self.L >= 2 and abs(self.kappa[0]) <= tol and abs(self.kappa[1] - 1.0) <= tol


def _printed_cumulants(m):
    m1, m2, m3, m4, m5, m6 = (list(m) + [0.0] * 6)[:6]
    return [
        m1,
        m2 - m1**2,
        m3 + 2 * m1**3 - 3 * m1 * m2,
        m4 - 6 * m1**4 + 12 * m1**2 * m2 - 3 * m2**2 - 4 * m1 * m3,
        m5 - 5 * m4 * m1 - 10 * m3 * m2 + 20 * m3 * m1**2 + 30 * m2**2 * m1 - 60 * m2 * m1**3 + 24 * m1**5,
        m6 - 6 * m5 * m1 - 15 * m4 * m2 + 30 * m4 * m1**2 - 10 * m3**2 + 120 * m3 * m2 * m1
        - 120 * m3 * m1**3 + 30 * m2**3 - 270 * m2**2 * m1**2 + 360 * m2 * m1**4 - 120 * m1**6,
    ]


def _recursive_cumulants(m):
    # kappa_n = m_n - sum_{k=1}^{n-1} C(n-1, k-1) kappa_k m_{n-k}
    mm = [1.0] + list(m)
    kappa = []
    for n in range(1, len(mm)):
        val = mm[n]
        for k in range(1, n):
            val -= math.comb(n - 1, k - 1) * kappa[k - 1] * mm[n - k]
        kappa.append(val)
    return kappa


def moments_to_cumulants(m: MomentVector) -> CumulantVector:
    """Cumulants from raw moments.

    Orders up to 6 use the explicit polynomial formulas; higher orders use
    the recursive moment-cumulant relation.
    """
    L = m.L
    if L <= 6:
        kappa = _printed_cumulants(m.m)[:L]
    else:
        kappa = _printed_cumulants(m.m[:6]) + _recursive_cumulants(m.m)[6:]
    return CumulantVector(np.array(kappa))


def cumulants_to_moments(kappa: CumulantVector) -> MomentVector:
    """Raw moments from cumulants (complete Bell polynomials of the cumulants)."""
    k = list(kappa.kappa)
    return MomentVector(np.array([bell(n, k[:n]) for n in range(1, kappa.L + 1)]))


def standardize_moments(m_raw: MomentVector) -> MomentVector:
    """Moments of ``(Q - m_1) / sqrt(m_2 - m_1^2)`` by binomial expansion.

    The expansion cancels catastrophically when ``|m_1|`` greatly exceeds
    the standard deviation; roughly ``l * log10(|m_1| / sd)`` digits of the
    order-``l`` moment are lost.

    Raises
    ------
    DegenerateDistributionError
        If the variance is not positive.
    """
    if m_raw.L < 2:
        raise ConfigurationError("standardization needs at least two moments")
    mm = np.concatenate([[1.0], m_raw.m])
    mu = mm[1]
    var = mm[2] - mu**2
    scale = max(abs(mm[2]), 1e-300)
    if not var > 1e-14 * scale:
        raise DegenerateDistributionError(f"variance {var:.3e} is not positive; the distribution is degenerate")
    sd = math.sqrt(var)
    out = []
    for n in range(1, m_raw.L + 1):
        central = sum(math.comb(n, k) * mm[k] * (-mu) ** (n - k) for k in range(n + 1))
        out.append(central / sd**n)
    out[0] = 0.0
    out[1] = 1.0
    return MomentVector(np.array(out), standardized=True)


def bell(l: int, xs) -> float:
    """Complete Bell polynomial ``B_l(x_1, ..., x_l)``.

    Uses ``B_{n+1} = sum_k C(n, k) B_{n-k} x_{k+1}`` with ``B_0 = 1``.
    """
    if l < 0 or l > 3 * MAX_ORDER:
        raise ConfigurationError(f"Bell polynomial order {l} is out of range")
    xs = list(xs)
    if len(xs) < l:
        raise ConfigurationError(f"B_{l} needs {l} arguments, got {len(xs)}")
    B = [1.0]
    for n in range(l):
        B.append(sum(math.comb(n, k) * B[n - k] * xs[k] for k in range(n + 1)))
    return float(B[l])


def gaussian_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x) / _SQRT_2PI


def gaussian_derivative(l: int, x):
    """``d^l/dx^l s(x) = (-1)^l He_l(x) s(x)``."""
    if l < 0 or l > 14:
        raise ConfigurationError(f"derivative order {l} outside [0, 14]")
    x = np.asarray(x, dtype=float)
    out = (-1) ** l * he_table(l, x)[..., l] * gaussian_pdf(x)
    return out if out.ndim else float(out)


# Edgeworth coefficient functions: theta_l = sum c * prod(nu_k^e) * D^(d) s.
# Each term is (coefficient, {cumulant order: power}, derivative order).
_ED_TERMS = {
    1: [(1 / 6, {3: 1}, 3)],
    2: [(1 / 24, {4: 1}, 4), (1 / 72, {3: 2}, 6)],
    3: [(1 / 120, {5: 1}, 5), (1 / 144, {3: 1, 4: 1}, 7), (1 / 1296, {3: 3}, 9)],
    4: [
        (1 / 720, {6: 1}, 6),
        (1 / 1152, {4: 2}, 8),
        (1 / 720, {3: 1, 5: 1}, 8),
        (1 / 1728, {3: 2, 4: 1}, 10),
        (1 / 31104, {3: 4}, 12),
    ],
}
MAX_ED_ORDER = 4


@dataclass(frozen=True)
class TruncatedSeries:
    """Density ``s(x) * sum_k c_k He_k(x)`` for a standardized variable.

    ``hermite_coeffs[k]`` multiplies ``He_k(x) s(x)``.  Values may be
    negative; truncated expansions are not guaranteed to be densities.
    """

    kind: str
    order: int
    hermite_coeffs: np.ndarray
    cumulants: np.ndarray
    r: float = 1.0

    def __call__(self, x):
        return evaluate_series(self, x)


def _require_standardized(kappa: CumulantVector, needed: int):
    if kappa.L < needed:
        raise ConfigurationError(f"expansion needs cumulants up to order {needed}, got {kappa.L}")
    if not kappa.is_standardized(1e-8):
        raise ConfigurationError(
            f"expansion requires standardized cumulants (kappa_1=0, kappa_2=1), got "
            f"kappa_1={kappa[1]:.3e}, kappa_2={kappa[2]:.6f}"
        )


def gc_series(kappa_std: CumulantVector, order: int) -> TruncatedSeries:
    """Gram-Charlier expansion truncated at Bell order ``order`` (3..6 in practice).

    ``(-1)^l D^l s / l! = He_l s / l!`` so the coefficient of ``He_l s`` is
    ``B_l(0, 0, kappa_3, ..., kappa_l) / l!``.
    """
    if order < 2 or order > MAX_ORDER:
        raise ConfigurationError(f"Gram-Charlier order must lie in [2, {MAX_ORDER}], got {order}")
    _require_standardized(kappa_std, order)
    x = [0.0, 0.0] + list(kappa_std.kappa[2:order])
    coeffs = np.zeros(order + 1)
    coeffs[0] = 1.0
    for l in range(3, order + 1):
        coeffs[l] = bell(l, x[:l]) / math.factorial(l)
    return TruncatedSeries("GC", order, coeffs, kappa_std.kappa[:order].copy())


def ed_series(kappa_std: CumulantVector, order: int, r: float = 1.0) -> TruncatedSeries:
    """Edgeworth partial sum ``sum_{l=0}^{order} (-1)^l theta_l / r^{l/2}``.

    ``nu_l = kappa_l`` (one summand, standardized).  For general ``r`` the
    ``nu_l`` are taken as the per-summand scaled cumulants.
    """
    if order < 0 or order > MAX_ED_ORDER:
        raise ConfigurationError(f"Edgeworth order must lie in [0, {MAX_ED_ORDER}], got {order}")
    needed = max(2, order + 2)
    _require_standardized(kappa_std, needed)
    nu = {k: float(kappa_std.kappa[k - 1]) for k in range(3, needed + 1)}
    coeffs = np.zeros(3 * order + 1 if order else 1)
    coeffs[0] = 1.0
    for l in range(1, order + 1):
        sign = (-1) ** l / r ** (l / 2)
        for c, powers, d in _ED_TERMS[l]:
            val = c
            for k, e in powers.items():
                val *= nu[k] ** e
            # D^d s = (-1)^d He_d s
            coeffs[d] += sign * val * (-1) ** d
    return TruncatedSeries("ED", order, coeffs, kappa_std.kappa[:needed].copy(), r)


def evaluate_series(series: TruncatedSeries, x):
    x = np.asarray(x, dtype=float)
    c = series.hermite_coeffs
    H = he_table(len(c) - 1, x)
    out = (H @ c) * gaussian_pdf(x)
    return out if out.ndim else float(out)


def build_series(kind: str, kappa_std: CumulantVector, order: int) -> TruncatedSeries:
    kind = kind.upper()
    if kind == "GC":
        return gc_series(kappa_std, order)
    if kind == "ED":
        return ed_series(kappa_std, order)
    raise ConfigurationError(f"unknown series kind {kind!r}; expected GC or ED")


def series_orders(kind: str, l_max: int | None = None) -> range:
    """Truncation orders available for ``kind``: GC 3..6, ED 1..4 by default."""
    kind = kind.upper()
    if kind == "GC":
        return range(3, (l_max or 6) + 1)
    if kind == "ED":
        return range(1, (l_max or MAX_ED_ORDER) + 1)
    raise ConfigurationError(f"unknown series kind {kind!r}")


def cumulants_needed(kind: str, order: int) -> int:
    return order if kind.upper() == "GC" else order + 2
