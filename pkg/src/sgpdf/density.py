"""Histogram and KDE baselines, distances, and truncation-order selection."""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _backend
from .errors import ConfigurationError, DegenerateDistributionError
from .mc import SampleSet
from .series import (
    MomentVector,
    TruncatedSeries,
    build_series,
    cumulants_needed,
    moments_to_cumulants,
    series_orders,
    standardize_moments,
)

log = logging.getLogger(__name__)

DEFAULT_BINS = 50
DEFAULT_GRID = 201
MIN_CRUDE_SAMPLES = 100


def _values(samples) -> np.ndarray:
    v = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float).ravel()
    if v.size == 0:
        raise ConfigurationError("empty sample set")
    return v


def standardize_samples(samples) -> np.ndarray:
    """``(Q - mean) / std`` using the sample moments."""
    v = _values(samples)
    sd = v.std()
    if not sd > 0:
        raise DegenerateDistributionError("samples have zero spread")
    return (v - v.mean()) / sd


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    densities: np.ndarray
    M: int

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def bin_width(self) -> float:
        return float(np.mean(self.widths))


def build_histogram(samples, bins: int = DEFAULT_BINS) -> Histogram:
    """Density-normalized histogram on ``[min, max]`` of the samples."""
    if bins < 2:
        raise ConfigurationError(f"need at least 2 bins, got {bins}")
    v = _values(samples)
    lo, hi = float(v.min()), float(v.max())
    if not hi > lo:
        raise DegenerateDistributionError("all samples are equal; histogram is degenerate")
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    dens = counts / (v.size * np.diff(edges))
    return Histogram(edges, dens, v.size)


def kde(samples, h: float, x) -> np.ndarray:
    """Gaussian kernel density estimate ``(1/(hM)) sum_m s((x - Q_m)/h)``."""
    if not h > 0:
        raise ConfigurationError(f"bandwidth must be positive, got {h}")
    v = np.ascontiguousarray(_values(samples))
    xa = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)).ravel())
    out = np.empty(xa.size)
    _backend.get().kde_eval(v, xa, float(h), out)
    out = out.reshape(np.shape(x))
    return out if out.ndim else float(out)


def l2_distance(f: Callable, g: Callable, grid) -> float:
    """Root-mean-square difference of two pointwise functions over ``grid``."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigurationError("empty evaluation grid")
    d = np.asarray(f(grid), dtype=float) - np.asarray(g(grid), dtype=float)
    return math.sqrt(float(np.mean(d * d)))


def series_vs_histogram_distance(series: TruncatedSeries, hist: Histogram) -> float:
    """RMS of ``series - density`` over bin centers.

    ``hist`` must be built from standardized samples so that both live in the
    same coordinates.
    """
    return math.sqrt(float(np.mean((series(hist.centers) - hist.densities) ** 2)))


@dataclass(frozen=True)
class OrderSelectionReport:
    kind: str
    orders: list
    successive_l2: list  # entry k compares orders[k] with orders[k-1]; first is nan
    histogram_distances: list  # nan where not computed
    chosen_order: int
    branch: str
    tol: float
    grid: tuple = field(default=(), repr=False)

    def table(self) -> str:
        lines = [f"{self.kind} order selection ({self.branch} branch, tol={self.tol:g})",
                 f"{'order':>6} {'succ_l2':>12} {'hist_dist':>12}  chosen"]
        for o, d, h in zip(self.orders, self.successive_l2, self.histogram_distances):
            lines.append(f"{o:>6d} {_fmt(d):>12} {_fmt(h):>12}  {'*' if o == self.chosen_order else ''}")
        return "\n".join(lines)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# kind={self.kind}\n# branch={self.branch}\n# tol={self.tol:g}\n")
        buf.write("order,successive_l2,histogram_distance,chosen\n")
        for o, d, h in zip(self.orders, self.successive_l2, self.histogram_distances):
            buf.write(f"{o},{_fmt(d)},{_fmt(h)},{int(o == self.chosen_order)}\n")
        return buf.getvalue()


def _fmt(x) -> str:
    return "nan" if x is None or not np.isfinite(x) else f"{x:.6g}"


def standardized_cumulants(moments: MomentVector):
    return moments_to_cumulants(standardize_moments(moments))


def select_order(
    moment_provider: Callable[[int], MomentVector],
    kind: str,
    crude,
    tol: float = 1e-3,
    l_max: int | None = None,
    bins: int = DEFAULT_BINS,
    n_grid: int = DEFAULT_GRID,
) -> OrderSelectionReport:
    """Choose a truncation order for a GC or ED expansion.

    Orders are increased one at a time.  If the RMS differences between
    successive expansions decrease monotonically and the last one drops below
    ``tol`` the procedure stops (convergent branch).  Otherwise the order whose
    expansion is closest to a histogram of the standardized crude samples is
    taken (divergent branch), ties going to the smaller order.

    ``moment_provider(L)`` must return raw moments ``m_1..m_L``.
    """
    kind = kind.upper()
    if not tol > 0:
        raise ConfigurationError(f"tolerance must be positive, got {tol}")
    orders = list(series_orders(kind, l_max))
    top = {"GC": 6, "ED": 4}[kind]
    if orders[-1] > top:
        raise ConfigurationError(f"{kind} selection supports orders up to {top}")
    crude_std = standardize_samples(crude)
    if crude_std.size < MIN_CRUDE_SAMPLES:
        log.warning("only %d crude samples; the histogram comparison is unreliable below %d",
                    crude_std.size, MIN_CRUDE_SAMPLES)
    grid = np.linspace(crude_std.min(), crude_std.max(), n_grid)

    series = []
    succ = [float("nan")]
    for o in orders:
        kappa = standardized_cumulants(moment_provider(cumulants_needed(kind, o)))
        series.append(build_series(kind, kappa, o))
        if len(series) < 2:
            continue
        succ.append(l2_distance(series[-1], series[-2], grid))
        diffs = succ[1:]
        if any(b >= a for a, b in zip(diffs, diffs[1:])):
            break
        if diffs[-1] < tol:
            # the last increment changed the curve by less than tol: keep the previous order
            computed = [t.order for t in series]
            return OrderSelectionReport(kind, computed, succ, [float("nan")] * len(computed),
                                        series[-2].order, "convergent", tol, tuple(grid))

    # divergent branch: evaluate every available order against the histogram
    for o in orders[len(series):]:
        kappa = standardized_cumulants(moment_provider(cumulants_needed(kind, o)))
        series.append(build_series(kind, kappa, o))
        succ.append(l2_distance(series[-1], series[-2], grid))
    hist = build_histogram(crude_std, bins)
    dists = [series_vs_histogram_distance(s, hist) for s in series]
    best = min(dists)
    chosen = next(s.order for s, d in zip(series, dists) if d <= best * (1 + 1e-12))
    return OrderSelectionReport(kind, [s.order for s in series], succ, dists, chosen, "divergent", tol, tuple(grid))
