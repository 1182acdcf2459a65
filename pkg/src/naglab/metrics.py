"""Scalar distribution distances (KS, Wasserstein-1, kNN KL estimator) and
the analytic stationary density of the gradient-flow SDE.

Everything here is 1-D: the stationarity study it serves compares scalar
ensembles. Sample inputs are plain arrays; they are sorted internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, simpson

__all__ = [
    "ks_statistic",
    "wasserstein1",
    "kl_divergence_knn",
    "stationary_density",
    "StationaryDensity",
    "GridError",
]


class GridError(ValueError):
    """The quadrature grid does not cover the density's effective support."""


def _as_sorted(values, name, min_size=1):
    arr = np.sort(np.asarray(values, dtype=float).ravel())
    if arr.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} samples, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def ks_statistic(a, b):
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b|.

    Exact sup over the merged sample points (empirical CDFs are step
    functions, so the supremum is attained there).
    """
    a = _as_sorted(a, "a")
    b = _as_sorted(b, "b")
    support = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, support, side="right") / a.size
    cdf_b = np.searchsorted(b, support, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def wasserstein1(a, b):
    """1-D Wasserstein-1 distance: integral of |F_a - F_b|.

    Exact for the empirical measures; for equal sample sizes it coincides
    with the quantile coupling mean |sort(a) - sort(b)|.
    """
    a = _as_sorted(a, "a")
    b = _as_sorted(b, "b")
    events = np.sort(np.concatenate([a, b]))
    cdf_a = np.searchsorted(a, events[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, events[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * np.diff(events)))


def _knn_distance_within(a, k):
    """k-th nearest-neighbor distance of each a_i within the sorted array a,
    excluding the point itself. The k-th neighbor lies among the k sorted
    predecessors and k successors, so a 2k-candidate window suffices."""
    n = a.size
    cand = np.full((n, 2 * k), np.inf)
    for j in range(1, k + 1):
        cand[j:, j - 1] = a[j:] - a[:-j]  # left neighbors at offset j
        cand[:-j, k + j - 1] = a[j:] - a[:-j]  # right neighbors
    if k == 1:
        return np.minimum(cand[:, 0], cand[:, 1])
    return np.partition(cand, k - 1, axis=1)[:, k - 1]


def _knn_distance_cross(a, b, k):
    """k-th nearest-neighbor distance from each a_i into the sorted array b."""
    pos = np.searchsorted(b, a)
    offsets = np.arange(-k, k)
    idx = pos[:, None] + offsets[None, :]
    valid = (idx >= 0) & (idx < b.size)
    dist = np.full(idx.shape, np.inf)
    dist[valid] = np.abs(b[idx[valid]] - a.repeat(2 * k).reshape(idx.shape)[valid])
    if k == 1:
        return np.min(dist, axis=1)
    return np.partition(dist, k - 1, axis=1)[:, k - 1]


def kl_divergence_knn(a, b, k=1):
    """k-nearest-neighbor estimate of KL(a || b) for scalar samples.

    D = (1/n) sum_i log(nu_k(i) / rho_k(i)) + log(m / (n - 1)), where
    rho_k(i) is the k-NN distance of a_i within a and nu_k(i) within b.
    Ties are broken by a deterministic uniform jitter of magnitude
    1e-12 * scale before the neighbor queries; zero distances surviving the
    jitter raise, as the estimator is undefined there.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    a = _as_sorted(a, "a", min_size=k + 1)
    b = _as_sorted(b, "b", min_size=k + 1)
    scale = float(np.ptp(np.concatenate([a, b])))
    jitter_rng = np.random.default_rng(0)  # fixed stream keeps results replayable
    mag = 1e-12 * scale
    a = np.sort(a + jitter_rng.uniform(-mag, mag, size=a.size))
    b = np.sort(b + jitter_rng.uniform(-mag, mag, size=b.size))

    rho = _knn_distance_within(a, k)
    nu = _knn_distance_cross(a, b, k)
    if np.any(rho == 0.0) or np.any(nu == 0.0):
        raise ValueError("zero nearest-neighbor distance after tie-breaking")
    return float(np.mean(np.log(nu / rho)) + math.log(b.size / (a.size - 1)))


@dataclass
class StationaryDensity:
    """Numerically normalized density rho*(x) = exp(-2 f(x)/sigma^2) / Z on a
    uniform grid, with interpolating cdf/pdf evaluation and inverse-CDF
    sampling. ``log_Z`` stores the log partition constant; ``Z`` may
    overflow to inf for extreme exponents but stays positive.
    """

    f: Callable
    sigma: float
    grid: Tuple[float, float, int]
    nodes: np.ndarray
    density: np.ndarray
    log_Z: float
    _cdf: np.ndarray = field(repr=False, default=None)

    @property
    def Z(self):
        try:
            return math.exp(self.log_Z)
        except OverflowError:
            return math.inf

    def pdf(self, x):
        return np.interp(x, self.nodes, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        return np.interp(x, self.nodes, self._cdf, left=0.0, right=1.0)

    def mean(self):
        return float(simpson(self.density * self.nodes, x=self.nodes))

    def variance(self):
        m = self.mean()
        return float(simpson(self.density * (self.nodes - m) ** 2, x=self.nodes))

    def sample(self, n, rng):
        """Inverse-CDF samples; linear interpolation within grid cells."""
        u = rng.random(n)
        idx = np.clip(np.searchsorted(self._cdf, u), 1, self.nodes.size - 1)
        lo = self._cdf[idx - 1]
        span = self._cdf[idx] - lo
        frac = np.where(span > 0.0, (u - lo) / np.where(span > 0.0, span, 1.0), 0.0)
        return self.nodes[idx - 1] + frac * (self.nodes[idx] - self.nodes[idx - 1])


def stationary_density(f, sigma, grid):
    """Build the stationary density exp(-2 f(x)/sigma^2)/Z on a uniform grid.

    Parameters
    ----------
    f : callable
        Scalar objective, vectorized over numpy arrays.
    sigma : float
        Noise volatility of the gradient-flow SDE; must be positive.
    grid : (lo, hi, n_nodes)
        Quadrature grid. The grid must cover the effective support: the
        unnormalized density at both endpoints must be below 1e-12 of its
        maximum, otherwise a GridError is raised.

    Z comes from composite Simpson quadrature after factoring out the
    maximum of the log-density (the exponent range can reach 1e4 and would
    overflow otherwise); the CDF uses the trapezoid rule on the same grid.
    """
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    lo, hi, n_nodes = grid
    if not (hi > lo and n_nodes >= 3):
        raise ValueError(f"invalid grid {grid}")
    nodes = np.linspace(lo, hi, int(n_nodes))
    log_u = -2.0 * np.asarray(f(nodes), dtype=float) / sigma ** 2
    if not np.all(np.isfinite(log_u)):
        raise ValueError("objective returned non-finite values on the grid")
    shift = float(log_u.max())
    unnorm = np.exp(log_u - shift)
    if unnorm[0] > 1e-12 or unnorm[-1] > 1e-12:
        raise GridError(
            f"grid too small: endpoint density {max(unnorm[0], unnorm[-1]):.3g} "
            "of the maximum exceeds 1e-12")
    Z_shifted = float(simpson(unnorm, x=nodes))
    density = unnorm / Z_shifted
    cdf = cumulative_trapezoid(density, nodes, initial=0.0)
    cdf /= cdf[-1]
    return StationaryDensity(f=f, sigma=float(sigma), grid=(float(lo), float(hi), int(n_nodes)),
                             nodes=nodes, density=density,
                             log_Z=math.log(Z_shifted) + shift, _cdf=cdf)
