"""Tweedie compound Poisson-gamma distribution (index 1 < xi < 2).

Log-density by exact series summation or the saddlepoint form, the unit
deviance, and a constructive Poisson-sum-of-gammas sampler.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "DensityMethod",
    "TweedieParams",
    "check_index",
    "series_exponent",
    "deviance",
    "log_series_normalizer",
    "SeriesCache",
    "log_density",
    "log_likelihood",
    "sample_cpg",
]

# Terms more than this many log units below the largest are dropped.
SERIES_LOG_TOL = 37.0
# Dominant index above which the saddlepoint form replaces the series.
SERIES_MAX_INDEX = 1e10
# Largest index for which the gamma-function table is built.
SERIES_TABLE_MAX = 2_000_000


class DensityMethod(str, enum.Enum):
    SERIES = "series"
    SADDLEPOINT = "saddlepoint"


def check_index(xi):
    xi = float(xi)
    if not 1.0 < xi < 2.0:
        raise ValueError(f"Tweedie index must lie in (1, 2), got {xi}")
    return xi


def series_exponent(xi):
    """alpha = (2 - xi) / (1 - xi); negative on the CP-g range."""
    return (2.0 - xi) / (1.0 - xi)


@dataclass(frozen=True)
class TweedieParams:
    mu: float
    phi: float
    xi: float

    def __post_init__(self):
        check_index(self.xi)
        if not (self.mu > 0 and self.phi > 0):
            raise ValueError("mu and phi must be positive")

    @property
    def variance(self):
        return self.phi * self.mu ** self.xi

    @property
    def poisson_rate(self):
        return self.mu ** (2 - self.xi) / (self.phi * (2 - self.xi))


def _validate(y, mu):
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise ValueError("y must be finite and nonnegative")
    if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
        raise ValueError("mu must be finite and positive")
    return y, mu


def deviance(y, mu, xi):
    """Unit deviance d(y | mu, xi), with 0 ** (2 - xi) taken as 0."""
    xi = check_index(xi)
    y, mu = _validate(y, mu)
    y2 = np.where(y > 0, y, 0.0) ** (2 - xi)
    d = 2.0 * ((y2 - y * mu ** (1 - xi)) / (1 - xi) - (y2 - mu ** (2 - xi)) / (2 - xi))
    # rounding can leave tiny negatives near y == mu
    return np.maximum(d, 0.0)


def _log_w(j, log_z, alpha):
    return j * log_z - gammaln(j + 1.0) - gammaln(-alpha * j)


def log_series_normalizer(y, phi, xi, return_mean_index=False):
    """log a(y, phi) for y > 0 by summing the series around its dominant term.

    Vectorised over ``y`` and ``phi``. Each observation gets its own window of
    indices ``j``; windows are widened until both edge terms fall
    ``SERIES_LOG_TOL`` below the running maximum. Long windows are summed on
    an integer stride (the terms are smooth in ``j``, so the strided sum times
    the stride matches the full sum far below rounding). When the dominant
    index exceeds ``SERIES_MAX_INDEX`` the saddlepoint form is used; it is
    asymptotically exact there and double precision cannot resolve the
    series anyway.

    With ``return_mean_index`` the term-weighted mean of ``j`` is returned as
    well; d log a / d log phi equals ``-mean_j / (xi - 1)``.
    """
    xi = check_index(xi)
    y, phi = np.broadcast_arrays(np.asarray(y, dtype=float), np.asarray(phi, dtype=float))
    shape = y.shape
    y = y.ravel()
    phi = phi.ravel()
    if y.size == 0:
        return (np.zeros(shape), np.zeros(shape)) if return_mean_index else np.zeros(shape)
    if np.any(y <= 0):
        raise ValueError("series normalizer is defined for y > 0 only")
    alpha = series_exponent(xi)
    jmode = y ** (2 - xi) / (phi * (2 - xi))
    log_a = np.empty(y.size)
    mean_j = np.empty(y.size)

    far = ~(jmode <= SERIES_MAX_INDEX)
    if far.any():
        yf, pf = y[far], phi[far]
        log_a[far] = -0.5 * np.log(2 * np.pi * pf * yf ** xi) - jmode[far] / (1 - xi)
        mean_j[far] = 0.5 * (xi - 1) + jmode[far]
    near = ~far
    if near.any():
        la, mj = _series_sum(y[near], phi[near], jmode[near], xi, alpha)
        log_a[near] = la
        mean_j[near] = mj
    if return_mean_index:
        return log_a.reshape(shape), mean_j.reshape(shape)
    return log_a.reshape(shape)


def _series_sum(y, phi, jmode, xi, alpha):
    log_z = (-alpha * np.log(y) + alpha * np.log(xi - 1.0)
             - (1.0 - alpha) * np.log(phi) - np.log(2.0 - xi))
    jstar = np.maximum(np.round(jmode), 1.0)
    # log-terms are close to a Gaussian in j with variance ~ j (xi - 1)
    sd = np.sqrt(jstar * (xi - 1.0))
    stride = np.maximum(np.floor(sd / 2.0), 1.0)
    half = np.ceil(np.sqrt(2.0 * SERIES_LOG_TOL) * sd / stride) + 3.0
    # window [lo, lo + stride * (count - 1)], anchored so that jstar is on it
    n_below = np.minimum(half, np.floor((jstar - 1.0) / stride))
    lo = jstar - stride * n_below
    hi = jstar + stride * half

    ref = _log_w(jstar, log_z, alpha)
    while True:
        below = (lo - stride >= 1) & (_log_w(lo - stride, log_z, alpha) > ref - SERIES_LOG_TOL)
        above = _log_w(hi + stride, log_z, alpha) > ref - SERIES_LOG_TOL
        if not (below.any() or above.any()):
            break
        grow = np.maximum(np.ceil(0.5 * (hi - lo) / stride), 1.0)
        lo = np.where(below, lo - stride * np.minimum(grow, np.floor((lo - 1.0) / stride)), lo)
        hi = np.where(above, hi + stride * grow, hi)

    counts = (np.round((hi - lo) / stride) + 1).astype(np.int64)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    owner = np.repeat(np.arange(y.size), counts)
    step = np.arange(counts.sum()) - starts[owner]
    j = lo[owner] + stride[owner] * step
    top = hi.max()
    if top <= SERIES_TABLE_MAX:
        # the gamma-function part depends on j only, so tabulate it once
        grid = np.arange(1.0, top + 1.0)
        table = gammaln(grid + 1.0) + gammaln(-alpha * grid)
        terms = j * log_z[owner] - table[j.astype(np.int64) - 1]
    else:
        terms = _log_w(j, log_z[owner], alpha)
    peak = np.maximum.reduceat(terms, starts)
    weights = np.exp(terms - peak[owner])
    total = np.add.reduceat(weights, starts)
    log_a = peak + np.log(total * stride) - np.log(y)
    mean_j = np.add.reduceat(weights * j, starts) / total
    return log_a, mean_j


class SeriesCache:
    """Remembers the last few series evaluations, matched on exact inputs.

    log a(y, phi) does not involve mu, so a sampler that revisits the same
    (phi, xi) after a mean update can reuse the sum.
    """

    def __init__(self, maxsize=4):
        self.maxsize = maxsize
        self._items = []
        self.hits = 0
        self.misses = 0

    def normalizer(self, y, phi, xi):
        y = np.asarray(y, dtype=float)
        phi = np.asarray(phi, dtype=float)
        key = (float(xi), hash(phi.tobytes()), hash(y.tobytes()))
        for k, yy, pp, val in self._items:
            if k == key and np.array_equal(pp, phi) and np.array_equal(yy, y):
                self.hits += 1
                return val
        self.misses += 1
        val = log_series_normalizer(y, phi, xi, return_mean_index=True)
        self._items.append((key, y.copy(), phi.copy(), val))
        if len(self._items) > self.maxsize:
            self._items.pop(0)
        return val


def log_density(y, mu, phi, xi, method=DensityMethod.SERIES, cache=None):
    """Log of the CP-g density at ``y`` (point mass at zero, density above).

    Arguments broadcast against each other. Zeros always use the exact
    closed form ``-mu**(2-xi) / (phi (2-xi))`` regardless of ``method``.
    An optional ``SeriesCache`` reuses earlier series sums.
    """
    xi = check_index(xi)
    method = DensityMethod(method)
    y, mu = _validate(y, mu)
    phi = np.asarray(phi, dtype=float)
    if np.any(phi <= 0):
        raise ValueError("phi must be positive")
    y, mu, phi = np.broadcast_arrays(y, mu, phi)
    out = np.array(-(mu ** (2 - xi)) / (phi * (2 - xi)), dtype=float)
    pos = y > 0
    if pos.any():
        yp, mp, pp = y[pos], mu[pos], phi[pos]
        if method is DensityMethod.SERIES:
            log_a = (cache.normalizer(yp, pp, xi)[0] if cache is not None
                     else log_series_normalizer(yp, pp, xi))
            out[pos] = (log_a
                        + (yp * mp ** (1 - xi) / (1 - xi) - mp ** (2 - xi) / (2 - xi)) / pp)
        else:
            out[pos] = (-0.5 * np.log(2 * np.pi * pp * yp ** xi)
                        - deviance(yp, mp, xi) / (2 * pp))
    return out[()] if out.ndim == 0 else out


def log_likelihood(y, mu, phi, xi, method=DensityMethod.SERIES, cache=None):
    """Sum of per-observation log-densities, accumulated in index order."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if not (y.shape == mu.shape == phi.shape) or y.ndim != 1:
        raise ValueError(f"length mismatch: y{y.shape}, mu{mu.shape}, phi{phi.shape}")
    if y.size == 0:
        return 0.0
    terms = log_density(y, mu, phi, xi, method, cache)
    # sequential accumulation keeps the result reproducible term by term
    return float(np.cumsum(terms)[-1])


def sample_cpg(mu, phi, xi, rng, size=None):
    """Draw from CP-g as a Poisson number of iid gamma jumps.

    The jump count is Poisson(mu**(2-xi) / (phi (2-xi))); each jump is
    Gamma(shape=(2-xi)/(xi-1), scale=phi (xi-1) mu**(xi-1)), which matches
    mean mu and variance phi mu**xi.
    """
    xi = check_index(xi)
    mu = np.asarray(mu, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if np.any(mu <= 0) or np.any(phi <= 0):
        raise ValueError("mu and phi must be positive")
    if size is None:
        size = np.broadcast_shapes(mu.shape, phi.shape)
    lam = mu ** (2 - xi) / (phi * (2 - xi))
    n = np.asarray(rng.poisson(np.broadcast_to(lam, size)))
    shape = n * (2 - xi) / (xi - 1)
    scale = np.broadcast_to(phi * (xi - 1) * mu ** (xi - 1), size)
    out = np.zeros(size)
    hit = n > 0
    out[hit] = rng.gamma(shape[hit], scale[hit])
    return out[()] if out.ndim == 0 else out
