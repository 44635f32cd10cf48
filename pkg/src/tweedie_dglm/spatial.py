"""Site geometry and Matern Gaussian-process covariance machinery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gamma as gamma_fn
from scipy.special import kv

__all__ = [
    "NotPositiveDefinite",
    "SpatialDomain",
    "MaternKernel",
    "CholState",
    "pairwise_distances",
    "matern_correlation",
    "chol_factor",
]


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


def pairwise_distances(coords):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 1:
        raise ValueError("coords must be an L x d matrix with L >= 1")
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    # exact symmetry and zero diagonal regardless of rounding
    dist = 0.5 * (dist + dist.T)
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(frozen=True)
class SpatialDomain:
    coords: np.ndarray
    dist: np.ndarray
    site_ids: tuple = ()

    @classmethod
    def from_coords(cls, coords, site_ids=None):
        coords = np.asarray(coords, dtype=float)
        ids = tuple(site_ids) if site_ids is not None else tuple(str(i + 1) for i in range(len(coords)))
        return cls(coords=coords, dist=pairwise_distances(coords), site_ids=ids)

    @property
    def n_sites(self):
        return self.coords.shape[0]


def matern_correlation(dist, phi_s, nu):
    """Matern correlation 2^(1-nu)/Gamma(nu) (phi_s d)^nu K_nu(phi_s d), 1 at d = 0.

    nu = 0.5 is evaluated directly as exp(-phi_s d).
    """
    if phi_s <= 0 or nu <= 0:
        raise ValueError("phi_s and nu must be positive")
    dist = np.asarray(dist, dtype=float)
    x = phi_s * dist
    if nu == 0.5:
        return np.exp(-x)
    out = np.ones_like(x)
    pos = x > 0
    xp = x[pos]
    vals = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * xp ** nu * kv(nu, xp)
    # kv underflows to 0 for very large arguments; the limit is 0 anyway
    out[pos] = np.where(np.isfinite(vals), vals, 0.0)
    return out


@dataclass(frozen=True)
class MaternKernel:
    sigma2: float
    phi_s: float
    nu: float = 0.5

    def correlation(self, dist):
        return matern_correlation(dist, self.phi_s, self.nu)

    def covariance(self, dist):
        return self.sigma2 * self.correlation(dist)


@dataclass(frozen=True)
class CholState:
    """Lower Cholesky factor with its log-determinant."""

    lower: np.ndarray
    logdet: float
    jitter: float = 0.0

    def solve(self, b):
        return cho_solve((self.lower, True), b, check_finite=False)

    def quad_form(self, w):
        """w' M^-1 w using one triangular solve."""
        v = solve_triangular(self.lower, w, lower=True, check_finite=False)
        return float(v @ v)

    def inverse(self):
        return self.solve(np.eye(self.lower.shape[0]))


def chol_factor(cov, base_jitter=1e-10):
    """Cholesky factor of ``cov``, retrying with a growing diagonal jitter.

    The jitter ladder starts at ``base_jitter`` and multiplies by 10 up to
    1e-4 times the mean diagonal before giving up.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    if n == 0:
        return CholState(lower=np.zeros((0, 0)), logdet=0.0)
    ceiling = 1e-4 * float(np.mean(np.diag(cov)))
    jitter = 0.0
    while True:
        try:
            mat = cov if jitter == 0.0 else cov + jitter * np.eye(n)
            lower = np.linalg.cholesky(mat)
            if np.all(np.isfinite(lower)):
                logdet = 2.0 * float(np.sum(np.log(np.diag(lower))))
                return CholState(lower=lower, logdet=logdet, jitter=jitter)
        except np.linalg.LinAlgError:
            pass
        jitter = base_jitter if jitter == 0.0 else jitter * 10.0
        if jitter == 0.0 or jitter > ceiling:
            raise NotPositiveDefinite(f"matrix not positive definite (jitter up to {ceiling:g})")
