"""Continuous spike-and-slab Gibbs updates and FDR-controlled selection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SpikeSlabLatents

__all__ = ["SelectionReport", "gibbs_spike_slab", "slab_probability", "local_fdr", "fdr_select"]


def slab_probability(coefs, sigma2_coef, alpha, nu0):
    """P(zeta_u = 1 | rest) for each coefficient, computed in log space.

    Spike weight (1 - alpha) nu0^(-1/2) exp(-b^2 / (2 nu0 s2)); slab weight
    alpha exp(-b^2 / (2 s2)).
    """
    coefs = np.asarray(coefs, dtype=float)
    sq = coefs ** 2 / (2.0 * np.asarray(sigma2_coef, dtype=float))
    log_spike = np.log1p(-alpha) - 0.5 * np.log(nu0) - sq / nu0
    log_slab = np.log(alpha) - sq
    return 1.0 / (1.0 + np.exp(log_spike - log_slab))


def gibbs_spike_slab(coefs, latents, nu0, a_sigma, b_sigma, rng):
    """One sweep over (zeta, sigma2_coef, alpha) from their full conditionals.

    Returns a fresh ``SpikeSlabLatents``; the input is left untouched.
    """
    coefs = np.asarray(coefs, dtype=float)
    m = coefs.size
    p_slab = slab_probability(coefs, latents.sigma2_coef, latents.alpha, nu0)
    zeta = np.where(rng.random(m) < p_slab, 1.0, nu0)
    precision = rng.gamma(a_sigma + 0.5, 1.0 / (b_sigma + coefs ** 2 / (2.0 * zeta)))
    n_slab = int(np.sum(zeta == 1.0))
    alpha = rng.beta(1.0 + n_slab, 1.0 + (m - n_slab))
    # keep alpha strictly inside (0, 1) so the log weights stay finite
    alpha = float(np.clip(alpha, 1e-12, 1.0 - 1e-12))
    return SpikeSlabLatents(zeta=zeta, sigma2_coef=1.0 / precision, alpha=alpha)


@dataclass
class SelectionReport:
    p: np.ndarray
    kappa_alpha: float
    selected: np.ndarray
    c: float
    alpha_level: float
    names: tuple = ()

    def selected_names(self):
        return [n for n, s in zip(self.names, self.selected) if s]


def local_fdr(draws, c):
    """Share of draws per column with absolute value at most ``c``."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    return np.mean(np.abs(draws) <= c, axis=0)


def fdr_select(draws, c=0.05, alpha_level=0.05, names=()):
    """Select coefficients whose local FDR lies at or below kappa_alpha.

    kappa_alpha is the largest sorted p_(u) whose running mean of the sorted
    probabilities stays within ``alpha_level``. Nothing is selected when no
    prefix qualifies.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] < 1 or draws.shape[1] < 1:
        raise ValueError("need at least one draw of at least one coefficient")
    if c <= 0:
        raise ValueError("c must be positive")
    if not 0.0 < alpha_level < 1.0:
        raise ValueError("alpha_level must lie in (0, 1)")
    p = local_fdr(draws, c)
    srt = np.sort(p)
    running = np.cumsum(srt) / np.arange(1, srt.size + 1)
    ok = np.nonzero(running <= alpha_level)[0]
    if ok.size == 0:
        kappa = float("nan")
        selected = np.zeros(p.size, dtype=bool)
    else:
        kappa = float(srt[ok[-1]])
        selected = p <= kappa
    names = tuple(names) if names else tuple(str(i) for i in range(p.size))
    return SelectionReport(p=p, kappa_alpha=kappa, selected=selected, c=float(c),
                           alpha_level=float(alpha_level), names=names)
