"""Posterior summaries, autocorrelation/ESS, AIC and out-of-sample scoring."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import Hyperparameters, ModelId, ModelState, SpikeSlabLatents, linear_predictors
from .tweedie import deviance

__all__ = [
    "PosteriorSummary",
    "hpd_interval",
    "summarize",
    "summarize_chain",
    "ess_acf",
    "parameter_count",
    "aic",
    "point_state",
    "predict",
]


@dataclass
class PosteriorSummary:
    """Per-parameter summaries; every field is a vector over parameters."""

    names: tuple
    map_estimate: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    sd: np.ndarray
    hpd_lower: np.ndarray
    hpd_upper: np.ndarray
    hpd_prob: float = 0.95

    def __len__(self):
        return len(self.names)

    def get(self, name, field="median"):
        return float(getattr(self, field)[self.names.index(name)])

    def rows(self):
        for i, n in enumerate(self.names):
            yield {"parameter": n, "map": self.map_estimate[i], "median": self.median[i],
                   "mean": self.mean[i], "sd": self.sd[i],
                   "hpd_lower": self.hpd_lower[i], "hpd_upper": self.hpd_upper[i]}

    def covers(self, truth):
        truth = np.asarray(truth, dtype=float)
        return (self.hpd_lower <= truth) & (truth <= self.hpd_upper)


def hpd_interval(draws, prob=0.95):
    """Shortest window of ceil(prob * M) consecutive order statistics."""
    x = np.sort(np.asarray(draws, dtype=float))
    m = x.size
    if m < 2:
        raise ValueError("need at least two draws for an interval")
    if not 0.0 < prob <= 1.0:
        raise ValueError("prob must lie in (0, 1]")
    k = min(max(math.ceil(prob * m), 1), m)
    widths = x[k - 1:] - x[:m - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


def summarize(draws, joint_logpost, hpd_prob=0.95, names=None):
    """Summaries of an M-vector (or M x P matrix) of draws.

    The MAP estimate is the draw at the iteration with the largest stored
    joint log-posterior.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    m, n_par = draws.shape
    if m < 2:
        raise ValueError(f"need at least two draws, got {m}")
    joint_logpost = np.asarray(joint_logpost, dtype=float)
    if joint_logpost.shape != (m,):
        raise ValueError("joint_logpost must have one value per draw")
    best = int(np.argmax(np.where(np.isnan(joint_logpost), -np.inf, joint_logpost)))
    lo = np.empty(n_par)
    hi = np.empty(n_par)
    for j in range(n_par):
        lo[j], hi[j] = hpd_interval(draws[:, j], hpd_prob)
    names = tuple(names) if names is not None else tuple(str(j) for j in range(n_par))
    return PosteriorSummary(
        names=names,
        map_estimate=draws[best].copy(),
        mean=draws.mean(axis=0),
        median=np.median(draws, axis=0),
        sd=draws.std(axis=0, ddof=1),
        hpd_lower=lo,
        hpd_upper=hi,
        hpd_prob=float(hpd_prob),
    )


def summarize_chain(chain, hpd_prob=0.95):
    return summarize(chain.draws, chain.logpost, hpd_prob, names=chain.names)


def _acf(x, max_lag):
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    # each lag averaged over its own number of pairs
    acov = np.fft.irfft(f * np.conj(f), size)[:max_lag + 1] / (n - np.arange(max_lag + 1))
    return acov / acov[0]


def ess_acf(draws, max_lag=None):
    """Autocorrelations and the initial-positive-sequence effective sample size.

    Constant input has no defined autocorrelation; it returns acf = [1, 0, ...]
    and ess = M with a RuntimeWarning.
    """
    x = np.asarray(draws, dtype=float).ravel()
    m = x.size
    if m < 10:
        raise ValueError(f"need at least 10 draws, got {m}")
    if max_lag is None:
        max_lag = min(m - 1, 1000)
    max_lag = int(min(max_lag, m - 1))
    if np.ptp(x) == 0.0:
        warnings.warn("zero-variance draws; ess set to the number of draws", RuntimeWarning)
        acf = np.zeros(max_lag + 1)
        acf[0] = 1.0
        return acf, float(m)
    acf = _acf(x, max_lag)
    # Geyer: sum adjacent pairs while they stay positive
    tau = -1.0
    for k in range(0, max_lag, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
    ess = m / max(tau, 1e-12)
    return acf, float(min(ess, m))


def parameter_count(model_id, p, q, L=0):
    """Number of model parameters: p+q+1, 3p+3q+1, p+q+L+4, 3p+3q+L+4."""
    model_id = ModelId(model_id)
    if min(p, q, L) < 0:
        raise ValueError("counts must be nonnegative")
    k = (3 * p + 3 * q + 1) if model_id.selection else (p + q + 1)
    if model_id.spatial:
        k += L + 3
    return k


def aic(loglik_at_point, model_id, p, q, L=0):
    return -2.0 * float(loglik_at_point) + 2.0 * parameter_count(model_id, p, q, L)


def point_state(chain, stat="median"):
    """ModelState at a per-parameter posterior point estimate of a chain.

    ``stat`` is "median", "mean" or "map".
    """
    if stat == "map":
        vec = chain.draws[int(np.argmax(chain.logpost))]
    elif stat == "mean":
        vec = chain.draws.mean(axis=0)
    elif stat == "median":
        vec = np.median(chain.draws, axis=0)
    else:
        raise ValueError(f"unknown point estimate {stat!r}")
    col = dict(zip(chain.names, vec))

    def block(prefix):
        return np.array([col[n] for n in chain.names if n.startswith(prefix + "[")])

    model_id = ModelId(chain.model_id)
    state = ModelState(beta=block("beta"), gamma=block("gamma"), xi=float(col["xi"]))
    if model_id.spatial:
        state.w = block("w")
        state.sigma2 = float(col["sigma2"])
        state.phi_s = float(col["phi_s"])
    if model_id.selection:
        state.sel_beta = SpikeSlabLatents(block("zeta_beta"), block("sigma2_beta"), float(col["alpha_beta"]))
        state.sel_gamma = SpikeSlabLatents(block("zeta_gamma"), block("sigma2_gamma"), float(col["alpha_gamma"]))
    return state


def predict(point_estimates, new_obs, model_id, hyper=None, seen_sites=None):
    """Fitted mean and dispersion on new data plus sqrt(sum of unit deviances).

    ``seen_sites`` optionally lists the site indices that carried training
    data; any other site raises, since no spatial interpolation is done.
    """
    model_id = ModelId(model_id)
    hyper = hyper or Hyperparameters()
    state = point_estimates
    if model_id.spatial:
        if state.w is None:
            raise ValueError(f"{model_id.value} point estimates need w")
        known = np.zeros(state.w.size, dtype=bool)
        if seen_sites is None:
            known[:] = True
        else:
            known[np.asarray(seen_sites, dtype=np.int64)] = True
        bad = (new_obs.loc >= state.w.size) | ~known[np.minimum(new_obs.loc, state.w.size - 1)]
        if bad.any():
            k = int(np.argmax(bad))
            raise ValueError(f"row {k}: location index {int(new_obs.loc[k])} was not seen during fitting")
    mu, phi = linear_predictors(state, new_obs, model_id, hyper)
    score = math.sqrt(float(np.sum(deviance(new_obs.y, mu, state.xi))))
    return mu, phi, score
