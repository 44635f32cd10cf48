"""Double GLM Tweedie models M1-M4: link structure, conditional log-posteriors,
gradients and expected-information preconditioners.

All log-posterior kernels drop additive constants that do not depend on the
block being updated.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .spatial import NotPositiveDefinite, chol_factor, matern_correlation
from .tweedie import DensityMethod, check_index, deviance, log_likelihood, log_series_normalizer

log = logging.getLogger(__name__)

ETA_CLAMP = 700.0


class ModelId(str, enum.Enum):
    M1 = "M1"  # DGLM
    M2 = "M2"  # DGLM + variable selection
    M3 = "M3"  # DGLM + spatial effect
    M4 = "M4"  # DGLM + spatial effect + variable selection

    @property
    def spatial(self):
        return self in (ModelId.M3, ModelId.M4)

    @property
    def selection(self):
        return self in (ModelId.M2, ModelId.M4)


@dataclass(frozen=True)
class ObservationSet:
    """Responses, exposures, site indices (0-based) and the two design matrices."""

    y: np.ndarray
    t: np.ndarray
    loc: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    n_sites: Optional[int] = None
    x_names: tuple = ()
    z_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        t = np.asarray(self.t, dtype=float)
        loc = np.asarray(self.loc, dtype=np.int64)
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        n = y.shape[0]
        if self.n_sites is None:
            object.__setattr__(self, "n_sites", int(loc.max()) + 1 if n else 1)
        if y.ndim != 1 or t.shape != (n,) or loc.shape != (n,):
            raise ValueError("y, t and loc must be vectors of equal length")
        if X.shape[0] != n or Z.shape[0] != n:
            raise ValueError("design matrices must have one row per observation")
        if np.any(y < 0) or not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite and nonnegative")
        if np.any(t <= 0) or not np.all(np.isfinite(t)):
            raise ValueError("exposures must be positive")
        if n and (loc.min() < 0 or loc.max() >= self.n_sites):
            raise ValueError(f"location indices must lie in 0..{self.n_sites - 1}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Z))):
            raise ValueError("design matrices must be finite")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "loc", loc)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)
        if not self.x_names:
            object.__setattr__(self, "x_names", tuple(f"x{i}" for i in range(X.shape[1])))
        if not self.z_names:
            object.__setattr__(self, "z_names", tuple(f"z{i}" for i in range(Z.shape[1])))

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Z.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows)
        if rows.size == 0:
            rows = rows.astype(np.int64)
        return replace(self, y=self.y[rows], t=self.t[rows], loc=self.loc[rows],
                       X=self.X[rows], Z=self.Z[rows])


@dataclass
class SpikeSlabLatents:
    zeta: np.ndarray
    sigma2_coef: np.ndarray
    alpha: float

    @classmethod
    def initial(cls, m):
        return cls(zeta=np.ones(m), sigma2_coef=np.ones(m), alpha=0.5)

    @property
    def prior_variance(self):
        return self.zeta * self.sigma2_coef

    def copy(self):
        return SpikeSlabLatents(self.zeta.copy(), self.sigma2_coef.copy(), float(self.alpha))


@dataclass(frozen=True)
class Hyperparameters:
    a_xi: float = 1.0
    b_xi: float = 2.0
    sigma2_beta_fixed: float = 1e6
    sigma2_gamma_fixed: float = 1e6
    a_sigma: float = 2.0
    b_sigma: float = 1.0
    a_phis: float = 0.0
    b_phis: float = 30.0
    nu: float = 0.5
    nu0: float = 5e-4
    a_sigma_beta: float = 2.0
    b_sigma_beta: float = 1.0
    a_sigma_gamma: float = 2.0
    b_sigma_gamma: float = 1.0
    fdr_alpha: float = 0.05
    fdr_c: float = 0.05
    # -1 follows log mu = -log t + ..., log phi = -(2 - xi) log t + ...
    offset_sign: float = -1.0

    def __post_init__(self):
        if not (1.0 <= self.a_xi < self.b_xi <= 2.0):
            raise ValueError("need 1 <= a_xi < b_xi <= 2")
        if not 0.0 < self.nu0 < 1.0:
            raise ValueError("nu0 must lie in (0, 1)")
        if not (0.0 <= self.a_phis < self.b_phis):
            raise ValueError("need 0 <= a_phis < b_phis")
        for name in ("sigma2_beta_fixed", "sigma2_gamma_fixed", "a_sigma", "b_sigma", "nu",
                     "a_sigma_beta", "b_sigma_beta", "a_sigma_gamma", "b_sigma_gamma", "fdr_c"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.fdr_alpha < 1.0:
            raise ValueError("fdr_alpha must lie in (0, 1)")
        if self.offset_sign not in (-1.0, 1.0):
            raise ValueError("offset_sign must be +1 or -1")


@dataclass
class ModelState:
    beta: np.ndarray
    gamma: np.ndarray
    xi: float
    w: Optional[np.ndarray] = None
    sigma2: float = 1.0
    phi_s: Optional[float] = None
    sel_beta: Optional[SpikeSlabLatents] = None
    sel_gamma: Optional[SpikeSlabLatents] = None

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
        check_index(self.xi)
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")

    def copy(self):
        return ModelState(
            beta=self.beta.copy(), gamma=self.gamma.copy(), xi=float(self.xi),
            w=None if self.w is None else self.w.copy(), sigma2=float(self.sigma2),
            phi_s=self.phi_s,
            sel_beta=None if self.sel_beta is None else self.sel_beta.copy(),
            sel_gamma=None if self.sel_gamma is None else self.sel_gamma.copy(),
        )

    @classmethod
    def initial(cls, obs, model_id, hyper, xi=None):
        model_id = ModelId(model_id)
        xi = 0.5 * (max(hyper.a_xi, 1.0) + min(hyper.b_xi, 2.0)) if xi is None else xi
        state = cls(beta=np.zeros(obs.p), gamma=np.zeros(obs.q), xi=xi)
        if model_id.spatial:
            state.w = np.zeros(obs.n_sites)
            state.phi_s = 0.5 * (hyper.a_phis + hyper.b_phis)
        if model_id.selection:
            state.sel_beta = SpikeSlabLatents.initial(obs.p)
            state.sel_gamma = SpikeSlabLatents.initial(obs.q)
        return state


def check_state(state, obs, model_id):
    model_id = ModelId(model_id)
    if state.beta.shape != (obs.p,) or state.gamma.shape != (obs.q,):
        raise ValueError("coefficient dimensions do not match the design matrices")
    if model_id.spatial:
        if state.w is None or state.w.shape != (obs.n_sites,) or state.phi_s is None:
            raise ValueError(f"{model_id.value} needs w (length L) and phi_s")
    if model_id.selection and (state.sel_beta is None or state.sel_gamma is None):
        raise ValueError(f"{model_id.value} needs spike-and-slab latents")


# ---------------------------------------------------------------------------
# link structure

def prior_var_beta(state, hyper, model_id):
    if ModelId(model_id).selection:
        return state.sel_beta.prior_variance
    return np.full(state.beta.shape, hyper.sigma2_beta_fixed)


def prior_var_gamma(state, hyper, model_id):
    if ModelId(model_id).selection:
        return state.sel_gamma.prior_variance
    return np.full(state.gamma.shape, hyper.sigma2_gamma_fixed)


def _clamp(eta):
    clamped = np.abs(eta) > ETA_CLAMP
    return np.clip(eta, -ETA_CLAMP, ETA_CLAMP), int(clamped.sum())


def mean_eta(beta, w, obs, hyper):
    eta = hyper.offset_sign * np.log(obs.t) + obs.X @ beta
    if w is not None:
        eta = eta + w[obs.loc]
    return eta


def disp_eta(gamma, xi, obs, hyper):
    return hyper.offset_sign * (2.0 - xi) * np.log(obs.t) + obs.Z @ gamma


def linear_predictors(state, obs, model_id, hyper=None, return_flag=False):
    """Mean and dispersion vectors under the log links with exposure offsets.

    Linear predictors are clamped to +-700 before exponentiation; with
    ``return_flag`` the number of clamped entries is returned as well.
    """
    hyper = hyper or Hyperparameters()
    w = state.w if ModelId(model_id).spatial else None
    eta_mu, n1 = _clamp(mean_eta(state.beta, w, obs, hyper))
    eta_phi, n2 = _clamp(disp_eta(state.gamma, state.xi, obs, hyper))
    mu, phi = np.exp(eta_mu), np.exp(eta_phi)
    if return_flag:
        return mu, phi, n1 + n2
    return mu, phi


def _split_mean_block(beta_w, obs, model_id):
    p = obs.p
    beta_w = np.asarray(beta_w, dtype=float)
    if ModelId(model_id).spatial:
        return beta_w[:p], beta_w[p:]
    return beta_w, None


def _phi(state, obs, hyper):
    return np.exp(_clamp(disp_eta(state.gamma, state.xi, obs, hyper))[0])


# ---------------------------------------------------------------------------
# mean block (beta, w)

def log_post_mean_block(beta_w, obs, state, kernel, model_id, hyper):
    """Conditional log-posterior of (beta, w) up to a constant.

    ``kernel`` is the factor of the spatial correlation R(phi_s); ignored
    for non-spatial models.
    """
    beta, w = _split_mean_block(beta_w, obs, model_id)
    mu = np.exp(_clamp(mean_eta(beta, w, obs, hyper))[0])
    phi = _phi(state, obs, hyper)
    val = -np.sum(deviance(obs.y, mu, state.xi) / (2.0 * phi))
    val -= 0.5 * np.sum(beta ** 2 / prior_var_beta(state, hyper, model_id))
    if w is not None:
        val -= 0.5 * kernel.quad_form(w) / state.sigma2
    return float(val)


def grad_mean_block(beta_w, obs, state, kernel, model_id, hyper):
    beta, w = _split_mean_block(beta_w, obs, model_id)
    mu = np.exp(_clamp(mean_eta(beta, w, obs, hyper))[0])
    phi = _phi(state, obs, hyper)
    u = (obs.y - mu) * mu ** (1.0 - state.xi) / phi
    g_beta = obs.X.T @ u - beta / prior_var_beta(state, hyper, model_id)
    if w is None:
        return g_beta
    g_w = np.bincount(obs.loc, weights=u, minlength=obs.n_sites) - kernel.solve(w) / state.sigma2
    return np.concatenate([g_beta, g_w])


def precondition_mean(obs, state, kernel, model_id, hyper):
    """Expected information of the (beta, w) block.

    GLM weights mu^(2-xi)/phi under the log link plus prior precisions.
    """
    model_id = ModelId(model_id)
    mu, phi = linear_predictors(state, obs, model_id, hyper)
    W = mu ** (2.0 - state.xi) / phi
    XtW = obs.X.T * W
    info_bb = XtW @ obs.X + np.diag(1.0 / prior_var_beta(state, hyper, model_id))
    if not model_id.spatial:
        return 0.5 * (info_bb + info_bb.T)
    L = obs.n_sites
    info_bw = np.zeros((obs.p, L))
    for j in range(obs.p):
        info_bw[j] = np.bincount(obs.loc, weights=XtW[j], minlength=L)
    info_ww = np.diag(np.bincount(obs.loc, weights=W, minlength=L)) + kernel.inverse() / state.sigma2
    info = np.block([[info_bb, info_bw], [info_bw.T, info_ww]])
    return 0.5 * (info + info.T)


# ---------------------------------------------------------------------------
# dispersion block (gamma)

@np.errstate(over="ignore", invalid="ignore")
def _disp_terms(gamma, obs, state, model_id, hyper, method, want_grad, cache=None):
    # extreme trial points may overflow; MALA rejects non-finite values
    gamma = np.asarray(gamma, dtype=float)
    method = DensityMethod(method)
    xi = state.xi
    mu, _ = linear_predictors(state, obs, model_id, hyper)
    log_phi = _clamp(disp_eta(gamma, xi, obs, hyper))[0]
    phi = np.exp(log_phi)
    pos = obs.y > 0
    prior_var = prior_var_gamma(state, hyper, model_id)
    if method is DensityMethod.SADDLEPOINT:
        d = deviance(obs.y, mu, xi)
        terms = -(d / (2.0 * phi) + 0.5 * log_phi * pos)
        r = d / (2.0 * phi) - 0.5 * pos if want_grad else None
    else:
        # exact: log a(y, phi) + (y theta - kappa) / phi
        expo = obs.y * mu ** (1.0 - xi) / (1.0 - xi) - mu ** (2.0 - xi) / (2.0 - xi)
        terms = expo / phi
        if cache is not None:
            log_a, mean_j = cache.normalizer(obs.y[pos], phi[pos], xi)
        else:
            log_a, mean_j = log_series_normalizer(obs.y[pos], phi[pos], xi, return_mean_index=True)
        terms = terms.copy()
        terms[pos] += log_a
        if want_grad:
            r = -expo / phi
            r[pos] -= mean_j / (xi - 1.0)
        else:
            r = None
    val = float(np.sum(terms) - 0.5 * np.sum(gamma ** 2 / prior_var))
    if not want_grad:
        return val, None
    return val, obs.Z.T @ r - gamma / prior_var


def log_post_disp_block(gamma, obs, state, model_id, hyper, method=DensityMethod.SADDLEPOINT):
    """Conditional log-posterior of gamma up to a constant.

    ``SADDLEPOINT`` uses -d/(2 phi) - log(phi)/2 on positive responses;
    ``SERIES`` uses the exact log-likelihood.
    """
    return _disp_terms(gamma, obs, state, model_id, hyper, method, False)[0]


def disp_value_and_grad(gamma, obs, state, model_id, hyper, method=DensityMethod.SADDLEPOINT,
                        cache=None):
    """Log-posterior and analytic gradient of the gamma block in one pass."""
    return _disp_terms(gamma, obs, state, model_id, hyper, method, True, cache)


def grad_disp_block(gamma, obs, state, model_id, hyper, mode="analytic",
                    method=DensityMethod.SADDLEPOINT):
    """Gradient of ``log_post_disp_block``, analytic or by central differences.

    For the exact likelihood, d log a / d log phi is minus the term-weighted
    mean series index over (xi - 1).
    """
    gamma = np.asarray(gamma, dtype=float)
    if mode == "numeric":
        g = np.empty_like(gamma)
        for v in range(gamma.size):
            h = 1e-6 * (1.0 + abs(gamma[v]))
            up, dn = gamma.copy(), gamma.copy()
            up[v] += h
            dn[v] -= h
            g[v] = (log_post_disp_block(up, obs, state, model_id, hyper, method)
                    - log_post_disp_block(dn, obs, state, model_id, hyper, method)) / (2.0 * h)
        return g
    if mode != "analytic":
        raise ValueError(f"unknown gradient mode {mode!r}")
    return disp_value_and_grad(gamma, obs, state, model_id, hyper, method)[1]


def precondition_disp(obs, state, model_id, hyper):
    """Half the Gram matrix of Z over positive responses plus prior precision."""
    Zp = obs.Z[obs.y > 0]
    info = 0.5 * (Zp.T @ Zp) + np.diag(1.0 / prior_var_gamma(state, hyper, model_id))
    return 0.5 * (info + info.T)


# ---------------------------------------------------------------------------
# scalar parameters

def log_post_xi(xi, obs, state, model_id, hyper, method=DensityMethod.SERIES, cache=None):
    """Exact log-likelihood at index ``xi`` plus the uniform prior indicator.

    The dispersion offset depends on xi, so phi is recomputed at ``xi``.
    """
    if not (hyper.a_xi < xi < hyper.b_xi) or not 1.0 < xi < 2.0:
        return -np.inf
    trial = replace(state, xi=float(xi)) if isinstance(state, ModelState) else state
    mu, phi = linear_predictors(trial, obs, model_id, hyper)
    return log_likelihood(obs.y, mu, phi, xi, method, cache)


def phis_factor(phi_s, domain, hyper):
    corr = matern_correlation(domain.dist, phi_s, hyper.nu)
    return chol_factor(corr)


def log_post_phis(phi_s, w, sigma2, domain, hyper, return_factor=False):
    """-1/2 log|R| - w' R^-1 w / (2 sigma2) on (a_phis, b_phis), else -inf."""
    if not (hyper.a_phis < phi_s < hyper.b_phis):
        return (-np.inf, None) if return_factor else -np.inf
    try:
        fac = phis_factor(phi_s, domain, hyper)
    except NotPositiveDefinite:
        log.warning("correlation matrix not positive definite at phi_s=%g", phi_s)
        return (-np.inf, None) if return_factor else -np.inf
    val = -0.5 * fac.logdet - 0.5 * fac.quad_form(np.asarray(w, dtype=float)) / sigma2
    return (val, fac) if return_factor else val


# ---------------------------------------------------------------------------
# joint density (used for the trace and MAP selection)

def _normal_logpdf(x, var):
    return float(np.sum(-0.5 * np.log(2 * np.pi * var) - 0.5 * x ** 2 / var))


def _gamma_logpdf(x, a, b):
    return float(a * np.log(b) - gammaln(a) + (a - 1) * np.log(x) - b * x)


def log_joint(state, obs, model_id, hyper, kernel=None, loglik=None):
    """Full log-posterior (exact likelihood plus every prior term)."""
    model_id = ModelId(model_id)
    if loglik is None:
        mu, phi = linear_predictors(state, obs, model_id, hyper)
        loglik = log_likelihood(obs.y, mu, phi, state.xi)
    val = loglik
    val += _normal_logpdf(state.beta, prior_var_beta(state, hyper, model_id))
    val += _normal_logpdf(state.gamma, prior_var_gamma(state, hyper, model_id))
    val -= np.log(hyper.b_xi - hyper.a_xi)
    if model_id.spatial:
        L = obs.n_sites
        val += (-0.5 * L * np.log(2 * np.pi * state.sigma2) - 0.5 * kernel.logdet
                - 0.5 * kernel.quad_form(state.w) / state.sigma2)
        val += _gamma_logpdf(1.0 / state.sigma2, hyper.a_sigma, hyper.b_sigma)
        val -= np.log(hyper.b_phis - hyper.a_phis)
    if model_id.selection:
        for lat, a, b in ((state.sel_beta, hyper.a_sigma_beta, hyper.b_sigma_beta),
                          (state.sel_gamma, hyper.a_sigma_gamma, hyper.b_sigma_gamma)):
            slab = lat.zeta == 1.0
            val += float(np.sum(np.where(slab, np.log(lat.alpha), np.log1p(-lat.alpha))))
            val += sum(_gamma_logpdf(1.0 / s2, a, b) for s2 in lat.sigma2_coef)
    return float(val)
