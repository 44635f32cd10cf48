"""MCMC kernels and the hybrid MALA / random-walk / Gibbs sampler for M1-M4."""
from __future__ import annotations

import logging
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

from . import model as mdl
from .model import ModelId, ModelState
from .selection import gibbs_spike_slab
from .spatial import NotPositiveDefinite, chol_factor
from .tweedie import SeriesCache

log = logging.getLogger(__name__)

__all__ = [
    "Preconditioner",
    "mala_step",
    "rw_step",
    "gibbs_sigma2_process",
    "adapt_scale",
    "StepState",
    "McmcConfig",
    "ChainOutput",
    "parameter_names",
    "run_chain",
    "run_chains",
    "hierarchical_center",
]

WINDOW = 100


@dataclass(frozen=True)
class Preconditioner:
    """Proposal covariance A = C C' with C^-1 kept for proposal densities."""

    cov: np.ndarray
    scale: np.ndarray
    scale_inv: np.ndarray

    @classmethod
    def identity(cls, d):
        eye = np.eye(d)
        return cls(cov=eye, scale=eye, scale_inv=eye)

    @classmethod
    def from_covariance(cls, cov):
        cov = np.asarray(cov, dtype=float)
        c = chol_factor(cov).lower
        c_inv = solve_triangular(c, np.eye(c.shape[0]), lower=True)
        return cls(cov=c @ c.T, scale=c, scale_inv=c_inv)

    @classmethod
    def from_information(cls, info):
        """A = info^-1, using the Cholesky factor of ``info``."""
        lower = chol_factor(np.asarray(info, dtype=float)).lower
        scale_inv = lower.T
        scale = solve_triangular(scale_inv, np.eye(lower.shape[0]), lower=False)
        return cls(cov=scale @ scale.T, scale=scale, scale_inv=scale_inv)


def _as_preconditioner(precond, d):
    if precond is None:
        return Preconditioner.identity(d)
    if isinstance(precond, Preconditioner):
        return precond
    return Preconditioner.from_covariance(precond)


def mala_step(x, logpost, grad, precond, tau, rng, current=None, return_prob=False):
    """One Metropolis-adjusted Langevin step with proposal covariance tau^2 A.

    x* = x + tau^2/2 A grad(x) + tau A^(1/2) eps, accepted with the full
    Metropolis-Hastings ratio including both proposal densities. ``current``
    may carry (logpost(x), grad(x)) to save two evaluations.
    """
    x = np.asarray(x, dtype=float)
    pc = _as_preconditioner(precond, x.size)
    lp_x, g_x = current if current is not None else (logpost(x), grad(x))
    half = 0.5 * tau ** 2
    fwd = x + half * (pc.cov @ g_x)
    prop = fwd + tau * (pc.scale @ rng.standard_normal(x.size))
    log_u = np.log(rng.random())
    lp_p = logpost(prop)
    if not np.isfinite(lp_p):
        return (x, False, 0.0) if return_prob else (x, False)
    g_p = grad(prop)
    if not np.all(np.isfinite(g_p)):
        return (x, False, 0.0) if return_prob else (x, False)
    bwd = prop + half * (pc.cov @ g_p)
    r_fwd = pc.scale_inv @ (prop - fwd)
    r_bwd = pc.scale_inv @ (x - bwd)
    log_ratio = lp_p - lp_x - 0.5 * (r_bwd @ r_bwd - r_fwd @ r_fwd) / tau ** 2
    prob = float(np.exp(min(0.0, log_ratio)))
    accepted = bool(log_u < log_ratio)
    out = prop if accepted else x
    return (out, accepted, prob) if return_prob else (out, accepted)


def rw_step(x, logpost, step, support, rng, current=None, return_prob=False):
    """Gaussian random-walk Metropolis step on a scalar restricted to an open interval."""
    lo, hi = support
    lp_x = logpost(x) if current is None else current
    prop = x + step * rng.standard_normal()
    log_u = np.log(rng.random())
    if not lo < prop < hi:
        return (x, False, 0.0) if return_prob else (x, False)
    lp_p = logpost(prop)
    log_ratio = lp_p - lp_x if np.isfinite(lp_p) else -np.inf
    prob = float(np.exp(min(0.0, log_ratio)))
    accepted = bool(log_u < log_ratio)
    out = prop if accepted else x
    return (out, accepted, prob) if return_prob else (out, accepted)


def gibbs_sigma2_process(w, kernel, a_sigma, b_sigma, rng):
    """Conjugate draw of the process variance; ``kernel`` factors R(phi_s)."""
    w = np.asarray(w, dtype=float)
    shape = a_sigma + 0.5 * w.size
    rate = b_sigma + 0.5 * kernel.quad_form(w)
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def adapt_scale(tau, recent_accept_rate, target, iteration):
    """Robbins-Monro update on log tau with gain min(0.05, iteration^-1/2)."""
    gain = min(0.05, max(iteration, 1) ** -0.5)
    return float(tau * np.exp(gain * (recent_accept_rate - target)))


@dataclass
class StepState:
    tau_mean: float
    tau_disp: float
    step_xi: float
    step_phis: float
    windows: dict = field(default_factory=lambda: {k: deque(maxlen=WINDOW) for k in
                                                   ("mean", "disp", "xi", "phis")})

    def record(self, block, accepted):
        self.windows[block].append(bool(accepted))

    def window_rate(self, block):
        win = self.windows[block]
        return float(np.mean(win)) if win else float("nan")

    def as_dict(self):
        return {"tau_mean": self.tau_mean, "tau_disp": self.tau_disp,
                "step_xi": self.step_xi, "step_phis": self.step_phis}


@dataclass(frozen=True)
class McmcConfig:
    iters: int = 10_000
    burnin: int = 5_000
    thin: int = 10
    tau_mean: Optional[float] = None
    tau_disp: Optional[float] = None
    step_xi: float = 0.02
    step_phis: float = 1.0
    target_mala: float = 0.58
    target_rw: float = 0.33
    refresh_interval: int = 50
    gamma_update: str = "mala"  # "mala", "mala_numeric" or "rw"
    disp_likelihood: str = "series"  # "series" (exact) or "saddlepoint"
    adapt: bool = True
    warm_start: int = 20
    update_w: bool = True

    def __post_init__(self):
        if not (self.iters > self.burnin >= 0 and self.thin >= 1):
            raise ValueError("need iters > burnin >= 0 and thin >= 1")
        if (self.iters - self.burnin) % self.thin:
            raise ValueError("iters - burnin must be a multiple of thin")
        if self.gamma_update not in ("mala", "mala_numeric", "rw"):
            raise ValueError(f"unknown gamma_update {self.gamma_update!r}")
        mdl.DensityMethod(self.disp_likelihood)

    @property
    def n_kept(self):
        return (self.iters - self.burnin) // self.thin


@dataclass
class ChainOutput:
    draws: np.ndarray
    names: list
    logpost: np.ndarray
    acceptance: dict
    step: StepState
    seed: Optional[int]
    model_id: ModelId
    n_clamped: int = 0
    elapsed: float = 0.0

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def block(self, prefix):
        idx = [i for i, n in enumerate(self.names) if n.startswith(prefix + "[")]
        return self.draws[:, idx]

    def block_names(self, prefix):
        return [n[len(prefix) + 1:-1] for n in self.names if n.startswith(prefix + "[")]


def parameter_names(obs, model_id):
    model_id = ModelId(model_id)
    names = [f"beta[{n}]" for n in obs.x_names] + [f"gamma[{n}]" for n in obs.z_names] + ["xi"]
    if model_id.spatial:
        names += [f"w[{i}]" for i in range(obs.n_sites)] + ["sigma2", "phi_s"]
    if model_id.selection:
        for blk, nm in (("beta", obs.x_names), ("gamma", obs.z_names)):
            names += [f"zeta_{blk}[{n}]" for n in nm]
            names += [f"sigma2_{blk}[{n}]" for n in nm]
            names.append(f"alpha_{blk}")
    return names


def _flatten(state, model_id):
    parts = [state.beta, state.gamma, [state.xi]]
    if model_id.spatial:
        parts += [state.w, [state.sigma2, state.phi_s]]
    if model_id.selection:
        for lat in (state.sel_beta, state.sel_gamma):
            parts += [lat.zeta, lat.sigma2_coef, [lat.alpha]]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


class _Target:
    """Closures over the current state for the block updates."""

    def __init__(self, obs, domain, hyper, model_id, cfg):
        self.obs, self.domain, self.hyper, self.model_id, self.cfg = obs, domain, hyper, model_id, cfg
        self.kernel = None
        self.series = SeriesCache()

    def mean_vec(self, state):
        if self.model_id.spatial and self.cfg.update_w:
            return np.concatenate([state.beta, state.w])
        return state.beta.copy()

    def set_mean(self, state, vec):
        p = self.obs.p
        state.beta = vec[:p].copy()
        if self.model_id.spatial and self.cfg.update_w:
            state.w = vec[p:].copy()

    def _full(self, state, vec):
        if self.model_id.spatial and not self.cfg.update_w:
            return np.concatenate([vec, state.w])
        return vec

    def mean_fns(self, state):
        obs, hyper, mid = self.obs, self.hyper, self.model_id

        def lp(v):
            return mdl.log_post_mean_block(self._full(state, v), obs, state, self.kernel, mid, hyper)

        def gr(v):
            g = mdl.grad_mean_block(self._full(state, v), obs, state, self.kernel, mid, hyper)
            return g[:v.size]
        return lp, gr

    def mean_information(self, state):
        info = mdl.precondition_mean(self.obs, state, self.kernel, self.model_id, self.hyper)
        if self.model_id.spatial and not self.cfg.update_w:
            info = info[:self.obs.p, :self.obs.p]
        return info

    def disp_fns(self, state, gradient=None):
        """Log-posterior and gradient closures for gamma.

        Value and analytic gradient share one likelihood pass, memoised on
        the last gamma seen.
        """
        obs, hyper, mid = self.obs, self.hyper, self.model_id
        method = self.cfg.disp_likelihood
        gradient = gradient or self.cfg.gamma_update
        memo = {}

        def both(g):
            key = g.tobytes()
            if key not in memo:
                memo.clear()
                memo[key] = mdl.disp_value_and_grad(g, obs, state, mid, hyper, method, self.series)
            return memo[key]

        def lp(g):
            return both(g)[0]

        if gradient == "rw":
            def gr(g):
                return np.zeros_like(g)
        elif gradient == "mala_numeric":
            def gr(g):
                return mdl.grad_disp_block(g, obs, state, mid, hyper, mode="numeric", method=method)
        else:
            def gr(g):
                return both(g)[1]
        return lp, gr


def _make_preconditioner(info):
    try:
        return Preconditioner.from_information(info)
    except NotPositiveDefinite:
        log.warning("preconditioner not positive definite; using identity")
        return Preconditioner.identity(info.shape[0])


def _warm_start(state, tgt, rounds):
    """Damped Fisher scoring on the two regression blocks to leave the tails quickly."""
    hyper, mid = tgt.hyper, tgt.model_id
    for _ in range(rounds):
        for lp_gr, info_fn, get, put in (
            (lambda: tgt.mean_fns(state), lambda: tgt.mean_information(state),
             lambda: tgt.mean_vec(state), lambda v: tgt.set_mean(state, v)),
            (lambda: tgt.disp_fns(state, gradient="mala"),
             lambda: mdl.precondition_disp(tgt.obs, state, mid, hyper),
             lambda: state.gamma.copy(), lambda v: setattr(state, "gamma", v.copy())),
        ):
            lp, gr = lp_gr()
            x = get()
            lp0 = lp(x)
            try:
                direction = Preconditioner.from_information(info_fn()).cov @ gr(x)
            except NotPositiveDefinite:
                continue
            t = 1.0
            while t > 1e-4:
                cand = x + t * direction
                if lp(cand) >= lp0:
                    put(cand)
                    break
                t *= 0.5
        if mid.spatial:
            L = tgt.obs.n_sites
            state.sigma2 = (hyper.b_sigma + 0.5 * tgt.kernel.quad_form(state.w)) / (hyper.a_sigma + 0.5 * L + 1.0)


def run_chain(model_id, obs, domain=None, hyper=None, cfg=None, rng=None, seed=None, init=None):
    """Run one chain of the hybrid sampler and return its thinned draws.

    Per iteration: MALA on (beta, w); MALA (or RW) on gamma; RW on xi;
    RW on phi_s and Gibbs on sigma2 (spatial models); spike-and-slab Gibbs
    sweeps for beta then gamma (selection models); step-size adaptation
    during burn-in only.
    """
    model_id = ModelId(model_id)
    hyper = hyper or mdl.Hyperparameters()
    cfg = cfg or McmcConfig()
    if rng is None:
        rng = np.random.default_rng(seed)
    if model_id.spatial and domain is None:
        raise ValueError(f"{model_id.value} requires a spatial domain")
    if not model_id.spatial and domain is not None:
        raise ValueError(f"{model_id.value} takes no spatial domain")
    if model_id.spatial and domain.n_sites != obs.n_sites:
        raise ValueError("domain and observations disagree on the number of sites")

    state = init.copy() if init is not None else ModelState.initial(obs, model_id, hyper)
    mdl.check_state(state, obs, model_id)
    tgt = _Target(obs, domain, hyper, model_id, cfg)
    if model_id.spatial:
        tgt.kernel = mdl.phis_factor(state.phi_s, domain, hyper)
    if cfg.warm_start:
        _warm_start(state, tgt, cfg.warm_start)

    d_mean = tgt.mean_vec(state).size
    steps = StepState(
        tau_mean=cfg.tau_mean or 1.65 * d_mean ** (-1.0 / 6.0),
        tau_disp=cfg.tau_disp or 1.65 * obs.q ** (-1.0 / 6.0),
        step_xi=cfg.step_xi, step_phis=cfg.step_phis)
    disp_target = cfg.target_rw if cfg.gamma_update == "rw" else cfg.target_mala

    names = parameter_names(obs, model_id)
    draws = np.empty((cfg.n_kept, len(names)))
    trace = np.empty(cfg.n_kept)
    counts = {k: 0 for k in ("mean", "disp", "xi", "phis")}
    n_clamped = 0
    pc_mean = pc_disp = None
    bad_streak = 0
    t0 = time.perf_counter()
    kept = 0

    for it in range(cfg.iters):
        burning = it < cfg.burnin
        if pc_mean is None or (burning and it % cfg.refresh_interval == 0):
            pc_mean = _make_preconditioner(tgt.mean_information(state))
            pc_disp = _make_preconditioner(mdl.precondition_disp(obs, state, model_id, hyper))

        # (1) mean block
        lp, gr = tgt.mean_fns(state)
        x = tgt.mean_vec(state)
        lp_x = lp(x)
        if not np.isfinite(lp_x):
            bad_streak += 1
            if bad_streak > 100:
                raise FloatingPointError(f"log-posterior non-finite for 100 iterations (iteration {it})")
        else:
            bad_streak = 0
        x, acc, prob_mean = mala_step(x, lp, gr, pc_mean, steps.tau_mean, rng,
                                      current=(lp_x, gr(x)), return_prob=True)
        tgt.set_mean(state, x)
        steps.record("mean", acc)
        counts["mean"] += acc and not burning

        # (2) dispersion block
        lp, gr = tgt.disp_fns(state)
        g, acc, prob_disp = mala_step(state.gamma, lp, gr, pc_disp, steps.tau_disp, rng, return_prob=True)
        state.gamma = g
        steps.record("disp", acc)
        counts["disp"] += acc and not burning

        # (3) index parameter, exact likelihood
        xi_cache = {}

        def lp_xi(v):
            if v not in xi_cache:
                xi_cache[v] = mdl.log_post_xi(v, obs, state, model_id, hyper, cache=tgt.series)
            return xi_cache[v]
        xi, acc, prob_xi = rw_step(state.xi, lp_xi, steps.step_xi, (hyper.a_xi, hyper.b_xi), rng,
                                   current=lp_xi(state.xi), return_prob=True)
        state.xi = float(xi)
        steps.record("xi", acc)
        counts["xi"] += acc and not burning

        prob_phis = None
        if model_id.spatial:
            # (4) spatial decay
            cache = {}

            def lp_phis(v):
                val, fac = mdl.log_post_phis(v, state.w, state.sigma2, domain, hyper, return_factor=True)
                cache[v] = fac
                return val
            cur = -0.5 * tgt.kernel.logdet - 0.5 * tgt.kernel.quad_form(state.w) / state.sigma2
            phi_s, acc, prob_phis = rw_step(state.phi_s, lp_phis, steps.step_phis,
                                            (hyper.a_phis, hyper.b_phis), rng, current=cur, return_prob=True)
            if acc:
                state.phi_s = phi_s
                tgt.kernel = cache[phi_s]
            steps.record("phis", acc)
            counts["phis"] += acc and not burning
            # (5) process variance
            state.sigma2 = gibbs_sigma2_process(state.w, tgt.kernel, hyper.a_sigma, hyper.b_sigma, rng)

        if model_id.selection:
            # (6) spike-and-slab latents
            state.sel_beta = gibbs_spike_slab(state.beta, state.sel_beta, hyper.nu0,
                                              hyper.a_sigma_beta, hyper.b_sigma_beta, rng)
            state.sel_gamma = gibbs_spike_slab(state.gamma, state.sel_gamma, hyper.nu0,
                                               hyper.a_sigma_gamma, hyper.b_sigma_gamma, rng)

        # (7) adaptation, burn-in only
        if burning and cfg.adapt:
            k = it + 1
            steps.tau_mean = adapt_scale(steps.tau_mean, prob_mean, cfg.target_mala, k)
            steps.tau_disp = adapt_scale(steps.tau_disp, prob_disp, disp_target, k)
            steps.step_xi = adapt_scale(steps.step_xi, prob_xi, cfg.target_rw, k)
            if prob_phis is not None:
                steps.step_phis = adapt_scale(steps.step_phis, prob_phis, cfg.target_rw, k)

        if not burning and (it - cfg.burnin + 1) % cfg.thin == 0:
            _, _, nc = mdl.linear_predictors(state, obs, model_id, hyper, return_flag=True)
            n_clamped += nc
            draws[kept] = _flatten(state, model_id)
            # mu and phi are unchanged since the xi step, so its likelihood is current
            trace[kept] = mdl.log_joint(state, obs, model_id, hyper, kernel=tgt.kernel,
                                        loglik=xi_cache[state.xi])
            kept += 1

    post = max(cfg.iters - cfg.burnin, 1)
    acceptance = {k: v / post for k, v in counts.items()
                  if k != "phis" or model_id.spatial}
    return ChainOutput(draws=draws, names=names, logpost=trace, acceptance=acceptance, step=steps,
                       seed=seed, model_id=model_id, n_clamped=n_clamped,
                       elapsed=time.perf_counter() - t0)


def run_chains(model_id, obs, domain=None, hyper=None, cfg=None, seed=0, n_chains=1, init=None):
    """Independent chains with per-chain seeds spawned from ``seed``."""
    children = np.random.SeedSequence(seed).spawn(n_chains)
    out = []
    for i, child in enumerate(children):
        res = run_chain(model_id, obs, domain, hyper, cfg, rng=np.random.default_rng(child), init=init)
        res.seed = seed if n_chains == 1 else f"{seed}/{i}"
        out.append(res)
    return out


def hierarchical_center(w_draws):
    """Split each draw of w into its mean (the intercept) and the centred remainder."""
    w_draws = np.atleast_2d(np.asarray(w_draws, dtype=float))
    if w_draws.shape[0] < 1:
        raise ValueError("need at least one draw")
    beta0 = w_draws.mean(axis=1)
    centered = w_draws - beta0[:, None]
    return beta0, centered
