"""Synthetic designs with controlled zero share and mean/dispersion overlap,
plus the recovery metrics used to score fits against the truth."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .diagnostics import summarize_chain
from .model import ModelId, ObservationSet
from .selection import fdr_select
from .spatial import MaternKernel, SpatialDomain, chol_factor

__all__ = [
    "ZERO_SETTINGS",
    "ZeroSetting",
    "Scenario",
    "SyntheticTruth",
    "FitMetrics",
    "active_split",
    "deterministic_surface",
    "generate_dataset",
    "evaluate_fit",
    "run_replication",
    "run_replications",
]

INTERCEPT = "intercept"


@dataclass(frozen=True)
class ZeroSetting:
    mu_beta: float
    sd_beta: float
    gamma0: float
    mu_gamma: float
    sd_gamma: float


# target zero percentage -> coefficient law
ZERO_SETTINGS = {
    15: ZeroSetting(0.50, 0.1, -1.50, 0.50, 0.1),
    30: ZeroSetting(0.50, 0.1, 0.70, 0.50, 0.1),
    60: ZeroSetting(0.50, 0.1, 2.50, 0.50, 0.1),
    80: ZeroSetting(1.00, 0.1, 4.50, 0.50, 0.1),
    95: ZeroSetting(1.00, 0.1, 7.00, 0.50, 0.1),
}

PATTERNS = ("deterministic", "gp", "none")


def active_split(n_cov, overlap):
    """Sizes (k_mean, k_disp, k_shared) for the requested overlap percentage.

    Searches sizes near half of ``n_cov`` for the split whose shared share
    |A & B| / |A | B| equals ``overlap`` / 100 exactly.
    """
    target = overlap / 100.0
    half = n_cov // 2
    best = None
    for k1 in range(1, n_cov + 1):
        for k2 in range(1, n_cov + 1):
            for s in range(0, min(k1, k2) + 1):
                union = k1 + k2 - s
                if union > n_cov or not math.isclose(s / union, target):
                    continue
                cost = abs(k1 - half) + abs(k2 - half) + 0.5 * abs(k1 - k2)
                if best is None or cost < best[0]:
                    best = (cost, k1, k2, s)
    if best is None:
        raise ValueError(f"overlap {overlap}% is not realizable with {n_cov} covariates")
    return best[1:]


@dataclass(frozen=True)
class Scenario:
    """One synthetic design.

    ``p`` and ``q`` count all columns of X and Z. Z always carries an
    intercept; X carries one only for non-spatial data, since a spatial
    effect absorbs the mean level.
    """

    N: int = 5000
    L: int = 100
    p: int = 9
    q: int = 10
    zero_setting: int = 30
    overlap: int = 100
    pattern: str = "deterministic"
    xi_true: float = 1.5
    gp_sigma2: float = 1.0
    gp_phi_s: float = 3.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.zero_setting not in ZERO_SETTINGS:
            raise ValueError(f"zero_setting must be one of {sorted(ZERO_SETTINGS)}")
        if self.overlap not in (0, 50, 100):
            raise ValueError("overlap must be 0, 50 or 100")
        if self.pattern not in PATTERNS:
            raise ValueError(f"pattern must be one of {PATTERNS}")
        if self.N < 1 or self.L < 1:
            raise ValueError("N and L must be positive")
        if self.n_cov < 2:
            raise ValueError("need at least two non-intercept covariates")
        if (self.p - self.mean_intercept) != (self.q - 1):
            raise ValueError("X and Z must share the same non-intercept covariates")
        active_split(self.n_cov, self.overlap)

    @property
    def spatial(self):
        return self.pattern != "none"

    @property
    def mean_intercept(self):
        return 0 if self.spatial else 1

    @property
    def n_cov(self):
        return self.q - 1

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class SyntheticTruth:
    beta: np.ndarray
    gamma: np.ndarray
    w: Optional[np.ndarray]
    xi: float
    active_beta: np.ndarray
    active_gamma: np.ndarray
    x_names: tuple
    z_names: tuple
    sigma2: Optional[float] = None
    phi_s: Optional[float] = None
    zero_fraction: float = float("nan")
    meta: dict = field(default_factory=dict)


def deterministic_surface(coords):
    s = np.asarray(coords, dtype=float)
    return 5.0 * (np.sin(3 * np.pi * s[:, 0]) + np.cos(3 * np.pi * s[:, 1]))


def _standardize(a):
    a = a - a.mean(axis=0)
    sd = a.std(axis=0)
    return a / np.where(sd > 0, sd, 1.0)


def generate_dataset(scenario, rng=None):
    """Draw (ObservationSet, SpatialDomain or None, SyntheticTruth).

    Non-intercept covariates are shared by X and Z, drawn iid N(0, 1) and
    standardized. Active coefficients are N(mu, sd) from the zero setting;
    inactive ones are exactly 0. Exposures are 1.
    """
    from .tweedie import sample_cpg

    sc = scenario
    if rng is None:
        rng = np.random.default_rng(sc.seed)
    n_cov = sc.n_cov
    law = ZERO_SETTINGS[sc.zero_setting]

    cov = _standardize(rng.standard_normal((sc.N, n_cov)))
    cov_names = tuple(f"v{i + 1}" for i in range(n_cov))
    ones = np.ones((sc.N, 1))
    X = np.hstack([ones, cov]) if sc.mean_intercept else cov
    x_names = ((INTERCEPT,) if sc.mean_intercept else ()) + cov_names
    Z = np.hstack([ones, cov])
    z_names = (INTERCEPT,) + cov_names

    k1, k2, shared = active_split(n_cov, sc.overlap)
    act_b = np.zeros(n_cov, dtype=bool)
    act_g = np.zeros(n_cov, dtype=bool)
    act_b[:k1] = True
    # dispersion set reuses the last `shared` mean covariates, then fresh ones
    act_g[k1 - shared:k1 - shared + k2] = True

    b_cov = np.where(act_b, rng.normal(law.mu_beta, law.sd_beta, n_cov), 0.0)
    g_cov = np.where(act_g, rng.normal(law.mu_gamma, law.sd_gamma, n_cov), 0.0)
    if sc.mean_intercept:
        beta = np.concatenate([[rng.normal(law.mu_beta, law.sd_beta)], b_cov])
        active_beta = np.concatenate([[True], act_b])
    else:
        beta, active_beta = b_cov, act_b
    gamma = np.concatenate([[law.gamma0], g_cov])
    active_gamma = np.concatenate([[True], act_g])

    loc = rng.integers(0, sc.L, sc.N) if sc.spatial else np.zeros(sc.N, dtype=np.int64)
    domain = None
    w = None
    sigma2 = phi_s = None
    if sc.spatial:
        coords = rng.uniform(size=(sc.L, 2))
        domain = SpatialDomain.from_coords(coords)
        if sc.pattern == "deterministic":
            w = deterministic_surface(coords) + rng.standard_normal(sc.L)
        else:
            sigma2, phi_s = sc.gp_sigma2, sc.gp_phi_s
            kern = MaternKernel(sigma2, phi_s, 0.5)
            fac = chol_factor(kern.covariance(domain.dist))
            w = fac.lower @ rng.standard_normal(sc.L)

    eta_mu = X @ beta + (w[loc] if w is not None else 0.0)
    mu = np.exp(np.clip(eta_mu, -700, 700))
    phi = np.exp(Z @ gamma)
    y = sample_cpg(mu, phi, sc.xi_true, rng)

    obs = ObservationSet(y=y, t=np.ones(sc.N), loc=loc, X=X, Z=Z,
                         n_sites=sc.L if sc.spatial else 1, x_names=x_names, z_names=z_names)
    truth = SyntheticTruth(beta=beta, gamma=gamma, w=w, xi=sc.xi_true,
                           active_beta=active_beta, active_gamma=active_gamma,
                           x_names=x_names, z_names=z_names, sigma2=sigma2, phi_s=phi_s,
                           zero_fraction=float(np.mean(y == 0)),
                           meta={"scenario": asdict(sc)})
    return obs, domain, truth


@dataclass
class FitMetrics:
    mse: dict
    coverage: dict
    fpr: float = float("nan")
    tpr: float = float("nan")
    overlap: float = float("nan")
    true_overlap: float = float("nan")
    zero_fraction: float = float("nan")

    def to_row(self):
        row = {f"mse_{k}": v for k, v in self.mse.items()}
        row.update({f"cp_{k}": v for k, v in self.coverage.items()})
        row.update(fpr=self.fpr, tpr=self.tpr, overlap=self.overlap,
                   true_overlap=self.true_overlap, zero_fraction=self.zero_fraction)
        return row


def _set_overlap(a, b):
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else float("nan")


def evaluate_fit(truth, chain, report_beta=None, report_gamma=None, hpd_prob=0.95, estimator="median"):
    """MSE and HPD coverage per parameter family; FPR/TPR and overlap from reports.

    Rates are computed over the non-intercept coefficients of both blocks
    pooled. The overlap compares the covariates selected in the two blocks.
    """
    summ = summarize_chain(chain, hpd_prob)
    est = getattr(summ, estimator if estimator != "map" else "map_estimate")
    idx = {n: i for i, n in enumerate(summ.names)}

    def family(prefix, names):
        return np.array([idx[f"{prefix}[{n}]"] for n in names])

    fams = {"beta": (family("beta", truth.x_names), truth.beta),
            "gamma": (family("gamma", truth.z_names), truth.gamma),
            "xi": (np.array([idx["xi"]]), np.array([truth.xi]))}
    if ModelId(chain.model_id).spatial and truth.w is not None:
        fams["w"] = (family("w", [str(i) for i in range(truth.w.size)]), truth.w)
        if truth.sigma2 is not None:
            fams["sigma2"] = (np.array([idx["sigma2"]]), np.array([truth.sigma2]))
            fams["phi_s"] = (np.array([idx["phi_s"]]), np.array([truth.phi_s]))
    mse, cover = {}, {}
    for name, (cols, true) in fams.items():
        mse[name] = float(np.mean((est[cols] - true) ** 2))
        cover[name] = float(np.mean((summ.hpd_lower[cols] <= true) & (true <= summ.hpd_upper[cols])))

    out = FitMetrics(mse=mse, coverage=cover, zero_fraction=truth.zero_fraction)
    tb = [n for n, a in zip(truth.x_names, truth.active_beta) if a and n != INTERCEPT]
    tg = [n for n, a in zip(truth.z_names, truth.active_gamma) if a and n != INTERCEPT]
    out.true_overlap = _set_overlap(tb, tg)
    if report_beta is not None and report_gamma is not None:
        flags, actual = [], []
        sel = {}
        for rep, names, act, key in ((report_beta, truth.x_names, truth.active_beta, "b"),
                                     (report_gamma, truth.z_names, truth.active_gamma, "g")):
            keep = [i for i, n in enumerate(names) if n != INTERCEPT]
            flags.append(rep.selected[keep])
            actual.append(act[keep])
            sel[key] = [names[i] for i in keep if rep.selected[i]]
        flags = np.concatenate(flags)
        actual = np.concatenate(actual)
        n_act = int(actual.sum())
        n_inact = int((~actual).sum())
        out.tpr = float(np.sum(flags & actual) / n_act) if n_act else float("nan")
        out.fpr = float(np.sum(flags & ~actual) / n_inact) if n_inact else float("nan")
        out.overlap = _set_overlap(sel["b"], sel["g"])
    return out


def run_replication(scenario, model_id, cfg=None, hyper=None, seed=0):
    """Generate one dataset, fit ``model_id`` and score it. Returns (metrics, truth, chain)."""
    from .model import Hyperparameters
    from .samplers import run_chain

    model_id = ModelId(model_id)
    hyper = hyper or Hyperparameters()
    data_seq, chain_seq = np.random.SeedSequence(seed).spawn(2)
    obs, domain, truth = generate_dataset(scenario, np.random.default_rng(data_seq))
    chain = run_chain(model_id, obs, domain if model_id.spatial else None, hyper, cfg,
                      rng=np.random.default_rng(chain_seq), seed=seed)
    rb = rg = None
    if model_id.selection:
        rb = fdr_select(chain.block("beta"), hyper.fdr_c, hyper.fdr_alpha, chain.block_names("beta"))
        rg = fdr_select(chain.block("gamma"), hyper.fdr_c, hyper.fdr_alpha, chain.block_names("gamma"))
    return evaluate_fit(truth, chain, rb, rg), truth, chain


def _replication_task(args):
    scenario, model_id, cfg, hyper, seed = args
    metrics, _, _ = run_replication(scenario, model_id, cfg, hyper, seed)
    return metrics


def run_replications(scenario, model_id, n_reps, cfg=None, hyper=None, seed=0, workers=1):
    """Independent replications; replication r uses the r-th spawned seed of ``seed``."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n_reps)]
    tasks = [(scenario, model_id, cfg, hyper, s) for s in seeds]
    if workers <= 1:
        return [_replication_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replication_task, tasks))
