import numpy as np
import pytest

from tweedie_dglm.model import Hyperparameters, ModelId, ModelState, ObservationSet
from tweedie_dglm.spatial import SpatialDomain
from tweedie_dglm.tweedie import sample_cpg


def make_problem(seed, N=100, p=5, q=4, L=4, model_id="M3", exposure=True):
    """Random data set, domain and a non-trivial state for the given model."""
    rng = np.random.default_rng(seed)
    model_id = ModelId(model_id)
    X = np.column_stack([np.ones(N), rng.standard_normal((N, p - 1))])
    Z = np.column_stack([np.ones(N), rng.standard_normal((N, q - 1))])
    loc = rng.integers(0, L, N)
    t = rng.uniform(0.5, 2.0, N) if exposure else np.ones(N)
    beta = rng.normal(0, 0.3, p)
    gamma = rng.normal(0, 0.3, q)
    w = rng.normal(0, 0.5, L)
    mu = np.exp(X @ beta + w[loc])
    phi = np.exp(Z @ gamma)
    y = sample_cpg(mu, phi, 1.5, rng)
    obs = ObservationSet(y=y, t=t, loc=loc, X=X, Z=Z, n_sites=L)
    domain = SpatialDomain.from_coords(rng.uniform(size=(L, 2)))
    hyper = Hyperparameters()
    state = ModelState.initial(obs, model_id, hyper)
    state.beta = beta + rng.normal(0, 0.1, p)
    state.gamma = gamma + rng.normal(0, 0.1, q)
    state.xi = float(rng.uniform(1.2, 1.8))
    if model_id.spatial:
        state.w = w + rng.normal(0, 0.1, L)
        state.phi_s = float(rng.uniform(0.5, 5.0))
        state.sigma2 = float(rng.uniform(0.5, 2.0))
    if model_id.selection:
        for lat in (state.sel_beta, state.sel_gamma):
            m = lat.zeta.size
            lat.zeta = np.where(rng.random(m) < 0.5, 1.0, hyper.nu0)
            lat.sigma2_coef = rng.uniform(0.5, 2.0, m)
            lat.alpha = float(rng.uniform(0.2, 0.8))
    return obs, domain, hyper, state


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


CRITERIA = []


def record_criterion(number, ok, detail, capsys=None):
    """Print and remember one acceptance line; the caller then asserts ``ok``."""
    line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA.append((number, line))
    if capsys is not None:
        with capsys.disabled():
            print("\n" + line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(CRITERIA):
        terminalreporter.write_line(line)
