"""Semi-parametric AFT sampler: sum-of-trees mean, Polya-tree residuals.

Each iteration runs three updates:

1. the forest, proposed by a Gaussian-working-model sweep and accepted
   with the ratio of Polya-tree correction factors;
2. the centering variance, proposed from its conjugate inverse-gamma
   full conditional and accepted the same way (new partition, same residuals);
3. censored log-times, redrawn one at a time from the Polya-tree
   predictive truncated above the censoring point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np

from . import polya
from .bart import Design, ForestState, predict_rows, sweep_inplace
from .data import CompleteData, PosteriorDraws, TrialDataset, complete_data

log = logging.getLogger(__name__)


@dataclass
class SamplerConfig:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 5
    seed: int = 0
    sigma_shape: float = 3.0
    sigma_scale: float | None = None  # None: prior mode at the arm-only OLS residual variance
    pt_depth: int = 6
    pt_c: float = 5.0  # see bin-precision note in README
    n_trees: int = 50
    k: float = 2.0
    alpha_split: float = 0.95
    beta_split: float = 2.0
    max_depth: int = 6
    keep_forests: bool = False
    debug: bool = False

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ChainState:
    forest: ForestState
    sigma2: float
    y: np.ndarray  # complete log-times
    pt: polya.PolyaTreeSpec
    corr: float = field(default=float("nan"))  # correction factor at current residuals/sigma2

    @property
    def residuals(self) -> np.ndarray:
        return self.y - self.forest.fitted()

    def complete(self, data: TrialDataset) -> CompleteData:
        kappa = np.where(data.gamma == 0, np.maximum(self.y - data.y_obs_log, 0.0), 0.0)
        return complete_data(data, kappa)

    def counts(self) -> polya.PolyaTreeCounts:
        return polya.PolyaTreeCounts.from_residuals(self.residuals, self.pt.with_sigma2(self.sigma2))

    def refresh_corr(self) -> None:
        self.corr = _corr(self.residuals, self.sigma2, self.pt)


def _corr(u, sigma2, pt: polya.PolyaTreeSpec) -> float:
    return float(polya.correction_nb(np.ascontiguousarray(u), math.sqrt(sigma2), pt.depth, pt.c))


class _Chain:
    """Per-chain fixed quantities shared by the three steps."""

    def __init__(self, data: TrialDataset, config: SamplerConfig):
        self.data = data
        self.config = config
        self.design = Design(data.z, data.X)
        self.cens = data.censored.astype(np.int64)
        z = data.z.astype(float)
        A = np.column_stack([np.ones(data.n), z])
        self.A = A

    def sigma_prior(self, y) -> tuple[float, float]:
        a = self.config.sigma_shape
        if self.config.sigma_scale is not None:
            return a, self.config.sigma_scale
        coef, *_ = np.linalg.lstsq(self.A, y, rcond=None)
        res = y - self.A @ coef
        s2 = float(res @ res) / max(len(y) - 2, 1)
        return a, s2 * (a + 1.0)  # inverse-gamma mode b/(a+1) equals s2


def init_state(data: TrialDataset, config: SamplerConfig, chain: _Chain | None = None) -> ChainState:
    """Censored log-times start half a response SD beyond censoring; forest root-only at the mean."""
    y = data.y_obs_log.copy()
    sd = float(np.std(data.y_obs_log)) or 1.0
    y[data.gamma == 0] += sd / 2.0
    forest = ForestState.for_response(
        y, config.n_trees, k=config.k, alpha_split=config.alpha_split,
        beta_split=config.beta_split, max_depth=config.max_depth,
    )
    sigma2 = float(np.var(y - forest.fitted())) or 1.0
    pt = polya.PolyaTreeSpec(config.pt_depth, config.pt_c, sigma2)
    st = ChainState(forest=forest, sigma2=sigma2, y=y, pt=pt)
    st.refresh_corr()
    return st


def step_mu(state: ChainState, chain: _Chain, rng: np.random.Generator) -> tuple[ChainState, bool]:
    """Forest update: Gaussian-model sweep as proposal, Polya-tree correction as acceptance."""
    prop = state.forest.copy()
    sweep_inplace(prop, state.y, chain.design, state.sigma2, rng)
    corr_new = _corr(state.y - prop.fitted(), state.sigma2, state.pt)
    log_r = corr_new - state.corr
    if log_r >= 0 or math.log(rng.random()) < log_r:
        state.forest = prop
        state.corr = corr_new
        return state, True
    return state, False


def step_sigma(state: ChainState, chain: _Chain, rng: np.random.Generator) -> tuple[ChainState, bool]:
    """Centering-variance update from the conjugate inverse-gamma proposal."""
    u = state.residuals
    a, b = chain.sigma_prior_ab
    a_post = a + 0.5 * len(u)
    b_post = b + 0.5 * float(u @ u)
    prop = b_post / rng.gamma(a_post)
    assert prop > 0
    corr_new = _corr(u, prop, state.pt)
    log_r = corr_new - state.corr
    if log_r >= 0 or math.log(rng.random()) < log_r:
        state.sigma2 = prop
        state.corr = corr_new
        return state, True
    return state, False


def step_impute(state: ChainState, chain: _Chain, rng: np.random.Generator) -> ChainState:
    """Redraw censored log-times one at a time given all other residuals."""
    if len(chain.cens) == 0:
        return state
    eta = state.forest.fitted()
    u = state.y - eta
    lower = chain.data.y_obs_log[chain.cens] - eta[chain.cens]
    seed = int(rng.integers(0, 2**31 - 1))
    polya.impute_censored_nb(u, chain.cens, lower, math.sqrt(state.sigma2), state.pt.depth, state.pt.c, seed)
    y = state.y.copy()
    y[chain.cens] = eta[chain.cens] + u[chain.cens]
    # the truncated draw is strictly above its bound in residual units; keep that on the time scale
    bad = y[chain.cens] <= chain.data.y_obs_log[chain.cens]
    if bad.any():
        idx = chain.cens[bad]
        y[idx] = np.nextafter(chain.data.y_obs_log[idx], np.inf)
    state.y = y
    state.refresh_corr()
    return state


def _check_state(state: ChainState) -> None:
    counts = state.counts()
    assert counts.is_consistent()
    assert counts.total() == len(state.y)
    assert abs(_corr(state.residuals, state.sigma2, state.pt) - state.corr) < 1e-8


def run_chain(data: TrialDataset, config: SamplerConfig | None = None) -> PosteriorDraws:
    """Run one chain and return thinned post-burn-in draws with acceptance diagnostics."""
    config = config or SamplerConfig()
    rng = np.random.default_rng(config.seed)
    chain = _Chain(data, config)
    state = init_state(data, config, chain)
    chain.sigma_prior_ab = chain.sigma_prior(state.y)

    X = np.asarray(data.X, float)
    keep = []
    acc_mu = acc_sigma = 0
    sig_trace = np.empty(config.iterations)
    for it in range(config.iterations):
        state, a1 = step_mu(state, chain, rng)
        state, a2 = step_sigma(state, chain, rng)
        state = step_impute(state, chain, rng)
        acc_mu += a1
        acc_sigma += a2
        sig_trace[it] = state.sigma2
        if config.debug:
            _check_state(state)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            keep.append((
                predict_rows(state.forest, 0.0, X), predict_rows(state.forest, 1.0, X),
                state.sigma2, state.residuals.copy(),
                state.forest.copy() if config.keep_forests else None,
            ))
    post = sig_trace[config.burn_in:]
    diagnostics = {
        "accept_mu": acc_mu / config.iterations,
        "accept_sigma": acc_sigma / config.iterations,
        "sigma2_mean": float(post.mean()),
        "sigma2_sd": float(post.std()),
        "sigma2_q": [float(q) for q in np.quantile(post, [0.025, 0.5, 0.975])],
        "n_censored": int(len(chain.cens)),
    }
    log.debug("chain done: %s", diagnostics)
    return PosteriorDraws(
        mean0=np.array([k[0] for k in keep]), mean1=np.array([k[1] for k in keep]),
        sigma2=np.array([k[2] for k in keep]), residuals=np.array([k[3] for k in keep]),
        burn_in=config.burn_in, thin=config.thin, seed=config.seed, X=X,
        forests=[k[4] for k in keep] if config.keep_forests else None,
        pt_depth=config.pt_depth, pt_c=config.pt_c, diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# posterior predictive survival


@numba.njit(cache=True)
def _tail_matrix(res, sig, eta, logtau, M, c):
    """P(u > logtau - eta[d, q]) under draw d's predictive; returns draws x queries."""
    D = res.shape[0]
    Q = eta.shape[1]
    K = 1 << M
    out = np.empty((D, Q))
    for d in range(D):
        cnt = polya.leaf_counts_nb(res[d], sig[d], M)
        probs = polya._probs_from_leaf(cnt, M, c)
        above = np.zeros(K)
        acc = 0.0
        for k in range(K - 1, -1, -1):
            above[k] = acc
            acc += probs[k]
        for q in range(Q):
            t = logtau - eta[d, q]
            k = polya._bin_of(t, sig[d], K)
            qt = polya._ndtr(-t / sig[d])
            frac = (qt - (K - k - 1) / K) * K
            if frac < 0.0:
                frac = 0.0
            if frac > 1.0:
                frac = 1.0
            out[d, q] = above[k] + probs[k] * frac
    return out


def survival_draws(draws: PosteriorDraws, tau: float, eta: np.ndarray) -> np.ndarray:
    """Per-draw survival P(y > log tau) for a draws x queries table of mean values."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    eta = np.ascontiguousarray(np.asarray(eta, float).reshape(draws.n_draws, -1))
    return _tail_matrix(np.ascontiguousarray(draws.residuals), np.sqrt(draws.sigma2), eta,
                        math.log(tau), draws.pt_depth, draws.pt_c)


def survival_table(draws: PosteriorDraws, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Posterior predictive S(tau) for every observed row under arm C and arm N."""
    s0 = survival_draws(draws, tau, draws.mean0).mean(axis=0)
    s1 = survival_draws(draws, tau, draws.mean1).mean(axis=0)
    return s0, s1


def mean_at(draws: PosteriorDraws, z: int, x) -> np.ndarray:
    """Per-draw forest mean at (z, x): from stored forests, else by matching an observed row."""
    x = np.asarray(x, float).ravel()
    if draws.forests is not None:
        return np.array([predict_rows(f, float(z), x[None, :])[0] for f in draws.forests])
    if draws.X is not None:
        hit = np.flatnonzero(np.all(draws.X == x[None, :], axis=1))
        if len(hit):
            return (draws.mean1 if z == 1 else draws.mean0)[:, hit[0]]
    raise ValueError("x is not an observed row and no forests were kept (set keep_forests=True)")


def survival_probability(draws: PosteriorDraws, tau: float, z: int, x) -> float:
    """Monte Carlo posterior predictive survival S(tau | z, x)."""
    eta = mean_at(draws, z, x)
    return float(survival_draws(draws, tau, eta[:, None]).mean())
