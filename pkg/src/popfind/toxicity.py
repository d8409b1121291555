"""Probit sum-of-trees model for binary toxicity.

Data augmentation: latent ``w_i ~ N(eta(z_i, x_i), 1)`` with ``y_i = 1``
iff ``w_i > 0``. Each iteration redraws the latents from their truncated
normals and then sweeps the forest on ``w`` with unit noise variance.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .bart import Design, ForestState, predict_rows, sweep_inplace
from .data import PosteriorDraws, TrialDataset

log = logging.getLogger(__name__)

_TINY = np.finfo(float).tiny


@dataclass
class ToxConfig:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 5
    seed: int = 0
    n_trees: int = 50
    k: float = 2.0
    alpha_split: float = 0.95
    beta_split: float = 2.0
    max_depth: int = 6

    def __post_init__(self):
        if not self.iterations > self.burn_in >= 0:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def draw_latent(eta: np.ndarray, y: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Truncated N(eta, 1) draws: positive where ``y == 1``, nonpositive otherwise.

    Inversion is done in whichever tail keeps the truncated mass away from 1.
    """
    eta = np.asarray(eta, float)
    v = rng.random(len(eta))
    a = -eta  # truncation point on the standard-normal scale
    w = np.empty_like(eta)
    pos = np.asarray(y) == 1
    # Z > a: upper-tail inversion
    qa = ndtr(-a[pos])
    w[pos] = eta[pos] - ndtri(np.maximum(v[pos] * qa, _TINY))
    # Z <= a: lower-tail inversion
    pa = ndtr(a[~pos])
    w[~pos] = eta[~pos] + ndtri(np.maximum(v[~pos] * pa, _TINY))
    w[pos] = np.maximum(w[pos], np.nextafter(0.0, 1.0))
    w[~pos] = np.minimum(w[~pos], 0.0)
    return w


def run_tox_chain(data: TrialDataset, config: ToxConfig | None = None) -> PosteriorDraws:
    """Fit the toxicity model; ``mean0``/``mean1`` hold probit-scale means at each arm."""
    if data.y_tox is None:
        raise ValueError("dataset has no toxicity column")
    config = config or ToxConfig()
    rng = np.random.default_rng(config.seed)
    y = data.y_tox.astype(int)
    design = Design(data.z, data.X)
    ybar = float(np.clip(y.mean(), 0.025, 0.975))
    # scale 6: latent range of +-3 maps to the unit width the leaf prior assumes
    forest = ForestState.initial(
        data.n, config.n_trees, shift=float(ndtri(ybar)), scale=6.0, k=config.k,
        alpha_split=config.alpha_split, beta_split=config.beta_split, max_depth=config.max_depth,
    )
    X = np.asarray(data.X, float)
    keep0, keep1 = [], []
    for it in range(config.iterations):
        w = draw_latent(forest.fitted(), y, rng)
        sweep_inplace(forest, w, design, 1.0, rng)
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            keep0.append(predict_rows(forest, 0.0, X))
            keep1.append(predict_rows(forest, 1.0, X))
    D = len(keep0)
    return PosteriorDraws(
        mean0=np.array(keep0), mean1=np.array(keep1), sigma2=np.ones(D), residuals=None,
        burn_in=config.burn_in, thin=config.thin, seed=config.seed, X=X,
        diagnostics={"toxicity_rate": float(y.mean())},
    )


def tox_table(draws: PosteriorDraws) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean toxicity probability for every observed row under arm C and arm N."""
    return ndtr(draws.mean0).mean(axis=0), ndtr(draws.mean1).mean(axis=0)


def tox_probability(draws: PosteriorDraws, z: int, x) -> float:
    """Posterior mean P(toxicity | z, x) for an observed covariate row."""
    from .aft import mean_at

    return float(ndtr(mean_at(draws, z, x)).mean())
