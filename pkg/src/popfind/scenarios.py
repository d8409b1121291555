"""Simulation truth: scenario regions, calibration and data generation.

Log event times follow

    y = beta_c + beta0 * z + h(x) + gamma * z * I(x) + e,    e ~ N(0, s^2)

with ``h(x) = 0.1 x1 + 0.05 x2 - 0.1 x3 - 0.1 x4 + 0.05 x5 - 0.05 x1 x3``.
Toxicity is logistic in ``alpha_c + h_tox(x) + gamma_tox * z * I_tox(x)``.
Coefficients are calibrated by bisection against marginal survival and
toxicity targets over a large N(0, 1) covariate sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtr
from scipy.stats import norm

from .data import TrialDataset

TAU = 90.0

# theoretical N(0,1) quantiles used by the truth regions
Q25, Q33, Q50, Q67, Q75 = (float(norm.ppf(q)) for q in (0.25, 1 / 3, 0.5, 2 / 3, 0.75))


def h_tte(X: np.ndarray) -> np.ndarray:
    x = X
    return 0.1 * x[:, 0] + 0.05 * x[:, 1] - 0.1 * x[:, 2] - 0.1 * x[:, 3] + 0.05 * x[:, 4] - 0.05 * x[:, 0] * x[:, 2]


def h_tox(X: np.ndarray) -> np.ndarray:
    x = X
    return (0.05 * x[:, 5] - 0.1 * x[:, 6] - 0.1 * x[:, 7] + 0.05 * x[:, 8] + 0.1 * x[:, 9]
            - 0.05 * x[:, 5] * x[:, 7])


EFFICACY_REGIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "E1": lambda X: np.ones(len(X), bool),
    "E2": lambda X: X[:, 0] >= Q33,
    "E3": lambda X: X[:, 0] >= Q50,
    "E4": lambda X: X[:, 0] >= Q67,
    "E5": lambda X: (X[:, 0] >= Q33) & (X[:, 1] >= Q33),
    "E6": lambda X: (X[:, 0] >= Q50) & (X[:, 1] >= Q50),
    "E7": lambda X: (X[:, 0] >= Q33) & (X[:, 1] >= Q67),
    "E8": lambda X: (X[:, 0] >= Q33) & (X[:, 0] < Q67),
    "E9": lambda X: (X[:, 0] < Q25) | (X[:, 0] >= Q75),
    "E10": lambda X: (X[:, 0] >= Q67) | (X[:, 1] >= Q67),
}
TOXICITY_REGIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "T1": lambda X: X[:, 5] <= Q33,
    "T2": lambda X: X[:, 5] <= Q67,
}

SCENARIO_IDS = (
    "0", *(f"E{i}" for i in range(1, 11)), "T1", "T2",
    "E1*T1", "E1*T2", "E2*T1", "E2*T2", "E4*T1", "E4*T2",
)


@dataclass(frozen=True)
class ScenarioSpec:
    """A simulation scenario; coefficients are filled in by :func:`calibrate_scenario`."""

    id: str
    efficacy_region: str | None = None
    toxicity_region: str | None = None
    d_surv: float = 0.40  # sensitive-region arm-N survival minus 0.20
    d_tox: float = 0.25  # sensitive-region arm-N toxicity minus 0.10
    tau: float = TAU
    s: float = 1.0
    s_c: float = 0.20
    s_n: float = 0.30
    tox_c: float = 0.10
    beta_c: float = float("nan")
    beta0: float = 0.0
    gamma: float = 0.0
    alpha_c: float = float("nan")
    gamma_tox: float = 0.0
    calibration: dict = field(default_factory=dict, compare=False)

    @property
    def calibrated(self) -> bool:
        return math.isfinite(self.beta_c) and math.isfinite(self.alpha_c)

    @property
    def trade_off(self) -> bool:
        return self.toxicity_region is not None

    def sensitive(self, X: np.ndarray) -> np.ndarray:
        if self.efficacy_region is None:
            return np.zeros(len(X), bool)
        return EFFICACY_REGIONS[self.efficacy_region](X)

    def tox_sensitive(self, X: np.ndarray) -> np.ndarray:
        if self.toxicity_region is None:
            return np.zeros(len(X), bool)
        return TOXICITY_REGIONS[self.toxicity_region](X)

    def g(self, z, X: np.ndarray) -> np.ndarray:
        """Mean log event time."""
        z = np.broadcast_to(np.asarray(z, float), (len(X),))
        return self.beta_c + self.beta0 * z + h_tte(X) + self.gamma * z * self.sensitive(X)

    def tox_logit(self, z, X: np.ndarray) -> np.ndarray:
        z = np.broadcast_to(np.asarray(z, float), (len(X),))
        return self.alpha_c + h_tox(X) + self.gamma_tox * z * self.tox_sensitive(X)

    def survival(self, z, X: np.ndarray, tau: float | None = None) -> np.ndarray:
        t = self.tau if tau is None else tau
        return ndtr((self.g(z, X) - math.log(t)) / self.s)

    def pcte(self, X: np.ndarray, tau: float | None = None) -> np.ndarray:
        return self.survival(1, X, tau) - self.survival(0, X, tau)

    def pcte_tox(self, X: np.ndarray) -> np.ndarray:
        return expit(self.tox_logit(1, X)) - expit(self.tox_logit(0, X))


def scenario(id: str, d_surv: float = 0.40, d_tox: float = 0.25, **kw) -> ScenarioSpec:
    """Uncalibrated spec for one of the 17 scenario ids."""
    if id not in SCENARIO_IDS:
        raise ValueError(f"unknown scenario {id!r}; expected one of {', '.join(SCENARIO_IDS)}")
    eff = tox = None
    for part in id.split("*"):
        if part.startswith("E"):
            eff = part
        elif part.startswith("T"):
            tox = part
    return ScenarioSpec(id=id, efficacy_region=eff, toxicity_region=tox, d_surv=d_surv, d_tox=d_tox, **kw)


@lru_cache(maxsize=4)
def covariate_sample(size: int = 1_000_000, p: int = 10, seed: int = 20240601) -> np.ndarray:
    X = np.random.default_rng(seed).standard_normal((size, p))
    X.setflags(write=False)
    return X


def _solve(f, lo=-20.0, hi=20.0) -> float:
    return brentq(f, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=500)


def calibrate_scenario(spec: ScenarioSpec, mc_size: int = 1_000_000, seed: int = 20240601) -> ScenarioSpec:
    """Solve for coefficients so the marginal targets hold on a covariate sample.

    Arm C survival at ``tau`` is ``s_c``; arm N survival is ``s_n`` outside the
    sensitive region and ``s_c + d_surv`` inside (scenario 0: arms equal; E1:
    the whole population is sensitive). Arm C toxicity is ``tox_c`` and arm N
    toxicity in the toxicity region is ``tox_c + d_tox``.
    """
    X = covariate_sample(mc_size, 10, seed)
    lt = math.log(spec.tau)
    h = h_tte(X)
    S = lambda lin: float(np.mean(ndtr((lin - lt) / spec.s)))  # noqa: E731

    beta_c = _solve(lambda b: S(b + h) - spec.s_c)
    sens = spec.sensitive(X)
    if spec.efficacy_region is None:
        beta0 = gamma = 0.0
    elif sens.all():
        beta0 = _solve(lambda b: S(beta_c + b + h) - (spec.s_c + spec.d_surv))
        gamma = 0.0
    else:
        beta0 = _solve(lambda b: S(beta_c + b + h[~sens]) - spec.s_n)
        gamma = _solve(lambda g: S(beta_c + beta0 + g + h[sens]) - (spec.s_c + spec.d_surv))

    ht = h_tox(X)
    T = lambda lin: float(np.mean(expit(lin)))  # noqa: E731
    alpha_c = _solve(lambda a: T(a + ht) - spec.tox_c)
    gamma_tox = 0.0
    if spec.toxicity_region is not None:
        tsens = spec.tox_sensitive(X)
        gamma_tox = _solve(lambda g: T(alpha_c + g + ht[tsens]) - (spec.tox_c + spec.d_tox))

    return replace(
        spec, beta_c=beta_c, beta0=beta0, gamma=gamma, alpha_c=alpha_c, gamma_tox=gamma_tox,
        calibration={"mc_size": mc_size, "seed": seed, "sensitive_fraction": float(sens.mean())},
    )


def generate_tte(spec: ScenarioSpec, n: int, p: int, rng: np.random.Generator) -> TrialDataset:
    """Uncensored trial with exactly n/2 patients per arm and a toxicity column."""
    if n % 2:
        raise ValueError("n must be even for 1:1 allocation")
    if p < 10:
        raise ValueError("the scenario models use covariates x1..x10; need p >= 10")
    if not spec.calibrated:
        raise ValueError("calibrate the scenario first")
    X = rng.standard_normal((n, p))
    z = np.repeat([0, 1], n // 2)
    rng.shuffle(z)
    y = spec.g(z, X) + spec.s * rng.standard_normal(n)
    tox = generate_tox(spec, X, z, rng)
    return TrialDataset(z=z, X=X, y_obs_log=y, time=np.exp(y), gamma=np.ones(n, int), y_tox=tox)


def generate_tox(spec: ScenarioSpec, X: np.ndarray, z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(len(z)) < expit(spec.tox_logit(z, X))).astype(np.int8)


def apply_censoring(d: TrialDataset, q: float, rng: np.random.Generator) -> TrialDataset:
    """Censor floor(q n) randomly chosen patients at C ~ Uniform(0, T)."""
    if not 0 <= q < 1:
        raise ValueError("censoring proportion must be in [0, 1)")
    k = int(math.floor(q * d.n + 1e-9))
    idx = rng.choice(d.n, size=k, replace=False)
    t = d.time.copy()
    c = rng.random(k) * t[idx]
    c = np.where(c > 0, c, np.nextafter(0.0, 1.0))
    t[idx] = c
    g = d.gamma.copy()
    g[idx] = 0
    return TrialDataset(z=d.z, X=d.X, y_obs_log=np.log(t), time=t, gamma=g, y_tox=d.y_tox,
                        covariate_names=d.covariate_names, levels=d.levels)
