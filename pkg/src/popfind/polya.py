"""Median-zero finite Polya tree centered at N(0, sigma^2).

Level-m partition sets are the dyadic quantile intervals of N(0, sigma^2),
``B = [sigma*Phi^-1(k/2^m), sigma*Phi^-1((k+1)/2^m))``. The root split is
fixed at 1/2, so the median of every random G is zero; splits at levels
2..M are Beta(alpha_m, alpha_m) with ``alpha_m = c * m**2``. Below level M
the conditional law within a bin is the centering Gaussian.

The marginal of n residuals integrates G out in closed form:

    log G_mg(u) = sum_i log g0(u_i) + n (M - 1) log 2
                  + sum_{m=2..M} sum_{parents e} [lbeta(a_m + n_e0, a_m + n_e1) - lbeta(a_m, a_m)]

so the ratio to the Gaussian likelihood (the only quantity in the
sampler's acceptance ratios) depends on the residuals only through bin counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy.special import betaln, ndtr, ndtri
from scipy.stats import norm

from ._special import ndtr as _ndtr
from ._special import ndtri as _ndtri

LOG2 = math.log(2.0)


@dataclass(frozen=True)
class PolyaTreeSpec:
    depth: int = 6
    c: float = 5.0
    sigma2: float = 1.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.c > 0:
            raise ValueError("precision constant c must be positive")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def alpha(self, m: int) -> float:
        return self.c * m * m

    def with_sigma2(self, sigma2: float) -> "PolyaTreeSpec":
        return PolyaTreeSpec(self.depth, self.c, sigma2)

    def edges(self) -> np.ndarray:
        """Bin endpoints at level M (length 2^M + 1, infinite ends)."""
        K = 2 ** self.depth
        return self.sigma * ndtri(np.arange(K + 1) / K)


@dataclass(frozen=True)
class PolyaTreeCounts:
    """Bin counts at the finest level; coarser levels are sums of children."""

    leaf: np.ndarray

    @property
    def depth(self) -> int:
        return int(round(math.log2(len(self.leaf))))

    def level(self, m: int) -> np.ndarray:
        M = self.depth
        return self.leaf.reshape(2 ** m, 2 ** (M - m)).sum(axis=1)

    def total(self) -> int:
        return int(self.leaf.sum())

    def is_consistent(self) -> bool:
        for m in range(1, self.depth):
            lv = self.level(m)
            ch = self.level(m + 1)
            if not np.array_equal(lv, ch[0::2] + ch[1::2]):
                return False
        return bool(np.all(self.leaf >= 0))

    @classmethod
    def empty(cls, depth: int) -> "PolyaTreeCounts":
        return cls(np.zeros(2 ** depth, dtype=np.int64))

    @classmethod
    def from_residuals(cls, u, spec: PolyaTreeSpec) -> "PolyaTreeCounts":
        k = bin_index(np.asarray(u, dtype=float), spec)
        return cls(np.bincount(np.atleast_1d(k), minlength=2 ** spec.depth).astype(np.int64))


def bin_index(u, spec: PolyaTreeSpec) -> np.ndarray:
    """Finest-level bin of each residual; boundary points join the upper bin."""
    K = 2 ** spec.depth
    p = ndtr(np.asarray(u, dtype=float) / spec.sigma)
    return np.minimum(np.floor(p * K), K - 1).astype(np.int64)


def bin_path(u: float, spec: PolyaTreeSpec) -> tuple[int, ...]:
    """Left/right turns (0/1) from level 1 down to level M."""
    k = int(bin_index(u, spec))
    M = spec.depth
    return tuple((k >> (M - m)) & 1 for m in range(1, M + 1))


def _beta_terms(leaf_counts: np.ndarray, spec: PolyaTreeSpec) -> float:
    counts = PolyaTreeCounts(leaf_counts)
    total = 0.0
    for m in range(2, spec.depth + 1):
        ch = counts.level(m)
        a = spec.alpha(m)
        total += float(np.sum(betaln(a + ch[0::2], a + ch[1::2]) - betaln(a, a)))
    return total


def correction_factor(u, spec: PolyaTreeSpec) -> float:
    """log[G_mg(u | sigma^2) / prod N(u_i; 0, sigma^2)]."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    counts = PolyaTreeCounts.from_residuals(u, spec)
    return _beta_terms(counts.leaf, spec) + len(u) * (spec.depth - 1) * LOG2


def marginal_loglik(u, spec: PolyaTreeSpec) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return float(np.sum(norm.logpdf(u, scale=spec.sigma))) + correction_factor(u, spec)


def bin_probabilities(counts: PolyaTreeCounts, spec: PolyaTreeSpec) -> np.ndarray:
    """Posterior predictive mass of every finest-level bin."""
    M = spec.depth
    prob = np.full(1, 0.5)
    prob = np.repeat(prob, 2)  # level 1: fixed 1/2 split
    for m in range(2, M + 1):
        a = spec.alpha(m)
        ch = counts.level(m).astype(float)
        parent = np.repeat(counts.level(m - 1).astype(float), 2)
        prob = np.repeat(prob, 2) * (a + ch) / (2 * a + parent)
    return prob


def predictive_density(u, counts: PolyaTreeCounts, spec: PolyaTreeSpec) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    probs = bin_probabilities(counts, spec)
    k = bin_index(u, spec)
    return norm.pdf(u, scale=spec.sigma) * (2 ** spec.depth) * probs[k]


def predictive_tail(t, counts: PolyaTreeCounts, spec: PolyaTreeSpec, probs: np.ndarray | None = None) -> np.ndarray:
    """P(u > t) under the posterior predictive, exact bin by bin."""
    K = 2 ** spec.depth
    if probs is None:
        probs = bin_probabilities(counts, spec)
    above = np.concatenate([np.cumsum(probs[::-1])[::-1][1:], [0.0]])  # mass of bins strictly above k
    t = np.asarray(t, dtype=float)
    k = bin_index(t, spec)
    q_t = ndtr(-t / spec.sigma)
    q_hi = (K - k - 1) / K  # G0 upper-tail mass at the bin's right edge
    frac = np.clip((q_t - q_hi) * K, 0.0, 1.0)
    return above[k] + probs[k] * frac


def sample_truncated(lower: float, counts: PolyaTreeCounts, spec: PolyaTreeSpec, rng: np.random.Generator) -> float:
    """Draw from the posterior predictive restricted to (lower, inf)."""
    if not lower < math.inf:
        raise ValueError("lower bound must be finite")
    probs = bin_probabilities(counts, spec)
    return float(_sample_above(float(lower), probs, spec.sigma, spec.depth, rng.random(), rng.random()))


# ---------------------------------------------------------------------------
# compiled kernels used by the samplers


@numba.njit(cache=True)
def _gauss_interval(a, b, sigma, v):
    """N(0, sigma^2) truncated to [a, b) by inversion; v ~ U[0, 1)."""
    if a >= 0.0:
        qa = _ndtr(-a / sigma)
        qb = _ndtr(-b / sigma) if b < np.inf else 0.0
        if qa <= 0.0:
            # far tail: exponential approximation of the Gaussian tail
            x = a - math.log1p(-v) * sigma * sigma / a
        else:
            q = qa - v * (qa - qb)
            if q <= 0.0:
                q = 5e-324
            x = -sigma * _ndtri(q)
    else:
        pa = _ndtr(a / sigma) if a > -np.inf else 0.0
        pb = _ndtr(b / sigma) if b < np.inf else 1.0
        p = pa + v * (pb - pa)
        if p <= 0.0:
            p = 5e-324
        if p >= 1.0:
            p = 1.0 - 1.1102230246251565e-16
        x = sigma * _ndtri(p)
    if x <= a:
        # rounding guard: the interval is left-open at the truncation point
        x = np.nextafter(a, np.inf)
    if x >= b:
        x = np.nextafter(b, -np.inf)
    return x


@numba.njit(cache=True)
def _bin_of(u, sigma, K):
    k = int(math.floor(_ndtr(u / sigma) * K))
    if k > K - 1:
        k = K - 1
    if k < 0:
        k = 0
    return k


@numba.njit(cache=True)
def _probs_from_leaf(leaf, M, c):
    K = leaf.shape[0]
    # level counts, flat: level m at offset 2^m - 2
    lev = np.zeros(2 * K - 2)
    off = K - 2
    for k in range(K):
        lev[off + k] = leaf[k]
    for m in range(M - 1, 0, -1):
        o = (1 << m) - 2
        oc = (1 << (m + 1)) - 2
        for j in range(1 << m):
            lev[o + j] = lev[oc + 2 * j] + lev[oc + 2 * j + 1]
    probs = np.empty(K)
    for k in range(K):
        pr = 0.5
        for m in range(2, M + 1):
            a = c * m * m
            child = lev[(1 << m) - 2 + (k >> (M - m))]
            parent = lev[(1 << (m - 1)) - 2 + (k >> (M - m + 1))]
            pr *= (a + child) / (2.0 * a + parent)
        probs[k] = pr
    return probs


@numba.njit(cache=True)
def _sample_above(lower, probs, sigma, M, v1, v2):
    K = probs.shape[0]
    kl = _bin_of(lower, sigma, K)
    ql = _ndtr(-lower / sigma)
    q_hi = (K - kl - 1) / K
    frac = (ql - q_hi) * K
    if frac < 0.0:
        frac = 0.0
    if frac > 1.0:
        frac = 1.0
    part = probs[kl] * frac
    total = part
    for j in range(kl + 1, K):
        total += probs[j]
    target = v1 * total
    k = kl
    acc = part
    if kl == K - 1 or total <= 0.0:
        k = kl
    elif target >= acc:
        k = K - 1
        for j in range(kl + 1, K):
            acc += probs[j]
            if target < acc:
                k = j
                break
    lo = sigma * _ndtri(k / K) if k > 0 else -np.inf
    hi = sigma * _ndtri((k + 1) / K) if k < K - 1 else np.inf
    if k == kl:
        lo = lower
    return _gauss_interval(lo, hi, sigma, v2)


@numba.njit(cache=True)
def leaf_counts_nb(u, sigma, M):
    K = 1 << M
    cnt = np.zeros(K)
    for i in range(u.shape[0]):
        cnt[_bin_of(u[i], sigma, K)] += 1.0
    return cnt


@numba.njit(cache=True)
def correction_nb(u, sigma, M, c):
    """Compiled twin of :func:`correction_factor`."""
    K = 1 << M
    cnt = leaf_counts_nb(u, sigma, M)
    total = u.shape[0] * (M - 1) * math.log(2.0)
    level = cnt
    for m in range(M, 1, -1):
        a = c * m * m
        lb0 = 2.0 * math.lgamma(a) - math.lgamma(2.0 * a)
        half = level.shape[0] // 2
        parent = np.empty(half)
        for j in range(half):
            n0 = level[2 * j]
            n1 = level[2 * j + 1]
            if n0 + n1 > 0:
                total += math.lgamma(a + n0) + math.lgamma(a + n1) - math.lgamma(2.0 * a + n0 + n1) - lb0
            parent[j] = n0 + n1
        level = parent
    return total


@numba.njit(cache=True)
def impute_censored_nb(u, cens_idx, lower, sigma, M, c, seed):
    """Sequentially redraw each censored residual from the predictive given all others.

    ``u`` is updated in place; ``lower[j]`` is the truncation point for
    patient ``cens_idx[j]``.
    """
    np.random.seed(seed)
    K = 1 << M
    cnt = leaf_counts_nb(u, sigma, M)
    for j in range(cens_idx.shape[0]):
        i = cens_idx[j]
        cnt[_bin_of(u[i], sigma, K)] -= 1.0
        probs = _probs_from_leaf(cnt, M, c)
        v1 = np.random.random()
        v2 = np.random.random()
        u[i] = _sample_above(lower[j], probs, sigma, M, v1, v2)
        cnt[_bin_of(u[i], sigma, K)] += 1.0
    return u
