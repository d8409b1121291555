"""Bayesian sum-of-trees regression under a Gaussian working likelihood.

Trees are stored heap-indexed (children of node k are 2k+1 and 2k+2) in
fixed-size arrays so a whole forest sweep runs in one compiled kernel.
Split rules are ``x_v < u_v[c]`` where ``u_v`` are the sorted unique
training values of column v; column 0 of the design is the arm indicator, so
treatment-by-covariate interactions arise from tree paths.

The split-rule prior at a node is uniform over columns that still have an
admissible cut within the node's ancestral range, then uniform over those
cuts (a data-independent prior). Trees with an empty leaf get zero prior
mass, so any move that empties a leaf is rejected.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3
DEFAULT_MOVE_PROBS = (0.25, 0.25, 0.40, 0.10)


class Design:
    """Rank-coded design matrix ``[z, x_1..x_p]`` for split bookkeeping."""

    def __init__(self, z, X):
        Z = np.column_stack([np.asarray(z, float), np.asarray(X, float).reshape(len(z), -1)])
        self.values = []
        ranks = np.empty(Z.shape, dtype=np.int32)
        for v in range(Z.shape[1]):
            u = np.unique(Z[:, v])
            self.values.append(u)
            ranks[:, v] = np.searchsorted(u, Z[:, v])
        self.raw = Z
        self.ranks = ranks
        self.ncut = np.array([len(u) for u in self.values], dtype=np.int32)
        width = int(self.ncut.max())
        self.uvals = np.full((Z.shape[1], width), np.inf)
        for v, u in enumerate(self.values):
            self.uvals[v, : len(u)] = u

    @property
    def n(self) -> int:
        return self.ranks.shape[0]

    @property
    def ncol(self) -> int:
        return self.ranks.shape[1]


@dataclass
class ForestState:
    """Sum-of-trees state.

    Leaf values live on the internal scaled response scale; predictions are
    ``shift + scale * sum(leaves)``. ``node_of``/``fit`` cache the training
    rows' leaf assignments and scaled total fit.
    """

    status: np.ndarray  # m x NN int8: 0 absent, 1 leaf, 2 internal
    var: np.ndarray
    cut: np.ndarray
    split_value: np.ndarray
    leaf: np.ndarray
    node_of: np.ndarray  # m x n
    fit: np.ndarray  # n, scaled
    shift: float = 0.0
    scale: float = 1.0
    alpha_split: float = 0.95
    beta_split: float = 2.0
    sigma_mu: float = 0.5 / (2.0 * math.sqrt(50))  # scaled units
    max_depth: int = 6
    move_probs: tuple = DEFAULT_MOVE_PROBS
    diagnostics: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.status.shape[0]

    @classmethod
    def initial(cls, n: int, m: int = 50, *, shift: float = 0.0, scale: float = 1.0, k: float = 2.0,
                alpha_split: float = 0.95, beta_split: float = 2.0, max_depth: int = 6,
                move_probs=DEFAULT_MOVE_PROBS) -> "ForestState":
        """Root-only trees with zero leaves (predicting ``shift``)."""
        nn = 2 ** (max_depth + 1) - 1
        status = np.zeros((m, nn), np.int8)
        status[:, 0] = 1
        return cls(
            status=status, var=np.zeros((m, nn), np.int32), cut=np.zeros((m, nn), np.int32),
            split_value=np.zeros((m, nn)), leaf=np.zeros((m, nn)),
            node_of=np.zeros((m, n), np.int32), fit=np.zeros(n), shift=float(shift), scale=float(scale),
            alpha_split=alpha_split, beta_split=beta_split, sigma_mu=0.5 / (k * math.sqrt(m)),
            max_depth=max_depth, move_probs=tuple(move_probs),
        )

    @classmethod
    def for_response(cls, y, m: int = 50, **kw) -> "ForestState":
        """Initial forest whose scaling maps the response range to width one around its mean."""
        y = np.asarray(y, float)
        rng_ = float(y.max() - y.min())
        return cls.initial(len(y), m, shift=float(y.mean()), scale=rng_ if rng_ > 0 else 1.0, **kw)

    def copy(self) -> "ForestState":
        return replace(
            self, status=self.status.copy(), var=self.var.copy(), cut=self.cut.copy(),
            split_value=self.split_value.copy(), leaf=self.leaf.copy(), node_of=self.node_of.copy(),
            fit=self.fit.copy(), diagnostics=dict(self.diagnostics),
        )

    def fitted(self) -> np.ndarray:
        """Mean function at the training rows, original scale."""
        return self.shift + self.scale * self.fit

    def bind(self, design: Design) -> None:
        """Recompute training-row assignments and fit for ``design``."""
        self.node_of = _route_all(self.status, self.var, self.split_value, design.raw)
        self.fit = _fit_from(self.leaf, self.node_of)

    def n_leaves(self) -> np.ndarray:
        return (self.status == 1).sum(axis=1)

    # -- serialization --------------------------------------------------
    def to_text(self) -> str:
        trees = []
        for t in range(self.m):
            nodes = []
            for k in np.flatnonzero(self.status[t]):
                if self.status[t, k] == 2:
                    nodes.append([int(k), int(self.var[t, k]), int(self.cut[t, k]),
                                  float(self.split_value[t, k]), 2 * int(k) + 1, 2 * int(k) + 2, None])
                else:
                    nodes.append([int(k), None, None, None, None, None, float(self.leaf[t, k])])
            trees.append(nodes)
        hyper = dict(shift=self.shift, scale=self.scale, alpha_split=self.alpha_split,
                     beta_split=self.beta_split, sigma_mu=self.sigma_mu, max_depth=self.max_depth,
                     move_probs=list(self.move_probs))
        return json.dumps({"hyper": hyper, "trees": trees})

    @classmethod
    def from_text(cls, text: str, design: Design | None = None) -> "ForestState":
        d = json.loads(text)
        h = d["hyper"]
        m = len(d["trees"])
        st = cls.initial(design.n if design is not None else 0, m, max_depth=h["max_depth"],
                         move_probs=tuple(h["move_probs"]))
        st.status[:] = 0
        for t, nodes in enumerate(d["trees"]):
            for k, v, c, sv, _l, _r, lf in nodes:
                if v is None:
                    st.status[t, k] = 1
                    st.leaf[t, k] = lf
                else:
                    st.status[t, k] = 2
                    st.var[t, k] = v
                    st.cut[t, k] = c
                    st.split_value[t, k] = sv
        st.shift, st.scale = h["shift"], h["scale"]
        st.alpha_split, st.beta_split, st.sigma_mu = h["alpha_split"], h["beta_split"], h["sigma_mu"]
        if design is not None:
            st.bind(design)
        return st


def gaussian_loglik(y, means, sigma2: float) -> float:
    """sum_i log N(y_i; mean_i, sigma2)."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    r = np.asarray(y, float) - np.asarray(means, float)
    if r.shape != np.shape(means) and np.ndim(means) != 0:
        raise ValueError("lengths must match")
    return float(-0.5 * len(r) * math.log(2 * math.pi * sigma2) - 0.5 * np.dot(r, r) / sigma2)


def predict(state: ForestState, z, x) -> float:
    """Mean function at one (arm, covariate row)."""
    row = np.concatenate([[float(z)], np.asarray(x, float).ravel()])
    return float(state.shift + state.scale * _predict_rows(state.status, state.var, state.split_value,
                                                          state.leaf, row[None, :])[0])


def predict_rows(state: ForestState, z, X) -> np.ndarray:
    """Mean function for many rows; ``z`` scalar or per-row."""
    X = np.asarray(X, float)
    X = X.reshape(X.shape[0], -1)
    zc = np.broadcast_to(np.asarray(z, float), (X.shape[0],))
    rows = np.column_stack([zc, X])
    return state.shift + state.scale * _predict_rows(state.status, state.var, state.split_value, state.leaf, rows)


def gibbs_sweep(state: ForestState, y, design: Design, sigma2: float, rng: np.random.Generator) -> ForestState:
    """One sweep over all trees; returns a new state and leaves ``state`` untouched."""
    new = state.copy()
    sweep_inplace(new, y, design, sigma2, rng)
    return new


def sweep_inplace(state: ForestState, y, design: Design, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    """Update ``state`` in place; returns per-move (proposed, accepted) counts."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    y_s = (np.asarray(y, float) - state.shift) / state.scale
    seed = int(rng.integers(0, 2**31 - 1))
    counts = _sweep(
        y_s, design.ranks, design.ncut, design.uvals, state.status, state.var, state.cut,
        state.split_value, state.leaf, state.node_of, state.fit, sigma2 / state.scale**2,
        state.sigma_mu, state.alpha_split, state.beta_split, state.max_depth,
        np.asarray(state.move_probs, float), seed,
    )
    return counts


# ---------------------------------------------------------------------------
# compiled kernels


@numba.njit(cache=True)
def _depth(k):
    d = 0
    k += 1
    while k > 1:
        k >>= 1
        d += 1
    return d


@numba.njit(cache=True)
def _node_range(var_t, cut_t, node, ncut, lo, hi):
    for v in range(ncut.shape[0]):
        lo[v] = 0
        hi[v] = ncut[v]
    k = node
    while k > 0:
        par = (k - 1) // 2
        v = var_t[par]
        if k == 2 * par + 1:
            if cut_t[par] < hi[v]:
                hi[v] = cut_t[par]
        else:
            if cut_t[par] > lo[v]:
                lo[v] = cut_t[par]
        k = par


@numba.njit(cache=True)
def _n_avail(lo, hi):
    c = 0
    for v in range(lo.shape[0]):
        if hi[v] - lo[v] >= 2:
            c += 1
    return c


@numba.njit(cache=True)
def _psplit(depth, nav, alpha, beta, max_depth):
    if depth >= max_depth or nav == 0:
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


@numba.njit(cache=True)
def _leaf_lm(n, s, sigma2, tau2):
    # log marginal of a leaf's residuals with the leaf value integrated out (constants dropped)
    den = sigma2 + n * tau2
    return 0.5 * math.log(sigma2 / den) + tau2 * s * s / (2.0 * sigma2 * den)


@numba.njit(cache=True)
def _is_desc(k, w):
    while k > w:
        k = (k - 1) // 2
    return k == w


@numba.njit(cache=True)
def _subtree_logprior(status_t, var_t, cut_t, w, ncut, alpha, beta, max_depth, lo, hi):
    lp = 0.0
    nn = status_t.shape[0]
    stack = np.empty(nn, np.int64)
    sp = 0
    stack[sp] = w
    sp += 1
    while sp > 0:
        sp -= 1
        k = stack[sp]
        _node_range(var_t, cut_t, k, ncut, lo, hi)
        nav = _n_avail(lo, hi)
        ps = _psplit(_depth(k), nav, alpha, beta, max_depth)
        if status_t[k] == 2:
            v = var_t[k]
            c = cut_t[k]
            if ps == 0.0 or c <= lo[v] or c >= hi[v]:
                return -np.inf
            lp += math.log(ps) - math.log(nav) - math.log(hi[v] - lo[v] - 1)
            stack[sp] = 2 * k + 1
            sp += 1
            stack[sp] = 2 * k + 2
            sp += 1
        else:
            lp += math.log(1.0 - ps)
    return lp


@numba.njit(cache=True)
def _leaf_stats(node_of_t, r, nn):
    cnt = np.zeros(nn)
    sm = np.zeros(nn)
    for i in range(r.shape[0]):
        k = node_of_t[i]
        cnt[k] += 1.0
        sm[k] += r[i]
    return cnt, sm


@numba.njit(cache=True)
def _reroute(status_t, var_t, cut_t, node_of_t, ranks, w):
    for i in range(node_of_t.shape[0]):
        if _is_desc(node_of_t[i], w):
            k = w
            while status_t[k] == 2:
                if ranks[i, var_t[k]] < cut_t[k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            node_of_t[i] = k


@numba.njit(cache=True)
def _subtree_loglik(status_t, cnt, sm, w, sigma2, tau2):
    """Sum of leaf marginals under w; -inf if any leaf is empty."""
    ll = 0.0
    nn = status_t.shape[0]
    stack = np.empty(nn, np.int64)
    sp = 0
    stack[sp] = w
    sp += 1
    while sp > 0:
        sp -= 1
        k = stack[sp]
        if status_t[k] == 2:
            stack[sp] = 2 * k + 1
            sp += 1
            stack[sp] = 2 * k + 2
            sp += 1
        else:
            if cnt[k] == 0:
                return -np.inf
            ll += _leaf_lm(cnt[k], sm[k], sigma2, tau2)
    return ll


@numba.njit(cache=True)
def _draw_rule(lo, hi):
    nav = _n_avail(lo, hi)
    pick = int(np.random.random() * nav)
    v = -1
    for j in range(lo.shape[0]):
        if hi[j] - lo[j] >= 2:
            if pick == 0:
                v = j
                break
            pick -= 1
    c = lo[v] + 1 + int(np.random.random() * (hi[v] - lo[v] - 1))
    return v, c


@numba.njit(cache=True)
def _sweep(y, ranks, ncut, uvals, status, var, cut, split_value, leaf, node_of, fit,
           sigma2, sigma_mu, alpha, beta, max_depth, move_probs, seed):
    np.random.seed(seed)
    m, nn = status.shape
    n = y.shape[0]
    P = ncut.shape[0]
    tau2 = sigma_mu * sigma_mu
    lo = np.empty(P, np.int64)
    hi = np.empty(P, np.int64)
    lo2 = np.empty(P, np.int64)
    hi2 = np.empty(P, np.int64)
    r = np.empty(n)
    counts = np.zeros((4, 2), np.int64)
    cand = np.empty(nn, np.int64)
    for t in range(m):
        st = status[t]
        vt = var[t]
        ct = cut[t]
        nt = node_of[t]
        lf = leaf[t]
        for i in range(n):
            fit[i] -= lf[nt[i]]
            r[i] = y[i] - fit[i]

        n_int = 0
        for k in range(nn):
            if st[k] == 2:
                n_int += 1
        root_only = n_int == 0
        u = np.random.random()
        if root_only:
            move = GROW
        elif u < move_probs[0]:
            move = GROW
        elif u < move_probs[0] + move_probs[1]:
            move = PRUNE
        elif u < move_probs[0] + move_probs[1] + move_probs[2]:
            move = CHANGE
        else:
            move = SWAP
        counts[move, 0] += 1
        accepted = False

        if move == GROW:
            ng = 0
            for k in range(nn):
                if st[k] == 1 and _depth(k) < max_depth:
                    _node_range(vt, ct, k, ncut, lo, hi)
                    if _n_avail(lo, hi) > 0:
                        cand[ng] = k
                        ng += 1
            if ng > 0:
                g = cand[int(np.random.random() * ng)]
                d = _depth(g)
                _node_range(vt, ct, g, ncut, lo, hi)
                nav_g = _n_avail(lo, hi)
                v, c = _draw_rule(lo, hi)
                nl = 0.0
                sl = 0.0
                nr = 0.0
                sr = 0.0
                for i in range(n):
                    if nt[i] == g:
                        if ranks[i, v] < c:
                            nl += 1.0
                            sl += r[i]
                        else:
                            nr += 1.0
                            sr += r[i]
                if nl > 0 and nr > 0:
                    for j in range(P):
                        lo2[j] = lo[j]
                        hi2[j] = hi[j]
                    hi2[v] = c
                    ps_l = _psplit(d + 1, _n_avail(lo2, hi2), alpha, beta, max_depth)
                    hi2[v] = hi[v]
                    lo2[v] = c
                    ps_r = _psplit(d + 1, _n_avail(lo2, hi2), alpha, beta, max_depth)
                    ps_g = _psplit(d, nav_g, alpha, beta, max_depth)
                    nnog = 0
                    for k in range(nn):
                        if st[k] == 2 and st[2 * k + 1] == 1 and st[2 * k + 2] == 1:
                            nnog += 1
                    nnog_after = nnog + 1
                    if g > 0:
                        par = (g - 1) // 2
                        sib = 4 * par + 3 - g  # the other child of par
                        if st[sib] == 1:
                            nnog_after -= 1
                    p_grow = 1.0 if root_only else move_probs[0]
                    logr = (_leaf_lm(nl, sl, sigma2, tau2) + _leaf_lm(nr, sr, sigma2, tau2)
                            - _leaf_lm(nl + nr, sl + sr, sigma2, tau2)
                            + math.log(ps_g) + math.log(1.0 - ps_l) + math.log(1.0 - ps_r)
                            - math.log(1.0 - ps_g)
                            + math.log(move_probs[1] / nnog_after) - math.log(p_grow / ng))
                    if math.log(np.random.random()) < logr:
                        accepted = True
                        st[g] = 2
                        vt[g] = v
                        ct[g] = c
                        split_value[t, g] = uvals[v, c]
                        st[2 * g + 1] = 1
                        st[2 * g + 2] = 1
                        for i in range(n):
                            if nt[i] == g:
                                nt[i] = 2 * g + 1 if ranks[i, v] < c else 2 * g + 2

        elif move == PRUNE:
            nnog = 0
            for k in range(nn):
                if st[k] == 2 and st[2 * k + 1] == 1 and st[2 * k + 2] == 1:
                    cand[nnog] = k
                    nnog += 1
            w = cand[int(np.random.random() * nnog)]
            L = 2 * w + 1
            R = 2 * w + 2
            nl = 0.0
            sl = 0.0
            nr = 0.0
            sr = 0.0
            for i in range(n):
                if nt[i] == L:
                    nl += 1.0
                    sl += r[i]
                elif nt[i] == R:
                    nr += 1.0
                    sr += r[i]
            d = _depth(w)
            _node_range(vt, ct, w, ncut, lo, hi)
            ps_w = _psplit(d, _n_avail(lo, hi), alpha, beta, max_depth)
            _node_range(vt, ct, L, ncut, lo2, hi2)
            nav_l = _n_avail(lo2, hi2)
            ps_l = _psplit(d + 1, nav_l, alpha, beta, max_depth)
            _node_range(vt, ct, R, ncut, lo2, hi2)
            nav_r = _n_avail(lo2, hi2)
            ps_r = _psplit(d + 1, nav_r, alpha, beta, max_depth)
            # growable leaves after pruning
            ng = 0
            for k in range(nn):
                if st[k] == 1 and k != L and k != R and _depth(k) < max_depth:
                    _node_range(vt, ct, k, ncut, lo2, hi2)
                    if _n_avail(lo2, hi2) > 0:
                        ng += 1
            ng += 1  # w itself
            p_grow_after = 1.0 if w == 0 else move_probs[0]
            logr = (_leaf_lm(nl + nr, sl + sr, sigma2, tau2) - _leaf_lm(nl, sl, sigma2, tau2)
                    - _leaf_lm(nr, sr, sigma2, tau2)
                    + math.log(1.0 - ps_w) - math.log(ps_w) - math.log(1.0 - ps_l) - math.log(1.0 - ps_r)
                    + math.log(p_grow_after / ng) - math.log(move_probs[1] / nnog))
            if math.log(np.random.random()) < logr:
                accepted = True
                st[w] = 1
                st[L] = 0
                st[R] = 0
                for i in range(n):
                    if nt[i] == L or nt[i] == R:
                        nt[i] = w

        else:
            # change or swap: both rewrite rules within the subtree at w
            nc = 0
            for k in range(nn):
                if st[k] == 2 and (move == CHANGE or k > 0):
                    cand[nc] = k
                    nc += 1
            if nc > 0:
                pick = cand[int(np.random.random() * nc)]
                old_v = vt.copy()
                old_c = ct.copy()
                old_nt = nt.copy()
                if move == CHANGE:
                    w = pick
                    _node_range(vt, ct, w, ncut, lo, hi)
                    v, c = _draw_rule(lo, hi)
                    nav_w = _n_avail(lo, hi)
                    log_q = (-math.log(hi[vt[w]] - lo[vt[w]] - 1)) - (-math.log(hi[v] - lo[v] - 1))
                    vt[w] = v
                    ct[w] = c
                else:
                    w = (pick - 1) // 2
                    sib = 4 * w + 3 - pick
                    pv = vt[w]
                    pc = ct[w]
                    both = st[sib] == 2 and vt[sib] == vt[pick] and ct[sib] == ct[pick]
                    vt[w] = vt[pick]
                    ct[w] = ct[pick]
                    vt[pick] = pv
                    ct[pick] = pc
                    if both:
                        vt[sib] = pv
                        ct[sib] = pc
                    log_q = 0.0
                lp_old = _subtree_logprior(st, old_v, old_c, w, ncut, alpha, beta, max_depth, lo2, hi2)
                lp_new = _subtree_logprior(st, vt, ct, w, ncut, alpha, beta, max_depth, lo2, hi2)
                ok = lp_new > -np.inf
                ll_old = 0.0
                ll_new = 0.0
                if ok:
                    cnt, sm = _leaf_stats(nt, r, nn)
                    ll_old = _subtree_loglik(st, cnt, sm, w, sigma2, tau2)
                    _reroute(st, vt, ct, nt, ranks, w)
                    cnt, sm = _leaf_stats(nt, r, nn)
                    ll_new = _subtree_loglik(st, cnt, sm, w, sigma2, tau2)
                    ok = ll_new > -np.inf
                if ok:
                    logr = ll_new - ll_old + lp_new - lp_old + log_q
                    ok = math.log(np.random.random()) < logr
                if ok:
                    accepted = True
                    for k in range(nn):
                        if st[k] == 2:
                            split_value[t, k] = uvals[vt[k], ct[k]]
                else:
                    for k in range(nn):
                        vt[k] = old_v[k]
                        ct[k] = old_c[k]
                    for i in range(n):
                        nt[i] = old_nt[i]
        if accepted:
            counts[move, 1] += 1

        # conjugate leaf draws
        cnt, sm = _leaf_stats(nt, r, nn)
        for k in range(nn):
            if st[k] == 1:
                pv = 1.0 / (1.0 / tau2 + cnt[k] / sigma2)
                lf[k] = pv * sm[k] / sigma2 + math.sqrt(pv) * np.random.standard_normal()
        for i in range(n):
            fit[i] += lf[nt[i]]
    return counts


@numba.njit(cache=True)
def _predict_rows(status, var, split_value, leaf, rows):
    m = status.shape[0]
    out = np.zeros(rows.shape[0])
    for i in range(rows.shape[0]):
        s = 0.0
        for t in range(m):
            k = 0
            while status[t, k] == 2:
                if rows[i, var[t, k]] < split_value[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            s += leaf[t, k]
        out[i] = s
    return out


@numba.njit(cache=True)
def _route_all(status, var, split_value, rows):
    m = status.shape[0]
    out = np.zeros((m, rows.shape[0]), np.int32)
    for t in range(m):
        for i in range(rows.shape[0]):
            k = 0
            while status[t, k] == 2:
                if rows[i, var[t, k]] < split_value[t, k]:
                    k = 2 * k + 1
                else:
                    k = 2 * k + 2
            out[t, i] = k
    return out


@numba.njit(cache=True)
def _fit_from(leaf, node_of):
    m, n = node_of.shape
    out = np.zeros(n)
    for t in range(m):
        for i in range(n):
            out[i] += leaf[t, node_of[t, i]]
    return out
