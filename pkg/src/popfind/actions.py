"""Covariate discretization and the finite space of subgroup reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import TrialDataset

# admissible category subsets, in enumeration order
SUBSETS_3 = (
    frozenset({0}), frozenset({1}), frozenset({2}),
    frozenset({0, 1}), frozenset({1, 2}), frozenset({0, 2}),
)
SUBSETS_2 = (frozenset({0}), frozenset({1}))


def admissible_subsets(d: int) -> tuple[frozenset, ...]:
    if d == 3:
        return SUBSETS_3
    if d == 2:
        return SUBSETS_2
    raise ValueError(f"number of merged categories must be 2 or 3, got {d}")


@dataclass(frozen=True)
class CovariateSpec:
    """Binning of one covariate.

    Continuous covariates carry ``cutoffs = (q33, q67)``; categorical ones
    carry ``groups``, a tuple of tuples of raw codes, one per merged category.
    """

    name: str
    kind: str  # "continuous" | "categorical"
    cutoffs: tuple[float, float] | None = None
    groups: tuple[tuple[float, ...], ...] | None = None

    def __post_init__(self):
        if self.kind == "continuous":
            if self.cutoffs is None or len(self.cutoffs) != 2 or self.cutoffs[0] > self.cutoffs[1]:
                raise ValueError(f"{self.name}: need ordered cutoffs (q33, q67)")
        elif self.kind == "categorical":
            if self.groups is None or len(self.groups) not in (2, 3):
                raise ValueError(f"{self.name}: categorical covariates need 2 or 3 groups")
            flat = [v for g in self.groups for v in g]
            if len(flat) != len(set(flat)) or any(len(g) == 0 for g in self.groups):
                raise ValueError(f"{self.name}: groups must partition the levels")
        else:
            raise ValueError(f"unknown covariate kind {self.kind!r}")

    @property
    def d(self) -> int:
        return 3 if self.kind == "continuous" else len(self.groups)

    def assign(self, x: np.ndarray | float) -> np.ndarray:
        """Category index (0-based) of each value; lower-closed bins."""
        x = np.asarray(x, dtype=float)
        if self.kind == "continuous":
            q33, q67 = self.cutoffs
            return (x >= q33).astype(np.int8) + (x >= q67).astype(np.int8)
        out = np.full(x.shape, -1, dtype=np.int8)
        for k, g in enumerate(self.groups):
            out[np.isin(x, g)] = k
        if np.any(out < 0):
            bad = np.unique(x[out < 0])
            raise ValueError(f"{self.name}: values {bad.tolist()} not covered by the merge map")
        return out


@dataclass(frozen=True)
class CovariateBins:
    specs: tuple[CovariateSpec, ...]

    @property
    def p(self) -> int:
        return len(self.specs)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def codes(self, X: np.ndarray) -> np.ndarray:
        """n x p matrix of category indices."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([s.assign(X[:, j]) for j, s in enumerate(self.specs)])

    def to_dict(self) -> dict:
        out = []
        for s in self.specs:
            e = {"name": s.name, "kind": s.kind}
            if s.kind == "continuous":
                e["cutoffs"] = [float(c) for c in s.cutoffs]
            else:
                e["groups"] = [[float(v) for v in g] for g in s.groups]
            out.append(e)
        return {"covariates": out}

    @classmethod
    def from_dict(cls, d: Mapping) -> "CovariateBins":
        specs = []
        for e in d["covariates"]:
            if e["kind"] == "continuous":
                specs.append(CovariateSpec(e["name"], "continuous", cutoffs=tuple(e["cutoffs"])))
            else:
                specs.append(CovariateSpec(e["name"], "categorical",
                                           groups=tuple(tuple(g) for g in e["groups"])))
        return cls(tuple(specs))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "CovariateBins":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def empirical_quantile(x: np.ndarray, q: float) -> float:
    """The ceil(q*n)-th order statistic (1-based)."""
    xs = np.sort(np.asarray(x, dtype=float))
    k = max(1, math.ceil(q * len(xs) - 1e-9))
    return float(xs[k - 1])


def fit_bins(d: TrialDataset, policy: Mapping[str, Mapping] | None = None) -> CovariateBins:
    """Trichotomize continuous covariates at empirical terciles.

    A column whose values are integers with at most three distinct levels is
    treated as categorical with one category per level, unless ``policy``
    says otherwise. ``policy[name]`` may hold ``{"kind": "continuous"}``,
    ``{"kind": "categorical", "groups": [[...], ...]}`` or explicit
    ``{"cutoffs": [q33, q67]}``.
    """
    policy = dict(policy or {})
    specs = []
    for j, name in enumerate(d.covariate_names):
        x = d.X[:, j]
        pol = dict(policy.get(name, {}))
        uniq = np.unique(x)
        if len(uniq) < 2:
            raise ValueError(f"covariate {name!r} is constant")
        if "cutoffs" in pol:
            specs.append(CovariateSpec(name, "continuous", cutoffs=tuple(pol["cutoffs"])))
            continue
        kind = pol.get("kind")
        if kind is None:
            is_codes = name in d.levels or np.all(uniq == np.round(uniq))
            kind = "categorical" if is_codes and (len(uniq) <= 3 or name in d.levels) else "continuous"
        if kind == "categorical":
            if "groups" in pol:
                groups = tuple(tuple(float(v) for v in g) for g in pol["groups"])
            elif len(uniq) <= 3:
                groups = tuple((float(v),) for v in uniq)
            else:
                raise ValueError(
                    f"categorical covariate {name!r} has {len(uniq)} levels; supply a merge map "
                    "grouping them into 2 or 3 categories"
                )
            specs.append(CovariateSpec(name, "categorical", groups=groups))
        else:
            if len(uniq) < 3:
                raise ValueError(f"continuous covariate {name!r} needs at least 3 distinct values")
            cut = (empirical_quantile(x, 1 / 3), empirical_quantile(x, 2 / 3))
            specs.append(CovariateSpec(name, "continuous", cutoffs=cut))
    return CovariateBins(tuple(specs))


@dataclass(frozen=True)
class SubgroupAction:
    """A subgroup report.

    ``kind`` is one of ``null``, ``all``, ``one``, ``two``. For ``one`` and
    ``two`` the covariate indices are 0-based and ``subsets`` hold the
    retained category indices per covariate. ``shape`` is ``rect`` or
    ``lshape`` for two-covariate actions.
    """

    kind: str
    covs: tuple[int, ...] = ()
    subsets: tuple[frozenset, ...] = ()
    shape: str | None = None

    def __post_init__(self):
        if self.kind in ("null", "all"):
            if self.covs or self.subsets or self.shape:
                raise ValueError(f"{self.kind} carries no covariates")
        elif self.kind == "one":
            if len(self.covs) != 1 or len(self.subsets) != 1 or self.shape is not None:
                raise ValueError("one-covariate action needs one covariate and one subset")
        elif self.kind == "two":
            if len(self.covs) != 2 or self.covs[0] >= self.covs[1] or len(self.subsets) != 2:
                raise ValueError("two-covariate action needs covariates j < k and two subsets")
            if self.shape not in ("rect", "lshape"):
                raise ValueError("two-covariate action shape must be rect or lshape")
        else:
            raise ValueError(f"unknown action kind {self.kind!r}")
        for s in self.subsets:
            if not s or len(s) >= 3:
                raise ValueError("subsets must be nonempty proper subsets")

    @property
    def n_covariates(self) -> int:
        return len(self.covs)

    def encode(self) -> str:
        if self.kind in ("null", "all"):
            return self.kind
        parts = [f"x{j + 1}:{''.join(f'M{m + 1}' for m in sorted(s))}" for j, s in zip(self.covs, self.subsets)]
        if self.kind == "one":
            return parts[0]
        return (" & " if self.shape == "rect" else " | ").join(parts)


NULL = SubgroupAction("null")
ALL = SubgroupAction("all")


def membership(x: Sequence[float], a: SubgroupAction, bins: CovariateBins) -> bool:
    """Whether covariate row ``x`` belongs to the subgroup reported by ``a``."""
    if a.kind == "null":
        raise ValueError("membership is undefined for the null report")
    if a.kind == "all":
        return True
    inside = [int(bins.specs[j].assign(x[j])) in s for j, s in zip(a.covs, a.subsets)]
    if a.kind == "one":
        return inside[0]
    return all(inside) if a.shape == "rect" else any(inside)


def enumerate_actions(bins: CovariateBins, max_covariates: int = 2) -> list[SubgroupAction]:
    """Null, All, then all one- and two-covariate actions in a fixed order."""
    if bins.p < 1:
        raise ValueError("need at least one covariate")
    out = [NULL, ALL]
    for j, s in enumerate(bins.specs):
        for w in admissible_subsets(s.d):
            out.append(SubgroupAction("one", (j,), (w,)))
    if max_covariates >= 2:
        for j, k in combinations(range(bins.p), 2):
            for wj in admissible_subsets(bins.specs[j].d):
                for wk in admissible_subsets(bins.specs[k].d):
                    for shape in ("rect", "lshape"):
                        out.append(SubgroupAction("two", (j, k), (wj, wk), shape))
    return out


def count_actions(ds: Sequence[int]) -> int:
    """Closed-form size of the action space for covariates with ``ds`` categories."""
    n_sub = [6 if d == 3 else 2 for d in ds]
    pairs = sum(a * b for a, b in combinations(n_sub, 2))
    return 2 + sum(n_sub) + 2 * pairs


class ActionTable:
    """Vectorized subgroup sums over an action list.

    Sums and counts of per-patient values are aggregated into per-pair 3x3
    cell tables once; every action is then a union of cells, so scoring is
    independent of the number of patients.
    """

    def __init__(self, actions: Sequence[SubgroupAction], bins: CovariateBins):
        self.actions = list(actions)
        self.bins = bins
        p = bins.p
        self.pair_index = {jk: i for i, jk in enumerate(combinations(range(p), 2))}
        # each action -> (pair-or-single slot, 3x3 cell mask); single covariates use
        # slot -1-j with a 3-vector mask, null excluded
        self._rows = []
        for a in self.actions:
            if a.kind == "null":
                self._rows.append(None)
            elif a.kind == "all":
                self._rows.append(("all", None))
            elif a.kind == "one":
                m = np.zeros(3, bool)
                m[list(a.subsets[0])] = True
                self._rows.append(("one", a.covs[0], m))
            else:
                mj = np.zeros(3, bool)
                mj[list(a.subsets[0])] = True
                mk = np.zeros(3, bool)
                mk[list(a.subsets[1])] = True
                cell = (mj[:, None] & mk[None, :]) if a.shape == "rect" else (mj[:, None] | mk[None, :])
                self._rows.append(("two", self.pair_index[a.covs], cell))
        n_act = len(self.actions)
        n_pairs = len(self.pair_index)
        self._one_w = np.zeros((n_act, p, 3))
        self._two_w = np.zeros((n_act, max(n_pairs, 1), 9))
        self._all = np.zeros(n_act, bool)
        self._null = np.zeros(n_act, bool)
        for i, r in enumerate(self._rows):
            if r is None:
                self._null[i] = True
            elif r[0] == "all":
                self._all[i] = True
            elif r[0] == "one":
                self._one_w[i, r[1]] = r[2]
            else:
                self._two_w[i, r[1]] = r[2].ravel()
        self._one_w = self._one_w.reshape(n_act, -1)
        self._two_w = self._two_w.reshape(n_act, -1)

    def aggregate(self, codes: np.ndarray, values: np.ndarray | None, weights: np.ndarray | None = None):
        """Per-action (sum of values, sum of weights) over members.

        ``codes`` is n x p category indices; ``values`` may be 2-D (n x k) to
        aggregate several columns at once.
        """
        codes = np.asarray(codes, dtype=np.int64)
        n, p = codes.shape
        w = np.ones(n) if weights is None else np.asarray(weights, float)
        vals = np.ones((n, 0)) if values is None else np.asarray(values, float).reshape(n, -1)
        cols = np.column_stack([w, vals * w[:, None]])  # n x (1+k)
        one = np.zeros((p, 3, cols.shape[1]))
        for j in range(p):
            for c in range(3):
                sel = codes[:, j] == c
                if sel.any():
                    one[j, c] = cols[sel].sum(axis=0)
        pairs = list(self.pair_index)
        two = np.zeros((max(len(pairs), 1), 9, cols.shape[1]))
        for i, (j, k) in enumerate(pairs):
            idx = codes[:, j] * 3 + codes[:, k]
            for q in range(cols.shape[1]):
                two[i, :, q] = np.bincount(idx, weights=cols[:, q], minlength=9)
        total = cols.sum(axis=0)
        agg = self._one_w @ one.reshape(-1, cols.shape[1]) + self._two_w @ two.reshape(-1, cols.shape[1])
        agg[self._all] = total
        agg[self._null] = np.nan
        return agg[:, 1:], agg[:, 0]
