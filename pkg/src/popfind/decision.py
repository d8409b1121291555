"""Decision quantities and ranking of subgroup reports.

Per-patient conditional effects (survival and toxicity differences between
arms) are computed once; subgroup averages, the tolerated difference
``deltabar = delta0 + delta1 * PATE_tox`` and the utility

    U(a) = (PATE_tte(a) - deltabar(a)) * (|SG(a)| + 1)**nu / (|J(a)| + 1)**zeta

are then evaluated for every enumerated action from cell-aggregated sums.
The null report always scores ``u0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .actions import ActionTable, CovariateBins, SubgroupAction, enumerate_actions, membership
from .aft import mean_at, survival_draws, survival_table
from .data import PosteriorDraws, TrialDataset
from .toxicity import tox_probability, tox_table


@dataclass(frozen=True)
class TradeoffSpec:
    delta0: float = 0.2
    delta1: float = 0.0
    tau: float = 90.0

    def __post_init__(self):
        if not self.delta0 >= 0:
            raise ValueError("delta0 must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class UtilityParams:
    nu: float = 0.25
    zeta: float = 0.15
    u0: float = -0.304

    def __post_init__(self):
        if not (self.nu > 0 and self.zeta > 0):
            raise ValueError("nu and zeta must be positive")


# ---------------------------------------------------------------------------
# scalar operations


def pcte_tte(x, draws: PosteriorDraws, tau: float) -> float:
    """Posterior predictive S(tau | N, x) - S(tau | C, x)."""
    e1 = mean_at(draws, 1, x)
    e0 = mean_at(draws, 0, x)
    s = survival_draws(draws, tau, np.column_stack([e0, e1]))
    return float(s[:, 1].mean() - s[:, 0].mean())


def pcte_tox(x, draws: PosteriorDraws) -> float:
    return tox_probability(draws, 1, x) - tox_probability(draws, 0, x)


def pate(a: SubgroupAction, pcte: np.ndarray, X: np.ndarray, bins: CovariateBins) -> float:
    """Average of per-patient effects over the observed members of ``a``."""
    if a.kind == "null":
        raise ValueError("the null report has no subgroup")
    pcte = np.asarray(pcte, float)
    mask = np.array([membership(row, a, bins) for row in np.asarray(X, float)])
    if not mask.any():
        raise ValueError(f"subgroup {a.encode()} is empty")
    return float(pcte[mask].mean())


def average_mcmd(pate_tox: float, spec: TradeoffSpec) -> float:
    return spec.delta0 + spec.delta1 * pate_tox


def utility(a: SubgroupAction, pate_tte: float, deltabar: float, size: float, params: UtilityParams) -> float:
    """U(a); the null report scores ``u0`` and All uses no parsimony penalty."""
    if a.kind == "null":
        return params.u0
    return (pate_tte - deltabar) * (size + 1.0) ** params.nu / (a.n_covariates + 1.0) ** params.zeta


def utility_vector(pate_tte, deltabar, sizes, n_cov, params: UtilityParams) -> np.ndarray:
    """Vectorized :func:`utility` for non-null actions."""
    return ((np.asarray(pate_tte) - deltabar) * (np.asarray(sizes, float) + 1.0) ** params.nu
            / (np.asarray(n_cov, float) + 1.0) ** params.zeta)


# ---------------------------------------------------------------------------
# ranking


@dataclass
class ReportEntry:
    index: int  # enumeration index
    action: SubgroupAction
    utility: float
    pate_tte: float | None
    pate_tox: float | None
    deltabar: float | None
    size: int
    n_covariates: int


@dataclass
class RankedReport:
    entries: list[ReportEntry]  # descending U, ties by enumeration index
    excluded: list[SubgroupAction] = field(default_factory=list)  # empty subgroups
    n: int = 0
    top_k: int = 5
    bins: CovariateBins | None = None
    levels: dict = field(default_factory=dict)

    @property
    def best(self) -> SubgroupAction:
        return self.entries[0].action

    @property
    def top(self) -> list[ReportEntry]:
        return self.entries[: self.top_k]

    def rank_of(self, a: SubgroupAction) -> int | None:
        for r, e in enumerate(self.entries):
            if e.action == a:
                return r
        return None

    def in_top(self, a: SubgroupAction) -> bool:
        r = self.rank_of(a)
        return r is not None and r < self.top_k

    def label(self, a: SubgroupAction) -> str:
        return label(a, self.bins, self.levels) if self.bins is not None else a.encode()

    def to_dict(self, full: bool = True) -> dict:
        rows = []
        for r, e in enumerate(self.entries if full else self.top):
            rows.append({
                "rank": r + 1, "top": r < self.top_k, "index": e.index, "action": e.action.encode(),
                "label": self.label(e.action),
                "percent": None if e.action.kind == "null" else 100.0 * e.size / self.n,
                "size": e.size, "n_covariates": e.n_covariates, "utility": e.utility,
                "pate_tte": e.pate_tte, "pate_tox": e.pate_tox, "deltabar": e.deltabar,
            })
        return {"n": self.n, "top_k": self.top_k, "actions": rows,
                "excluded": [a.encode() for a in self.excluded]}

    def render(self, k: int | None = None) -> str:
        k = self.top_k if k is None else k
        lines = [f"{'rank':>4}  {'U':>9}  {'PATE':>7}  {'PATEtox':>7}  {'dbar':>6}  {'size':>6}  subgroup"]
        for r, e in enumerate(self.entries[:k]):
            f = lambda v: "" if v is None else f"{v:.3f}"  # noqa: E731
            pct = "" if e.action.kind == "null" else f"{100.0 * e.size / self.n:.0f}%"
            lab = self.label(e.action)
            lines.append(f"{r + 1:>4}  {e.utility:>9.4f}  {f(e.pate_tte):>7}  {f(e.pate_tox):>7}  "
                         f"{f(e.deltabar):>6}  {pct:>6}  {lab}")
        return "\n".join(lines)


def _sub_label(name: str, spec, subset, levels) -> str:
    s = sorted(subset)
    if spec.kind == "categorical":
        labs = []
        for i in s:
            for v in spec.groups[i]:
                if name in levels and float(v).is_integer() and 0 <= int(v) < len(levels[name]):
                    labs.append(str(levels[name][int(v)]))
                else:
                    labs.append(f"{v:g}")
        return f"{name} ({', '.join(labs)})"
    names = ("Q33", "Q67")
    if s == [1, 2]:
        return f"{name} ≥ {names[0]}"
    if s == [2]:
        return f"{name} ≥ {names[1]}"
    if s == [0]:
        return f"{name} < {names[0]}"
    if s == [0, 1]:
        return f"{name} < {names[1]}"
    if s == [1]:
        return f"{names[0]} ≤ {name} < {names[1]}"
    return f"{name} < {names[0]} or {name} ≥ {names[1]}"


def label(a: SubgroupAction, bins: CovariateBins, levels: dict | None = None) -> str:
    """Human-readable subgroup description like ``BMI ≥ Q67``."""
    if a.kind == "null":
        return "null (no subgroup)"
    if a.kind == "all":
        return "all patients"
    parts = [_sub_label(bins.names[j], bins.specs[j], s, levels or {}) for j, s in zip(a.covs, a.subsets)]
    if a.kind == "one":
        return parts[0]
    return (" and " if a.shape == "rect" else " or ").join(parts)


def score_actions(table: ActionTable, codes: np.ndarray, pcte_tte: np.ndarray, pcte_tox: np.ndarray | None,
                  tradeoff: TradeoffSpec, params: UtilityParams, weights: np.ndarray | None = None,
                  size_scale: float | None = None):
    """Per-action (U, PATE_tte, PATE_tox, deltabar, size); U is NaN for empty subgroups.

    ``weights``/``size_scale`` let the truth computation average over a large
    covariate sample while reporting sizes as fractions of ``size_scale``.
    """
    vals = np.column_stack([pcte_tte, np.zeros_like(pcte_tte) if pcte_tox is None else pcte_tox])
    sums, cnt = table.aggregate(codes, vals, weights)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / cnt[:, None]
    if size_scale is None:
        size = cnt
    else:
        total = len(pcte_tte) if weights is None else float(np.sum(weights))
        size = cnt / total * size_scale
    p_tte = means[:, 0]
    p_tox = means[:, 1] if pcte_tox is not None else np.zeros(len(cnt))
    dbar = tradeoff.delta0 + tradeoff.delta1 * p_tox
    ncov = np.array([a.n_covariates for a in table.actions])
    U = utility_vector(p_tte, dbar, size, ncov, params)
    empty = ~(cnt > 0)
    U[empty] = np.nan
    U[table._null] = params.u0
    return U, p_tte, (means[:, 1] if pcte_tox is not None else np.full(len(cnt), np.nan)), dbar, size


def order_by_utility(U: np.ndarray) -> np.ndarray:
    """Indices sorted by descending U with ties to the lower index; NaN rows dropped."""
    idx = np.flatnonzero(~np.isnan(U))
    return idx[np.lexsort((idx, -U[idx]))]


def rank_actions(dataset: TrialDataset, bins: CovariateBins, tte_draws: PosteriorDraws,
                 tox_draws: PosteriorDraws | None, tradeoff: TradeoffSpec, params: UtilityParams,
                 actions: Sequence[SubgroupAction] | None = None, table: ActionTable | None = None,
                 top_k: int = 5) -> RankedReport:
    """Score every enumerated action and sort descending by utility."""
    if tradeoff.delta1 != 0 and tox_draws is None:
        raise ValueError("toxicity draws are required when delta1 != 0")
    if table is None:
        table = ActionTable(actions if actions is not None else enumerate_actions(bins), bins)
    codes = bins.codes(dataset.X)
    s0, s1 = survival_table(tte_draws, tradeoff.tau)
    tte = s1 - s0
    tox = None
    if tradeoff.delta1 != 0:
        t0, t1 = tox_table(tox_draws)
        tox = t1 - t0
    U, p_tte, p_tox, dbar, size = score_actions(table, codes, tte, tox, tradeoff, params)
    order = order_by_utility(U)
    if len(order) <= int(table._null.sum()):
        raise ValueError("no nonempty subgroup actions for this dataset")
    entries = []
    for i in order:
        a = table.actions[i]
        null = a.kind == "null"
        entries.append(ReportEntry(
            index=int(i), action=a, utility=float(U[i]),
            pate_tte=None if null else float(p_tte[i]),
            pate_tox=None if null or tox is None else float(p_tox[i]),
            deltabar=None if null else float(dbar[i]),
            size=0 if null else int(round(size[i])), n_covariates=a.n_covariates,
        ))
    excluded = [table.actions[i] for i in np.flatnonzero(np.isnan(U))]
    return RankedReport(entries=entries, excluded=excluded, n=dataset.n, top_k=top_k,
                        bins=bins, levels=dict(dataset.levels))
