"""Replicated simulation: truth subgroups, operating characteristics, u0 tuning.

Each replicate stores the five highest-utility non-null actions. The null
report's position depends only on ``u0``, so top-5 membership of null, All
and the true subgroup can be recomputed for any ``u0`` without rerunning
chains; checkpoints are therefore ``u0``-free and shared across tunings.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .actions import ActionTable, CovariateBins, CovariateSpec, enumerate_actions, fit_bins
from .aft import SamplerConfig, run_chain, survival_table
from .decision import TradeoffSpec, UtilityParams, order_by_utility, score_actions
from .scenarios import (Q33, Q67, ScenarioSpec, apply_censoring, calibrate_scenario, covariate_sample,
                        generate_tte, scenario)
from .toxicity import ToxConfig, run_tox_chain, tox_table

log = logging.getLogger(__name__)

TOP_K = 5


@dataclass
class SimConfig:
    """Analysis settings shared by every replicate of a simulation."""

    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tox: ToxConfig = field(default_factory=ToxConfig)
    delta0: float = 0.2
    delta1: float | None = None  # None: 1.5 for trade-off scenarios, else 0
    tau: float = 90.0
    nu: float = 0.25
    zeta: float = 0.15
    mc_size: int = 1_000_000

    def tradeoff(self, spec: ScenarioSpec) -> TradeoffSpec:
        d1 = self.delta1 if self.delta1 is not None else (1.5 if spec.trade_off else 0.0)
        return TradeoffSpec(self.delta0, d1, self.tau)

    def params(self, u0: float = 0.0) -> UtilityParams:
        return UtilityParams(self.nu, self.zeta, u0)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        d["sampler"] = SamplerConfig(**d.get("sampler", {}))
        d["tox"] = ToxConfig(**d.get("tox", {}))
        return cls(**d)


# ---------------------------------------------------------------------------
# truth


def theoretical_bins(p: int) -> CovariateBins:
    return CovariateBins(tuple(CovariateSpec(f"x{j + 1}", "continuous", cutoffs=(Q33, Q67)) for j in range(p)))


@lru_cache(maxsize=8)
def action_table(p: int) -> ActionTable:
    bins = theoretical_bins(p)
    return ActionTable(enumerate_actions(bins), bins)


def true_utility(spec: ScenarioSpec, n: int, p: int, tradeoff: TradeoffSpec, params: UtilityParams,
                 mc_size: int = 1_000_000, seed: int = 7) -> np.ndarray:
    """U0 for every enumerated action, with subgroup sizes scaled to a trial of size n."""
    if not spec.calibrated:
        spec = calibrate_scenario(spec)
    X = covariate_sample(mc_size, p, seed)
    table = action_table(p)
    codes = table.bins.codes(X)
    tte = spec.pcte(X, tradeoff.tau)
    tox = spec.pcte_tox(X) if tradeoff.delta1 != 0 else None
    U, *_ = score_actions(table, codes, tte, tox, tradeoff, params, size_scale=float(n))
    return U


def true_subgroup(spec: ScenarioSpec, n: int, p: int, tradeoff: TradeoffSpec, params: UtilityParams,
                  mc_size: int = 1_000_000, seed: int = 7):
    U = true_utility(spec, n, p, tradeoff, params, mc_size, seed)
    i = int(order_by_utility(U)[0])
    return action_table(p).actions[i], i


def hypothesis_of(truth_index: int, table: ActionTable) -> str:
    kind = table.actions[truth_index].kind
    return {"null": "H0", "all": "H1"}.get(kind, "Ha")


# ---------------------------------------------------------------------------
# replicates


def replicate_seeds(master_seed: int, index: int) -> tuple[np.random.Generator, int, int]:
    """Data generator plus TTE/toxicity chain seeds derived from (master seed, replicate index)."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    data_ss, tte_ss, tox_ss = ss.spawn(3)
    return (np.random.default_rng(data_ss), int(tte_ss.generate_state(1)[0]), int(tox_ss.generate_state(1)[0]))


def run_replicate(spec: ScenarioSpec, n: int, p: int, q_censor: float, config: SimConfig,
                  master_seed: int, index: int) -> dict:
    """Generate, censor, fit and score one trial; returns a JSON-ready record."""
    t0 = time.time()
    rng, seed_tte, seed_tox = replicate_seeds(master_seed, index)
    d = apply_censoring(generate_tte(spec, n, p, rng), q_censor, rng)
    bins = fit_bins(d)
    table = ActionTable(action_table(p).actions, bins)
    tradeoff = config.tradeoff(spec)
    draws = run_chain(d, replace(config.sampler, seed=seed_tte))
    s0, s1 = survival_table(draws, tradeoff.tau)
    tox = None
    if tradeoff.delta1 != 0:
        tdraws = run_tox_chain(d, replace(config.tox, seed=seed_tox))
        t0_, t1_ = tox_table(tdraws)
        tox = t1_ - t0_
    U, *_ = score_actions(table, bins.codes(d.X), s1 - s0, tox, tradeoff, config.params())
    U[table._null] = np.nan
    order = order_by_utility(U)[:TOP_K]
    return {
        "index": index, "master_seed": master_seed,
        "top": [[int(i), float(U[i])] for i in order],
        "accept_mu": draws.diagnostics["accept_mu"], "accept_sigma": draws.diagnostics["accept_sigma"],
        "sigma2_mean": draws.diagnostics["sigma2_mean"], "n_censored": int(len(d.censored)),
        "seconds": round(time.time() - t0, 3),
    }


def top_with_null(record: dict, u0: float, k: int = TOP_K) -> list[int]:
    """Enumeration indices of the top-k reports once null (index 0, utility u0) is inserted."""
    top = record["top"]
    pos = sum(1 for _, u in top if u > u0)  # null wins ties: it has the lowest index
    merged = [i for i, _ in top[:pos]] + [0] + [i for i, _ in top[pos:]]
    return merged[:k]


def run_key(spec: ScenarioSpec, n: int, p: int, q_censor: float, config: SimConfig, master_seed: int) -> str:
    """Stable identifier of everything a replicate depends on (u0 excluded)."""
    payload = json.dumps({
        "scenario": spec.id, "d_surv": spec.d_surv, "d_tox": spec.d_tox, "n": n, "p": p, "q": q_censor,
        "seed": master_seed, "config": config.to_dict(),
    }, sort_keys=True)
    tag = f"{spec.id.replace('*', 'x')}_S{spec.d_surv:g}_T{spec.d_tox:g}_n{n}_p{p}_c{q_censor:g}_s{master_seed}"
    return f"{tag}_{hashlib.sha1(payload.encode()).hexdigest()[:10]}"


def _job(args):
    spec, n, p, q, config, seed, i, path = args
    try:
        rec = run_replicate(spec, n, p, q, config, seed, i)
    except Exception as exc:  # recorded and excluded from the rates
        log.exception("replicate %d failed", i)
        rec = {"index": i, "master_seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    if path is not None:
        tmp = Path(str(path) + ".tmp")
        tmp.write_text(json.dumps(rec), encoding="utf-8")
        os.replace(tmp, path)
    return rec


def run_replicates(spec: ScenarioSpec, n: int, p: int, reps: int, q_censor: float, config: SimConfig,
                   seed: int, checkpoint_dir: str | Path | None = None, jobs: int = 1,
                   progress: bool = False) -> list[dict]:
    """Run (or resume) ``reps`` replicates; returns records ordered by index."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if not spec.calibrated:
        spec = calibrate_scenario(spec, config.mc_size)
    folder = None
    if checkpoint_dir is not None:
        folder = Path(checkpoint_dir) / run_key(spec, n, p, q_censor, config, seed)
        folder.mkdir(parents=True, exist_ok=True)
    records: dict[int, dict] = {}
    todo = []
    for i in range(reps):
        path = None if folder is None else folder / f"rep_{i:05d}.json"
        if path is not None and path.exists():
            records[i] = json.loads(path.read_text(encoding="utf-8"))
        else:
            todo.append((spec, n, p, q_censor, config, seed, i, path))
    if todo:
        log.info("%s: %d cached, %d to run", spec.id, len(records), len(todo))
    done = 0
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for rec in ex.map(_job, todo):
                records[rec["index"]] = rec
                done += 1
                if progress:
                    log.info("%s replicate %d/%d", spec.id, done, len(todo))
    else:
        for args in todo:
            rec = _job(args)
            records[rec["index"]] = rec
            done += 1
            if progress:
                log.info("%s replicate %d/%d (%.1fs)", spec.id, done, len(todo), rec.get("seconds", 0))
    out = [records[i] for i in range(reps)]
    if folder is not None:
        with open(folder / "replicates.jsonl", "w", encoding="utf-8") as fh:
            for r in out:
                fh.write(json.dumps(r) + "\n")
    return out


# ---------------------------------------------------------------------------
# operating characteristics


@dataclass
class OCSummary:
    scenario: str
    hypothesis: str
    truth: str
    reps: int
    n_failed: int
    u0: float
    rates: dict
    se: dict
    meta: dict = field(default_factory=dict)

    @property
    def tdr(self) -> float:
        return self.rates["TDR"]

    @property
    def fdr(self) -> float:
        return self.rates["FDR"]

    def row(self) -> dict:
        out = {"scenario": self.scenario, "hypothesis": self.hypothesis, "truth": self.truth,
               "reps": self.reps, "failed": self.n_failed, "u0": self.u0, **self.meta}
        for k in RATE_NAMES:
            out[k] = self.rates.get(k, float("nan"))
            out[f"{k}_se"] = self.se.get(k, float("nan"))
        return out


RATE_NAMES = ("TDR", "TNR", "TPR", "TSR", "FNR", "FPR", "FSR", "FDR", "T1E")


def summarize(records: Sequence[dict], truth_index: int, u0: float, table: ActionTable | None = None,
              scenario_id: str = "", hypothesis: str | None = None) -> OCSummary:
    """Operating characteristics from replicate records at a given u0."""
    ok = [r for r in records if "error" not in r]
    R = len(ok)
    if R == 0:
        raise ValueError("no successful replicates")
    if hypothesis is None:
        if table is None:
            raise ValueError("need the action table or an explicit hypothesis")
        hypothesis = hypothesis_of(truth_index, table)
    null_in = np.zeros(R, bool)
    all_in = np.zeros(R, bool)
    a_in = np.zeros(R, bool)
    for k, r in enumerate(ok):
        top = top_with_null(r, u0)
        null_in[k] = 0 in top
        all_in[k] = 1 in top
        a_in[k] = truth_index in top
    m = lambda v: float(np.mean(v))  # noqa: E731
    rates: dict[str, float] = {}
    if hypothesis == "H0":
        rates["TNR"] = rates["TDR"] = m(null_in)
        rates["T1E"] = rates["FDR"] = 1.0 - rates["TNR"]
    elif hypothesis == "H1":
        rates["TPR"] = rates["TDR"] = m(all_in)
        rates["FNR"] = m(null_in & ~all_in)
        rates["FSR"] = 1.0 - m(null_in | all_in)
        rates["FDR"] = rates["FNR"] + rates["FSR"]
    else:
        rates["TSR"] = rates["TDR"] = m(a_in)
        rates["FNR"] = m(null_in & ~a_in)
        rates["FPR"] = m(all_in & ~a_in)
        rates["FSR"] = 1.0 - m(a_in | null_in | all_in)
        rates["FDR"] = rates["FNR"] + rates["FPR"] + rates["FSR"]
    se = {k: math.sqrt(max(v * (1 - v), 0.0) / R) if k != "FDR" else float("nan") for k, v in rates.items()}
    if "FDR" in rates and rates["FDR"] <= 1:
        se["FDR"] = math.sqrt(rates["FDR"] * (1 - rates["FDR"]) / R)
    truth = table.actions[truth_index].encode() if table is not None else str(truth_index)
    return OCSummary(scenario=scenario_id, hypothesis=hypothesis, truth=truth, reps=R,
                     n_failed=len(records) - R, u0=u0, rates=rates, se=se)


def simulate(spec: ScenarioSpec, n: int, p: int, reps: int, q_censor: float, config: SimConfig, seed: int,
             u0: float, checkpoint_dir=None, jobs: int = 1, progress: bool = False) -> tuple[OCSummary, list[dict]]:
    """Full pipeline for one scenario point: calibrate, find the truth, replicate, summarize."""
    spec = spec if spec.calibrated else calibrate_scenario(spec, config.mc_size)
    tradeoff = config.tradeoff(spec)
    _, ti = true_subgroup(spec, n, p, tradeoff, config.params(u0), config.mc_size)
    records = run_replicates(spec, n, p, reps, q_censor, config, seed, checkpoint_dir, jobs, progress)
    oc = summarize(records, ti, u0, action_table(p), spec.id)
    oc.meta = {"d_surv": spec.d_surv, "d_tox": spec.d_tox, "n": n, "p": p, "censor": q_censor,
               "delta0": tradeoff.delta0, "delta1": tradeoff.delta1, "nu": config.nu, "zeta": config.zeta,
               "seed": seed}
    return oc, records


# ---------------------------------------------------------------------------
# tuning


def null_statistic(record: dict, rank: int = TOP_K) -> float:
    """The rank-th largest non-null utility: null leaves the top ``rank`` iff this exceeds u0."""
    top = record["top"]
    return top[rank - 1][1] if len(top) >= rank else -math.inf


def tune_u0(records: Iterable[dict], target_t1e: float = 0.05, rank: int = TOP_K) -> float:
    """Smallest order statistic u0 with at most ``target_t1e`` of null-scenario replicates
    having null outside the top ``rank``."""
    stats = np.sort([null_statistic(r, rank) for r in records if "error" not in r])
    if target_t1e >= 1.0:
        return -math.inf
    if not 0 < target_t1e < 1:
        raise ValueError("target_t1e must be in (0, 1]")
    R = len(stats)
    if R < 1.0 / target_t1e:
        raise ValueError(f"need at least {math.ceil(1 / target_t1e)} replicates for target {target_t1e}")
    k = math.ceil((1.0 - target_t1e) * R - 1e-9)
    return float(stats[k - 1])


def tune(n: int, p: int, reps: int, q_censor: float, config: SimConfig, seed: int, target_t1e: float = 0.05,
         checkpoint_dir=None, jobs: int = 1, rank: int = TOP_K, progress: bool = False) -> tuple[float, list[dict]]:
    spec = calibrate_scenario(scenario("0"), config.mc_size)
    records = run_replicates(spec, n, p, reps, q_censor, config, seed, checkpoint_dir, jobs, progress)
    return tune_u0(records, target_t1e, rank), records
