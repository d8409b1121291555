"""Simulation runs backing the acceptance suite.

Replicates are checkpointed one file each under the cache directory, so
the suite resumes whatever has already been computed. Run this module
directly to precompute everything:

    python3 tests/acceptance_plan.py

Environment:
    POPFIND_ACCEPTANCE_CACHE  checkpoint directory (default: <repo>/.acceptance_cache)
    POPFIND_ACCEPTANCE_REPS   replicates per run (default 200; 50 gives a smoke version)
"""

from __future__ import annotations

import logging
import os
import sys
import time
from pathlib import Path

from popfind import harness, scenarios

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("POPFIND_ACCEPTANCE_CACHE", ROOT / ".acceptance_cache"))
REPS = int(os.environ.get("POPFIND_ACCEPTANCE_REPS", "200"))
P = 10
TARGET_T1E = 0.05

# name -> scenario settings; tuning and evaluation under the null use separate seeds
RUNS = {
    "tune": dict(scenario="0", n=400, q=0.10, seed=1001),
    "null": dict(scenario="0", n=400, q=0.10, seed=1002),
    "e2_30": dict(scenario="E2", d_surv=0.30, n=400, q=0.10, seed=2001),
    "e2_40": dict(scenario="E2", d_surv=0.40, n=400, q=0.10, seed=2002),
    "e1t1": dict(scenario="E1*T1", d_surv=0.40, d_tox=0.25, n=400, q=0.10, seed=4001),
    "e3_n100": dict(scenario="E3", d_surv=0.40, n=100, q=0.10, seed=3001),
    "e3_n300": dict(scenario="E3", d_surv=0.40, n=300, q=0.10, seed=3003),
    "e3_n500": dict(scenario="E3", d_surv=0.40, n=500, q=0.10, seed=3005),
    "e3_c10": dict(scenario="E3", d_surv=0.40, n=400, q=0.10, seed=3010),
    "e3_c50": dict(scenario="E3", d_surv=0.40, n=400, q=0.50, seed=3050),
}

CONFIG = harness.SimConfig()


def spec_for(name: str) -> scenarios.ScenarioSpec:
    r = RUNS[name]
    s = scenarios.scenario(r["scenario"], d_surv=r.get("d_surv", 0.40), d_tox=r.get("d_tox", 0.25))
    return scenarios.calibrate_scenario(s, CONFIG.mc_size)


def records(name: str, reps: int | None = None) -> list[dict]:
    r = RUNS[name]
    return harness.run_replicates(spec_for(name), r["n"], P, reps or REPS, r["q"], CONFIG, r["seed"],
                                  checkpoint_dir=CACHE, progress=True)


def tuned_u0(reps: int | None = None) -> float:
    return harness.tune_u0(records("tune", reps), TARGET_T1E)


def oc(name: str, u0: float, reps: int | None = None) -> harness.OCSummary:
    r = RUNS[name]
    spec = spec_for(name)
    _, ti = harness.true_subgroup(spec, r["n"], P, CONFIG.tradeoff(spec), CONFIG.params(u0), CONFIG.mc_size)
    return harness.summarize(records(name, reps), ti, u0, harness.action_table(P), spec.id)


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", stream=sys.stdout)
    names = sys.argv[1:] or list(RUNS)
    for name in names:
        t0 = time.time()
        records(name)
        logging.info("run %s complete in %.0fs", name, time.time() - t0)
