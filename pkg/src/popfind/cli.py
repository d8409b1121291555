"""Command-line entry point: ``popfind analyze|simulate|tune``.

Exit codes: 0 success, 2 data schema error, 3 configuration error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .actions import fit_bins
from .aft import run_chain
from .config import ConfigError, RunConfig
from .data import SchemaError, read_csv
from .decision import TradeoffSpec, UtilityParams, rank_actions
from .harness import RATE_NAMES, SimConfig, simulate, tune
from .scenarios import SCENARIO_IDS, scenario
from .toxicity import run_tox_chain

log = logging.getLogger("popfind")

EXIT_OK, EXIT_SCHEMA, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True, ensure_ascii=False) + "\n", encoding="utf-8")


def cmd_analyze(cfg: RunConfig) -> list[Path]:
    """Fit, rank and write one report per time horizon; returns the report paths."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        data = read_csv(cfg.data, schema=cfg.schema or None)
    except OSError as exc:
        raise SchemaError(f"cannot read data file: {exc}") from None
    if cfg.delta1 != 0 and data.y_tox is None:
        raise SchemaError("delta1 != 0 needs a 'tox' column for the trade-off ranking")
    try:
        bins = fit_bins(data, cfg.bins)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bins.save(out / "bins.json")
    log.info("n=%d, p=%d, %d censored; running TTE chain", data.n, data.p, len(data.censored))
    tte = run_chain(data, replace(cfg.sampler, seed=cfg.seed))
    if not np.all(np.isfinite(tte.mean0)) or not np.all(np.isfinite(tte.mean1)):
        raise NumericalFailure("non-finite forest means in TTE draws")
    tox = None
    if cfg.delta1 != 0:
        log.info("running toxicity chain")
        tox = run_tox_chain(data, replace(cfg.tox, seed=cfg.seed + 1))
    warnings = []
    if tte.diagnostics["accept_mu"] < 0.01:
        warnings.append("forest-step acceptance below 1%; consider longer chains or a larger bin precision")
    diag = {"tte": tte.diagnostics, "tox": tox.diagnostics if tox is not None else None, "warnings": warnings}
    _write_json(out / "diagnostics.json", diag)
    for w in warnings:
        log.warning(w)
    params = UtilityParams(cfg.nu, cfg.zeta, cfg.u0)
    paths = []
    for tau in cfg.taus:
        rep = rank_actions(data, bins, tte, tox, TradeoffSpec(cfg.delta0, cfg.delta1, tau), params)
        stem = f"report_tau{tau:g}"
        body = {"version": __version__, "tau": tau, "seed": cfg.seed, "config": cfg.to_dict(),
                "diagnostics": diag, "report": rep.to_dict()}
        _write_json(out / f"{stem}.json", body)
        (out / f"{stem}.txt").write_text(f"tau = {tau:g}\n{rep.render()}\n", encoding="utf-8")
        log.info("tau=%g top report: %s", tau, rep.label(rep.best))
        print(f"tau = {tau:g}\n{rep.render()}\n")
        paths.append(out / f"{stem}.json")
    return paths


def _sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(sampler=cfg.sampler, tox=cfg.tox, delta0=cfg.delta0, delta1=cfg.sim_delta1,
                     tau=cfg.tau, nu=cfg.nu, zeta=cfg.zeta, mc_size=cfg.mc_size)


def cmd_simulate(cfg: RunConfig) -> Path:
    if cfg.scenario not in SCENARIO_IDS:
        raise ConfigError(f"unknown scenario {cfg.scenario!r}; expected one of {', '.join(SCENARIO_IDS)}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoints"
    sim = _sim_config(cfg)
    rows = []
    trade = "T" in cfg.scenario
    eff = cfg.scenario not in ("0", "T1", "T2")
    for ds in (cfg.d_surv if eff else [cfg.d_surv[0]]):
        for dt in (cfg.d_tox if trade else [cfg.d_tox[0]]):
            spec = scenario(cfg.scenario, d_surv=ds, d_tox=dt)
            oc, records = simulate(spec, cfg.n, cfg.p, cfg.reps, cfg.censor, sim, cfg.seed, cfg.u0,
                                   checkpoint_dir=ckpt, jobs=cfg.jobs, progress=True)
            rows.append(oc.row())
            with open(out / "replicates.jsonl", "a", encoding="utf-8") as fh:
                for r in records:
                    fh.write(json.dumps({"scenario": cfg.scenario, "d_surv": ds, "d_tox": dt, **r}) + "\n")
            log.info("%s D-S=%g D-tox=%g: TDR=%.3f FDR=%.3f", cfg.scenario, ds, dt, oc.tdr, oc.fdr)
    path = out / "simulate.csv"
    cols = ["scenario", "hypothesis", "truth", "d_surv", "d_tox", "n", "p", "censor", "reps", "failed", "u0",
            "delta0", "delta1", "nu", "zeta", "seed"]
    cols += [c for k in RATE_NAMES for c in (k, f"{k}_se")]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)
    _write_json(out / "simulate_config.json", {"version": __version__, "config": cfg.to_dict()})
    with open(path, encoding="utf-8") as fh:
        print(fh.read(), end="")
    return path


def cmd_tune(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoints"
    try:
        u0, records = tune(cfg.n, cfg.p, cfg.reps, cfg.censor, _sim_config(cfg), cfg.seed, cfg.target_t1e,
                           checkpoint_dir=ckpt, jobs=cfg.jobs, progress=True)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res = {"nu": cfg.nu, "zeta": cfg.zeta, "u0": u0 if math.isfinite(u0) else "-inf",
           "target_t1e": cfg.target_t1e, "reps": cfg.reps,
           "failed": sum("error" in r for r in records), "n": cfg.n, "p": cfg.p, "censor": cfg.censor,
           "seed": cfg.seed, "config": cfg.to_dict()}
    _write_json(out / "tune.json", res)
    print(json.dumps({k: res[k] for k in ("nu", "zeta", "u0", "target_t1e", "reps")}))
    return res


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (an emitted report is accepted too)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--tau", type=float, nargs="+", help="time horizon; extra values add sensitivity reports")
    common.add_argument("--delta0", type=float)
    common.add_argument("--delta1", type=float)
    common.add_argument("--nu", type=float)
    common.add_argument("--zeta", type=float)
    common.add_argument("--u0", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--iterations", type=int, help="MCMC iterations")
    common.add_argument("--burn-in", type=int)
    common.add_argument("--thin", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--n", type=int)
    sim.add_argument("--p", type=int)
    sim.add_argument("--reps", type=int)
    sim.add_argument("--censor", type=float)
    sim.add_argument("--checkpoint", help="replicate checkpoint directory (default: OUT/checkpoints)")

    ap = argparse.ArgumentParser(prog="popfind", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="mode", required=True)
    a = sub.add_parser("analyze", parents=[common], help="rank subgroup reports for a trial CSV")
    a.add_argument("--data", help="CSV with columns arm, time, event[, tox] and covariates")
    s = sub.add_parser("simulate", parents=[common, sim], help="operating characteristics for a scenario")
    s.add_argument("--scenario", help=f"one of {', '.join(SCENARIO_IDS)}")
    s.add_argument("--d-surv", type=float, nargs="+", help="survival-difference grid in the sensitive region")
    s.add_argument("--d-tox", type=float, nargs="+", help="toxicity-difference grid in the toxic region")
    t = sub.add_parser("tune", parents=[common, sim], help="calibrate u0 to a type-I error target")
    t.add_argument("--target-t1e", type=float)
    return ap


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = replace(cfg, mode=args.mode)
    direct = ["out", "delta0", "delta1", "nu", "zeta", "u0", "seed", "jobs", "data", "scenario", "n", "p",
              "reps", "censor", "target_t1e", "checkpoint", "d_surv", "d_tox"]
    upd = {k: getattr(args, k) for k in direct if getattr(args, k, None) is not None}
    if args.mode != "analyze" and "delta1" in upd:
        upd["sim_delta1"] = upd.pop("delta1")
    if args.tau:
        upd["tau"] = args.tau[0]
        upd["tau_sensitivity"] = list(args.tau[1:])
    cfg = replace(cfg, **upd)
    smp = {k: getattr(args, a) for k, a in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin"))
           if getattr(args, a, None) is not None}
    if smp:
        try:
            cfg = replace(cfg, sampler=replace(cfg.sampler, **smp), tox=replace(cfg.tox, **smp))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return cfg.validate()


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if cfg.mode == "analyze":
            cmd_analyze(cfg)
        elif cfg.mode == "simulate":
            cmd_simulate(cfg)
        else:
            cmd_tune(cfg)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
