"""Trial data records, complete-data bookkeeping and posterior draw containers."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class SchemaError(ValueError):
    """Input rows do not satisfy the trial data schema."""


REQUIRED_COLUMNS = ("arm", "time", "event")
TOX_COLUMN = "tox"


@dataclass(frozen=True)
class TrialDataset:
    """Per-patient arm, covariates, log observed time, event flag and toxicity.

    Times are stored on the log scale; ``y_obs_log[i] = log(T_obs[i])``.
    Categorical covariates carry integer codes and ``levels[name]`` maps
    code -> original label.
    """

    z: np.ndarray
    X: np.ndarray
    y_obs_log: np.ndarray
    gamma: np.ndarray
    y_tox: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    levels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)
    time: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int8)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        # observed times are canonical so that CSV round trips are exact
        if self.time is not None:
            time = np.asarray(self.time, dtype=float)
            if np.any(~(time > 0)):
                raise SchemaError("observed times must be positive")
        else:
            time = np.exp(np.asarray(self.y_obs_log, dtype=float))
        with np.errstate(divide="ignore"):
            y = np.log(time)
        g = np.asarray(self.gamma, dtype=np.int8)
        n = len(z)
        if X.shape[0] != n or len(y) != n or len(g) != n:
            raise SchemaError("all per-patient sequences must have length n")
        if not np.isin(z, (0, 1)).all():
            raise SchemaError("arm indicators must be 0 or 1")
        if not np.isin(g, (0, 1)).all():
            raise SchemaError("event indicators must be 0 or 1")
        if not np.isfinite(y).all():
            raise SchemaError("log observed times must be finite")
        if not np.isfinite(X).all():
            raise SchemaError("covariates must be finite")
        tox = None
        if self.y_tox is not None:
            tox = np.asarray(self.y_tox, dtype=np.int8)
            if len(tox) != n or not np.isin(tox, (0, 1)).all():
                raise SchemaError("toxicity indicators must be 0/1 of length n")
            tox.setflags(write=False)
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SchemaError("covariate_names length does not match X")
        for arr in (z, X, y, g, time):
            arr.setflags(write=False)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y_obs_log", y)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "y_tox", tox)
        object.__setattr__(self, "covariate_names", names)
        object.__setattr__(self, "levels", dict(self.levels))

    @property
    def n(self) -> int:
        return len(self.z)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def censored(self) -> np.ndarray:
        return np.flatnonzero(self.gamma == 0)

    def permuted(self, order: Sequence[int]) -> "TrialDataset":
        order = np.asarray(order)
        return TrialDataset(
            z=self.z[order], X=self.X[order], y_obs_log=self.y_obs_log[order],
            gamma=self.gamma[order], time=self.time[order],
            y_tox=None if self.y_tox is None else self.y_tox[order],
            covariate_names=self.covariate_names, levels=self.levels,
        )

    def with_arms_swapped(self) -> "TrialDataset":
        return TrialDataset(
            z=1 - self.z, X=self.X, y_obs_log=self.y_obs_log, gamma=self.gamma, time=self.time,
            y_tox=self.y_tox, covariate_names=self.covariate_names, levels=self.levels,
        )


@dataclass(frozen=True)
class CompleteData:
    y_log: np.ndarray
    kappa: np.ndarray  # length n, zero for uncensored patients


def complete_data(d: TrialDataset, kappa: Mapping[int, float] | np.ndarray | None = None) -> CompleteData:
    """Fill censored log-times as ``y_obs_log + kappa``.

    ``kappa`` is either a mapping censored-index -> offset or a length-n array
    that must be zero at uncensored indices.
    """
    k = np.zeros(d.n)
    if kappa is None:
        pass
    elif isinstance(kappa, Mapping):
        for i, v in kappa.items():
            if d.gamma[i] == 1:
                raise ValueError(f"kappa supplied for uncensored patient {i}")
            k[i] = v
    else:
        k = np.asarray(kappa, dtype=float).copy()
        if k.shape != (d.n,):
            raise ValueError("kappa array must have length n")
        if np.any(k[d.gamma == 1] != 0):
            raise ValueError("kappa supplied for uncensored patient")
    if np.any(k < 0):
        raise ValueError("kappa must be nonnegative")
    y = d.y_obs_log + k
    y.setflags(write=False)
    k.setflags(write=False)
    return CompleteData(y_log=y, kappa=k)


@dataclass
class PosteriorDraws:
    """Thinned MCMC output.

    ``mean0``/``mean1`` hold the forest mean at arm C / arm N for every
    observed covariate row (draws x n); ``residuals`` are the complete-data
    residuals of the fitted arm, used to build predictive Polya-tree counts.
    """

    mean0: np.ndarray
    mean1: np.ndarray
    sigma2: np.ndarray
    residuals: np.ndarray | None
    burn_in: int
    thin: int
    seed: int
    X: np.ndarray | None = None
    forests: list | None = None
    pt_depth: int = 1
    pt_c: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(np.asarray(self.sigma2) <= 0):
            raise ValueError("every draw must have sigma2 > 0")
        if self.mean0.shape != self.mean1.shape:
            raise ValueError("mean tables must agree in shape")

    @property
    def n_draws(self) -> int:
        return self.mean0.shape[0]


def _parse_flag(value: str, col: str, row: int) -> int:
    try:
        v = float(value)
    except ValueError:
        raise SchemaError(f"row {row}: column {col!r} is not 0/1: {value!r}") from None
    if v not in (0.0, 1.0):
        raise SchemaError(f"row {row}: column {col!r} is not 0/1: {value!r}")
    return int(v)


def load_dataset(
    rows: Iterable[Mapping[str, str]],
    schema: Mapping[str, str] | None = None,
    covariates: Sequence[str] | None = None,
) -> TrialDataset:
    """Validate tabular records and build a :class:`TrialDataset`.

    ``schema`` maps the canonical names ``arm``, ``time``, ``event`` and
    ``tox`` to the source column names. Columns not claimed by the schema are
    covariates unless ``covariates`` restricts them. Non-numeric covariate
    columns become integer codes in sorted label order.
    """
    schema = dict(schema or {})
    rows = list(rows)
    if not rows:
        raise SchemaError("no data rows")
    header = list(rows[0].keys())
    colmap = {c: schema.get(c, c) for c in (*REQUIRED_COLUMNS, TOX_COLUMN)}
    missing = [colmap[c] for c in REQUIRED_COLUMNS if colmap[c] not in header]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    has_tox = colmap[TOX_COLUMN] in header
    claimed = {colmap[c] for c in REQUIRED_COLUMNS} | ({colmap[TOX_COLUMN]} if has_tox else set())
    covs = list(covariates) if covariates is not None else [h for h in header if h not in claimed]
    for c in covs:
        if c not in header:
            raise SchemaError(f"missing covariate column {c!r}")

    z, t, ev, tox = [], [], [], []
    raw = {c: [] for c in covs}
    bad_rows = []
    for i, r in enumerate(rows, start=1):
        z.append(_parse_flag(r[colmap["arm"]], "arm", i))
        try:
            ti = float(r[colmap["time"]])
        except ValueError:
            raise SchemaError(f"row {i}: time is not numeric: {r[colmap['time']]!r}") from None
        if not ti > 0 or not math.isfinite(ti):
            raise SchemaError(f"row {i}: time must be positive, got {ti}")
        t.append(ti)
        ev.append(_parse_flag(r[colmap["event"]], "event", i))
        if has_tox:
            tox.append(_parse_flag(r[colmap[TOX_COLUMN]], TOX_COLUMN, i))
        empty = [c for c in covs if r.get(c) is None or str(r[c]).strip() in ("", "NA", "NaN", "nan")]
        if empty:
            bad_rows.append((i, empty))
        for c in covs:
            raw[c].append(str(r.get(c, "")).strip())
    if bad_rows:
        detail = "; ".join(f"row {i}: {', '.join(cs)}" for i, cs in bad_rows[:20])
        more = "" if len(bad_rows) <= 20 else f" (and {len(bad_rows) - 20} more)"
        raise SchemaError(f"{len(bad_rows)} row(s) with missing covariate values: {detail}{more}")

    X = np.empty((len(rows), len(covs)))
    levels: dict[str, tuple[str, ...]] = {}
    for j, c in enumerate(covs):
        try:
            X[:, j] = [float(v) for v in raw[c]]
        except ValueError:
            labs = tuple(sorted(set(raw[c])))
            code = {lab: k for k, lab in enumerate(labs)}
            X[:, j] = [code[v] for v in raw[c]]
            levels[c] = labs
    return TrialDataset(
        z=np.array(z), X=X, y_obs_log=np.log(np.array(t)), time=np.array(t), gamma=np.array(ev),
        y_tox=np.array(tox) if has_tox else None, covariate_names=tuple(covs), levels=levels,
    )


def read_csv(path: str | Path, **kwargs) -> TrialDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        return load_dataset(csv.DictReader(fh), **kwargs)


def write_csv(d: TrialDataset, path: str | Path) -> None:
    """Write a dataset so that :func:`read_csv` reproduces it bit-exactly."""
    names = list(d.covariate_names)
    header = ["arm", "time", "event"] + (["tox"] if d.y_tox is not None else []) + names
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        times = d.time
        for i in range(d.n):
            row = [int(d.z[i]), repr(float(times[i])), int(d.gamma[i])]
            if d.y_tox is not None:
                row.append(int(d.y_tox[i]))
            for j, c in enumerate(names):
                v = d.X[i, j]
                row.append(d.levels[c][int(v)] if c in d.levels else repr(float(v)))
            w.writerow(row)
