"""Run configuration with JSON round-tripping."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .aft import SamplerConfig
from .toxicity import ToxConfig


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


MODES = ("analyze", "simulate", "tune")


@dataclass
class RunConfig:
    mode: str = "analyze"
    data: str | None = None
    scenario: str | None = None
    out: str = "popfind-out"
    tau: float = 90.0
    tau_sensitivity: list[float] = field(default_factory=list)
    delta0: float = 0.2
    delta1: float = 0.0
    nu: float = 0.25
    zeta: float = 0.15
    u0: float = -0.304
    seed: int = 0
    jobs: int = 1
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    tox: ToxConfig = field(default_factory=ToxConfig)
    schema: dict = field(default_factory=dict)  # canonical column -> source column
    bins: dict = field(default_factory=dict)  # per-covariate binning policy
    # simulation and tuning
    n: int = 400
    p: int = 10
    reps: int = 200
    censor: float = 0.10
    target_t1e: float = 0.05
    d_surv: list[float] = field(default_factory=lambda: [0.40])
    d_tox: list[float] = field(default_factory=lambda: [0.25])
    sim_delta1: float | None = None  # None: 1.5 for trade-off scenarios, else 0
    checkpoint: str | None = None
    mc_size: int = 1_000_000

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not self.tau > 0 or any(not t > 0 for t in self.tau_sensitivity):
            raise ConfigError("tau values must be positive")
        if self.delta0 < 0:
            raise ConfigError("delta0 must be >= 0")
        if not (self.nu > 0 and self.zeta > 0):
            raise ConfigError("nu and zeta must be positive")
        if self.jobs < 1 or self.reps < 1:
            raise ConfigError("jobs and reps must be >= 1")
        if not 0 <= self.censor < 1:
            raise ConfigError("censor must be in [0, 1)")
        if not 0 < self.target_t1e <= 1:
            raise ConfigError("target_t1e must be in (0, 1]")
        if self.mode == "analyze" and not self.data:
            raise ConfigError("analyze needs a data file")
        if self.mode == "simulate" and not self.scenario:
            raise ConfigError("simulate needs a scenario id")
        if self.n % 2:
            raise ConfigError("n must be even")
        return self

    @property
    def taus(self) -> list[float]:
        out = [self.tau]
        for t in self.tau_sensitivity:
            if t not in out:
                out.append(t)
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        d = dict(d)
        try:
            if "sampler" in d:
                d["sampler"] = SamplerConfig(**d["sampler"])
            if "tox" in d:
                d["tox"] = ToxConfig(**d["tox"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        # emitted reports wrap the config; accept either form
        return cls.from_dict(d.get("config", d))
