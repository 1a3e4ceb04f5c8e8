"""Pipeline configuration: dataclasses, TOML/JSON loading and defaults dump."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Mapping

import tomli
import tomli_w

from .autotune import LossConfig, SearchSpace, TPEConfig
from .autotune.space import TABLE_DOMAINS, Choice, IntRange, Uniform
from .clustering import ALGORITHMS, DEFAULT_HYPERPARAMETERS, K_DEMANDING
from .errors import ConfigError, ParameterError
from .indicators import IndicatorConfig

SEED_ENV = "AUTOCLUSTER_SEED"


@dataclass
class PathsConfig:
    input: str = ""  # empty: bundled synthetic fixture
    workdir: str = "autocluster_run"


@dataclass
class IngestConfig:
    unit: str = "feet"
    smoothing_window: int = 21
    poly_order: int = 3
    min_gap: float = 0.1

    def validate(self):
        if self.unit not in ("feet", "metres"):
            raise ConfigError("ingest.unit must be 'feet' or 'metres'")
        if self.smoothing_window < 3 or self.smoothing_window % 2 == 0:
            raise ConfigError("ingest.smoothing_window must be odd and >= 3")
        if not 0 <= self.poly_order < self.smoothing_window:
            raise ConfigError("ingest.poly_order must lie in [0, smoothing_window)")
        if self.min_gap <= 0:
            raise ConfigError("ingest.min_gap must be positive")


@dataclass
class IndicatorSection:
    ttc_thresholds: list = field(default_factory=lambda: [2.0, 3.0, 4.0])
    tick: float = 0.1
    window: float = 60.0
    min_tail: float = 10.0
    psd_decel: float = 3.35
    madr_m1: float = 8.45
    madr_m2: list = field(default_factory=lambda: [8.45, 1.40])
    drac_cap: float = 9.8
    ttc_cap: float = 7.95
    psd_cap: float = 2.0
    safety_scale: float = 0.0

    def build(self) -> IndicatorConfig:
        d = asdict(self)
        d["ttc_thresholds"] = tuple(float(x) for x in d["ttc_thresholds"])
        d["madr_m2"] = tuple(float(x) for x in d["madr_m2"])
        if len(d["ttc_thresholds"]) != 3 or len(d["madr_m2"]) != 2:
            raise ConfigError("indicators.ttc_thresholds needs 3 values and madr_m2 needs 2")
        try:
            return IndicatorConfig(**d)
        except ParameterError as exc:
            raise ConfigError(f"indicators: {exc}") from None

    def validate(self):
        self.build()


@dataclass
class ScreenConfig:
    algorithms: list = field(default_factory=lambda: sorted(ALGORITHMS))
    k_min: int = 3
    k_max: int = 9
    replicates: int = 10
    tau: float = 0.05
    beta: float = 1.0
    norm: int = 2
    hyperparameters: dict = field(default_factory=dict)

    def validate(self):
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown or not self.algorithms:
            raise ConfigError(f"screen.algorithms: unknown or empty {sorted(unknown)}")
        if not 2 <= self.k_min <= self.k_max:
            raise ConfigError("screen requires 2 <= k_min <= k_max")
        if self.replicates < 2:
            raise ConfigError("screen.replicates must be >= 2")
        if self.tau <= 0 or self.beta <= 0 or self.norm < 1:
            raise ConfigError("screen.tau and screen.beta must be positive, screen.norm >= 1")
        for alg, hp in self.hyperparameters.items():
            if alg not in ALGORITHMS:
                raise ConfigError(f"screen.hyperparameters: unknown algorithm {alg!r}")
            bad = set(hp) - set(DEFAULT_HYPERPARAMETERS[alg])
            if bad:
                raise ConfigError(f"screen.hyperparameters.{alg}: unknown keys {sorted(bad)}")

    @property
    def k_range(self) -> range:
        return range(self.k_min, self.k_max + 1)


@dataclass
class SelectionConfig:
    threshold: float = 0.0
    k: int = 6
    models: list = field(default_factory=list)  # empty: the prescreen shortlist

    def validate(self):
        if self.k < 2:
            raise ConfigError("selection.k must be >= 2")
        unknown = set(self.models) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"selection.models: unknown {sorted(unknown)}")


@dataclass
class TuneConfig:
    iterations: int = 1000
    algorithms: list = field(default_factory=list)  # empty: the prescreen shortlist
    gamma: float = 0.25
    n_startup: int = 20
    n_candidates: int = 24
    bandwidth_floor: float = 0.05
    prior_weight: float = 1.0
    t_stability: int = 3
    t_final: int = 10
    space: dict = field(default_factory=dict)

    def validate(self):
        if self.iterations < 0:
            raise ConfigError("tune.iterations must be >= 0")
        if not 0 < self.gamma < 1:
            raise ConfigError("tune.gamma must lie in (0, 1)")
        if self.n_startup < 1 or self.n_candidates < 1:
            raise ConfigError("tune.n_startup and tune.n_candidates must be >= 1")
        if not 0 < self.bandwidth_floor <= 1 or self.prior_weight < 0:
            raise ConfigError("tune.bandwidth_floor must lie in (0, 1], prior_weight >= 0")
        if self.t_stability < 2 or self.t_final < 2:
            raise ConfigError("tune.t_stability and tune.t_final must be >= 2")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ConfigError(f"tune.algorithms: unknown {sorted(unknown)}")
        parse_space_overrides(self.space)

    def tpe(self) -> TPEConfig:
        return TPEConfig(self.gamma, self.n_startup, self.n_candidates, self.bandwidth_floor, self.prior_weight)


@dataclass
class LossSection:
    s_star: float = 1.0
    lam: float = 0.5
    phi: float = 1.0

    def validate(self):
        if self.lam < 0 or self.phi < 0:
            raise ConfigError("loss.lam and loss.phi must be >= 0")

    def build(self) -> LossConfig:
        return LossConfig(self.s_star, self.lam, self.phi)


@dataclass
class DecodeConfig:
    k: int = 0  # 0: the k with the lowest best loss
    high_risk: list = field(default_factory=list)  # empty: levels with median CPI above cpi_tol
    cpi_tol: float = 0.01
    letter_depth: int = 3
    ensemble: int = 0  # >= 3: majority vote over that many seeds

    def validate(self):
        if self.k < 0 or self.k == 1:
            raise ConfigError("decode.k must be 0 (automatic) or >= 2")
        if self.letter_depth < 1:
            raise ConfigError("decode.letter_depth must be >= 1")
        if self.ensemble < 0 or self.ensemble in (1, 2):
            raise ConfigError("decode.ensemble must be 0 or >= 3")


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    indicators: IndicatorSection = field(default_factory=IndicatorSection)
    screen: ScreenConfig = field(default_factory=ScreenConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    loss: LossSection = field(default_factory=LossSection)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def validate(self) -> "PipelineConfig":
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        for f in fields(self):
            v = getattr(self, f.name)
            if hasattr(v, "validate"):
                v.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def section_hash_input(self, name: str) -> str:
        return json.dumps(asdict(getattr(self, name)), sort_keys=True)


_DOMAIN_KINDS = {"uniform": Uniform, "range": IntRange, "choice": Choice}


def parse_domain(spec: Mapping) -> Uniform | IntRange | Choice:
    """``{kind = "uniform", low, high}``, ``{kind = "range", low, high, step}`` or ``{kind = "choice", options}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _DOMAIN_KINDS:
        raise ConfigError(f"domain kind must be one of {sorted(_DOMAIN_KINDS)}, got {kind!r}")
    try:
        if kind == "choice":
            return Choice(tuple(spec.pop("options")))
        return _DOMAIN_KINDS[kind](**spec)
    except (TypeError, KeyError, ParameterError) as exc:
        raise ConfigError(f"bad {kind} domain: {exc}") from None


def parse_space_overrides(space: Mapping) -> dict:
    out = {}
    for alg, dims in space.items():
        if alg not in ALGORITHMS:
            raise ConfigError(f"tune.space: unknown algorithm {alg!r}")
        allowed = set(DEFAULT_HYPERPARAMETERS[alg]) | set(TABLE_DOMAINS.get(alg, {}))
        out[alg] = {}
        for name, dom in dims.items():
            if name not in allowed:
                raise ConfigError(f"tune.space.{alg}: unknown hyperparameter {name!r}")
            out[alg][name] = parse_domain(dom)
    return out


def build_space(cfg: PipelineConfig, algorithms) -> SearchSpace:
    k_values = tuple(cfg.screen.k_range)
    return SearchSpace.restricted(algorithms, k_values, parse_space_overrides(cfg.tune.space))


def _build(cls, data: Mapping, where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, path)
        else:
            kwargs[name] = _coerce(current, value, path)
    return cls(**kwargs)


def _coerce(default, value, path):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    elif isinstance(default, dict):
        ok = isinstance(value, dict)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {type(value).__name__}")
    return value


def config_from_dict(data: Mapping, apply_env: bool = True) -> PipelineConfig:
    cfg = _build(PipelineConfig, data, "")
    if apply_env and os.environ.get(SEED_ENV):
        try:
            cfg.seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return cfg.validate()


def load_config(path: str | Path | None, apply_env: bool = True) -> PipelineConfig:
    """Load TOML (or JSON, by ``.json`` suffix); ``None`` gives the defaults."""
    if path is None:
        return config_from_dict({}, apply_env)
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix == ".json":
            data = json.loads(raw)
        else:
            data = tomli.loads(raw.decode())
    except (tomli.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(data, apply_env)


def dump_defaults(fmt: str = "toml") -> str:
    d = PipelineConfig().to_dict()
    if fmt == "json":
        return json.dumps(d, indent=2, sort_keys=True) + "\n"
    return tomli_w.dumps(d)


def search_space_table() -> dict[str, dict[str, Any]]:
    """Default search domains as plain data, for ``autocluster defaults``."""
    out = {}
    for alg, dims in TABLE_DOMAINS.items():
        out[alg] = {name: {"kind": type(d).__name__.lower(), **asdict(d)} for name, d in dims.items()}
        if alg in K_DEMANDING:
            out[alg]["k"] = "screen.k_min .. screen.k_max"
    return out
