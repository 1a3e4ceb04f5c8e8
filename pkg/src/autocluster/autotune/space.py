"""Search-space domains for the joint algorithm / hyperparameter / k search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..clustering import K_DEMANDING, ModelSpec
from ..errors import ParameterError


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float

    def __post_init__(self):
        if not self.low < self.high:
            raise ParameterError("Uniform requires low < high")

    @property
    def bounds(self) -> tuple[float, float]:
        return self.low, self.high

    def sample(self, rng: np.random.Generator) -> float:
        return float(rng.uniform(self.low, self.high))

    def contains(self, v) -> bool:
        return self.low <= v <= self.high


@dataclass(frozen=True)
class IntRange:
    """Integers ``low, low+step, ...`` strictly below ``high`` (Python ``range``)."""

    low: int
    high: int
    step: int = 1

    def __post_init__(self):
        if self.step < 1 or not self.low < self.high:
            raise ParameterError("IntRange requires low < high and step >= 1")

    @property
    def values(self) -> list[int]:
        return list(range(self.low, self.high, self.step))

    @property
    def bounds(self) -> tuple[float, float]:
        # continuous support covering every grid cell
        return self.low - self.step / 2, self.values[-1] + self.step / 2

    def snap(self, x: float) -> int:
        i = int(np.clip(np.round((x - self.low) / self.step), 0, len(self.values) - 1))
        return self.values[i]

    def sample(self, rng: np.random.Generator) -> int:
        return int(self.values[rng.integers(len(self.values))])

    def contains(self, v) -> bool:
        return v in self.values


@dataclass(frozen=True)
class Choice:
    options: tuple

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.options:
            raise ParameterError("Choice requires at least one option")

    def sample(self, rng: np.random.Generator):
        return self.options[rng.integers(len(self.options))]

    def contains(self, v) -> bool:
        return v in self.options


Domain = Uniform | IntRange | Choice

TABLE_DOMAINS: dict[str, dict[str, Domain]] = {
    "fuzzy_c_means": {"m": Uniform(1.1, 4.0)},
    "kmeans_pp": {"n_init": IntRange(1, 100, 5), "core": Choice(("EM-style", "Elkan"))},
    "mean_shift": {"quantile": Uniform(0.1, 1.0)},
    "ward": {"connectivity_neighbours": IntRange(5, 100, 5)},
    "birch": {"threshold": Uniform(0.1, 1.0), "branching": IntRange(10, 100, 10)},
}


@dataclass(frozen=True)
class SearchSpace:
    algorithms: Mapping[str, Mapping[str, Domain]] = field(
        default_factory=lambda: {a: dict(d) for a, d in TABLE_DOMAINS.items()}
    )
    k_values: tuple[int, ...] = tuple(range(3, 10))

    def __post_init__(self):
        if not self.algorithms:
            raise ParameterError("search space has no algorithms")
        if any(k < 2 for k in self.k_values) or not self.k_values:
            raise ParameterError("k values must be >= 2")

    @classmethod
    def restricted(cls, algorithms, k_values=tuple(range(3, 10)), overrides=None) -> "SearchSpace":
        doms = {}
        for a in algorithms:
            doms[a] = dict(TABLE_DOMAINS.get(a, {}))
            if overrides and a in overrides:
                doms[a].update(overrides[a])
        return cls(doms, tuple(k_values))

    @property
    def algorithm_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.algorithms))

    def dimensions(self, algorithm: str) -> dict[str, Domain]:
        dims = dict(self.algorithms[algorithm])
        if algorithm in K_DEMANDING:
            dims["k"] = Choice(self.k_values)
        return dims

    def sample(self, rng: np.random.Generator, seed: int = 0) -> ModelSpec:
        alg = self.algorithm_names[rng.integers(len(self.algorithm_names))]
        params = {name: dom.sample(rng) for name, dom in self.dimensions(alg).items()}
        return self.to_spec(alg, params, seed)

    def to_spec(self, algorithm: str, params: Mapping[str, Any], seed: int) -> ModelSpec:
        params = dict(params)
        k = params.pop("k", None)
        return ModelSpec(algorithm, k, params, seed)

    def contains(self, spec: ModelSpec) -> bool:
        if spec.algorithm not in self.algorithms:
            return False
        dims = self.dimensions(spec.algorithm)
        values = dict(spec.hyperparameters)
        if "k" in dims:
            values["k"] = spec.k
        return all(name in values and dom.contains(values[name]) for name, dom in dims.items())
