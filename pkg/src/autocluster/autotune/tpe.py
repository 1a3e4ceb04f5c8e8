"""Tree-structured Parzen estimator.

Observations are split at the gamma-quantile of their loss into a "good" set
(density ``l``) and the rest (density ``g``). Candidates are drawn from ``l``
and the one with the largest ``l(x)/g(x)`` is returned; this maximises the
expected improvement, which is proportional to
``(gamma + g/l * (1 - gamma))^-1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .space import Choice, Domain, IntRange, SearchSpace, Uniform

_TINY = 1e-300


@dataclass(frozen=True)
class TPEConfig:
    gamma: float = 0.25
    n_startup: int = 20
    n_candidates: int = 24
    bandwidth_floor: float = 1.0 / 20.0
    prior_weight: float = 1.0


class NumericParzen:
    """Truncated Gaussian mixture over ``[low, high]`` plus a broad prior kernel.

    Each observation's kernel width is the larger of its widest neighbour gap
    and ``floor * span``. A step turns the density into per-cell masses.
    """

    def __init__(self, obs, low, high, floor, prior_weight=1.0, step=None):
        self.low, self.high, self.step = float(low), float(high), step
        span = self.high - self.low
        obs = np.asarray(obs, dtype=float)
        mus = np.append(obs, 0.5 * (self.low + self.high))
        order = np.argsort(mus, kind="stable")
        srt = mus[order]
        padded = np.concatenate([[self.low], srt, [self.high]])
        gaps = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
        sig_sorted = np.maximum(gaps, floor * span)
        sigmas = np.empty_like(sig_sorted)
        sigmas[order] = sig_sorted
        sigmas[-1] = span  # prior kernel
        weights = np.append(np.ones(len(obs)), prior_weight)
        self.mus, self.sigmas = mus, sigmas
        self.weights = weights / weights.sum()
        a = (self.low - mus) / sigmas
        b = (self.high - mus) / sigmas
        self._za, self._zb = ndtr(a), ndtr(b)
        self._mass = np.maximum(self._zb - self._za, _TINY)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        comp = rng.choice(len(self.mus), size=size, p=self.weights)
        u = rng.uniform(self._za[comp], self._zb[comp])
        u = np.clip(u, 1e-15, 1 - 1e-15)
        x = self.mus[comp] + self.sigmas[comp] * ndtri(u)
        return np.clip(x, self.low, self.high)

    def _cdf(self, x):
        z = ndtr((np.asarray(x)[:, None] - self.mus) / self.sigmas)
        return (np.clip(z - self._za, 0, None) / self._mass) @ self.weights

    def log_density(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.step is not None:
            lo = np.maximum(x - self.step / 2, self.low)
            hi = np.minimum(x + self.step / 2, self.high)
            return np.log(np.maximum(self._cdf(hi) - self._cdf(lo), _TINY))
        z = (x[:, None] - self.mus) / self.sigmas
        pdf = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * self.sigmas * self._mass)
        return np.log(np.maximum(pdf @ self.weights, _TINY))


class CategoricalParzen:
    def __init__(self, obs, options, prior_weight=1.0):
        self.options = tuple(options)
        counts = np.full(len(self.options), float(prior_weight))
        for o in obs:
            counts[self.options.index(o)] += 1.0
        self.probs = counts / counts.sum()

    def sample(self, rng: np.random.Generator, size: int) -> list:
        idx = rng.choice(len(self.options), size=size, p=self.probs)
        return [self.options[i] for i in idx]

    def log_density(self, values) -> np.ndarray:
        return np.log([self.probs[self.options.index(v)] for v in values])


def _estimator(dom: Domain, obs, cfg: TPEConfig):
    if isinstance(dom, Choice):
        return CategoricalParzen(obs, dom.options, cfg.prior_weight)
    low, high = dom.bounds
    step = dom.step if isinstance(dom, IntRange) else None
    return NumericParzen(obs, low, high, cfg.bandwidth_floor, cfg.prior_weight, step)


def split_good_bad(losses: Sequence[float], eligible: Sequence[bool], gamma: float):
    """Indices of the good set (``ceil(gamma*n)`` lowest eligible losses) and the rest."""
    n = len(losses)
    n_good = int(math.ceil(gamma * n))
    order = sorted(
        (i for i in range(n) if eligible[i] and math.isfinite(losses[i])),
        key=lambda i: (losses[i], i),
    )
    good = sorted(order[:n_good])
    good_set = set(good)
    bad = [i for i in range(n) if i not in good_set]
    return good, bad


def suggest_params(
    dims: Mapping[str, Domain],
    good: Sequence[Mapping[str, Any]],
    bad: Sequence[Mapping[str, Any]],
    rng: np.random.Generator,
    cfg: TPEConfig,
) -> dict[str, Any]:
    """Jointly score ``n_candidates`` draws from ``l`` by summed log ``l/g`` over dims."""
    names = list(dims)
    score = np.zeros(cfg.n_candidates)
    draws: dict[str, list] = {}
    for name in names:
        dom = dims[name]
        l = _estimator(dom, [o[name] for o in good if name in o], cfg)
        g = _estimator(dom, [o[name] for o in bad if name in o], cfg)
        cand = l.sample(rng, cfg.n_candidates)
        if isinstance(dom, IntRange):
            cand = np.array([dom.snap(c) for c in cand], dtype=float)
        score += l.log_density(cand) - g.log_density(cand)
        draws[name] = list(cand)
    best = int(np.argmax(score))
    out = {}
    for name in names:
        v = draws[name][best]
        dom = dims[name]
        if isinstance(dom, IntRange):
            v = int(v)
        elif isinstance(dom, Uniform):
            v = float(v)
        out[name] = v
    return out


class TPESampler:
    """Flat (non-hierarchical) TPE over named domains, for arbitrary objectives."""

    def __init__(self, dims: Mapping[str, Domain], cfg: TPEConfig | None = None, seed: int = 0):
        self.dims = dict(dims)
        self.cfg = cfg or TPEConfig()
        self.seed = seed

    def suggest(self, params: Sequence[Mapping[str, Any]], losses: Sequence[float]) -> dict[str, Any]:
        rng = np.random.default_rng([self.seed, len(params)])
        if len(params) < self.cfg.n_startup:
            return {name: dom.sample(rng) for name, dom in self.dims.items()}
        good, bad = split_good_bad(losses, [True] * len(losses), self.cfg.gamma)
        return suggest_params(
            self.dims, [params[i] for i in good], [params[i] for i in bad], rng, self.cfg
        )

    def minimize(self, objective, n_iter: int):
        params, losses = [], []
        for _ in range(n_iter):
            p = self.suggest(params, losses)
            params.append(p)
            losses.append(float(objective(p)))
        return params, losses


def trial_params(spec) -> dict[str, Any]:
    d = dict(spec.hyperparameters)
    if spec.k is not None:
        d["k"] = spec.k
    return d


def tpe_suggest(
    specs: Sequence,
    losses: Sequence[float],
    eligible: Sequence[bool],
    space: SearchSpace,
    cfg: TPEConfig | None = None,
    seed: int = 0,
    fit_seed: int = 0,
):
    """Hierarchical suggestion: pick the algorithm first, then its own dimensions.

    ``specs``/``losses``/``eligible`` describe the history. Ineligible trials
    (unstable or failed) always land in the bad set.
    """
    cfg = cfg or TPEConfig()
    rng = np.random.default_rng([seed, len(specs)])
    if len(specs) < cfg.n_startup:
        return space.sample(rng, fit_seed)
    good, bad = split_good_bad(losses, eligible, cfg.gamma)
    algs = space.algorithm_names
    alg_dom = {"algorithm": Choice(algs)}
    as_obs = lambda idx: [{"algorithm": specs[i].algorithm} for i in idx if specs[i].algorithm in algs]
    alg = suggest_params(alg_dom, as_obs(good), as_obs(bad), rng, cfg)["algorithm"]
    dims = space.dimensions(alg)
    if not dims:
        return space.to_spec(alg, {}, fit_seed)
    good_p = [trial_params(specs[i]) for i in good if specs[i].algorithm == alg]
    bad_p = [trial_params(specs[i]) for i in bad if specs[i].algorithm == alg]
    params = suggest_params(dims, good_p, bad_p, rng, cfg)
    return space.to_spec(alg, params, fit_seed)
