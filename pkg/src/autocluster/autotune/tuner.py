"""Composite loss, stability prescreen and the TPE tuning loop."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..clustering import DEFAULT_HYPERPARAMETERS, EMERGENT_K, ModelSpec, fit
from ..errors import ParameterError, StageError, UndefinedMetricError
from ..evaluation import QualityReport, evaluate, replicate_metrics, setting_cv, stability_cv
from .space import SearchSpace
from .tpe import TPEConfig, tpe_suggest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossConfig:
    s_star: float = 1.0
    lam: float = 0.5
    phi: float = 1.0


def loss(quality: QualityReport | None = None, c_v: float = 0.0, cfg: LossConfig | None = None, *, bsi=None, sigma=None) -> float:
    """``(s* - bSI) + lambda * sigma(S_k) + phi * c_V``."""
    cfg = cfg or LossConfig()
    if quality is not None:
        bsi, sigma = quality.bsi, quality.sigma_sk
    return (cfg.s_star - bsi) + cfg.lam * sigma + cfg.phi * c_v


@dataclass
class TrialRecord:
    iteration: int
    spec: ModelSpec
    status: str = "ok"
    k: int | None = None
    quality: dict | None = None
    c_v: float | None = None
    stable: bool = False
    loss_x: float | None = None
    loss_k: float | None = None
    loss_conditional: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "spec": self.spec.to_dict(),
            "status": self.status,
            "k": self.k,
            "quality": self.quality,
            "c_v": _finite_or_none(self.c_v),
            "stable": self.stable,
            "loss_x": self.loss_x,
            "loss_k": self.loss_k,
            "loss_conditional": self.loss_conditional,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d) -> "TrialRecord":
        c_v = d.get("c_v")
        return cls(
            iteration=d["iteration"],
            spec=ModelSpec.from_dict(d["spec"]),
            status=d["status"],
            k=d.get("k"),
            quality=d.get("quality"),
            c_v=math.inf if c_v is None and d["status"] == "ok" else c_v,
            stable=d.get("stable", False),
            loss_x=d.get("loss_x"),
            loss_k=d.get("loss_k"),
            loss_conditional=d.get("loss_conditional"),
            error=d.get("error"),
        )


def _finite_or_none(v):
    return v if v is not None and math.isfinite(v) else None


@dataclass
class TuneHistory:
    trials: list[TrialRecord] = field(default_factory=list)
    loss_cfg: LossConfig = field(default_factory=LossConfig)
    _sums: dict = field(default_factory=dict, repr=False)
    _counts: dict = field(default_factory=dict, repr=False)
    final_cv: dict = field(default_factory=dict)

    def loss_k(self, k: int) -> float | None:
        if k not in self._counts:
            return None
        return self._sums[k] / self._counts[k]

    def append(self, trial: TrialRecord) -> TrialRecord:
        """Add a trial, updating the running per-k mean loss and its conditional loss."""
        if trial.ok:
            k = trial.k
            self._sums[k] = self._sums.get(k, 0.0) + trial.loss_x
            self._counts[k] = self._counts.get(k, 0) + 1
            trial.loss_k = self.loss_k(k)
            trial.loss_conditional = conditional_loss(trial.loss_x, trial.loss_k)
        self.trials.append(trial)
        return trial

    def best_per_k(self) -> dict[int, TrialRecord]:
        """Lowest loss(x) per k; unstable trials only when no stable one exists at that k."""
        best: dict[int, TrialRecord] = {}
        for t in self.trials:
            if not t.ok:
                continue
            cur = best.get(t.k)
            key = (not t.stable, t.loss_x)
            if cur is None or key < (not cur.stable, cur.loss_x):
                best[t.k] = t
        return dict(sorted(best.items()))

    def best_table(self) -> list[dict]:
        rows = []
        for k, t in self.best_per_k().items():
            q = t.quality
            rows.append(
                {
                    "k": k,
                    "algorithm": t.spec.algorithm,
                    "bSI": q["bSI"],
                    "sigma_Sk": q["sigma_Sk"],
                    "boundary_count": q["boundary_count"],
                    "loss_conditional": t.loss_conditional,
                    "loss_x": t.loss_x,
                    "loss_k": self.loss_k(k),
                    "iteration": t.iteration,
                    "c_v": t.c_v,
                    "final_c_v": self.final_cv.get(k),
                    "stable": t.stable,
                    "hyperparameters": json.dumps(t.spec.to_dict()["hyperparameters"], sort_keys=True),
                    "seed": t.spec.seed,
                }
            )
        return rows

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for t in self.trials:
                fh.write(json.dumps(t.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read_jsonl(cls, path, loss_cfg: LossConfig | None = None) -> "TuneHistory":
        h = cls(loss_cfg=loss_cfg or LossConfig())
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    h.append(TrialRecord.from_dict(json.loads(line)))
        return h


def conditional_loss(loss_x: float, loss_k: float) -> float:
    """``loss(x) / loss(k)``; 1 when the running mean is zero."""
    if loss_k == 0:
        return 1.0
    return loss_x / loss_k


def _evaluate_spec(spec: ModelSpec, X: np.ndarray, T: int, beta: float, norm: int, weights=None, threads=1):
    res = fit(spec, X)
    if res.k_found < 2:
        raise UndefinedMetricError(f"{spec.algorithm} found a single cluster")
    q = evaluate(X, res.labels, weights)
    if spec.is_deterministic:
        c_v = 0.0
    else:
        reps = replicate_metrics(spec, X, T, ("bSI", "sigma_Sk"), weights, threads)
        c_v = setting_cv(reps, ("bSI", "sigma_Sk"), beta, norm)["combined"]
    return res, q, c_v


def optimize(
    space: SearchSpace,
    X,
    iterations: int = 1000,
    seed: int = 0,
    loss_cfg: LossConfig | None = None,
    tpe_cfg: TPEConfig | None = None,
    tau: float = 0.05,
    beta: float = 1.0,
    norm: int = 2,
    t_stability: int = 3,
    t_final: int = 10,
    weights=None,
    callback=None,
    threads: int = 1,
) -> TuneHistory:
    """Sequential TPE search minimising the conditional loss.

    Every trial is fitted, scored and, for seed-dependent algorithms, replicated
    ``t_stability`` times to estimate c_V. Trials with ``c_V >= tau`` are kept
    in the history but never enter the good density; neither do failed trials
    or trials whose found k lies outside the space. The best spec per k is
    re-checked with ``t_final`` replicates at the end.
    """
    if iterations < 1:
        raise StageError("no trials: iterations must be >= 1")
    X = np.asarray(getattr(X, "values", X), dtype=float)
    loss_cfg = loss_cfg or LossConfig()
    tpe_cfg = tpe_cfg or TPEConfig()
    hist = TuneHistory(loss_cfg=loss_cfg)
    for it in range(iterations):
        specs = [t.spec for t in hist.trials]
        targets = [t.loss_conditional if t.ok else math.inf for t in hist.trials]
        eligible = [t.ok and t.stable for t in hist.trials]
        spec = tpe_suggest(specs, targets, eligible, space, tpe_cfg, seed=seed, fit_seed=seed + it)
        trial = TrialRecord(iteration=it, spec=spec)
        try:
            res, q, c_v = _evaluate_spec(spec, X, t_stability, beta, norm, weights, threads)
        except (UndefinedMetricError, ParameterError) as exc:
            trial.status = "fail"
            trial.error = str(exc)
        else:
            trial.k = int(res.k_found)
            trial.quality = q.to_dict()
            trial.c_v = c_v
            trial.stable = c_v < tau
            trial.loss_x = loss(q, c_v, loss_cfg)
            if trial.k not in space.k_values:
                # emergent-k algorithms can land outside the searched k range
                trial.status = "k_out_of_range"
        hist.append(trial)
        if callback is not None:
            callback(trial)

    best = hist.best_per_k()
    if not best:
        logger.warning("every trial failed; the best-per-k table is empty")
    missing = [k for k in space.k_values if k not in best]
    if missing:
        logger.warning("no successful trial at k=%s", missing)
    for k, t in best.items():
        if t.spec.is_deterministic:
            hist.final_cv[k] = 0.0
        else:
            reps = replicate_metrics(t.spec, X, t_final, ("bSI", "sigma_Sk"), weights, threads)
            hist.final_cv[k] = setting_cv(reps, ("bSI", "sigma_Sk"), beta, norm)["combined"]
    return hist


@dataclass
class ScreenResult:
    algorithms: list[str]
    shortlist: list[str]
    algorithm_cv: dict[str, float]
    algorithm_cv_by_metric: dict[str, dict[str, float]]
    mean_bsi: dict[str, float]
    mean_sigma: dict[str, float]
    combined_rank: dict[str, float]
    discarded_unstable: list[str]
    per_k: dict[str, dict[int, dict[str, float]]]

    def to_dict(self) -> dict:
        return {
            "algorithms": self.algorithms,
            "shortlist": self.shortlist,
            "algorithm_cv": self.algorithm_cv,
            "algorithm_cv_by_metric": self.algorithm_cv_by_metric,
            "mean_bSI": self.mean_bsi,
            "mean_sigma_Sk": self.mean_sigma,
            "combined_rank": self.combined_rank,
            "discarded_unstable": self.discarded_unstable,
            "per_k": {a: {str(k): v for k, v in d.items()} for a, d in self.per_k.items()},
        }


def _rank(values: dict[str, float], descending: bool) -> dict[str, float]:
    names = sorted(values)
    v = np.array([values[n] for n in names], dtype=float)
    if descending:
        v = -v
    # average ranks for ties, 1 = best
    order = np.argsort(v, kind="stable")
    ranks = np.empty(len(v))
    i = 0
    while i < len(v):
        j = i
        while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return dict(zip(names, ranks.tolist()))


def screen_specs(algorithm: str, k_range: Iterable[int], seed: int = 0, hyperparameters=None) -> list[ModelSpec]:
    hp = dict(DEFAULT_HYPERPARAMETERS[algorithm])
    if hyperparameters:
        hp.update(hyperparameters)
    if algorithm in EMERGENT_K:
        return [ModelSpec(algorithm, None, hp, seed)]
    return [ModelSpec(algorithm, k, hp, seed) for k in k_range]


def prescreen(
    algorithms: Sequence[str],
    X,
    k_range: Iterable[int] = range(3, 10),
    T: int = 10,
    tau: float = 0.05,
    beta: float = 1.0,
    norm: int = 2,
    seed: int = 0,
    hyperparameters: dict[str, dict] | None = None,
    threads: int = 1,
) -> ScreenResult:
    """Shortlist algorithms by replicate stability, then by mean bSI and sigma(S_k).

    Algorithms with ``c_V(a) > tau`` are discarded. Survivors are ranked by
    mean bSI (higher is better) and mean sigma(S_k) (lower is better); those
    whose averaged rank is at or better than the median are kept.
    """
    algorithms = list(algorithms)
    X = np.asarray(getattr(X, "values", X), dtype=float)
    k_range = list(k_range)
    hyperparameters = hyperparameters or {}
    alg_cv, alg_cv_m, mean_b, mean_s, per_k = {}, {}, {}, {}, {}
    for a in algorithms:
        specs = screen_specs(a, k_range, seed, hyperparameters.get(a))
        rep = stability_cv(specs, X, T, ("bSI", "sigma_Sk"), beta, norm, threads=threads)
        alg_cv[a] = rep.algorithm_cv[a]
        alg_cv_m[a] = rep.algorithm_cv_by_metric[a]
        bs, ss = [], []
        per_k[a] = {}
        for spec in specs:
            ok = [r for r in rep.replicates[spec.key()] if r is not None]
            if not ok:
                continue
            b = float(np.mean([r["bSI"] for r in ok]))
            s = float(np.mean([r["sigma_Sk"] for r in ok]))
            bs.append(b)
            ss.append(s)
            per_k[a][spec.k if spec.k is not None else 0] = {
                "bSI": b,
                "sigma_Sk": s,
                "c_v": rep.cv[spec.key()]["combined"],
            }
        mean_b[a] = float(np.mean(bs)) if bs else -math.inf
        mean_s[a] = float(np.mean(ss)) if ss else math.inf

    if len(algorithms) == 1:
        a = algorithms[0]
        return ScreenResult(algorithms, algorithms, alg_cv, alg_cv_m, mean_b, mean_s, {a: 1.0}, [], per_k)

    survivors = [a for a in algorithms if alg_cv[a] <= tau]
    discarded = [a for a in algorithms if a not in survivors]
    if len(survivors) < 2:
        logger.warning("fewer than 2 algorithms pass the stability gate; keeping the 2 most stable")
        survivors = sorted(algorithms, key=lambda a: (alg_cv[a], -mean_b[a]))[:2]
        discarded = [a for a in algorithms if a not in survivors]
    rb = _rank({a: mean_b[a] for a in survivors}, descending=True)
    rs = _rank({a: mean_s[a] for a in survivors}, descending=False)
    combined = {a: (rb[a] + rs[a]) / 2 for a in survivors}
    cut = float(np.median(list(combined.values())))
    shortlist = [a for a in sorted(survivors, key=lambda a: (combined[a], a)) if combined[a] <= cut]
    if len(shortlist) < 2:
        logger.warning("fewer than 2 algorithms above the median rank; keeping the best 2")
        shortlist = sorted(survivors, key=lambda a: (combined[a], a))[:2]
    return ScreenResult(algorithms, shortlist, alg_cv, alg_cv_m, mean_b, mean_s, combined, discarded, per_k)
