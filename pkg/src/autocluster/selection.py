"""Elimination-based model reliance importance (EMRI) for unsupervised feature selection.

For every model the bSI of a re-fit without feature ``i`` is compared with the
baseline bSI on all features; the difference ratios are centred per model so
that the average effect of dropping *any* feature is removed.
"""
from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .clustering import ModelSpec, fit
from .errors import ParameterError, SelectionError, UndefinedMetricError
from .evaluation import evaluate
from .indicators import FeatureMatrix, standardize

logger = logging.getLogger(__name__)


@dataclass
class ImportanceTable:
    feature_names: tuple[str, ...]
    model_names: tuple[str, ...]
    baseline: np.ndarray  # per model
    ratios: np.ndarray  # r_i^m, features x models, NaN = missing cell
    reliance: np.ndarray  # R_i^m

    @classmethod
    def from_ratios(cls, feature_names, model_names, ratios, baseline=None) -> "ImportanceTable":
        """Table from precomputed difference ratios (features x models)."""
        ratios = np.asarray(ratios, dtype=float)
        if baseline is None:
            baseline = np.full(ratios.shape[1], np.nan)
        reliance = ratios - np.nanmean(ratios, axis=0, keepdims=True)
        return cls(tuple(feature_names), tuple(model_names), np.asarray(baseline, dtype=float), ratios, reliance)

    @property
    def model_change(self) -> np.ndarray:
        """Mean difference ratio per model (the model-related change)."""
        return np.nanmean(self.ratios, axis=0)

    @property
    def importance(self) -> np.ndarray:
        """Aggregate R_i: mean over the models with an available cell."""
        return np.nanmean(self.reliance, axis=1)

    @property
    def importance_range(self) -> np.ndarray:
        return np.column_stack([np.nanmin(self.reliance, axis=1), np.nanmax(self.reliance, axis=1)])

    def ranked(self) -> list[tuple[str, float]]:
        imp = self.importance
        order = np.argsort(imp, kind="stable")
        return [(self.feature_names[i], float(imp[i])) for i in order]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", *self.model_names, "R_i", "R_i_min", "R_i_max"])
            rng = self.importance_range
            for i, name in enumerate(self.feature_names):
                w.writerow(
                    [name, *(_fmt(v) for v in self.ratios[i]), _fmt(self.importance[i]), _fmt(rng[i, 0]), _fmt(rng[i, 1])]
                )
            w.writerow(["E_m", *(_fmt(v) for v in self.model_change), "", "", ""])


def _fmt(v) -> str:
    return "" if not np.isfinite(v) else repr(float(v))


def _model_name(spec: ModelSpec) -> str:
    return f"{spec.algorithm}(k={spec.k})"


def _bsi(spec: ModelSpec, m: FeatureMatrix) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z = standardize(m)
    res = fit(spec, z)
    return evaluate(z.values, res.labels).bsi


def elimination_importance(models: Sequence[ModelSpec], m: FeatureMatrix) -> ImportanceTable:
    """Build the importance table by re-fitting each model without each feature.

    Each reduced matrix is re-standardised; the spec (seed included) is held
    fixed. A model that cannot be evaluated on a reduced set leaves a missing
    cell, and per-model centring then runs over its available cells.
    """
    names = m.feature_names
    if len(names) < 2:
        raise ParameterError("need at least 2 features")
    if not models:
        raise ParameterError("need at least one model")
    n_f, n_m = len(names), len(models)
    baseline = np.empty(n_m)
    ratios = np.full((n_f, n_m), np.nan)
    for j, spec in enumerate(models):
        baseline[j] = _bsi(spec, m)
        if baseline[j] == 0:
            logger.warning("%s has baseline bSI 0; its ratios are undefined", _model_name(spec))
            continue
        for i, name in enumerate(names):
            try:
                reduced = _bsi(spec, m.drop(name))
            except (UndefinedMetricError, ParameterError):
                logger.warning("%s failed without %s", _model_name(spec), name)
                continue
            ratios[i, j] = (reduced - baseline[j]) / baseline[j]
    if np.isnan(ratios).any():
        warnings.warn("some (feature, model) cells are missing", RuntimeWarning, stacklevel=2)
    return ImportanceTable.from_ratios(names, [_model_name(s) for s in models], ratios, baseline)


def select_features(table: ImportanceTable | Mapping[str, float], threshold: float = 0.0) -> list[str]:
    """Features whose aggregate importance is at most ``threshold``, most important first.

    With the default threshold this keeps every feature whose removal lowers
    the clustering quality more than removing an average feature would.
    ``table`` may also be a plain ``{feature: R_i}`` mapping.
    """
    if isinstance(table, ImportanceTable):
        ranked = table.ranked()
    else:
        ranked = sorted(table.items(), key=lambda kv: kv[1])
    ranked = [(n, float(v)) for n, v in ranked if math.isfinite(v)]
    if not any(v < 0 for _, v in ranked):
        raise SelectionError("no feature has negative importance; review the clustering")
    return [n for n, v in ranked if v <= threshold]
