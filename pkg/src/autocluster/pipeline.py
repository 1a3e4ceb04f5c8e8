"""Stage-wise orchestration: ingest -> features -> rectify -> screen -> select -> reduce -> tune -> decode.

Every stage writes its artifacts into the work directory and records their
SHA-256 hashes in ``manifest.json`` together with a hash of the stage's
inputs (config section plus upstream artifact hashes). With ``resume=True``
a stage whose inputs hash and artifacts are unchanged is skipped.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Callable

import numpy as np

from .autotune import TuneHistory, optimize, prescreen
from .clustering import DEFAULT_HYPERPARAMETERS, EMERGENT_K, ModelSpec, fit
from .config import PipelineConfig, build_space
from .decoding import (
    PROFILE_HEADER,
    calibrate_thresholds,
    ensemble_vote,
    label_dataset,
    letter_values,
    order_clusters,
    risk_profile_export,
    sankey_flows,
    write_sankey,
)
from .errors import AutoclusterError, ParameterError, StageError
from .indicators import FeatureMatrix, extract_features, rectify, standardize
from .io import read_features, read_json, sha256_file, write_features, write_json, write_rows
from .selection import elimination_importance, select_features
from .synthetic import FIXTURE
from .trajectory import build_conflict_series, load_tracks, parse_ngsim, save_tracks, smooth_tracks

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
STAGES = ("ingest", "features", "rectify", "screen", "select", "reduce", "tune", "decode")


def _standardize_quiet(m: FeatureMatrix) -> FeatureMatrix:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        z = standardize(m)
    for w in caught:
        logger.warning("%s", w.message)
    return z


def input_path(cfg: PipelineConfig) -> Path:
    return Path(cfg.paths.input) if cfg.paths.input else FIXTURE


class Pipeline:
    def __init__(self, cfg: PipelineConfig, workdir: str | Path | None = None, resume: bool = False):
        self.cfg = cfg
        self.workdir = Path(workdir or cfg.paths.workdir)
        self.resume = resume
        self.records: dict[str, dict] = {}
        self._previous: dict[str, dict] = {}
        mpath = self.workdir / MANIFEST
        if resume and mpath.exists():
            try:
                self._previous = {s["name"]: s for s in read_json(mpath)["stages"]}
            except (KeyError, ValueError, TypeError):
                logger.warning("ignoring unreadable manifest %s", mpath)

    def path(self, name: str) -> Path:
        return self.workdir / name

    # -- bookkeeping -------------------------------------------------------
    def _artifact_hashes(self, stage: str) -> dict[str, str]:
        return self.records[stage]["artifacts"]

    def _inputs_hash(self, stage: str, sections: tuple[str, ...], upstream: tuple[str, ...], extra=None) -> str:
        payload = {
            "stage": stage,
            "seed": self.cfg.seed,
            "config": {s: asdict(getattr(self.cfg, s)) for s in sections},
            "upstream": {u: self._artifact_hashes(u) for u in upstream},
            "extra": extra,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def _reusable(self, stage: str, inputs_hash: str) -> bool:
        prev = self._previous.get(stage)
        if not self.resume or prev is None or prev.get("status") != "ok":
            return False
        if prev.get("inputs_hash") != inputs_hash:
            return False
        for name, digest in prev["artifacts"].items():
            p = self.path(name)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    def _write_manifest(self) -> None:
        write_json(
            {
                "seed": self.cfg.seed,
                "config": self.cfg.to_dict(),
                "stages": [self.records[s] for s in STAGES if s in self.records],
            },
            self.path(MANIFEST),
        )

    def _stage(self, stage, sections, upstream, body: Callable[[], list[str]], extra=None) -> None:
        h = self._inputs_hash(stage, sections, upstream, extra)
        if self._reusable(stage, h):
            logger.info("stage %s: inputs unchanged, reusing artifacts", stage)
            self.records[stage] = dict(self._previous[stage])
            return
        logger.info("stage %s: running", stage)
        try:
            names = body()
        except AutoclusterError as exc:
            self.records[stage] = {"name": stage, "status": "failed", "inputs_hash": h, "artifacts": {}, "error": str(exc)}
            self._write_manifest()
            raise
        self.records[stage] = {
            "name": stage,
            "status": "ok",
            "inputs_hash": h,
            "artifacts": {n: sha256_file(self.path(n)) for n in names},
        }
        self._write_manifest()

    # -- stages ------------------------------------------------------------
    def ingest(self) -> list[str]:
        c = self.cfg.ingest
        tracks = parse_ngsim(input_path(self.cfg), c.unit)
        tracks = smooth_tracks(tracks, c.smoothing_window, c.poly_order)
        save_tracks(tracks, self.path("tracks.npz"))
        return ["tracks.npz"]

    def features(self) -> list[str]:
        tracks = load_tracks(self.path("tracks.npz"))
        cs = build_conflict_series(tracks, self.cfg.ingest.min_gap)
        m = extract_features(tracks, cs, self.cfg.indicators.build())
        write_features(m, self.path("features_raw.csv"))
        return ["features_raw.csv"]

    def rectify(self) -> list[str]:
        raw = read_features(self.path("features_raw.csv"), "raw")
        rect = rectify(raw, self.cfg.indicators.build())
        write_features(rect, self.path("features_rectified.csv"))
        z = _standardize_quiet(rect)
        write_json(
            {
                "features": list(z.feature_names),
                "means": z.means,
                "stds": z.stds,
                "constant": [n for n, s in zip(z.feature_names, z.stds) if s == 0],
            },
            self.path("scaling.json"),
        )
        return ["features_rectified.csv", "scaling.json"]

    def _rectified(self) -> FeatureMatrix:
        return read_features(self.path("features_rectified.csv"), "rectified")

    def screen(self) -> list[str]:
        c = self.cfg.screen
        z = _standardize_quiet(self._rectified())
        res = prescreen(
            c.algorithms, z, c.k_range, c.replicates, c.tau, c.beta, c.norm,
            self.cfg.seed, c.hyperparameters, self.cfg.threads,
        )
        write_json(res.to_dict(), self.path("screen.json"))
        return ["screen.json"]

    def _shortlist(self) -> list[str]:
        return list(read_json(self.path("screen.json"))["shortlist"])

    def select(self) -> list[str]:
        c = self.cfg.selection
        algs = c.models or self._shortlist()
        hp = self.cfg.screen.hyperparameters
        specs = []
        for a in algs:
            h = dict(DEFAULT_HYPERPARAMETERS[a])
            h.update(hp.get(a, {}))
            specs.append(ModelSpec(a, None if a in EMERGENT_K else c.k, h, self.cfg.seed))
        rect = self._rectified()
        # a constant column cannot separate clusters; keep it out of the ranking
        constant = [n for n in rect.feature_names if np.ptp(rect.column(n)) == 0]
        if constant:
            logger.warning("constant features excluded from selection: %s", constant)
            rect = rect.select([n for n in rect.feature_names if n not in constant])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            table = elimination_importance(specs, rect)
        table.to_csv(self.path("importance.csv"))
        selected = select_features(table, c.threshold)
        write_json(
            {
                "selected": selected,
                "ranked": [[n, v] for n, v in table.ranked()],
                "models": list(table.model_names),
                "constant_excluded": constant,
            },
            self.path("selected.json"),
        )
        return ["importance.csv", "selected.json"]

    def _selected_names(self) -> list[str]:
        return list(read_json(self.path("selected.json"))["selected"])

    def reduce(self) -> list[str]:
        reduced = self._rectified().select(self._selected_names())
        write_features(reduced, self.path("features_selected.csv"))
        return ["features_selected.csv"]

    def tune(self) -> list[str]:
        c = self.cfg.tune
        if c.iterations < 1:
            raise StageError("no trials: tune.iterations must be >= 1")
        m = read_features(self.path("features_selected.csv"), "rectified")
        z = _standardize_quiet(m)
        algs = c.algorithms or self._shortlist()
        space = build_space(self.cfg, algs)
        hist = optimize(
            space, z, c.iterations, self.cfg.seed, self.cfg.loss.build(), c.tpe(),
            self.cfg.screen.tau, self.cfg.screen.beta, self.cfg.screen.norm,
            c.t_stability, c.t_final, threads=self.cfg.threads,
        )
        hist.write_jsonl(self.path("trials.jsonl"))
        write_best_table(hist, self.path("best_per_k.csv"))
        return ["trials.jsonl", "best_per_k.csv"]

    def decode(self) -> list[str]:
        hist = TuneHistory.read_jsonl(self.path("trials.jsonl"), self.cfg.loss.build())
        rect_full = self._rectified()
        selected = self._selected_names()
        z = _standardize_quiet(rect_full.select(selected))
        tracks = load_tracks(self.path("tracks.npz"))
        summary = decode_all(hist, z, rect_full, selected, tracks, self.cfg, self.workdir)
        write_json(summary, self.path("decode.json"))
        return ["labels.csv", "thresholds.csv", "sankey.csv", "profile.csv", "letter_values.csv", "decode.json"]

    def run(self) -> dict:
        self.workdir.mkdir(parents=True, exist_ok=True)
        src = input_path(self.cfg)
        extra_in = sha256_file(src) if src.exists() else None
        self._stage("ingest", ("ingest",), (), self.ingest, extra=extra_in)
        self._stage("features", ("ingest", "indicators"), ("ingest",), self.features)
        self._stage("rectify", ("indicators",), ("features",), self.rectify)
        self._stage("screen", ("screen",), ("rectify",), self.screen)
        self._stage("select", ("screen", "selection"), ("rectify", "screen"), self.select)
        self._stage("reduce", (), ("rectify", "select"), self.reduce)
        self._stage("tune", ("screen", "tune", "loss"), ("screen", "reduce"), self.tune)
        self._stage("decode", ("decode", "loss"), ("ingest", "rectify", "select", "tune"), self.decode)
        return read_json(self.path(MANIFEST))


BEST_HEADER = [
    "k", "algorithm", "bSI", "sigma_Sk", "boundary_count", "loss_conditional", "loss_x",
    "loss_k", "iteration", "c_v", "final_c_v", "stable", "hyperparameters", "seed",
]


def write_best_table(hist: TuneHistory, path) -> None:
    rows = [[r[h] for h in BEST_HEADER] for r in hist.best_table()]
    write_rows(path, BEST_HEADER, rows)


def choose_k(hist: TuneHistory, k: int = 0) -> int:
    best = hist.best_per_k()
    if not best:
        raise StageError("no successful trial to decode")
    if k:
        if k not in best:
            raise StageError(f"no successful trial at k={k}; available: {sorted(best)}")
        return k
    return min(best, key=lambda kk: (best[kk].loss_x, kk))


def _fit_labels(spec: ModelSpec, z: FeatureMatrix) -> np.ndarray:
    return fit(spec, z).labels


def decode_all(hist, z, rect_full, selected, tracks, cfg: PipelineConfig, outdir: Path) -> dict:
    """Label, threshold, flow, profile and letter-value exports for the chosen k."""
    dc = cfg.decode
    best = hist.best_per_k()
    k = choose_k(hist, dc.k)
    spec = best[k].spec
    labels = _fit_labels(spec, z)
    ensemble_used = False
    if dc.ensemble >= 3 and not spec.is_deterministic:
        runs = [labels] + [_fit_labels(spec.with_seed(spec.seed + i), z) for i in range(1, dc.ensemble)]
        try:
            labels = ensemble_vote(runs, X=z.values)
            ensemble_used = True
        except ParameterError as exc:
            logger.warning("ensemble vote skipped: %s", exc)
    rect_sel = rect_full.select(selected)
    ordering = order_clusters(labels, rect_sel)
    high = dc.high_risk or None
    lmap = label_dataset(labels, ordering, rect_full, high, rect_full.vehicle_ids, dc.cpi_tol)
    lmap.to_csv(outdir / "labels.csv")
    calibrate_thresholds(lmap, rect_full, selected).to_csv(outdir / "thresholds.csv")

    partitions = {}
    for kk, t in best.items():
        lab = labels if kk == k else _fit_labels(t.spec, z)
        if len(np.unique(lab)) != kk:
            continue
        o = order_clusters(lab, rect_sel)
        partitions[kk] = (rect_full.vehicle_ids, o.levels(lab))
    edges = sankey_flows(partitions) if len(partitions) >= 2 else []
    write_sankey(edges, outdir / "sankey.csv")

    lookup = {vid: tracks.tracks[vid] for vid in lmap.vehicle_ids.tolist()}
    risk_profile_export(lmap, lookup, cfg.indicators.tick, outdir / "profile.csv")
    lv = letter_values(rect_sel, lmap.levels, dc.letter_depth)
    write_rows(
        outdir / "letter_values.csv",
        ["level", "feature", "depth", "p", "lower", "upper"],
        [[r["level"], r["feature"], r["depth"], r["p"], r["lower"], r["upper"]] for r in lv],
    )
    return {
        "k": k,
        "spec": spec.to_dict(),
        "ensemble": ensemble_used,
        "selected_features": selected,
        "severity": {str(c): s for c, s in sorted(ordering.severity.items())},
        **lmap.summary(),
        "per_k_loss": {str(kk): t.loss_x for kk, t in best.items()},
        "profile_columns": PROFILE_HEADER,
    }


def run_pipeline(cfg: PipelineConfig, workdir=None, resume: bool = False) -> dict:
    return Pipeline(cfg, workdir, resume).run()
