"""``autocluster`` command line: one subcommand per pipeline stage plus ``run``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .autotune import TABLE_DOMAINS, SearchSpace, TPEConfig, TuneHistory, optimize, prescreen
from .clustering import ALGORITHMS, DEFAULT_HYPERPARAMETERS, EMERGENT_K, ModelSpec
from .config import SEED_ENV, dump_defaults, load_config, search_space_table
from .decoding import RiskLabelMap, risk_profile_export
from .errors import AutoclusterError, ConfigError, DataError
from .indicators import extract_features, rectify, standardize
from .io import read_features, write_features, write_json
from .pipeline import decode_all, run_pipeline, write_best_table
from .selection import elimination_importance, select_features
from .synthetic import FIXTURE
from .trajectory import build_conflict_series, load_tracks, parse_ngsim, save_tracks, smooth_tracks

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 2, 3, 4

logger = logging.getLogger("autocluster")


def _seed(args) -> int:
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    return args.seed


def _algorithms(text: str | None, default=None) -> list[str]:
    if not text:
        return list(default or sorted(ALGORITHMS))
    algs = [a.strip() for a in text.split(",") if a.strip()]
    unknown = set(algs) - set(ALGORITHMS)
    if unknown:
        raise ConfigError(f"unknown algorithm(s): {sorted(unknown)}")
    return algs


def _standardized(path):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return standardize(read_features(path, "rectified"))


def cmd_ingest(args) -> int:
    cfg = load_config(args.config)
    src = Path(args.input) if args.input else FIXTURE
    tracks = parse_ngsim(src, args.unit or cfg.ingest.unit)
    tracks = smooth_tracks(tracks, cfg.ingest.smoothing_window, cfg.ingest.poly_order)
    save_tracks(tracks, args.out)
    print(f"{len(tracks)} vehicles -> {args.out} (dropped {tracks.dropped} rows)")
    return EXIT_OK


def cmd_features(args) -> int:
    cfg = load_config(args.config)
    icfg = cfg.indicators.build()
    tracks = load_tracks(args.tracks)
    m = extract_features(tracks, build_conflict_series(tracks, cfg.ingest.min_gap), icfg)
    if not args.raw:
        m = rectify(m, icfg)
    write_features(m, args.out)
    sidecar = Path(args.out).with_suffix(".json")
    write_json({"indicators": cfg.to_dict()["indicators"], "state": m.state, "column_stats": m.column_stats()}, sidecar)
    print(f"{m.n_rows} x {len(m.feature_names)} {m.state} features -> {args.out} (+ {sidecar.name})")
    return EXIT_OK


def cmd_screen(args) -> int:
    z = _standardized(args.features)
    res = prescreen(
        _algorithms(args.algorithms), z, range(args.k_min, args.k_max + 1), args.replicates,
        args.tau, seed=_seed(args), threads=args.threads,
    )
    write_json(res.to_dict(), args.out)
    for a in res.algorithms:
        print(f"{a:18s} c_V={res.algorithm_cv[a]:.4f} bSI={res.mean_bsi[a]:.3f} "
              f"{'kept' if a in res.shortlist else 'dropped'}")
    return EXIT_OK


def cmd_select(args) -> int:
    m = read_features(args.features, "rectified")
    if args.screen:
        algs = json.loads(Path(args.screen).read_text())["shortlist"]
    else:
        algs = _algorithms(args.algorithms, ["kmeans_pp", "ward", "birch", "fuzzy_c_means"])
    seed = _seed(args)
    specs = [ModelSpec(a, None if a in EMERGENT_K else args.k, DEFAULT_HYPERPARAMETERS[a], seed) for a in algs]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        table = elimination_importance(specs, m)
    table.to_csv(args.out)
    selected = select_features(table, args.threshold)
    for name, r in table.ranked():
        print(f"{name:12s} R={r:+.4f} {'selected' if name in selected else ''}")
    if args.selected_out:
        write_features(m.select(selected), args.selected_out)
    return EXIT_OK


def cmd_tune(args) -> int:
    z = _standardized(args.features)
    algs = _algorithms(args.algorithms, sorted(TABLE_DOMAINS))
    space = SearchSpace.restricted(algs, range(args.k_min, args.k_max + 1))
    tpe = TPEConfig(gamma=args.gamma)

    def progress(t):
        if args.verbose:
            print(f"[{t.iteration}] {t.spec.algorithm} k={t.k} loss={t.loss_x} status={t.status}")

    hist = optimize(space, z, args.iters, _seed(args), tpe_cfg=tpe, tau=args.tau, callback=progress,
                    threads=args.threads)
    hist.write_jsonl(args.out)
    best = args.best or str(Path(args.out).with_suffix(".best.csv"))
    write_best_table(hist, best)
    for r in hist.best_table():
        print(f"k={r['k']} {r['algorithm']:16s} bSI={r['bSI']:.3f} sigma={r['sigma_Sk']:.3f} loss={r['loss_x']:.3f}")
    return EXIT_OK


def cmd_decode(args) -> int:
    cfg = load_config(args.config)
    if args.k is not None:
        cfg.decode.k = args.k
    hist = TuneHistory.read_jsonl(args.trials)
    rect = read_features(args.features, "rectified")
    selected = list(args.selected.split(",")) if args.selected else list(rect.feature_names)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z = standardize(rect.select(selected))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.tracks:
        tracks = load_tracks(args.tracks)
    else:
        raise DataError("decode needs --tracks for the risk profile export")
    summary = decode_all(hist, z, rect, selected, tracks, cfg, outdir)
    write_json(summary, outdir / "decode.json")
    print(f"k={summary['k']} counts={summary['counts']} IR={summary['IR']} -> {outdir}")
    return EXIT_OK


def cmd_profile(args) -> int:
    import csv

    with open(args.labels, newline="") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["vehicle_id"]) for r in rows])
    levels = np.array([int(r["risk_level"]) for r in rows])
    k = int(levels.max()) + 1 if len(levels) else 0
    lmap = RiskLabelMap(ids, levels, {}, np.bincount(levels, minlength=k).tolist(), (), 1.0, 1)
    out = risk_profile_export(lmap, load_tracks(args.tracks), args.tick, args.out)
    print(f"{len(out)} rows -> {args.out}")
    return EXIT_OK


def cmd_defaults(args) -> int:
    if args.format == "json":
        sys.stdout.write(dump_defaults("json"))
    else:
        sys.stdout.write(dump_defaults("toml"))
    if args.space:
        sys.stdout.write(json.dumps(search_space_table(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.threads:
        cfg.threads = args.threads
    if args.iters is not None:
        cfg.tune.iterations = args.iters
    manifest = run_pipeline(cfg, args.workdir, resume=args.resume)
    for s in manifest["stages"]:
        print(f"{s['name']:9s} {s['status']:6s} {', '.join(sorted(s['artifacts']))}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="autocluster", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, threads=False):
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if threads:
            sp.add_argument("--threads", type=int, default=1)

    sp = sub.add_parser("ingest", help="parse and smooth an NGSIM CSV")
    sp.add_argument("--input", help="NGSIM CSV (default: bundled synthetic fixture)")
    sp.add_argument("--unit", choices=["feet", "metres"])
    sp.add_argument("--config")
    sp.add_argument("--out", default="tracks.npz")
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("features", help="extract the 12 indicator features")
    sp.add_argument("--tracks", default="tracks.npz")
    sp.add_argument("--raw", action="store_true", help="skip rectification")
    sp.add_argument("--config")
    sp.add_argument("--out", default="features.csv")
    sp.set_defaults(func=cmd_features)

    sp = sub.add_parser("screen", help="stability/quality prescreen of algorithms")
    sp.add_argument("--features", default="features.csv")
    sp.add_argument("--algorithms", help="comma-separated (default: all)")
    sp.add_argument("--k-min", type=int, default=3)
    sp.add_argument("--k-max", type=int, default=9)
    sp.add_argument("--replicates", type=int, default=10)
    sp.add_argument("--tau", type=float, default=0.05)
    sp.add_argument("--out", default="screen.json")
    common(sp, threads=True)
    sp.set_defaults(func=cmd_screen)

    sp = sub.add_parser("select-features", help="elimination-based feature importance")
    sp.add_argument("--features", default="features.csv")
    sp.add_argument("--screen", help="screen.json whose shortlist supplies the models")
    sp.add_argument("--algorithms")
    sp.add_argument("--k", type=int, default=6)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--out", default="importance.csv")
    sp.add_argument("--selected-out", help="write the reduced feature CSV here")
    common(sp)
    sp.set_defaults(func=cmd_select)

    sp = sub.add_parser("tune", help="TPE search over algorithm, hyperparameters and k")
    sp.add_argument("--features", default="features.csv")
    sp.add_argument("--algorithms")
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--k-min", type=int, default=3)
    sp.add_argument("--k-max", type=int, default=9)
    sp.add_argument("--gamma", type=float, default=0.25)
    sp.add_argument("--tau", type=float, default=0.05)
    sp.add_argument("--out", default="trials.jsonl")
    sp.add_argument("--best", help="best-per-k CSV (default: next to --out)")
    common(sp, threads=True)
    sp.set_defaults(func=cmd_tune)

    sp = sub.add_parser("decode", help="risk levels, thresholds, flows and profiles")
    sp.add_argument("--trials", default="trials.jsonl")
    sp.add_argument("--features", default="features.csv")
    sp.add_argument("--selected", help="comma-separated feature subset used in tuning")
    sp.add_argument("--tracks", default="tracks.npz")
    sp.add_argument("--k", type=int)
    sp.add_argument("--config")
    sp.add_argument("--outdir", default="decoded")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("profile", help="per-lane time-space risk rows from labels")
    sp.add_argument("--labels", default="labels.csv")
    sp.add_argument("--tracks", default="tracks.npz")
    sp.add_argument("--tick", type=float, default=0.1)
    sp.add_argument("--out", default="profile.csv")
    sp.set_defaults(func=cmd_profile)

    sp = sub.add_parser("defaults", help="print every default setting")
    sp.add_argument("--format", choices=["toml", "json"], default="toml")
    sp.add_argument("--space", action="store_true", help="also print the search domains")
    sp.set_defaults(func=cmd_defaults)

    sp = sub.add_parser("run", help="the full pipeline from a config file")
    sp.add_argument("--config", help="TOML or JSON config (default: built-in defaults)")
    sp.add_argument("--workdir")
    sp.add_argument("--resume", action="store_true", help="skip stages whose inputs are unchanged")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--iters", type=int, help="override tune.iterations")
    sp.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AutoclusterError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
