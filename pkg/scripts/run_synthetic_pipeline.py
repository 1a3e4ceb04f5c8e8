"""Run the full pipeline on the bundled synthetic fixture and print the manifest."""
import argparse
import logging

from autocluster.config import load_config
from autocluster.io import read_json
from autocluster.pipeline import run_pipeline


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config", help="TOML or JSON config (default: built-in defaults)")
    p.add_argument("--workdir", default="synthetic_run")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--resume", action="store_true")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    cfg = load_config(args.config)
    cfg.tune.iterations = args.iters
    manifest = run_pipeline(cfg, args.workdir, args.resume)
    for s in manifest["stages"]:
        print(f"{s['name']:9s} {s['status']:6s} {', '.join(sorted(s['artifacts']))}")
    summary = read_json(f"{args.workdir}/decode.json")
    print(f"k={summary['k']} counts={summary['counts']} IR={summary['IR']}")


if __name__ == "__main__":
    main()
