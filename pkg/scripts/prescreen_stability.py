"""Replicate stability c_V of every algorithm on an NGSIM-like synthetic matrix."""
import argparse
import warnings

from autocluster.autotune import screen_specs
from autocluster.clustering import ALGORITHMS, DETERMINISTIC
from autocluster.evaluation import stability_cv
from autocluster.indicators import standardize
from autocluster.synthetic import ngsim_like_features


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--rows", type=int, default=5000)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--dbscan-eps", type=float, default=1.5)
    args = p.parse_args()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        z = standardize(ngsim_like_features(args.rows, args.seed)).values
    hp = {"dbscan": {"eps": args.dbscan_eps}}
    rows = []
    for alg in sorted(ALGORITHMS):
        specs = screen_specs(alg, [args.k], args.seed, hp.get(alg))
        rep = stability_cv(specs, z, args.replicates, ("bSI", "sigma_Sk"), threads=args.threads)
        rows.append((rep.algorithm_cv[alg], alg))
    for cv, alg in sorted(rows, reverse=True):
        kind = "deterministic" if alg in DETERMINISTIC else "seeded"
        print(f"{alg:18s} {kind:13s} c_V = {100 * cv:.2f}%")


if __name__ == "__main__":
    main()
