"""Recompute loss(x) and loss(x|k) from the published best-per-k quality scores."""
import argparse

from autocluster.autotune import LossConfig, conditional_loss, loss

# k, algorithm, bSI, sigma(S_k), printed loss(x|k), printed loss(x), printed loss(k)
PUBLISHED = [
    (3, "birch", 0.591, 0.181, 0.908, 0.499, 0.550),
    (4, "kmeans_pp", 0.554, 0.235, 0.986, 0.564, 0.572),
    (5, "mean_shift", 0.541, 0.213, 0.917, 0.565, 0.616),
    (6, "birch", 0.535, 0.202, 0.908, 0.566, 0.623),
    (7, "birch", 0.501, 0.200, 0.928, 0.598, 0.645),
    (8, "fuzzy_c_means", 0.448, 0.200, 0.908, 0.652, 0.718),
    (9, "fuzzy_c_means", 0.441, 0.204, 0.944, 0.661, 0.701),
]


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--lam", type=float, default=0.5)
    args = p.parse_args()
    cfg = LossConfig(lam=args.lam)
    print(f"{'k':>2} {'algorithm':14s} {'loss':>7} {'printed':>7} {'ratio':>7} {'printed':>7}")
    worst = 0.0
    for k, alg, b, s, cond, lx, lk in PUBLISHED:
        ours = loss(bsi=b, sigma=s, cfg=cfg)
        ratio = conditional_loss(lx, lk)
        worst = max(worst, abs(ours - lx))
        print(f"{k:>2} {alg:14s} {ours:7.4f} {lx:7.3f} {ratio:7.4f} {cond:7.3f}")
    print(f"max |loss - printed| = {worst:.4f} at lambda = {args.lam}")


if __name__ == "__main__":
    main()
