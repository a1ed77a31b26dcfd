"""Rank selection on data whose log precisions have a known rank.

For each true rank and trial, runs the lower-bound elbow scan and 5-fold
cross-validation over a grid of model ranks and reports both choices.
"""
import argparse
import json
import time
from dataclasses import replace

from gfa.model import default_hyperparameters
from gfa.selection import elbow_scan, select_rank_cv
from gfa.synth import generate, lowrank_spec_sec54


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--true-ranks", type=int, nargs="+", default=[2, 6, 10])
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--ranks", default="1-12", help="model rank grid, e.g. 1-12")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--tol", type=float, default=1e-5, help="convergence tolerance of elbow fits")
    p.add_argument("--cv-tol", type=float, default=1e-4, help="convergence tolerance of CV fold fits")
    p.add_argument("--cv-max-iters", type=int, default=150)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--method", choices=["cv", "elbow", "both"], default="both")
    p.add_argument("--out", help="JSON lines file for per-trial results")
    args = p.parse_args()
    lo, hi = (int(x) for x in args.ranks.split("-"))
    grid = list(range(lo, hi + 1))

    sink = open(args.out, "w") if args.out else None
    for true in args.true_ranks:
        hits_cv = hits_elbow = 0
        for trial in range(args.trials):
            start = time.time()
            spec = lowrank_spec_sec54(true, trial)
            data, _ = generate(spec, trial)
            h = default_hyperparameters(data.n_groups, spec.n_factors, rank=1, elbo_rel_tol=args.tol)
            row = {"true_rank": true, "trial": trial}
            if args.method in ("elbow", "both"):
                el = elbow_scan(data, grid, h, args.restarts, seed=trial, n_jobs=args.jobs)
                row["elbow"] = el.estimate
                hits_elbow += el.estimate is not None and abs(el.estimate - true) <= 1
            if args.method in ("cv", "both"):
                h_cv = replace(h, elbo_rel_tol=args.cv_tol, max_iters=args.cv_max_iters)
                cv = select_rank_cv(data, grid, h_cv, args.folds, args.restarts, seed=trial,
                                    n_jobs=args.jobs)
                row["cv"] = cv.chosen
                row["cv_scores"] = cv.scores
                hits_cv += cv.chosen in (true, true + 1)
            row["seconds"] = round(time.time() - start, 1)
            print(json.dumps(row), flush=True)
            if sink:
                sink.write(json.dumps(row) + "\n")
        print(f"true rank {true}: CV true or true+1 in {hits_cv}/{args.trials}, "
              f"elbow within one in {hits_elbow}/{args.trials}", flush=True)


if __name__ == "__main__":
    main()
