"""Command-line interface: ``gfa generate|fit|predict|evaluate|select-rank``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .io import (
    SchemaError,
    load_dataset,
    load_model,
    read_matrix_csv,
    save_dataset,
    save_model,
    write_groups_json,
    write_matrix_csv,
)
from .model import DatasetError, NumericalError, build_dataset, default_hyperparameters
from .prediction import loo_group_evaluate, predict_group
from .selection import elbow_scan, multi_restart_fit, select_rank_cv
from .synth import generate, lowrank_spec_sec54, toy_spec_sec52, typed_spec_sec53, with_n

log = logging.getLogger("gfa")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, command, args, inputs, outputs, extra, started):
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "flags": {k: v for k, v in vars(args).items() if k != "func"},
        "inputs": {str(p): _file_digest(p) for p in inputs if p and Path(p).exists()},
        "outputs": [str(p) for p in outputs],
        "versions": {
            "gfa": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": __import__("scipy").__version__,
        },
        "wall_time_s": time.time() - started,
    }
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("GFA_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"GFA_SEED must be an integer, got {env!r}") from None


def _parse_rank(value: str, n_groups: int, k: int) -> int:
    if value == "full":
        return min(n_groups, k)
    try:
        return int(value)
    except ValueError:
        raise UsageError(f"--rank must be an integer or 'full', got {value!r}") from None


def _parse_ranks(value: str) -> list[int]:
    ranks = []
    for part in value.split(","):
        part = part.strip()
        try:
            if "-" in part:
                lo, hi = part.split("-")
                ranks.extend(range(int(lo), int(hi) + 1))
            elif part:
                ranks.append(int(part))
        except ValueError:
            raise UsageError(f"cannot parse rank list {value!r}") from None
    return sorted(set(ranks))


def _hyper(args, n_groups):
    rank = _parse_rank(args.rank, n_groups, args.k)
    overrides = {"rank": rank, "lam": args.lam, "elbo_rel_tol": args.tol, "max_iters": args.max_iters}
    try:
        return default_hyperparameters(n_groups, args.k, **overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_generate(args):
    seed = _seed(args)
    if args.preset == "sec52":
        spec = toy_spec_sec52()
    elif args.preset == "sec53":
        spec = typed_spec_sec53(args.groups or 100)
    else:
        spec = lowrank_spec_sec54(args.rank or 2, seed)
    if args.n is not None:
        spec = with_n(spec, args.n)
    n_train = spec.n
    if args.n_test:
        spec = with_n(spec, n_train + args.n_test)
    if args.noiseless:
        from dataclasses import replace
        spec = replace(spec, noiseless=True)
    dataset, truth = generate(spec, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(dataset.subset(slice(0, n_train)), out)
    outputs = [out / "data.csv", out / "groups.json", out / "truth.json"]
    if args.n_test:
        write_matrix_csv(out / "test.csv", dataset.data[n_train:])
        outputs.append(out / "test.csv")
    (out / "truth.json").write_text(json.dumps(truth.to_json()) + "\n")
    return outputs, [], {"seed": seed, "preset": args.preset}, out / "manifest.json"


def cmd_fit(args):
    seed = _seed(args)
    dataset = load_dataset(args.data, args.groups)
    h = _hyper(args, dataset.n_groups)
    model = multi_restart_fit(dataset, h, args.restarts, seed, args.jobs, scale=args.scale)
    save_model(model, args.out)
    print(f"final ELBO {model.elbo:.6f}  surviving K {model.state.active_k}  "
          f"iterations {model.n_iter}  converged {model.converged}  seed {model.seed}")
    extra = {"seed": seed, "hyperparameters": asdict(h), "final_elbo": model.elbo,
             "surviving_k": model.state.active_k, "best_seed": model.seed}
    return [args.out], [args.data, args.groups], extra, Path(str(args.out) + ".manifest.json")


def _targets(value: str, n_groups: int) -> list[int]:
    try:
        targets = [int(t) for t in value.split(",")]
    except ValueError:
        raise UsageError(f"--target must be a comma-separated list of group indices, got {value!r}") from None
    for t in targets:
        if not 0 <= t < n_groups:
            raise UsageError(f"--target {t} out of range for {n_groups} groups")
    return targets


def cmd_predict(args):
    model = load_model(args.model)
    targets = _targets(args.target, len(model.group_dims))
    rest, _ = read_matrix_csv(args.test)
    try:
        pred = predict_group(model, rest, targets)
    except DatasetError as exc:
        raise SchemaError(f"{args.test}: {exc}") from None
    write_matrix_csv(args.out, pred)
    return [args.out], [args.model, args.test], {"targets": targets}, Path(str(args.out) + ".manifest.json")


def cmd_evaluate(args):
    model = load_model(args.model)
    data, _ = read_matrix_csv(args.test)
    try:
        test = build_dataset(data, model.group_dims)
    except DatasetError as exc:
        raise SchemaError(f"{args.test}: {exc}") from None
    report = loo_group_evaluate(model, test)
    prefix = Path(args.out) if args.out else Path(args.test).with_suffix("")
    csv_path = Path(str(prefix) + ".report.csv")
    json_path = Path(str(prefix) + ".report.json")
    csv_path.write_text(report.to_csv(model.group_names and list(model.group_names)))
    json_path.write_text(json.dumps(report.to_json(), indent=2) + "\n")
    value = report.mean_rmse if args.metric == "rmse" else float(np.mean(report.per_group_mse))
    print(f"mean {args.metric.upper()} over {len(model.group_dims)} groups: {value:.6g}")
    return [csv_path, json_path], [args.model, args.test], {"metric": args.metric}, \
        Path(str(prefix) + ".manifest.json")


def cmd_select_rank(args):
    seed = _seed(args)
    dataset = load_dataset(args.data, args.groups)
    ranks = _parse_ranks(args.ranks)
    args.rank = str(ranks[0])
    h = _hyper(args, dataset.n_groups)
    bad = [r for r in ranks if r > min(dataset.n_groups, args.k)]
    if bad:
        raise UsageError(f"ranks {bad} exceed min(M, K)")
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    doc, outputs = {}, []
    if args.method in ("cv", "both"):
        cv = select_rank_cv(dataset, ranks, h, args.folds, args.restarts, seed, args.jobs)
        doc["cv"] = cv.to_json()
        curve = Path(str(prefix) + ".cv.csv")
        curve.write_text("rank,mean_rmse\n" + "".join(f"{r},{s!r}\n" for r, s in cv.scores.items()))
        outputs.append(curve)
        print(f"cross-validation chose rank {cv.chosen}")
    if args.method in ("elbow", "both"):
        el = elbow_scan(dataset, ranks, h, args.restarts, seed, args.theta, args.jobs)
        doc["elbow"] = {"ranks": el.ranks, "elbo": el.elbos, "estimate": el.estimate,
                        "scores": {str(r): e for r, e in zip(el.ranks, el.elbos)}}
        curve = Path(str(prefix) + ".elbow.csv")
        curve.write_text(el.to_csv())
        outputs.append(curve)
        print(f"elbow estimate {el.estimate}")
    json_path = Path(str(prefix) + ".json")
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    outputs.insert(0, json_path)
    return outputs, [args.data, args.groups], {"seed": seed}, Path(str(prefix) + ".manifest.json")


def _fit_flags(p, rank_default="full"):
    p.add_argument("--data", required=True)
    p.add_argument("--groups", required=True)
    p.add_argument("--k", type=int, required=True, help="initial number of factors")
    p.add_argument("--rank", default=rank_default, help="integer rank, or 'full' for min(M, K)")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--tol", type=float, default=1e-6, help="relative bound change for convergence")
    p.add_argument("--max-iters", type=int, default=100_000)
    p.add_argument("--scale", action="store_true", help="also scale columns to unit variance")
    p.add_argument("--jobs", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gfa", description=__doc__)
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="sample a synthetic dataset")
    p.add_argument("--preset", choices=["sec52", "sec53", "sec54"], required=True)
    p.add_argument("--groups", type=int, help="number of groups (sec53)")
    p.add_argument("--rank", type=int, help="true rank of the precisions (sec54)")
    p.add_argument("--n", type=int, help="training samples")
    p.add_argument("--n-test", type=int, default=0, help="extra samples written to test.csv")
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit a model by variational Bayes")
    _fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict groups missing from test samples")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="CSV of the observed groups only")
    p.add_argument("--target", required=True, help="comma-separated indices of missing groups")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="leave-one-group-out prediction error")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=["rmse", "mse"], default="rmse")
    p.add_argument("--out", help="output prefix (default: test file stem)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-rank", help="choose the rank by cross-validation and/or elbow")
    _fit_flags(p, rank_default=None)
    p.add_argument("--ranks", required=True, help="e.g. 1-12 or 1,2,4,8")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--method", choices=["cv", "elbow", "both"], default="both")
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_select_rank)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
    except UsageError as exc:
        print(f"gfa: error: {exc}", file=sys.stderr)
        return 1
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        outputs, inputs, extra, manifest = args.func(args)
    except UsageError as exc:
        print(f"gfa: error: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, DatasetError, OSError) as exc:
        print(f"gfa: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"gfa: numerical failure: {exc}", file=sys.stderr)
        return 2
    _write_manifest(manifest, args.command, args, inputs, outputs, extra, started)
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
