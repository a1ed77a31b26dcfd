"""Restarts, cross-validated rank selection and the lower-bound elbow."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Optional, Sequence

import numpy as np

from .model import FittedModel, GroupedDataset, Hyperparameters, NumericalError
from .prediction import kfold_indices, loo_group_evaluate
from .vb import fit

log = logging.getLogger(__name__)


def _parallel(tasks, n_jobs):
    """Run zero-argument callables, in order, serially or with joblib."""
    if n_jobs == 1:
        return [t() for t in tasks]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(delayed(t)() for t in tasks)


def _run_fits(dataset, h, seeds, n_jobs, scale=False):
    def one(seed):
        try:
            return fit(dataset, h, seed=seed, scale=scale)
        except (NumericalError, np.linalg.LinAlgError) as exc:
            log.warning("restart with seed %d failed: %s", seed, exc)
            return exc

    return _parallel([partial(one, s) for s in seeds], n_jobs)


def multi_restart_fit(dataset: GroupedDataset, h: Hyperparameters, n_restarts: int = 10,
                      base_seed: int = 0, n_jobs: int = 1, scale: bool = False) -> FittedModel:
    """Fit with seeds ``base_seed .. base_seed + n_restarts - 1`` and keep the best bound.

    Ties go to the lowest seed, so the result does not depend on completion order.
    """
    if n_restarts < 1:
        raise ValueError("n_restarts must be at least 1")
    results = _run_fits(dataset, h, range(base_seed, base_seed + n_restarts), n_jobs, scale)
    best = None
    for res in results:
        if isinstance(res, Exception):
            continue
        if best is None or res.elbo > best.elbo:
            best = res
    if best is None:
        raise results[-1]
    return best


@dataclass
class RankCVResult:
    chosen: int
    scores: dict
    fold_scores: dict
    failures: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "chosen_rank": self.chosen,
            "scores": {str(r): s for r, s in self.scores.items()},
            "fold_scores": {str(r): s for r, s in self.fold_scores.items()},
            "failures": {str(r): s for r, s in self.failures.items()},
        }


def select_rank_cv(dataset: GroupedDataset, ranks: Sequence[int], h: Hyperparameters,
                   folds: int = 5, n_restarts: int = 10, seed: int = 0,
                   n_jobs: int = 1) -> RankCVResult:
    """Pick the rank whose models best predict left-out groups of left-out samples."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    if dataset.n_samples // folds < 2:
        raise ValueError(f"{folds} folds leave fewer than 2 samples per fold")
    parts = kfold_indices(dataset.n_samples, folds, seed)
    ranks = [int(r) for r in ranks]

    def one(r, held):
        train = dataset.subset(np.setdiff1d(np.arange(dataset.n_samples), held))
        try:
            model = multi_restart_fit(train, replace(h, rank=r), n_restarts, seed)
            return loo_group_evaluate(model, dataset.subset(held)).mean_rmse
        except (NumericalError, np.linalg.LinAlgError, ValueError) as exc:
            return exc

    # parallelize over (rank, fold) pairs; restarts inside a pair run serially
    results = _parallel([partial(one, r, held) for r in ranks for held in parts], n_jobs)
    scores, fold_scores, failures = {}, {}, {}
    for i, r in enumerate(ranks):
        errs = results[i * folds:(i + 1) * folds]
        bad = [e for e in errs if isinstance(e, Exception)]
        if bad:
            failures[r] = str(bad[0])
            log.warning("rank %d invalidated: %s", r, bad[0])
            continue
        fold_scores[r] = [float(e) for e in errs]
        scores[r] = float(np.mean(errs))
    if not scores:
        raise NumericalError(f"every rank failed: {failures}")
    chosen = min(scores, key=lambda r: (scores[r], r))
    return RankCVResult(chosen, scores, fold_scores, failures)


@dataclass
class ElbowResult:
    ranks: list
    elbos: list
    estimate: Optional[int]

    def to_csv(self) -> str:
        return "rank,elbo\n" + "".join(f"{r},{e!r}\n" for r, e in zip(self.ranks, self.elbos))


def elbow_estimate(ranks: Sequence[int], elbos: Sequence[float], theta: float = 0.1) -> Optional[int]:
    """Smallest rank after which the bound gain drops below ``theta`` of the largest gain."""
    if len(ranks) < 3:
        return None
    gains = np.diff(np.asarray(elbos, dtype=float))
    top = gains.max()
    if top <= 0:
        return int(ranks[0])
    below = np.flatnonzero(gains < theta * top)
    return int(ranks[below[0]]) if below.size else int(ranks[-1])


def elbow_scan(dataset: GroupedDataset, ranks: Sequence[int], h: Hyperparameters,
               n_restarts: int = 10, seed: int = 0, theta: float = 0.1,
               n_jobs: int = 1) -> ElbowResult:
    ranks = [int(r) for r in ranks]
    if ranks != sorted(ranks):
        raise ValueError("ranks must be sorted ascending")
    inner_jobs = n_jobs if len(ranks) == 1 else 1
    elbos = _parallel([partial(lambda r: multi_restart_fit(dataset, replace(h, rank=r), n_restarts,
                                                           seed, inner_jobs).elbo, r)
                       for r in ranks], n_jobs)
    return ElbowResult(ranks, elbos, elbow_estimate(ranks, elbos, theta))
