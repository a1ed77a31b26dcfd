"""Prediction of unobserved groups and the ridge regression baseline."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .model import DatasetError, FittedModel, GroupedDataset, NumericalError, group_offsets
from .vb import ww_moments


@dataclass(frozen=True)
class PredictionReport:
    per_group_rmse: np.ndarray
    mean_rmse: float
    per_group_dims: tuple[int, ...]
    per_group_mse: np.ndarray
    per_variable_rmse: float

    def to_json(self) -> dict:
        return {
            "per_group_rmse": [float(x) for x in self.per_group_rmse],
            "per_group_mse": [float(x) for x in self.per_group_mse],
            "mean_rmse": float(self.mean_rmse),
            "per_variable_rmse": float(self.per_variable_rmse),
            "per_group_dims": list(self.per_group_dims),
        }

    def to_csv(self, names: Optional[Sequence[str]] = None) -> str:
        names = names or [str(m) for m in range(len(self.per_group_dims))]
        rows = ["group,dim,rmse,mse"]
        for name, d, r, e in zip(names, self.per_group_dims, self.per_group_rmse, self.per_group_mse):
            rows.append(f"{name},{d},{r!r},{e!r}")
        return "\n".join(rows) + "\n"


def _column_mask(dims, targets) -> np.ndarray:
    mask = np.zeros(sum(dims), dtype=bool)
    for m, start in enumerate(group_offsets(dims)):
        if m in targets:
            mask[start:start + dims[m]] = True
    return mask


def _as_targets(target, n_groups) -> list[int]:
    targets = [target] if np.isscalar(target) else list(target)
    targets = sorted({int(t) for t in targets})
    for t in targets:
        if not 0 <= t < n_groups:
            raise DatasetError(f"target group {t} out of range for {n_groups} groups")
    if len(targets) == n_groups:
        raise DatasetError("at least one group must be observed")
    return targets


def predict_group(model: FittedModel, test_rest: np.ndarray,
                  target: Union[int, Iterable[int]]) -> np.ndarray:
    """Predictive mean of the target group(s) given all other groups.

    ``test_rest`` holds the observed columns in training order with the
    target groups removed, on the original (uncentered) scale.
    """
    state = model.state
    dims = state.group_dims
    targets = _as_targets(target, len(dims))
    miss = _column_mask(dims, targets)
    test_rest = np.atleast_2d(np.asarray(test_rest, dtype=float))
    if test_rest.shape[1] != int((~miss).sum()):
        raise DatasetError(
            f"test data has {test_rest.shape[1]} columns, expected {int((~miss).sum())} "
            f"for observed groups of partition {list(dims)}")
    means = model.column_means
    scales = model.scales()
    y = (test_rest - means[~miss]) / scales[~miss]

    observed = [m for m in range(len(dims)) if m not in targets]
    tau = state.tau_mean
    ww = ww_moments(state)
    sigma = np.eye(state.active_k) + np.tensordot(tau[observed], ww[observed], axes=1)
    sigma = 0.5 * (sigma + sigma.T)
    tau_cols = np.repeat(tau, dims)[~miss]
    w_obs = state.w_mean[~miss]
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NumericalError("predictive latent precision is not positive definite") from None
    proj = (y * tau_cols) @ w_obs
    z = np.linalg.solve(chol.T, np.linalg.solve(chol, proj.T)).T
    pred = z @ state.w_mean[miss].T
    return pred * scales[miss] + means[miss]


def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err ** 2)))


def loo_group_evaluate(model: FittedModel, test: GroupedDataset) -> PredictionReport:
    """Predict each group of ``test`` from all the others."""
    dims = model.group_dims
    if tuple(test.group_dims) != tuple(dims):
        raise DatasetError(f"test partition {list(test.group_dims)} differs from model {list(dims)}")
    return _report([
        test.group(m) - predict_group(model, np.delete(test.data, _cols(dims, m), axis=1), m)
        for m in range(len(dims))
    ], dims)


def _cols(dims, m) -> np.ndarray:
    start = group_offsets(dims)[m]
    return np.arange(start, start + dims[m])


def _report(errors: list[np.ndarray], dims) -> PredictionReport:
    mse = np.array([np.mean(e ** 2) for e in errors])
    rmse = np.sqrt(mse)
    all_err = np.concatenate([e.ravel() for e in errors])
    if not np.all(np.isfinite(rmse)):
        raise NumericalError("non-finite prediction error")
    return PredictionReport(rmse, float(rmse.mean()), tuple(dims), mse, _rmse(all_err))


@dataclass(frozen=True)
class RidgeFit:
    weights: np.ndarray
    gamma: float
    x_means: np.ndarray
    y_means: np.ndarray
    cv_errors: Optional[np.ndarray] = None

    def predict(self, test_rest: np.ndarray) -> np.ndarray:
        return (np.asarray(test_rest, float) - self.x_means) @ self.weights + self.y_means


DEFAULT_GAMMAS = tuple(10.0 ** np.arange(-3, 4.5, 0.5))


def ridge_weights(x: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """``(X^T X + gamma I)^{-1} X^T Y``, solved in whichever of the primal or dual is smaller."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    n, p = x.shape
    if p <= n:
        return np.linalg.solve(x.T @ x + gamma * np.eye(p), x.T @ y)
    return x.T @ np.linalg.solve(x @ x.T + gamma * np.eye(n), y)


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if not 2 <= folds <= n:
        raise ValueError(f"need 2 <= folds <= n, got folds={folds}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def ridge_mlr(train: GroupedDataset, target: int, gammas: Sequence[float] = DEFAULT_GAMMAS,
              folds: int = 10, seed: int = 0) -> RidgeFit:
    """Multiple-output ridge regression of one group on all others, gamma by k-fold CV."""
    if train.n_samples < 2:
        raise DatasetError("ridge regression needs at least 2 samples")
    if any(g <= 0 for g in gammas):
        raise ValueError("gamma grid must be positive")
    cols = _cols(train.group_dims, target)
    x_all = np.delete(train.data, cols, axis=1)
    y_all = train.data[:, cols]
    folds = min(folds, train.n_samples)
    errors = np.zeros(len(gammas))
    if len(gammas) > 1:
        for held in kfold_indices(train.n_samples, folds, seed):
            fit_rows = np.setdiff1d(np.arange(train.n_samples), held)
            xm, ym = x_all[fit_rows].mean(0), y_all[fit_rows].mean(0)
            xf, yf = x_all[fit_rows] - xm, y_all[fit_rows] - ym
            for i, g in enumerate(gammas):
                pred = (x_all[held] - xm) @ ridge_weights(xf, yf, g) + ym
                errors[i] += np.sum((pred - y_all[held]) ** 2)
    gamma = float(gammas[int(np.argmin(errors))])
    xm, ym = x_all.mean(0), y_all.mean(0)
    b = ridge_weights(x_all - xm, y_all - ym, gamma)
    return RidgeFit(b, gamma, xm, ym, errors / train.n_samples)


def ridge_loo_evaluate(train: GroupedDataset, test: GroupedDataset,
                       gammas: Sequence[float] = DEFAULT_GAMMAS, folds: int = 10,
                       seed: int = 0) -> PredictionReport:
    dims = train.group_dims
    errors = []
    for m in range(len(dims)):
        rf = ridge_mlr(train, m, gammas, folds, seed)
        errors.append(test.group(m) - rf.predict(np.delete(test.data, _cols(dims, m), axis=1)))
    return _report(errors, dims)
