"""Core data types for group factor analysis.

A dataset is an ``N x D`` matrix whose columns are split into ``M``
contiguous groups. Posterior states hold the factorized variational
distributions; loadings for all groups are stored stacked in a single
``D x K`` matrix and sliced per group.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence, Union

import numpy as np


class DatasetError(ValueError):
    """Raised when a matrix and group partition are inconsistent."""


class NumericalError(RuntimeError):
    """Raised when inference produces non-finite or non-PD quantities."""


@dataclass(frozen=True)
class GroupedDataset:
    data: np.ndarray
    group_dims: tuple[int, ...]
    group_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DatasetError(f"data must be 2-D, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "group_dims", tuple(int(d) for d in self.group_dims))
        if self.group_names is not None:
            object.__setattr__(self, "group_names", tuple(str(n) for n in self.group_names))
        self.validate()

    def validate(self):
        n, d = self.data.shape
        if len(self.group_dims) < 1:
            raise DatasetError("at least one group is required")
        for m, dm in enumerate(self.group_dims):
            if dm < 1:
                raise DatasetError(f"group {m} is empty (dim {dm})")
        total = sum(self.group_dims)
        if total != d:
            raise DatasetError(f"partition sums to {total} ≠ {d}")
        if n < 2:
            raise DatasetError(f"need at least 2 samples, got {n}")
        if self.group_names is not None and len(self.group_names) != len(self.group_dims):
            raise DatasetError(
                f"{len(self.group_names)} group names for {len(self.group_dims)} groups")
        bad = ~np.isfinite(self.data)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            m = int(np.searchsorted(self.offsets, j, side="right") - 1)
            raise DatasetError(f"non-finite entry at row {i}, column {j} (group {m})")

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_features(self) -> int:
        return self.data.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_dims)

    @property
    def offsets(self) -> np.ndarray:
        return group_offsets(self.group_dims)

    def group(self, m: int) -> np.ndarray:
        start = self.offsets[m]
        return self.data[:, start:start + self.group_dims[m]]

    def groups(self) -> list[np.ndarray]:
        return [self.group(m) for m in range(self.n_groups)]

    def with_data(self, data: np.ndarray) -> "GroupedDataset":
        return GroupedDataset(data, self.group_dims, self.group_names)

    def subset(self, rows) -> "GroupedDataset":
        return self.with_data(self.data[rows])


def group_offsets(dims: Sequence[int]) -> np.ndarray:
    return np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(int)


def group_index(dims: Sequence[int]) -> np.ndarray:
    """Group label of every column."""
    return np.repeat(np.arange(len(dims)), dims)


def build_dataset(matrix, dims: Sequence[int], names: Optional[Sequence[str]] = None) -> GroupedDataset:
    """Validate ``matrix`` against the group sizes ``dims`` and wrap it."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise DatasetError(f"data must be 2-D, got shape {matrix.shape}")
    return GroupedDataset(matrix, tuple(dims), None if names is None else tuple(names))


def center_columns(dataset: GroupedDataset) -> tuple[GroupedDataset, np.ndarray]:
    means = dataset.data.mean(axis=0)
    centered = dataset.data - means
    # a second pass removes the rounding residue of the first
    residue = centered.mean(axis=0)
    centered -= residue
    return dataset.with_data(centered), means + residue


def scale_columns(dataset: GroupedDataset) -> tuple[GroupedDataset, np.ndarray]:
    """Divide each column by its standard deviation; constant columns are left alone."""
    scales = dataset.data.std(axis=0)
    scales[scales == 0] = 1.0
    return dataset.with_data(dataset.data / scales), scales


@dataclass(frozen=True)
class InnerOptSettings:
    memory: int = 10
    max_iters: int = 200
    grad_tol: float = 1e-6


@dataclass(frozen=True)
class Hyperparameters:
    k_init: int
    rank: int
    tau_shape: float = 1e-14
    tau_rate: float = 1e-14
    lam: float = 0.1
    alpha_shape: float = 1e-14
    alpha_rate: float = 1e-14
    prune_threshold: float = 1e-7
    elbo_rel_tol: float = 1e-6
    max_iters: int = 100_000
    log_alpha_cap: float = math.log(1e12)
    inner_opt: InnerOptSettings = field(default_factory=InnerOptSettings)

    def validate(self, n_groups: int):
        if self.k_init < 1:
            raise ValueError(f"k_init must be positive, got {self.k_init}")
        if not 0 <= self.rank <= min(n_groups, self.k_init):
            raise ValueError(
                f"rank {self.rank} outside [0, min(M={n_groups}, K={self.k_init})]")
        for name in ("tau_shape", "tau_rate", "lam", "alpha_shape", "alpha_rate",
                     "prune_threshold", "elbo_rel_tol", "log_alpha_cap"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")

    def is_full_rank(self, n_groups: int) -> bool:
        return self.rank >= min(n_groups, self.k_init)


def default_hyperparameters(n_groups: int, k_init: int, **overrides) -> Hyperparameters:
    if n_groups < 1 or k_init < 1:
        raise ValueError("need M >= 1 and k_init >= 1")
    overrides.setdefault("rank", min(n_groups, k_init))
    h = Hyperparameters(k_init=k_init, **overrides)
    h.validate(n_groups)
    return h


def full_rank_for(n_groups: int, k_init: int) -> int:
    return min(n_groups, k_init)


@dataclass(frozen=True)
class LowRankAlpha:
    u: np.ndarray
    v: np.ndarray
    mu_u: np.ndarray
    mu_v: np.ndarray
    log_cap: float = math.log(1e12)

    variant = "LowRank"

    @property
    def rank(self) -> int:
        return self.u.shape[1]

    @property
    def log_alpha(self) -> np.ndarray:
        raw = self.u @ self.v.T + self.mu_u[:, None] + self.mu_v[None, :]
        return np.clip(raw, -self.log_cap, self.log_cap)

    @property
    def expected_alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def expected_log_alpha(self) -> np.ndarray:
        return self.log_alpha

    def keep(self, cols) -> "LowRankAlpha":
        return LowRankAlpha(self.u, self.v[cols], self.mu_u, self.mu_v[cols], self.log_cap)

    def check(self):
        m, r = self.u.shape
        if self.v.shape[1] != r or self.mu_u.shape != (m,) or self.mu_v.shape != (self.v.shape[0],):
            raise NumericalError("inconsistent low-rank alpha shapes")
        for name in ("u", "v", "mu_u", "mu_v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NumericalError(f"non-finite entries in {name}")


@dataclass(frozen=True)
class FullRankAlpha:
    a_alpha: np.ndarray  # M x K
    b_alpha: np.ndarray  # M x K

    variant = "FullRank"

    @property
    def expected_alpha(self) -> np.ndarray:
        return self.a_alpha / self.b_alpha

    @property
    def expected_log_alpha(self) -> np.ndarray:
        from scipy.special import digamma
        return digamma(self.a_alpha) - np.log(self.b_alpha)

    def keep(self, cols) -> "FullRankAlpha":
        return FullRankAlpha(self.a_alpha[:, cols], self.b_alpha[:, cols])

    def check(self):
        if self.a_alpha.shape != self.b_alpha.shape:
            raise NumericalError("inconsistent full-rank alpha shapes")
        if not (np.all(self.a_alpha > 0) and np.all(self.b_alpha > 0)):
            raise NumericalError("gamma parameters of alpha must be positive")


AlphaState = Union[LowRankAlpha, FullRankAlpha]


@dataclass(frozen=True)
class PosteriorState:
    """Mean-field posterior q(Z) q(W) q(tau) plus the alpha model.

    ``w_mean`` stacks the ``D_m x K`` loading means of all groups row-wise;
    ``w_cov[m]`` is the ``K x K`` covariance shared by the rows of group ``m``.
    """

    z_mean: np.ndarray
    z_cov: np.ndarray
    w_mean: np.ndarray
    w_cov: np.ndarray
    tau_a: np.ndarray
    tau_b: np.ndarray
    alpha: AlphaState
    group_dims: tuple[int, ...]

    @property
    def active_k(self) -> int:
        return self.z_mean.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.group_dims)

    @property
    def tau_mean(self) -> np.ndarray:
        return self.tau_a / self.tau_b

    @property
    def expected_alpha(self) -> np.ndarray:
        return self.alpha.expected_alpha

    @cached_property
    def ww(self) -> np.ndarray:
        """``<W_m W_m^T>`` per group as an ``M x K x K`` stack."""
        dims = self.group_dims
        k = self.active_k
        if len(set(dims)) == 1:
            wr = self.w_mean.reshape(len(dims), dims[0], k)
            return np.swapaxes(wr, 1, 2) @ wr + dims[0] * self.w_cov
        out = np.empty((len(dims), k, k))
        for m, start in enumerate(group_offsets(dims)):
            wm = self.w_mean[start:start + dims[m]]
            out[m] = wm.T @ wm + dims[m] * self.w_cov[m]
        return out

    @cached_property
    def w_cov_logdet(self) -> np.ndarray:
        return spd_logdet(self.w_cov)

    def w_group(self, m: int) -> np.ndarray:
        start = int(group_offsets(self.group_dims)[m])
        return self.w_mean[start:start + self.group_dims[m]]

    def check(self):
        """Raise :class:`NumericalError` if any invariant is violated."""
        k = self.active_k
        m = self.n_groups
        if self.z_cov.shape != (k, k):
            raise NumericalError(f"z_cov has shape {self.z_cov.shape}, expected {(k, k)}")
        if self.w_mean.shape != (sum(self.group_dims), k):
            raise NumericalError(f"w_mean has shape {self.w_mean.shape}")
        if self.w_cov.shape != (m, k, k):
            raise NumericalError(f"w_cov has shape {self.w_cov.shape}")
        if self.expected_alpha.shape != (m, k):
            raise NumericalError(f"alpha has shape {self.expected_alpha.shape}, expected {(m, k)}")
        _check_spd(self.z_cov, "z_cov")
        for g in range(m):
            _check_spd(self.w_cov[g], f"w_cov[{g}]")
        if not (np.all(self.tau_a > 0) and np.all(self.tau_b > 0)):
            raise NumericalError("tau posterior parameters must be positive")
        self.alpha.check()


def spd_logdet(a: np.ndarray) -> np.ndarray:
    try:
        chol = np.linalg.cholesky(0.5 * (a + np.swapaxes(a, -1, -2)))
    except np.linalg.LinAlgError:
        raise NumericalError("covariance is not positive definite") from None
    return 2 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)


def _check_spd(a: np.ndarray, name: str):
    if not np.allclose(a, a.T, rtol=0, atol=1e-10 * max(1.0, np.abs(a).max())):
        raise NumericalError(f"{name} is not symmetric")
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise NumericalError(f"{name} is not positive definite") from None


@dataclass(frozen=True)
class FittedModel:
    state: PosteriorState
    column_means: np.ndarray
    hyper: Hyperparameters
    elbo_trace: tuple[float, ...]
    converged: bool
    seed: int
    column_scales: Optional[np.ndarray] = None
    group_names: Optional[tuple[str, ...]] = None

    @property
    def elbo(self) -> float:
        return self.elbo_trace[-1]

    @property
    def n_iter(self) -> int:
        return len(self.elbo_trace)

    @property
    def group_dims(self) -> tuple[int, ...]:
        return self.state.group_dims

    def scales(self) -> np.ndarray:
        if self.column_scales is None:
            return np.ones_like(self.column_means)
        return self.column_scales
