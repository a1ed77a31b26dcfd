"""Synthetic data with known group-factor structure, and recovery scoring."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import GroupedDataset, build_dataset


@dataclass(frozen=True)
class GenerationSpec:
    """Recipe for sampling from the GFA generative model.

    ``activity[m, k]`` switches factor ``k`` on in group ``m``. When
    ``alpha`` is given, active loadings have standard deviation
    ``alpha[m, k] ** -0.5`` instead of ``loading_scale``. ``tau=None`` means
    noise-free data.
    """

    n: int
    group_dims: tuple[int, ...]
    activity: np.ndarray
    loading_scale: float = 1.0
    tau: Optional[np.ndarray] = None
    noiseless: bool = False
    group_types: Optional[tuple[int, ...]] = None
    alpha: Optional[np.ndarray] = None
    name: str = "custom"

    def __post_init__(self):
        act = np.asarray(self.activity).astype(bool)
        object.__setattr__(self, "activity", act)
        object.__setattr__(self, "group_dims", tuple(int(d) for d in self.group_dims))
        if act.shape[0] != len(self.group_dims):
            raise ValueError(f"activity has {act.shape[0]} rows for {len(self.group_dims)} groups")
        if any(d < 1 for d in self.group_dims):
            raise ValueError("group dims must be positive")
        if not act.any(axis=0).all():
            raise ValueError("every factor must be active in at least one group")
        if self.tau is None:
            object.__setattr__(self, "tau", np.ones(len(self.group_dims)))
        else:
            object.__setattr__(self, "tau", np.asarray(self.tau, dtype=float))

    @property
    def n_factors(self) -> int:
        return self.activity.shape[1]

    def loading_sd(self) -> np.ndarray:
        if self.alpha is not None:
            sd = 1 / np.sqrt(np.asarray(self.alpha, dtype=float))
        else:
            sd = np.full(self.activity.shape, float(self.loading_scale))
        return np.where(self.activity, sd, 0.0)


@dataclass(frozen=True)
class GroundTruth:
    w_true: np.ndarray  # D x K
    z_true: np.ndarray  # N x K
    activity: np.ndarray
    tau: np.ndarray

    def to_json(self) -> dict:
        return {
            "w_true": self.w_true.tolist(),
            "z_true": self.z_true.tolist(),
            "activity": self.activity.astype(int).tolist(),
            "tau": [float(t) for t in self.tau],
        }


def generate(spec: GenerationSpec, seed: int) -> tuple[GroupedDataset, GroundTruth]:
    rng = np.random.default_rng(seed)
    k = spec.n_factors
    dims = spec.group_dims
    z = rng.standard_normal((spec.n, k))
    sd = np.repeat(spec.loading_sd(), dims, axis=0)
    w = rng.standard_normal((sum(dims), k)) * sd
    x = z @ w.T
    if not spec.noiseless:
        noise_sd = np.repeat(1 / np.sqrt(spec.tau), dims)
        x = x + rng.standard_normal(x.shape) * noise_sd
    names = [f"g{m}" for m in range(len(dims))]
    return build_dataset(x, dims, names), GroundTruth(w, z, spec.activity.copy(), spec.tau.copy())


def toy_spec_sec52(n: int = 100) -> GenerationSpec:
    """Three groups of ten variables; one factor per non-empty subset of groups."""
    subsets = [s for r in (3, 2, 1) for s in itertools.combinations(range(3), r)]
    activity = np.zeros((3, len(subsets)), dtype=bool)
    for k, s in enumerate(subsets):
        activity[list(s), k] = True
    return GenerationSpec(n=n, group_dims=(10, 10, 10), activity=activity, name="sec52")


def typed_spec_sec53(m_groups: int, n: int = 30, n_factors: int = 18, dim: int = 7) -> GenerationSpec:
    """Groups split into four equal types with identical activity within a type.

    Each factor is active in exactly two of the four types, cycling through
    the six type pairs, so it is active in half of the groups.
    """
    if m_groups % 4:
        raise ValueError(f"m_groups must be divisible by 4, got {m_groups}")
    pairs = list(itertools.combinations(range(4), 2))
    type_activity = np.zeros((4, n_factors), dtype=bool)
    for k in range(n_factors):
        type_activity[list(pairs[k % len(pairs)]), k] = True
    types = tuple(m * 4 // m_groups for m in range(m_groups))
    return GenerationSpec(n=n, group_dims=(dim,) * m_groups, activity=type_activity[list(types)],
                          group_types=types, name="sec53")


def lowrank_spec_sec54(rank: int, seed: int, n: int = 50, n_factors: int = 30,
                       m_groups: int = 50, dim: int = 10, spread: float = 1.5,
                       offset: float = 2.0) -> GenerationSpec:
    """Precisions drawn from an exact rank-``rank`` log-linear model.

    ``log alpha = spread * U V^T / sqrt(rank) + offset`` with standard normal
    ``U`` and ``V``.
    """
    rng = np.random.default_rng([seed, rank])
    u = rng.standard_normal((m_groups, rank))
    v = rng.standard_normal((n_factors, rank))
    log_alpha = spread * (u @ v.T) / np.sqrt(rank) + offset
    return GenerationSpec(n=n, group_dims=(dim,) * m_groups,
                          activity=np.ones((m_groups, n_factors), dtype=bool),
                          alpha=np.exp(log_alpha), name=f"sec54-r{rank}")


@dataclass(frozen=True)
class Match:
    true_idx: np.ndarray
    est_idx: np.ndarray
    signs: np.ndarray
    cosines: np.ndarray


def cosine_matrix(w_true, w_est) -> np.ndarray:
    nt = np.linalg.norm(w_true, axis=0)
    ne = np.linalg.norm(w_est, axis=0)
    denom = np.outer(nt, ne)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(denom > 0, (w_true.T @ w_est) / np.where(denom > 0, denom, 1), 0.0)
    return np.clip(cos, -1.0, 1.0)


def match_components(w_true, w_est) -> Match:
    """Greedy one-to-one matching of columns by absolute cosine similarity."""
    cos = cosine_matrix(np.asarray(w_true, float), np.asarray(w_est, float))
    score = np.abs(cos)
    n = min(score.shape)
    rows, cols = [], []
    avail = score.copy()
    for _ in range(n):
        i, j = np.unravel_index(np.argmax(avail), avail.shape)
        rows.append(i)
        cols.append(j)
        avail[i, :] = -1
        avail[:, j] = -1
    order = np.argsort(rows)
    rows = np.asarray(rows, dtype=int)[order]
    cols = np.asarray(cols, dtype=int)[order]
    signed = cos[rows, cols]
    signs = np.where(signed < 0, -1.0, 1.0)
    return Match(rows, cols, signs, np.abs(signed))


def optimal_matching(w_true, w_est) -> Match:
    """Exhaustive maximum-total-|cosine| matching; only for small K."""
    cos = cosine_matrix(np.asarray(w_true, float), np.asarray(w_est, float))
    kt, ke = cos.shape
    best, best_pairs = -1.0, None
    if kt <= ke:
        for perm in itertools.permutations(range(ke), kt):
            s = np.abs(cos[np.arange(kt), perm]).sum()
            if s > best:
                best, best_pairs = s, (np.arange(kt), np.asarray(perm))
    else:
        for perm in itertools.permutations(range(kt), ke):
            s = np.abs(cos[perm, np.arange(ke)]).sum()
            if s > best:
                order = np.argsort(perm)
                best, best_pairs = s, (np.asarray(perm)[order], np.arange(ke)[order])
    rows, cols = best_pairs
    signed = cos[rows, cols]
    return Match(rows, cols, np.where(signed < 0, -1.0, 1.0), np.abs(signed))


def activity_from_alpha(alpha, threshold: float = 10.0) -> np.ndarray:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    return np.asarray(alpha) < threshold


def groups_per_factor(activity) -> np.ndarray:
    return np.asarray(activity).sum(axis=0)


def split_rows(dataset: GroupedDataset, n_train: int) -> tuple[GroupedDataset, GroupedDataset]:
    return dataset.subset(slice(0, n_train)), dataset.subset(slice(n_train, None))


def with_n(spec: GenerationSpec, n: int) -> GenerationSpec:
    from dataclasses import replace
    return replace(spec, n=n)
