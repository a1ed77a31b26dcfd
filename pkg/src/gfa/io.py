"""File formats: CSV data with a JSON group sidecar, and JSON model documents."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .model import (
    DatasetError,
    FittedModel,
    FullRankAlpha,
    GroupedDataset,
    Hyperparameters,
    InnerOptSettings,
    LowRankAlpha,
    PosteriorState,
    build_dataset,
)

MODEL_FORMAT = "gfa-model/1"


class SchemaError(ValueError):
    """A file does not match the expected layout; the message names the file and field."""


def read_matrix_csv(path) -> tuple[np.ndarray, Optional[list[str]]]:
    path = Path(path)
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    header = None
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    width = len(rows[0]) if rows else 0
    values = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise SchemaError(f"{path}: row {i + 1} has {len(row)} fields, expected {width}")
        try:
            values[i] = [float(c) for c in row]
        except ValueError as exc:
            raise SchemaError(f"{path}: row {i + 1}: {exc}") from None
    return values, header


def write_matrix_csv(path, matrix: np.ndarray, header: Optional[list[str]] = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header is not None:
            w.writerow(header)
        for row in np.atleast_2d(matrix):
            w.writerow([repr(float(x)) for x in row])


def read_groups_json(path) -> tuple[list[int], list[str]]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    groups = doc.get("groups") if isinstance(doc, dict) else None
    if not isinstance(groups, list) or not groups:
        raise SchemaError(f"{path}: field 'groups' must be a non-empty list")
    dims, names = [], []
    for i, g in enumerate(groups):
        if not isinstance(g, dict) or not isinstance(g.get("dim"), int) or g["dim"] < 1:
            raise SchemaError(f"{path}: groups[{i}].dim must be a positive integer")
        dims.append(g["dim"])
        names.append(str(g.get("name", f"g{i}")))
    return dims, names


def write_groups_json(path, dims, names=None):
    names = names or [f"g{m}" for m in range(len(dims))]
    doc = {"groups": [{"name": n, "dim": int(d)} for n, d in zip(names, dims)]}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_dataset(csv_path, groups_path) -> GroupedDataset:
    data, _ = read_matrix_csv(csv_path)
    dims, names = read_groups_json(groups_path)
    try:
        return build_dataset(data, dims, names)
    except DatasetError as exc:
        raise SchemaError(f"{csv_path} with {groups_path}: {exc}") from None


def save_dataset(dataset: GroupedDataset, directory, stem: str = "data"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix_csv(directory / f"{stem}.csv", dataset.data)
    write_groups_json(directory / "groups.json", dataset.group_dims, dataset.group_names)


def _arr(x) -> list:
    return np.asarray(x).tolist()


def model_to_json(model: FittedModel) -> dict:
    s = model.state
    if isinstance(s.alpha, LowRankAlpha):
        alpha = {"variant": "LowRank", "u": _arr(s.alpha.u), "v": _arr(s.alpha.v),
                 "mu_u": _arr(s.alpha.mu_u), "mu_v": _arr(s.alpha.mu_v),
                 "log_cap": s.alpha.log_cap, "rank": s.alpha.rank}
    else:
        alpha = {"variant": "FullRank", "a_alpha": _arr(s.alpha.a_alpha),
                 "b_alpha": _arr(s.alpha.b_alpha)}
    return {
        "format": MODEL_FORMAT,
        "hyperparameters": asdict(model.hyper),
        "seed": model.seed,
        "converged": model.converged,
        "elbo_trace": list(model.elbo_trace),
        "column_means": _arr(model.column_means),
        "column_scales": None if model.column_scales is None else _arr(model.column_scales),
        "group_dims": list(s.group_dims),
        "group_names": None if model.group_names is None else list(model.group_names),
        "state": {
            "active_k": s.active_k,
            "z_mean": _arr(s.z_mean),
            "z_cov": _arr(s.z_cov),
            "w_mean": _arr(s.w_mean),
            "w_cov": _arr(s.w_cov),
            "tau_a": _arr(s.tau_a),
            "tau_b": _arr(s.tau_b),
            "alpha": alpha,
        },
    }


def _field(doc, key, where):
    if key not in doc:
        raise SchemaError(f"{where}: missing field '{key}'")
    return doc[key]


def _matrix(doc, key, where, ndim):
    value = np.asarray(_field(doc, key, where), dtype=float)
    if value.ndim != ndim and value.size:
        raise SchemaError(f"{where}: field '{key}' must be {ndim}-dimensional")
    return value


def model_from_json(doc: dict, where: str = "model") -> FittedModel:
    if doc.get("format") != MODEL_FORMAT:
        raise SchemaError(f"{where}: field 'format' must be {MODEL_FORMAT!r}, got {doc.get('format')!r}")
    hp = dict(_field(doc, "hyperparameters", where))
    hp["inner_opt"] = InnerOptSettings(**hp.get("inner_opt", {}))
    hyper = Hyperparameters(**hp)
    st = _field(doc, "state", where)
    k = int(_field(st, "active_k", where + ".state"))
    a = _field(st, "alpha", where + ".state")
    if a.get("variant") == "LowRank":
        m = len(doc["group_dims"])
        r = int(a.get("rank", 0))
        alpha = LowRankAlpha(
            np.asarray(a["u"], dtype=float).reshape(m, r),
            np.asarray(a["v"], dtype=float).reshape(k, r),
            np.asarray(a["mu_u"], dtype=float), np.asarray(a["mu_v"], dtype=float),
            float(a["log_cap"]))
    elif a.get("variant") == "FullRank":
        alpha = FullRankAlpha(np.asarray(a["a_alpha"], dtype=float), np.asarray(a["b_alpha"], dtype=float))
    else:
        raise SchemaError(f"{where}.state.alpha: unknown variant {a.get('variant')!r}")
    dims = tuple(int(d) for d in _field(doc, "group_dims", where))
    n_feat = sum(dims)
    state = PosteriorState(
        z_mean=_matrix(st, "z_mean", where + ".state", 2).reshape(-1, k),
        z_cov=_matrix(st, "z_cov", where + ".state", 2).reshape(k, k),
        w_mean=_matrix(st, "w_mean", where + ".state", 2).reshape(n_feat, k),
        w_cov=_matrix(st, "w_cov", where + ".state", 3).reshape(len(dims), k, k),
        tau_a=_matrix(st, "tau_a", where + ".state", 1),
        tau_b=_matrix(st, "tau_b", where + ".state", 1),
        alpha=alpha,
        group_dims=dims,
    )
    try:
        state.check()
    except Exception as exc:
        raise SchemaError(f"{where}.state: {exc}") from None
    scales = doc.get("column_scales")
    names = doc.get("group_names")
    return FittedModel(
        state=state,
        column_means=np.asarray(_field(doc, "column_means", where), dtype=float),
        hyper=hyper,
        elbo_trace=tuple(float(x) for x in _field(doc, "elbo_trace", where)),
        converged=bool(_field(doc, "converged", where)),
        seed=int(_field(doc, "seed", where)),
        column_scales=None if scales is None else np.asarray(scales, dtype=float),
        group_names=None if names is None else tuple(names),
    )


def save_model(model: FittedModel, path):
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path) -> FittedModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return model_from_json(doc, str(path))
