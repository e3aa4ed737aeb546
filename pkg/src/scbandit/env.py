"""Classification datasets posed as bandit problems.

Each row's class label is the single arm that pays reward 1; every other
arm pays 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .core import ConfigError, DataError, ProtocolError, RngStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Dataset:
    contexts: np.ndarray
    labels: np.ndarray
    n_classes: int
    feature_names: tuple[str, ...] = ()
    label_mapping: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "contexts", np.array(self.contexts, dtype=float))
        object.__setattr__(self, "labels", np.array(self.labels, dtype=np.int64))
        if self.contexts.ndim != 2 or self.contexts.shape[0] != self.labels.shape[0]:
            raise DataError("contexts must be an n x d matrix matching the labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError("labels must lie in [0, K)")
        self.contexts.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n(self) -> int:
        return self.contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.contexts.shape[1]

    def manifest(self) -> dict:
        return {"n": self.n, "K": self.n_classes, "d": self.dim,
                "feature_names": list(self.feature_names),
                "label_mapping": {str(k): int(v) for k, v in self.label_mapping.items()}}


def _first_appearance(values) -> dict:
    mapping: dict = {}
    for v in values:
        if v not in mapping:
            mapping[v] = len(mapping)
    return mapping


def _resolve_label_column(df: pd.DataFrame, label_column) -> str:
    if label_column in df.columns:
        return label_column
    try:
        idx = int(label_column)
    except (TypeError, ValueError):
        raise DataError(f"label column {label_column!r} not found") from None
    if not -len(df.columns) <= idx < len(df.columns):
        raise DataError(f"label column index {idx} out of range")
    return df.columns[idx]


def load_dataset(path, label_column, *, standardize: bool = True) -> Dataset:
    """Read a CSV file with a header row into a :class:`Dataset`.

    Rows with missing values are dropped.  Numeric feature columns are kept
    (z-scored when ``standardize``); other feature columns become one-hot
    blocks with categories ordered by first appearance.  Labels are mapped
    to arm ids in order of first appearance.
    """
    try:
        df = pd.read_csv(path, skipinitialspace=True, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    label_col = _resolve_label_column(df, label_column)
    before = len(df)
    df = df.dropna(axis=0, how="any").reset_index(drop=True)
    if len(df) < before:
        log.info("dropped %d rows with missing values from %s", before - len(df), path)
    if len(df) == 0:
        raise DataError(f"{path}: no usable rows")

    mapping = _first_appearance(df[label_col].tolist())
    if len(mapping) < 2:
        raise DataError(f"{path}: label column {label_col!r} has fewer than 2 classes")
    labels = np.array([mapping[v] for v in df[label_col]], dtype=np.int64)

    blocks, names = [], []
    for col in df.columns:
        if col == label_col:
            continue
        series = df[col]
        if pd.api.types.is_numeric_dtype(series) and not pd.api.types.is_bool_dtype(series):
            x = series.to_numpy(dtype=float)
            if standardize:
                sd = x.std()
                x = (x - x.mean()) / sd if sd > 0 else x - x.mean()
            blocks.append(x[:, None])
            names.append(str(col))
        else:
            values = series.astype(str).tolist()
            cats = _first_appearance(values)
            onehot = np.zeros((len(values), len(cats)))
            onehot[np.arange(len(values)), [cats[v] for v in values]] = 1.0
            blocks.append(onehot)
            names.extend(f"{col}={c}" for c in cats)
    if not blocks:
        raise DataError(f"{path}: no feature columns")
    contexts = np.hstack(blocks)
    if not np.all(np.isfinite(contexts)):
        raise DataError(f"{path}: non-finite feature values")
    return Dataset(contexts, labels, len(mapping), tuple(names),
                   {str(k): v for k, v in mapping.items()})


class ClassificationEnv:
    """Emits one dataset row per step and reveals a 0/1 reward for one arm.

    With ``sampling="cycle"`` rows are visited in a fresh random permutation
    each pass through the data; ``"replace"`` draws rows i.i.d. with
    replacement.
    """

    def __init__(self, dataset: Dataset, horizon: int, rng: RngStream, sampling: str = "cycle"):
        if sampling not in ("cycle", "replace"):
            raise ConfigError(f"unknown sampling mode {sampling!r}")
        if horizon < 1:
            raise ConfigError("horizon must be positive")
        self.dataset = dataset
        self.horizon = horizon
        self.rng = rng
        self.sampling = sampling
        self.t = 0
        self.row: int | None = None
        self._perm = np.empty(0, dtype=np.int64)
        self._pos = 0
        self._rewarded = True

    def _next_row(self) -> int:
        if self.sampling == "replace":
            return int(self.rng.integers(self.dataset.n))
        if self._pos >= self._perm.size:
            self._perm = self.rng.permutation(self.dataset.n)
            self._pos = 0
        row = int(self._perm[self._pos])
        self._pos += 1
        return row

    def step(self) -> np.ndarray:
        if self.t >= self.horizon:
            raise ProtocolError("environment is past its horizon")
        if not self._rewarded:
            raise ProtocolError("previous context was never rewarded")
        self.row = self._next_row()
        self.t += 1
        self._rewarded = False
        return self.dataset.contexts[self.row]

    @property
    def true_arm(self) -> int:
        if self.row is None:
            raise ProtocolError("no context emitted yet")
        return int(self.dataset.labels[self.row])

    def reward(self, arm: int) -> int:
        if self.row is None or self._rewarded:
            raise ProtocolError("reward requested without a fresh context")
        self._rewarded = True
        return int(arm == self.true_arm)


def make_linear_threshold_dataset(n: int, dim: int, n_classes: int, rng: RngStream) -> Dataset:
    """Gaussian contexts labelled by ``argmax(W x)`` for a random Gaussian ``W``."""
    X = rng.standard_normal((n, dim))
    W = rng.standard_normal((n_classes, dim))
    labels = np.argmax(X @ W.T, axis=1).astype(np.int64)
    return Dataset(X, labels, n_classes, tuple(f"x{i}" for i in range(dim)),
                   {str(k): k for k in range(n_classes)})


def make_marginal_dataset(n: int, dim: int, priors, rng: RngStream) -> Dataset:
    """Labels drawn from ``priors`` independently of Gaussian contexts."""
    priors = np.asarray(priors, dtype=float)
    X = rng.standard_normal((n, dim))
    labels = rng.choice(priors.size, size=n, p=priors / priors.sum()).astype(np.int64)
    return Dataset(X, labels, priors.size, tuple(f"x{i}" for i in range(dim)),
                   {str(k): k for k in range(priors.size)})


def write_dataset_csv(dataset: Dataset, path, label_name: str = "label") -> None:
    df = pd.DataFrame(dataset.contexts, columns=list(dataset.feature_names) or None)
    df[label_name] = dataset.labels
    df.to_csv(Path(path), index=False, float_format="%.17g")
