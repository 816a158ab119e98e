"""CSV ingestion, [0,1] scaling, MCAR corruption, CV folds and batches.

Missing cells are stored as 0 under an element mask M (1 = observed);
downstream code must consult the mask, never sentinel values. Datasets are
immutable after construction (arrays are frozen), so every stage returns a
new object.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ContractError, DataError


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DirtyDataset:
    """A feature table with element and label missingness.

    X: (n, d) float64, observed entries in [0,1] once scaled, 0 where missing
    Y: (n, n_c) one-hot rows where labeled, zero rows otherwise
    M: (n, d) element mask, 1 = observed
    m_y: (n,) label mask, 1 = labeled
    col_min/col_max: per-column scaler fitted over observed entries (or None)
    """

    X: np.ndarray
    Y: np.ndarray
    M: np.ndarray
    m_y: np.ndarray
    classes: tuple
    feature_names: tuple
    col_min: np.ndarray | None = None
    col_max: np.ndarray | None = None

    def __post_init__(self):
        for name in ("X", "Y", "M", "m_y"):
            object.__setattr__(self, name, _frozen(np.asarray(getattr(self, name), dtype=np.float64)))
        if self.col_min is not None:
            object.__setattr__(self, "col_min", _frozen(np.asarray(self.col_min, dtype=np.float64)))
            object.__setattr__(self, "col_max", _frozen(np.asarray(self.col_max, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_c(self) -> int:
        return self.Y.shape[1]

    @property
    def n_l(self) -> int:
        return int(self.m_y.sum())

    def labels(self) -> np.ndarray:
        """Class index per row (-1 where unlabeled)."""
        ids = self.Y.argmax(axis=1)
        return np.where(self.m_y > 0, ids, -1)


@dataclass
class Batch:
    x: np.ndarray
    m: np.ndarray
    y: np.ndarray
    m_y: np.ndarray
    z: np.ndarray
    indices: np.ndarray


def load_csv(path, label_column: str, missing_token: str = "NA", class_map: dict | None = None) -> DirtyDataset:
    """Parse a headered CSV into a DirtyDataset.

    Cells equal to ``missing_token`` or empty become missing (M=0, X=0).
    Labels are mapped through ``class_map`` (e.g. {"2": "pos", "3": "pos"})
    before one-hot encoding by sorted distinct value order; rows with a
    missing label get m_y=0.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if label_column not in header:
        raise ConfigError(f"label column '{label_column}' not in header {header}")
    label_idx = header.index(label_column)
    feature_names = tuple(h for i, h in enumerate(header) if i != label_idx)

    n, d = len(rows), len(feature_names)
    X = np.zeros((n, d))
    M = np.ones((n, d))
    raw_labels: list[str | None] = []
    for j, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"{path}: row {j + 2} has {len(row)} cells, expected {len(header)}")
        i = 0
        for col, cell in enumerate(row):
            cell = cell.strip()
            if col == label_idx:
                raw_labels.append(None if cell in ("", missing_token) else cell)
                continue
            if cell in ("", missing_token):
                M[j, i] = 0.0
            else:
                try:
                    X[j, i] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: unparseable cell at row {j + 2}, column '{header[col]}': {cell!r}"
                    ) from None
            i += 1

    if class_map:
        raw_labels = [class_map.get(lab, lab) if lab is not None else None for lab in raw_labels]
    classes = tuple(sorted({lab for lab in raw_labels if lab is not None}))
    if len(classes) < 2:
        raise ConfigError(f"label column '{label_column}' has {len(classes)} distinct class(es); need >= 2")
    class_pos = {c: k for k, c in enumerate(classes)}

    Y = np.zeros((n, len(classes)))
    m_y = np.zeros(n)
    for j, lab in enumerate(raw_labels):
        if lab is not None:
            Y[j, class_pos[lab]] = 1.0
            m_y[j] = 1.0
    return DirtyDataset(X=X, Y=Y, M=M, m_y=m_y, classes=classes, feature_names=feature_names)


def from_arrays(X, y_ids, classes, feature_names=None) -> DirtyDataset:
    """Build a fully observed, fully labeled dataset from arrays."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    y_ids = np.asarray(y_ids, dtype=int)
    Y = np.zeros((n, len(classes)))
    Y[np.arange(n), y_ids] = 1.0
    names = tuple(feature_names) if feature_names else tuple(f"f{i}" for i in range(d))
    return DirtyDataset(X=X, Y=Y, M=np.ones((n, d)), m_y=np.ones(n),
                        classes=tuple(classes), feature_names=names)


def minmax_scale(ds: DirtyDataset) -> DirtyDataset:
    """Map observed entries to [0,1] per column; constant columns map to 0.

    Min/max are computed over observed entries only, and stored so the
    mapping can be inverted.
    """
    observed = ds.M > 0
    counts = observed.sum(axis=0)
    if (counts == 0).any():
        empty = ds.feature_names[int(np.argmin(counts))]
        raise DataError(f"column '{empty}' has no observed entries; cannot scale")
    masked = np.where(observed, ds.X, np.nan)
    col_min = np.nanmin(masked, axis=0)
    col_max = np.nanmax(masked, axis=0)
    span = np.where(col_max > col_min, col_max - col_min, 1.0)
    scaled = np.where(observed, (ds.X - col_min) / span, 0.0)
    return replace(ds, X=scaled, col_min=col_min, col_max=col_max)


def unscale_matrix(ds: DirtyDataset, matrix: np.ndarray) -> np.ndarray:
    """Invert the stored min/max mapping on a completed (n, d) matrix."""
    if ds.col_min is None:
        raise ContractError("dataset has no stored scaler; call minmax_scale first")
    span = np.where(ds.col_max > ds.col_min, ds.col_max - ds.col_min, 1.0)
    return matrix * span + ds.col_min


def inject_mcar(ds: DirtyDataset, rate: float, seed: int) -> DirtyDataset:
    """Flip each observed element to missing independently with probability rate."""
    if not 0 <= rate < 1:
        raise ConfigError(f"missing rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    flips = rng.random(ds.X.shape) < rate
    M = np.where(flips, 0.0, ds.M)
    X = np.where(M > 0, ds.X, 0.0)
    return replace(ds, X=X, M=M)


def inject_label_missingness(ds: DirtyDataset, rate: float, seed: int) -> DirtyDataset:
    """As inject_mcar, but on the label mask; unlabeled rows get zero Y rows."""
    if not 0 <= rate < 1:
        raise ConfigError(f"missing rate must be in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    flips = rng.random(ds.m_y.shape) < rate
    m_y = np.where(flips, 0.0, ds.m_y)
    Y = np.where(m_y[:, None] > 0, ds.Y, 0.0)
    return replace(ds, Y=Y, m_y=m_y)


def kfold_split(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Random permutation of [0, n) cut into k near-equal disjoint folds."""
    if not 2 <= k <= n:
        raise ConfigError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [fold.copy() for fold in np.array_split(perm, k)]


def subset(ds: DirtyDataset, indices) -> DirtyDataset:
    indices = np.asarray(indices, dtype=int)
    return replace(ds, X=ds.X[indices], Y=ds.Y[indices], M=ds.M[indices], m_y=ds.m_y[indices])


def sample_batch(ds: DirtyDataset, indices, rng: np.random.Generator) -> Batch:
    """Gather rows and draw fresh uniform noise; z is redrawn on every call."""
    indices = np.asarray(indices, dtype=int)
    if indices.size and (indices.min() < 0 or indices.max() >= ds.n):
        raise ContractError(f"batch indices out of range for n={ds.n}")
    z = rng.random((indices.size, ds.d))
    return Batch(x=ds.X[indices].copy(), m=ds.M[indices].copy(), y=ds.Y[indices].copy(),
                 m_y=ds.m_y[indices].copy(), z=z, indices=indices)


def write_matrix_csv(path, matrix: np.ndarray, header) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(header))
        for row in np.asarray(matrix):
            writer.writerow([repr(float(v)) for v in row])


def synthetic_two_gaussians(n: int, d: int, seed: int, minority_fraction: float = 0.35,
                            separation: float = 2.0) -> DirtyDataset:
    """Two spherical Gaussian blobs in d dimensions, scaled to [0,1].

    A correlated synthetic set where imputation from context is possible,
    used by the missing-rate robustness checks.
    """
    rng = np.random.default_rng(seed)
    n_min = max(1, int(round(n * minority_fraction)))
    labels = np.array([0] * (n - n_min) + [1] * n_min)
    rng.shuffle(labels)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    centers = np.outer(np.where(labels == 0, -separation / 2, separation / 2), direction)
    X = centers + 0.5 * rng.standard_normal((n, d))
    ds = from_arrays(X, labels, classes=("a", "b"))
    return minmax_scale(ds)
