"""Metrics, trivial baselines, the cross-validated experiment runner,
sweeps over missing rates or hyperparameters, and ablation configurations.

Protocol: the clean dataset is scaled once, element missingness is injected
per repeat over all rows, folds are split per repeat, and label missingness
hits the training portion only (test labels stay intact for scoring).
Imputation is scored on the test fold's missing cells against the
pre-corruption values; F1 on the test fold against the clean labels.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import data, networks, training
from .data import DirtyDataset
from .errors import ConfigError, ContractError, DataError

SWEEP_HYPERPARAMETERS = ("lambda1", "lambda2", "alpha1", "alpha2", "alpha3", "alpha4",
                         "learning_rate", "n_critic", "n_cg", "batch_size", "epochs")


@dataclass
class MetricsRecord:
    run_id: str
    repeat: int
    fold: int
    epoch: int
    rmse: float
    f1: float
    rmse_zero: float
    rmse_mean: float
    loss_means: dict
    seed: int
    config_hash: str
    wall_clock: float
    axis_value: float | None = None


# -------------------------------------------------------------- metrics

def rmse_missing(x_true, x_hat, m) -> float:
    """Imputation error over missing cells, in scaled space.

    Each row with missing entries contributes the RMSE over its own missing
    coordinates; rows are then averaged. Observed cells never participate.
    """
    x_true = np.asarray(x_true, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    missing = m == 0
    if not missing.any():
        raise ContractError("rmse_missing: no missing entries to score")
    err_sq = np.where(missing, (x_true - x_hat) ** 2, 0.0)
    per_row_count = missing.sum(axis=1)
    rows = per_row_count > 0
    per_row = np.sqrt(err_sq[rows].sum(axis=1) / per_row_count[rows])
    return float(per_row.mean())


def f1_score(pred, truth, positive_class) -> float:
    """Harmonic mean of precision and recall; 0 when both are empty."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.ndim == 2:
        pred = pred.argmax(axis=1)
    if truth.ndim == 2:
        truth = truth.argmax(axis=1)
    if not (truth == positive_class).any():
        raise ContractError(f"positive class {positive_class} absent from truth")
    tp = int(((pred == positive_class) & (truth == positive_class)).sum())
    fp = int(((pred == positive_class) & (truth != positive_class)).sum())
    fn = int(((pred != positive_class) & (truth == positive_class)).sum())
    if 2 * tp + fp + fn == 0:
        return 0.0
    return 2.0 * tp / (2 * tp + fp + fn)


def baseline_impute(ds: DirtyDataset, kind: str) -> np.ndarray:
    """Fill missing cells with 0 or the column's observed mean."""
    if kind == "zero":
        return np.where(ds.M > 0, ds.X, 0.0)
    if kind == "mean":
        observed = ds.M > 0
        counts = observed.sum(axis=0)
        if (counts == 0).any():
            raise DataError("mean baseline needs at least one observed entry per column")
        means = np.where(observed, ds.X, 0.0).sum(axis=0) / counts
        return np.where(observed, ds.X, means[None, :])
    raise ConfigError(f"unknown baseline kind '{kind}'")


def config_hash(cfg: training.TrainConfig) -> str:
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def minority_class(y_onehot: np.ndarray, m_y: np.ndarray) -> int:
    counts = y_onehot[m_y > 0].sum(axis=0)
    return int(counts.argmin())


def predict_averaged(params, x, m, rng, draws: int = 16, use_imputer: bool = True):
    """Class predictions with probabilities averaged over imputation draws.

    Missing cells are completed ``draws`` times with fresh noise and the
    classifier outputs are averaged, which removes the single-draw jitter
    from rows with many missing entries.
    """
    if draws < 1:
        raise ConfigError("prediction_draws must be >= 1")
    probs = None
    for _ in range(draws):
        x_hat = training.impute_matrix(params, x, m, rng, use_imputer=use_imputer)
        p = networks.classify(params.classifier, x_hat)
        probs = p if probs is None else probs + p
    return probs.argmax(axis=1)


# ------------------------------------------------------- experiment core

def _fold_seed(master_seed: int, repeat: int, fold: int) -> int:
    return int(np.random.SeedSequence((master_seed, repeat, fold)).generate_state(1)[0])


def _column_means(ds: DirtyDataset) -> np.ndarray:
    observed = ds.M > 0
    counts = np.maximum(observed.sum(axis=0), 1)
    return np.where(observed, ds.X, 0.0).sum(axis=0) / counts


def run_single_fold(job) -> MetricsRecord:
    """One (repeat, fold) experiment; a pure function of its job tuple."""
    (clean_ds, cfg, repeat, fold_idx, k, element_rate, label_rate,
     master_seed, positive_class, run_id, prediction_draws) = job
    start = time.perf_counter()

    corrupt_seed = _fold_seed(master_seed, repeat, 0) ^ 0x5EED
    corrupted = data.inject_mcar(clean_ds, element_rate, seed=corrupt_seed)
    folds = data.kfold_split(clean_ds.n, k, seed=_fold_seed(master_seed, repeat, 1))
    test_idx = folds[fold_idx]
    train_idx = np.concatenate([f for i, f in enumerate(folds) if i != fold_idx])

    seed = _fold_seed(master_seed, repeat, fold_idx + 2)
    train_ds = data.subset(corrupted, train_idx)
    if label_rate > 0:
        train_ds = data.inject_label_missingness(train_ds, label_rate, seed=seed)
    test_ds = data.subset(corrupted, test_idx)
    test_clean_x = clean_ds.X[test_idx]
    test_truth = clean_ds.Y[test_idx].argmax(axis=1)

    cfg = replace(cfg, seed=seed)
    audit: list = []
    state, records = training.train(train_ds, cfg, audit_log=audit)
    # batch indices are train_ds-local; anything past its row count would
    # mean a test row slipped into a batch
    seen = np.unique(np.concatenate(audit)) if audit else np.array([], dtype=int)
    if seen.size and seen.max() >= train_ds.n:
        raise ContractError("training touched indices outside the training fold")

    x_hat = training.impute_matrix(state.params, test_ds.X, test_ds.M,
                                   np.random.default_rng(seed + 1),
                                   use_imputer=cfg.use_imputer)
    pos = positive_class if positive_class is not None else minority_class(train_ds.Y, train_ds.m_y)
    # score only injected cells; natively missing ones have no ground truth
    score_mask = np.where((test_ds.M == 0) & (clean_ds.M[test_idx] == 1), 0.0, 1.0)
    rmse = rmse_missing(test_clean_x, x_hat, score_mask)
    preds = predict_averaged(state.params, test_ds.X, test_ds.M,
                             np.random.default_rng(seed + 2),
                             draws=prediction_draws, use_imputer=cfg.use_imputer)
    f1 = f1_score(preds, test_truth, pos)

    train_means = _column_means(data.subset(corrupted, train_idx))
    zero_hat = np.where(test_ds.M > 0, test_ds.X, 0.0)
    mean_hat = np.where(test_ds.M > 0, test_ds.X, train_means[None, :])
    return MetricsRecord(
        run_id=run_id, repeat=repeat, fold=fold_idx, epoch=cfg.epochs,
        rmse=rmse, f1=f1,
        rmse_zero=rmse_missing(test_clean_x, zero_hat, score_mask),
        rmse_mean=rmse_missing(test_clean_x, mean_hat, score_mask),
        loss_means=records[-1].loss_means, seed=seed,
        config_hash=config_hash(cfg), wall_clock=time.perf_counter() - start)


def run_cv_experiment(clean_ds: DirtyDataset, cfg: training.TrainConfig, k: int,
                      repeats: int, element_rate: float = 0.2, label_rate: float = 0.2,
                      master_seed: int = 0, positive_class: int | None = None,
                      workers: int = 1, run_id: str = "cv",
                      prediction_draws: int = 16) -> list:
    """Corrupt, split, train and score every (repeat, fold) pair."""
    if k < 2:
        raise ConfigError("run_cv_experiment needs k >= 2")
    if repeats < 1:
        raise ConfigError("run_cv_experiment needs repeats >= 1")
    cfg.validate()
    jobs = [(clean_ds, cfg, r, f, k, element_rate, label_rate,
             master_seed, positive_class, run_id, prediction_draws)
            for r in range(repeats) for f in range(k)]
    if workers > 1:
        import multiprocessing as mp
        with mp.get_context("fork").Pool(workers) as pool:
            # chunksize 1: jobs run for minutes, so balance beats batching
            records = pool.map(run_single_fold, jobs, chunksize=1)
    else:
        records = [run_single_fold(job) for job in jobs]
    return records


def aggregate(records) -> dict:
    """Mean and standard deviation per metric over all records."""
    out = {}
    for metric in ("rmse", "f1", "rmse_zero", "rmse_mean"):
        values = np.array([getattr(r, metric) for r in records], dtype=float)
        out[metric] = (float(values.mean()), float(values.std()))
    return out


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.4f} ± {std:.4f}"


# ------------------------------------------------------------ sweeps

def apply_axis(cfg: training.TrainConfig, axis: str, value) -> training.TrainConfig:
    if axis == "missing_rate":
        return cfg  # handled by the experiment's element_rate argument
    if axis in ("lambda1", "lambda2", "alpha1", "alpha2", "alpha3", "alpha4"):
        return replace(cfg, weights=replace(cfg.weights, **{axis: float(value)}))
    if axis in ("learning_rate",):
        return replace(cfg, **{axis: float(value)})
    if axis in ("n_critic", "n_cg", "batch_size", "epochs"):
        return replace(cfg, **{axis: int(value)})
    raise ConfigError(f"unknown sweep axis '{axis}'")


def sweep(clean_ds: DirtyDataset, cfg: training.TrainConfig, axis: str, values,
          k: int = 5, repeats: int = 1, element_rate: float = 0.2,
          label_rate: float = 0.2, master_seed: int = 0,
          positive_class: int | None = None, workers: int = 1,
          prediction_draws: int = 16) -> list:
    """One CV experiment per axis value, with only that axis varied."""
    if not values:
        raise ConfigError("sweep needs at least one value")
    records = []
    for value in values:
        point_cfg = apply_axis(cfg, axis, value)
        rate = float(value) if axis == "missing_rate" else element_rate
        point = run_cv_experiment(clean_ds, point_cfg, k=k, repeats=repeats,
                                  element_rate=rate, label_rate=label_rate,
                                  master_seed=master_seed, positive_class=positive_class,
                                  workers=workers, run_id=f"{axis}={value}",
                                  prediction_draws=prediction_draws)
        for rec in point:
            rec.axis_value = float(value)
        records.extend(point)
    return records


# ---------------------------------------------------------- ablations

ABLATION_ROWS = (
    ("baseline_mlp", frozenset({"imputer", "cond_generator", "label_critic"})),
    ("no_cond_no_label", frozenset({"cond_generator", "label_critic"})),
    ("no_cond", frozenset({"cond_generator"})),
    ("no_label", frozenset({"label_critic"})),
    ("full", frozenset()),
)

_DROPPABLE = {"imputer", "cond_generator", "label_critic"}


def ablation_config(base: training.TrainConfig, drop) -> training.TrainConfig:
    """Disable components: the imputer (uniform fill instead), the
    conditional generator (no oversampling), or the label unit (no
    pseudo-label adversary, alpha4 forced to 0)."""
    drop = set(drop)
    unknown = drop - _DROPPABLE
    if unknown:
        raise ConfigError(f"cannot drop unknown components {sorted(unknown)}")
    cfg = base
    if "imputer" in drop:
        cfg = replace(cfg, use_imputer=False)
    if "cond_generator" in drop:
        cfg = replace(cfg, use_cond_generator=False)
    if "label_critic" in drop:
        cfg = replace(cfg, use_label_critic=False,
                      weights=replace(cfg.weights, alpha4=0.0))
    return cfg


# --------------------------------------------------------------- files

LONG_FIELDS = ("run_id", "repeat", "fold", "axis_value", "metric", "value")


def write_long_csv(path, records) -> None:
    """One line per (record, metric), for external plotting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LONG_FIELDS)
        for rec in records:
            base = [rec.run_id, rec.repeat, rec.fold,
                    "" if rec.axis_value is None else rec.axis_value]
            for metric in ("rmse", "f1", "rmse_zero", "rmse_mean"):
                writer.writerow(base + [metric, repr(getattr(rec, metric))])
            for name, value in sorted(rec.loss_means.items()):
                writer.writerow(base + [f"loss_{name}", repr(value)])


def write_aggregate_csv(path, rows) -> None:
    """rows: iterable of (label, aggregate-dict from ``aggregate``)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "metric", "mean", "std", "formatted"])
        for label, agg in rows:
            for metric, (mean, std) in agg.items():
                writer.writerow([label, metric, repr(mean), repr(std),
                                 format_mean_std(mean, std)])
