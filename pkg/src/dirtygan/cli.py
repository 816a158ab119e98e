"""Command-line surface: corrupt, train, impute, evaluate, sweep, ablation.

Every command is a pure function of (input files, config, seeds); artifacts
are written once into the configured output directory. Exit codes:
0 success, 2 config error, 3 data error, 4 training divergence, 5 other
contract violation.
"""

import os
import sys

# tiny-matrix workload: multithreaded BLAS only adds sync overhead
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

import functools
import json
from pathlib import Path

import click
import numpy as np

from . import data, evaluation, networks, training
from .config import RunConfig, load_config
from .errors import (ConfigError, ContractError, DataError, DirtyGanError,
                     DivergenceError)

EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE, EXIT_CONTRACT = 2, 3, 4, 5


def _fail(exc: Exception) -> int:
    click.echo(f"error: {exc}", err=True)
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_CONTRACT


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            fn(*args, **kwargs)
        except DirtyGanError as exc:
            sys.exit(_fail(exc))
    return wrapper


config_option = click.option("--config", "config_path", required=True,
                             type=click.Path(exists=True, dir_okay=False),
                             help="run configuration file")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                          help="override a config key (repeatable)")


def _load(config_path, overrides) -> RunConfig:
    return load_config(config_path, overrides)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dataset(cfg: RunConfig) -> data.DirtyDataset:
    return data.load_csv(cfg.data_path, cfg.label_column,
                         missing_token=cfg.missing_token, class_map=cfg.class_map)


@click.group()
def main():
    """GAN toolkit for tabular data with missing elements, missing labels
    and class imbalance."""


@main.command()
@config_option
@set_option
@guarded
def corrupt(config_path, overrides):
    """Inject MCAR element/label missingness; write data + mask sidecars."""
    cfg = _load(config_path, overrides)
    ds = _load_dataset(cfg)
    ds = data.inject_mcar(ds, cfg.element_rate, seed=cfg.element_seed)
    ds = data.inject_label_missingness(ds, cfg.label_rate, seed=cfg.label_seed)
    out = _outdir(cfg)

    header = list(ds.feature_names) + [cfg.label_column]
    data_path = out / "corrupted.csv"
    with open(data_path, "w", newline="", encoding="utf-8") as fh:
        import csv as _csv
        writer = _csv.writer(fh)
        writer.writerow(header)
        labels = ds.labels()
        for j in range(ds.n):
            row = [repr(float(v)) if keep else cfg.missing_token
                   for v, keep in zip(ds.X[j], ds.M[j] > 0)]
            row.append(ds.classes[labels[j]] if ds.m_y[j] > 0 else cfg.missing_token)
            writer.writerow(row)
    data.write_matrix_csv(out / "element_mask.csv", ds.M, ds.feature_names)
    data.write_matrix_csv(out / "label_mask.csv", ds.m_y[:, None], ["labeled"])
    click.echo(f"wrote {data_path}, element_mask.csv, label_mask.csv "
               f"({int(ds.M.size - ds.M.sum())} missing cells, {ds.n - ds.n_l} missing labels)")


def _export_hidden(out: Path, state, ds, epoch: int):
    labeled = ds.m_y > 0
    if not labeled.any():
        return
    rng = np.random.default_rng(epoch)
    x_l, m_l, y_l = ds.X[labeled], ds.M[labeled], ds.Y[labeled]
    h_l = networks.encode(state.params.encoder,
                          networks.fill_noise(x_l, m_l, rng.random(x_l.shape)), m_l)
    per_class = 32
    class_ids = np.repeat(np.arange(ds.n_c), per_class)
    y_c = np.eye(ds.n_c)[class_ids]
    h_c = networks.generate_hidden_conditional(
        state.params.cond_generator, rng.random((len(class_ids), state.params.d_z)), y_c)
    hidden_dir = out / "hidden"
    hidden_dir.mkdir(exist_ok=True)
    path = hidden_dir / f"epoch_{epoch + 1:04d}.csv"
    with open(path, "w", encoding="utf-8") as fh:
        width = h_l.shape[1]
        fh.write("kind,class," + ",".join(f"h{i}" for i in range(width)) + "\n")
        for kind, hs, ids in (("encoded", h_l, y_l.argmax(1)), ("conditional", h_c, class_ids)):
            for row, cid in zip(hs, ids):
                fh.write(f"{kind},{cid}," + ",".join(repr(v) for v in row) + "\n")


@main.command()
@config_option
@set_option
@guarded
def train(config_path, overrides):
    """Train on the (corrupted) dataset; write checkpoints and metrics."""
    cfg = _load(config_path, overrides)
    ds = _load_dataset(cfg)
    ds = data.minmax_scale(ds)
    clean_x = ds.X.copy()
    native_mask = ds.M.copy()
    ds = data.inject_mcar(ds, cfg.element_rate, seed=cfg.element_seed)
    ds = data.inject_label_missingness(ds, cfg.label_rate, seed=cfg.label_seed)
    # only injected cells have a known ground truth; natively missing ones don't
    injected = (ds.M == 0) & (native_mask == 1)
    score_mask = np.where(injected, 0.0, 1.0)
    out = _outdir(cfg)
    metrics_path = out / "metrics.jsonl"

    def probe(state, epoch):
        if not injected.any():
            return None
        x_hat = training.impute_matrix(state.params, ds.X, ds.M,
                                       np.random.default_rng(cfg.train.seed + epoch + 1),
                                       use_imputer=cfg.train.use_imputer)
        return evaluation.rmse_missing(clean_x, x_hat, score_mask)

    with open(metrics_path, "w", encoding="utf-8") as metrics_file:
        def on_epoch(record, state):
            line = {"epoch": record.epoch, "losses": record.loss_means,
                    "rmse": record.probe_value}
            metrics_file.write(json.dumps(line) + "\n")
            metrics_file.flush()
            every = cfg.train.checkpoint_every
            if every and (record.epoch + 1) % every == 0:
                networks.save_checkpoint(out / f"checkpoint_{record.epoch + 1:04d}.ckpt",
                                         state.params)
                if cfg.export_hidden:
                    _export_hidden(out, state, ds, record.epoch)

        state, _ = training.train(ds, cfg.train, probe=probe, on_epoch=on_epoch)
    networks.save_checkpoint(out / "checkpoint_final.ckpt", state.params)
    for event in state.events[:20]:
        click.echo(f"note: {event}")
    click.echo(f"wrote {out / 'checkpoint_final.ckpt'} and {metrics_path}")


@main.command()
@config_option
@set_option
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--output", "output_path", default=None, help="completed CSV path")
@guarded
def impute(config_path, overrides, checkpoint, output_path):
    """Complete a dataset's missing cells with a trained model."""
    cfg = _load(config_path, overrides)
    params = networks.load_checkpoint(checkpoint)
    raw = _load_dataset(cfg)
    ds = data.minmax_scale(raw)
    if params.d != ds.d:
        raise ContractError(
            f"checkpoint expects {params.d} features, dataset has {ds.d}")
    x_hat = training.impute_matrix(params, ds.X, ds.M,
                                   np.random.default_rng(cfg.train.seed))
    completed = data.unscale_matrix(ds, x_hat)
    completed = np.where(ds.M > 0, raw.X, completed)  # observed cells exactly
    out = Path(output_path) if output_path else _outdir(cfg) / "completed.csv"
    data.write_matrix_csv(out, completed, ds.feature_names)
    click.echo(f"wrote {out}")


def _print_aggregate(label: str, agg: dict):
    click.echo(f"{label}: rmse {evaluation.format_mean_std(*agg['rmse'])}   "
               f"f1 {evaluation.format_mean_std(*agg['f1'])}   "
               f"(zero {evaluation.format_mean_std(*agg['rmse_zero'])}, "
               f"mean {evaluation.format_mean_std(*agg['rmse_mean'])})")


def _positive_class_index(cfg: RunConfig, ds) -> int | None:
    if cfg.positive_class is None:
        return None
    if cfg.positive_class not in ds.classes:
        raise ConfigError(f"eval.positive_class '{cfg.positive_class}' "
                          f"not among classes {ds.classes}")
    return ds.classes.index(cfg.positive_class)


@main.command()
@config_option
@set_option
@guarded
def evaluate(config_path, overrides):
    """Cross-validated experiment: corrupt, train, score each fold."""
    cfg = _load(config_path, overrides)
    ds = data.minmax_scale(_load_dataset(cfg))
    records = evaluation.run_cv_experiment(
        ds, cfg.train, k=cfg.k_folds, repeats=cfg.repeats,
        element_rate=cfg.element_rate, label_rate=cfg.label_rate,
        master_seed=cfg.master_seed, positive_class=_positive_class_index(cfg, ds),
        workers=cfg.workers, run_id="evaluate", prediction_draws=cfg.prediction_draws)
    out = _outdir(cfg)
    evaluation.write_long_csv(out / "results_long.csv", records)
    agg = evaluation.aggregate(records)
    evaluation.write_aggregate_csv(out / "results_aggregate.csv", [("evaluate", agg)])
    _print_aggregate("evaluate", agg)


@main.command()
@config_option
@set_option
@guarded
def sweep(config_path, overrides):
    """One CV experiment per value of the configured sweep axis."""
    cfg = _load(config_path, overrides)
    if not cfg.sweep_axis or not cfg.sweep_values:
        raise ConfigError("sweep requires sweep.axis and sweep.values")
    ds = data.minmax_scale(_load_dataset(cfg))
    records = evaluation.sweep(
        ds, cfg.train, cfg.sweep_axis, cfg.sweep_values,
        k=cfg.k_folds, repeats=cfg.repeats, element_rate=cfg.element_rate,
        label_rate=cfg.label_rate, master_seed=cfg.master_seed,
        positive_class=_positive_class_index(cfg, ds), workers=cfg.workers,
        prediction_draws=cfg.prediction_draws)
    out = _outdir(cfg)
    evaluation.write_long_csv(out / "sweep_long.csv", records)
    rows = []
    for value in cfg.sweep_values:
        point = [r for r in records if r.axis_value == float(value)]
        agg = evaluation.aggregate(point)
        rows.append((f"{cfg.sweep_axis}={value}", agg))
        _print_aggregate(rows[-1][0], agg)
    evaluation.write_aggregate_csv(out / "sweep_aggregate.csv", rows)


@main.command()
@config_option
@set_option
@guarded
def ablation(config_path, overrides):
    """Retrain with components disabled and compare scores."""
    cfg = _load(config_path, overrides)
    wanted = cfg.ablation_rows or ["all"]
    if wanted == ["all"]:
        rows = list(evaluation.ABLATION_ROWS)
    else:
        by_name = dict(evaluation.ABLATION_ROWS)
        unknown = [w for w in wanted if w not in by_name]
        if unknown:
            raise ConfigError(f"unknown ablation rows {unknown}")
        rows = [(w, by_name[w]) for w in wanted]
    ds = data.minmax_scale(_load_dataset(cfg))
    pos = _positive_class_index(cfg, ds)
    out = _outdir(cfg)
    all_records, aggs = [], []
    for label, drop in rows:
        run_cfg = evaluation.ablation_config(cfg.train, drop)
        records = evaluation.run_cv_experiment(
            ds, run_cfg, k=cfg.k_folds, repeats=cfg.repeats,
            element_rate=cfg.element_rate, label_rate=cfg.label_rate,
            master_seed=cfg.master_seed, positive_class=pos,
            workers=cfg.workers, run_id=label, prediction_draws=cfg.prediction_draws)
        all_records.extend(records)
        agg = evaluation.aggregate(records)
        aggs.append((label, agg))
        _print_aggregate(label, agg)
    evaluation.write_long_csv(out / "ablation_long.csv", all_records)
    evaluation.write_aggregate_csv(out / "ablation_aggregate.csv", aggs)


if __name__ == "__main__":
    main()
