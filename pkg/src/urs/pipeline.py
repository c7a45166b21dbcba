"""End-to-end steps shared by the command line and the acceptance suite.

Every step takes a validated :class:`~urs.config.RunConfig`; all randomness
comes from its top-level ``seed`` (dataset and reservoir draws).
"""

import json
from dataclasses import dataclass

from .errors import DataError
from .evaluation import rolling_k_step_eval
from .gem import gem_fit
from .ingest import load_and_ingest
from .online import online_fit
from .reservoir import ReservoirParams, init_reservoir
from .series import Split
from .ssm import initial_belief
from .synthetic import generate_dataset, read_bundle


@dataclass(frozen=True)
class LoadedData:
    series: object
    source: str  # "synthetic", "bundle" or "market"
    dataset: object = None  # SyntheticDataset when available
    ingest: object = None  # IngestResult for market data


def synthetic_dataset(cfg, seed=None):
    s = cfg.synthetic
    seed = cfg.seed if seed is None else seed
    return generate_dataset(cfg.cir_config(seed), s.kappa_v, cfg.data.I, s.p0, s.rate, seed,
                            cfg.dataset_options())


def load_data(cfg, seed=None):
    """Market tables if configured, else a dataset bundle, else a fresh synthetic dataset."""
    m = cfg.reservoir.m
    d = cfg.data
    if d.options is not None:
        res = load_and_ingest(d.options, d.spot, d.rates, d.I, m)
        return LoadedData(res.series, "market", ingest=res)
    if d.bundle is not None:
        ds = read_bundle(d.bundle)
        return LoadedData(ds.to_series(m), "bundle", dataset=ds)
    ds = synthetic_dataset(cfg, seed)
    return LoadedData(ds.to_series(m), "synthetic", dataset=ds)


def split(cfg, series):
    """``(train, validation, n_train)`` per the configured test and validation lengths."""
    sp = Split.from_test_length(len(series), cfg.split.n_test, cfg.split.n_val)
    train = series.slice(0, sp.n_train)
    val = series.slice(sp.n_train, sp.n_train + sp.n_val)
    return train, val, sp.n_train


def initial_state(cfg, series, p):
    return initial_belief(series.batches[0], p, cfg.reservoir.initial_var)


def train_offline(cfg, series, seed=None):
    train, val, _ = split(cfg, series)
    p = cfg.reservoir.p
    params = init_reservoir(cfg.init_config(p, cfg.seed if seed is None else seed))
    return gem_fit(train, val, params, initial_state(cfg, series, p), cfg.gem_config(), cfg.ut_config())


def train_online(cfg, series, seed=None):
    train, val, _ = split(cfg, series)
    p = cfg.online.p
    params = init_reservoir(cfg.init_config(p, cfg.seed if seed is None else seed))
    return online_fit(train, val, params, initial_state(cfg, series, p), cfg.online_config(), cfg.ut_config())


def evaluate(cfg, series, params):
    _, _, n_train = split(cfg, series)
    init = initial_state(cfg, series, params.p)
    return rolling_k_step_eval(params, init, series, n_train, cfg.split.n_val, tuple(cfg.eval.horizons),
                               tuple(cfg.eval.levels), cfg.ut_config())


def load_checkpoint(path):
    try:
        return ReservoirParams.load(path)
    except (OSError, KeyError, ValueError, TypeError, json.JSONDecodeError) as exc:
        raise DataError("cannot read checkpoint %s: %s" % (path, exc)) from exc


def study_seed(cfg, seed):
    """One synthetic-study replicate: simulate, fit offline, evaluate."""
    data = load_data(cfg, seed)
    fit = train_offline(cfg, data.series, seed)
    ev = evaluate(cfg, data.series, fit.params)
    return {
        "seed": seed,
        "mean_rel_error": {int(k): v for k, v in ev.mean_errors.items()},
        "coverage": {int(k): ev.coverage.at(cfg.eval.ci_level, k) for k in ev.horizons},
        "iv_baseline": {int(k): v for k, v in ev.baseline.items()},
        "best_iteration": fit.report.get("best_iteration"),
    }
