"""Command line: ``urs <command> [options]``.

Commands write into ``--out-dir`` together with the resolved configuration
(``config.json``).  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.  Failures print a JSON error document to stderr
and, when possible, to ``error.json`` in the output directory.
"""

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.stats import norm

from . import pipeline, plotting
from .config import RunConfig
from .errors import ConfigError, ContractError, DataError, DomainError, NumericalError, ShapeError, UrsError
from .evaluation import write_coverage_csv, write_error_table, write_errors_csv, write_records_csv, \
    write_summary_json
from .ingest import export_market, load_and_ingest
from .online import export_online_csv
from .ssm import ReservoirModel, export_trajectory_csv, forward_filter, k_step_predict
from .synthetic import read_bundle, write_bundle

log = logging.getLogger("urs")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 2, 3, 4, 1


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, ContractError, ShapeError)):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    if isinstance(exc, (NumericalError, DomainError)):
        return EXIT_NUMERICAL
    return EXIT_INTERNAL


def error_document(exc, code):
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, ConfigError):
        doc["problems"] = exc.problems
    if isinstance(exc, DataError):
        doc["diagnostics"] = exc.diagnostics
    return doc


# ---------------------------------------------------------------------------
# helpers


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _write_json(path, data):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError("not serializable: %r" % type(x))


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _trajectory_plot(path, csv_path, data, level):
    rows = _read_csv(csv_path)
    t = np.array([int(r["t"]) for r in rows])
    col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
    truth = None
    if data.dataset is not None:
        gt = data.dataset.ground_truth
        truth = (np.arange(gt.size), gt)
    plotting.trajectory_figure(path, t, col("sigma_mean"), col("sigma_lo"), col("sigma_hi"), truth,
                               level=level)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg, args):
    ds = pipeline.synthetic_dataset(cfg)
    out = os.path.join(args.out_dir, "dataset")
    write_bundle(ds, out)
    outputs = {"bundle": out}
    if args.market:
        outputs["market"] = export_market(ds, os.path.join(args.out_dir, "market"))
    return outputs


def cmd_export_market(cfg, args):
    bundle = args.bundle or cfg.data.bundle
    if bundle is None:
        raise ConfigError(["export-market needs --bundle"])
    ds = read_bundle(bundle)
    return {"market": export_market(ds, os.path.join(args.out_dir, "market"), rate_percent=args.percent)}


def cmd_ingest(cfg, args):
    d = cfg.data
    if d.options is None:
        raise ConfigError(["ingest needs --options, --spot and --rates"])
    res = load_and_ingest(d.options, d.spot, d.rates, d.I, cfg.reservoir.m)
    rows = []
    for date, batch in zip(res.dates, res.series.batches):
        for i in range(batch.size):
            rows.append([date.isoformat(), i, repr(float(batch.spot[i])), repr(float(batch.rate[i])),
                         repr(float(batch.strike[i])), repr(float(batch.maturity[i])),
                         repr(float(batch.prices[i]))])
    obs = os.path.join(args.out_dir, "observations.csv")
    _write_rows(obs, ["date", "i", "spot", "rate", "strike", "maturity", "price"], rows)
    inp = os.path.join(args.out_dir, "inputs.csv")
    _write_rows(inp, ["date"] + ["r_lag%d" % j for j in range(res.series.inputs.shape[1] - 1, -1, -1)],
                [[dt.isoformat()] + [repr(float(x)) for x in u] for dt, u in zip(res.dates, res.series.inputs)])
    report = {"dates": len(res.dates), "first": res.dates[0].isoformat(), "last": res.dates[-1].isoformat(),
              "dropped": res.dropped, "warnings": res.warnings, "rate_percent": res.rate_percent}
    _write_json(os.path.join(args.out_dir, "ingest_report.json"), report)
    return {"observations": obs, "inputs": inp}


def cmd_train_offline(cfg, args):
    data = pipeline.load_data(cfg)
    fit = pipeline.train_offline(cfg, data.series)
    ckpt = os.path.join(args.out_dir, "params.json")
    fit.params.save(ckpt)
    report = dict(fit.report, source=data.source, n_steps=len(data.series))
    _write_json(os.path.join(args.out_dir, "fit_report.json"), report)
    train, _, _ = pipeline.split(cfg, data.series)
    traj_csv = os.path.join(args.out_dir, "trajectory.csv")
    model = ReservoirModel(fit.params)
    export_trajectory_csv(traj_csv, fit.trajectory, model, train.batches, cfg.eval.ci_level, cfg.ut_config())
    _trajectory_plot(os.path.join(args.out_dir, "trajectory.png"), traj_csv, data, cfg.eval.ci_level)
    plotting.loss_figure(os.path.join(args.out_dir, "loss.png"), fit.report["iterations"])
    return {"checkpoint": ckpt, "trajectory": traj_csv}


def cmd_train_online(cfg, args):
    data = pipeline.load_data(cfg)
    res = pipeline.train_online(cfg, data.series)
    ckpt = os.path.join(args.out_dir, "params.json")
    res.params.save(ckpt)
    _write_json(os.path.join(args.out_dir, "online_report.json"), dict(res.report, source=data.source))
    traj_csv = os.path.join(args.out_dir, "online_trajectory.csv")
    export_online_csv(traj_csv, res, cfg.eval.ci_level)
    _trajectory_plot(os.path.join(args.out_dir, "trajectory.png"), traj_csv, data, cfg.eval.ci_level)
    return {"checkpoint": ckpt, "trajectory": traj_csv}


def cmd_forecast(cfg, args):
    """Filter up to ``--origin`` and forecast ``--horizon`` steps without updates."""
    params = pipeline.load_checkpoint(args.checkpoint)
    data = pipeline.load_data(cfg)
    n = len(data.series)
    horizon = args.horizon or max(cfg.eval.horizons)
    origin = n - horizon if args.origin is None else args.origin
    if not 1 <= origin or origin + horizon > n:
        raise ContractError("origin %d with horizon %d does not fit a series of %d steps" % (origin, horizon, n))
    s, ut = data.series, cfg.ut_config()
    model = ReservoirModel(params)
    init = pipeline.initial_state(cfg, s, params.p)
    post = forward_filter(model, init, s.inputs[:origin], s.batches[:origin], ut).final
    fc = k_step_predict(model, post, s.inputs[origin:origin + horizon],
                        [b.without_prices() for b in s.batches[origin:origin + horizon]], ut)
    z = norm.ppf(0.5 + cfg.eval.ci_level / 2.0)
    rows = []
    for f in fc:
        b = s.batches[origin + f.horizon - 1]
        mu, sd = float(f.sigma.mean[0]), float(np.sqrt(f.sigma.cov[0, 0]))
        for i in range(b.size):
            psd = float(np.sqrt(f.price.cov[i, i]))
            rows.append([origin, f.horizon, i, "%.10g" % mu, "%.10g" % (mu - z * sd), "%.10g" % (mu + z * sd),
                         "%.10g" % f.price.mean[i], "%.10g" % (f.price.mean[i] - z * psd),
                         "%.10g" % (f.price.mean[i] + z * psd), "%.10g" % b.prices[i]])
    path = os.path.join(args.out_dir, "forecast.csv")
    _write_rows(path, ["origin", "horizon", "i", "sigma_mean", "sigma_lo", "sigma_hi", "price_mean",
                       "price_lo", "price_hi", "realized"], rows)
    return {"forecast": path}


def cmd_evaluate(cfg, args):
    params = pipeline.load_checkpoint(args.checkpoint)
    data = pipeline.load_data(cfg)
    before = params.fingerprint()
    ev = pipeline.evaluate(cfg, data.series, params)
    if params.fingerprint() != before:
        raise NumericalError("evaluation modified the parameters")
    out = args.out_dir
    table = os.path.join(out, "errors.csv")
    rows = [("URS", ev.mean_errors)]
    if ev.baseline:
        rows.append(("calibrated implied vol", ev.baseline))
    write_error_table(table, rows, ev.horizons)
    write_errors_csv(os.path.join(out, "error_by_horizon.csv"), ev)
    write_coverage_csv(os.path.join(out, "coverage.csv"), ev.coverage)
    write_records_csv(os.path.join(out, "records.csv"), ev)
    write_summary_json(os.path.join(out, "summary.json"), ev,
                       {"source": data.source, "checkpoint_sha256": before})
    plotting.coverage_figure(os.path.join(out, "coverage.png"), ev.coverage)
    plotting.error_by_horizon_figure(os.path.join(out, "errors.png"), ev.mean_errors, ev.baseline)
    return {"table": table}


def _study_worker(payload):
    cfg_dict, seed = payload
    return pipeline.study_seed(RunConfig.from_dict(cfg_dict), seed)


def cmd_synthetic_study(cfg, args):
    """Repeat simulate, train-offline and evaluate over ``eval.seeds`` seeds."""
    seeds = [cfg.seed + i for i in range(cfg.eval.seeds)]
    payload = [(cfg.to_dict(), s) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_study_worker, payload))
    else:
        results = [_study_worker(p) for p in payload]
    hs = [int(k) for k in cfg.eval.horizons]
    mean = {k: float(np.mean([r["mean_rel_error"][k] for r in results])) for k in hs}
    cov = {k: float(np.mean([r["coverage"][k] for r in results])) for k in hs}
    base = {k: float(np.nanmean([r["iv_baseline"][k] for r in results])) for k in hs}
    table = os.path.join(args.out_dir, "errors.csv")
    write_error_table(table, [("URS", mean), ("calibrated implied vol", base)], hs)
    _write_rows(os.path.join(args.out_dir, "coverage.csv"), ["horizon", "level", "mean_observed"],
                [[k, "%.2f" % cfg.eval.ci_level, "%.10g" % cov[k]] for k in hs])
    _write_rows(os.path.join(args.out_dir, "per_seed.csv"),
                ["seed"] + ["err_k%d" % k for k in hs] + ["cov_k%d" % k for k in hs],
                [[r["seed"]] + ["%.10g" % r["mean_rel_error"][k] for k in hs]
                 + ["%.10g" % r["coverage"][k] for k in hs] for r in results])
    _write_json(os.path.join(args.out_dir, "summary.json"),
                {"seeds": seeds, "mean_rel_error": mean, "coverage": cov, "iv_baseline": base})
    plotting.error_by_horizon_figure(os.path.join(args.out_dir, "errors.png"), mean, base)
    return {"table": table}


COMMANDS = {
    "simulate": (cmd_simulate, "generate a synthetic CIR option dataset"),
    "export-market": (cmd_export_market, "write a dataset bundle in the market CSV schema"),
    "ingest": (cmd_ingest, "parse market option, spot and rate tables"),
    "train-offline": (cmd_train_offline, "fit the reservoir by generalized EM"),
    "train-online": (cmd_train_online, "fit the reservoir by joint filtering of weights and state"),
    "forecast": (cmd_forecast, "k-step forecasts from a checkpoint"),
    "evaluate": (cmd_evaluate, "rolling k-step evaluation of a checkpoint"),
    "synthetic-study": (cmd_synthetic_study, "repeat simulate/train/evaluate over several seeds"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="top-level seed (overrides the configuration)")
    common.add_argument("--out-dir", default="urs-out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for multi-seed commands")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override a configuration value (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--bundle", help="synthetic dataset bundle directory")
    data.add_argument("--options", help="market options CSV")
    data.add_argument("--spot", help="market spot CSV")
    data.add_argument("--rates", help="market rates CSV")
    data.add_argument("--top", type=int, dest="I", help="options kept per date")

    parser = argparse.ArgumentParser(prog="urs", description="Unscented reservoir smoother")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_, parents=[common, data])
        if name == "simulate":
            p.add_argument("--market", action="store_true", help="also export the market CSV schema")
        if name == "export-market":
            p.add_argument("--percent", action="store_true", help="write rates in percent")
        if name in ("forecast", "evaluate"):
            p.add_argument("--checkpoint", required=True, help="params.json from a training command")
        if name == "forecast":
            p.add_argument("--origin", type=int, help="number of observed steps before forecasting")
            p.add_argument("--horizon", type=int, help="forecast steps (default: largest eval horizon)")
    return parser


def resolve_config(args):
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    sets = list(args.set)
    if args.seed is not None:
        sets.append("seed=%d" % args.seed)
    for key in ("bundle", "options", "spot", "rates"):
        val = getattr(args, key, None)
        if val is not None:
            sets.append("data.%s=%s" % (key, json.dumps(val)))
    if getattr(args, "I", None) is not None:
        sets.append("data.I=%d" % args.I)
    return cfg.with_overrides(sets) if sets else cfg.validate()


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        if args.jobs < 1:
            raise ConfigError(["--jobs must be at least 1"])
        cfg = resolve_config(args)
        os.makedirs(args.out_dir, exist_ok=True)
        cfg.save(os.path.join(args.out_dir, "config.json"))
        outputs = func(cfg, args)
    except Exception as exc:  # every failure leaves a machine-readable record
        if isinstance(exc, UrsError):
            code = exit_code_for(exc)
        elif isinstance(exc, OSError):
            code = EXIT_DATA
        else:
            log.exception("unexpected failure")
            code = EXIT_INTERNAL
        doc = error_document(exc, code)
        print(json.dumps(doc, default=_json_default), file=sys.stderr)
        try:
            if os.path.isdir(args.out_dir):
                _write_json(os.path.join(args.out_dir, "error.json"), doc)
        except OSError:
            pass
        return code
    log.info("outputs: %s", outputs)
    print(json.dumps({"command": args.command, "outputs": outputs}, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
