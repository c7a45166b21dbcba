"""Rolling-origin k-step forecasting protocol, relative errors and coverage."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ContractError, DomainError, UrsError
from .pricing import call_price, implied_vol
from .ssm import as_model, forward_filter, k_step_predict, predict, update
from .unscented import UtConfig

DEFAULT_HORIZONS = (1, 5, 10, 15, 20)
DEFAULT_LEVELS = tuple(np.round(np.arange(0.05, 1.0, 0.05), 2))


def relative_error_step(predicted, realized):
    """Mean over options of ``|predicted - realized| / realized``."""
    predicted = np.asarray(predicted, dtype=float)
    realized = np.asarray(realized, dtype=float)
    if predicted.shape != realized.shape:
        raise ContractError("predicted and realized differ in shape")
    if np.any(realized <= 0):
        raise DomainError("realized prices must be positive")
    return float(np.mean(np.abs(predicted - realized) / realized))


@dataclass(frozen=True)
class ForecastRecord:
    origin: int  # number of observed steps when the forecast was made
    horizon: int
    predicted: np.ndarray
    predicted_var: np.ndarray
    realized: np.ndarray
    sigma_mean: float
    sigma_var: float
    truth: float = None

    @property
    def error(self):
        return relative_error_step(self.predicted, self.realized)


@dataclass(frozen=True)
class CoverageCurve:
    """Observed coverage of central intervals; ``observed[k]`` aligns with ``levels``."""

    levels: tuple
    observed: dict
    target: str  # "volatility" or "price"

    def at(self, level, horizon):
        i = int(np.argmin(np.abs(np.asarray(self.levels) - level)))
        return self.observed[horizon][i]


@dataclass
class EvalResult:
    records: list
    horizons: tuple
    coverage: CoverageCurve
    baseline: dict = field(default_factory=dict)

    def errors_by_origin(self, horizon):
        return [r.error for r in self.records if r.horizon == horizon]

    @property
    def mean_errors(self):
        return {k: float(np.mean(self.errors_by_origin(k))) for k in self.horizons}


def _covered(center, var, target, z):
    sd = np.sqrt(np.maximum(var, 0.0))
    return np.abs(target - center) <= z * sd


def coverage_curve(records, horizons, levels=DEFAULT_LEVELS):
    """Fraction of central credible intervals containing the target.

    The target is the true volatility when every record carries it, otherwise
    the realized option prices under the price predictive.
    """
    use_truth = all(r.truth is not None for r in records)
    observed = {}
    for k in horizons:
        recs = [r for r in records if r.horizon == k]
        fr = []
        for q in levels:
            z = norm.ppf(0.5 + q / 2.0)
            if use_truth:
                hits = [bool(_covered(r.sigma_mean, r.sigma_var, r.truth, z)) for r in recs]
            else:
                hits = np.concatenate([_covered(r.predicted, r.predicted_var, r.realized, z) for r in recs]) \
                    if recs else []
            fr.append(float(np.mean(hits)) if len(hits) else float("nan"))
        observed[k] = fr
    return CoverageCurve(tuple(float(q) for q in levels), observed, "volatility" if use_truth else "price")


def rolling_k_step_eval(model, initial, series, n_train, validation_len=1, horizons=DEFAULT_HORIZONS,
                        levels=DEFAULT_LEVELS, cfg=UtConfig(), baseline=True):
    """Run the rolling-origin protocol on a fitted model.

    1. Filter through the ``n_train`` training steps from ``initial``.
    2. Update through ``validation_len`` validation steps.
    3. At each origin, forecast ``k`` steps ahead for every horizon without
       measurement updates and record the relative price error.
    4. Update with the next observation and move the origin one step.

    Horizons share one rollout per origin; each horizon only depends on the
    belief at the origin, so this equals running them separately.
    """
    model = as_model(model)
    horizons = tuple(sorted(set(int(k) for k in horizons)))
    n = len(series)
    start = n_train + validation_len
    if not horizons or horizons[0] < 1:
        raise ContractError("horizons must be positive")
    if n - start < horizons[-1]:
        raise ContractError("test segment of %d steps is shorter than horizon %d" % (n - start, horizons[-1]))
    fr = forward_filter(model, initial, series.inputs[:n_train], series.batches[:n_train], cfg)
    post = fr.final
    for t in range(n_train, start):
        prior, _ = predict(model, post, series.inputs[t], cfg)
        post = update(model, prior, series.batches[t], cfg).posterior
    records = []
    base = {k: [] for k in horizons}
    for origin in range(start, n):
        K = min(horizons[-1], n - origin)
        fut = [b.without_prices() for b in series.batches[origin : origin + K]]
        fc = k_step_predict(model, post, series.inputs[origin : origin + K], fut, cfg)
        for k in horizons:
            if k > K:
                continue
            f = fc[k - 1]
            b = series.batches[origin + k - 1]
            truth = None if series.truth is None else float(series.truth[origin + k - 1])
            records.append(ForecastRecord(origin, k, f.price.mean, np.diag(f.price.cov).copy(), b.prices,
                                          float(f.sigma.mean[0]), float(f.sigma.cov[0, 0]), truth))
            if baseline:
                base[k].append(_iv_baseline_error(series.batches[origin - 1], b))
        prior, _ = predict(model, post, series.inputs[origin], cfg)
        post = update(model, prior, series.batches[origin], cfg).posterior
    cov = coverage_curve(records, horizons, levels)
    base_err = {k: float(np.nanmean(v)) for k, v in base.items()} if baseline else {}
    return EvalResult(records, horizons, cov, base_err)


def calibrated_implied_vol(batch):
    """Mean Black-Scholes implied volatility of a priced batch (nan if none invert)."""
    vols = []
    for spec, price in zip(batch.specs(), batch.prices):
        try:
            vols.append(implied_vol(spec, price))
        except UrsError:
            continue
    return float(np.mean(vols)) if vols else float("nan")


def _iv_baseline_error(last, target):
    s = calibrated_implied_vol(last)
    if not np.isfinite(s):
        return float("nan")
    pred = call_price(target.spot, target.rate, target.strike, target.maturity, s)
    return relative_error_step(pred, target.prices)


def write_error_table(path, rows, horizons):
    """Table with one row per model: ``model, k=1, k=5, ...``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["model"] + ["k=%d" % k for k in horizons])
        for name, errs in rows:
            w.writerow([name] + ["%.10g" % errs[k] for k in horizons])


def write_errors_csv(path, result):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "mean_rel_error", "n_origins"])
        for k in result.horizons:
            w.writerow([k, "%.10g" % result.mean_errors[k], len(result.errors_by_origin(k))])


def write_coverage_csv(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["nominal", "observed", "horizon", "target"])
        for k, fr in curve.observed.items():
            for q, o in zip(curve.levels, fr):
                w.writerow(["%.2f" % q, "%.10g" % o, k, curve.target])


def write_records_csv(path, result):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["origin", "horizon", "rel_error", "sigma_mean", "sigma_sd", "truth"])
        for r in result.records:
            w.writerow([r.origin, r.horizon, "%.10g" % r.error, "%.10g" % r.sigma_mean,
                        "%.10g" % np.sqrt(max(r.sigma_var, 0.0)), "" if r.truth is None else "%.10g" % r.truth])


def summary(result):
    return {
        "mean_rel_error": {str(k): v for k, v in result.mean_errors.items()},
        "coverage_95": {str(k): result.coverage.at(0.95, k) for k in result.horizons},
        "coverage_target": result.coverage.target,
        "iv_baseline_rel_error": {str(k): v for k, v in result.baseline.items()},
        "n_records": len(result.records),
    }


def write_summary_json(path, result, extra=None):
    data = summary(result)
    if extra:
        data.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
