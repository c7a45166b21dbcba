"""Market option data: fixed CSV schemas, ingestion and synthetic fixtures.

Three UTF-8 CSV tables with headers and ISO-8601 dates:

``options.csv``
    ``date, expiration, strike, best_bid, best_offer, volume``
``spot.csv``
    ``date, close``
``rates.csv``
    ``date, rate`` (annualized; percentages are detected and converted)

Ingestion keeps, per date, the ``I`` most traded quotes (ties broken by
ascending strike, then ascending maturity), prices them at the mid quote and
measures maturity in days / 365.  Inputs are the last ``m`` simple returns of
the spot series.
"""

import csv
import datetime as _dt
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .pricing import ObservationBatch
from .series import Series, lagged_returns

log = logging.getLogger(__name__)

OPTION_COLUMNS = ("date", "expiration", "strike", "best_bid", "best_offer", "volume")
SPOT_COLUMNS = ("date", "close")
RATE_COLUMNS = ("date", "rate")
DAY_COUNT = 365.0


@dataclass(frozen=True)
class OptionQuote:
    date: _dt.date
    expiration: _dt.date
    strike: float
    bid: float
    offer: float
    volume: float
    line: int

    @property
    def mid(self):
        return (self.bid + self.offer) / 2.0

    @property
    def maturity(self):
        return (self.expiration - self.date).days / DAY_COUNT


@dataclass(frozen=True)
class MarketDataBundle:
    """Parsed tables. ``spot`` and ``rates`` map dates to values."""

    quotes: list
    spot: dict
    rates: dict
    source: dict = field(default_factory=dict)

    @classmethod
    def load(cls, options_path, spot_path, rates_path):
        problems = []
        quotes = _read_table(options_path, OPTION_COLUMNS, _parse_quote, problems)
        spot = _read_table(spot_path, SPOT_COLUMNS, _parse_spot, problems)
        rates = _read_table(rates_path, RATE_COLUMNS, _parse_rate, problems)
        if problems:
            raise DataError("%d malformed rows" % len(problems), problems)
        return cls(quotes, _unique(spot, spot_path), _unique(rates, rates_path),
                   {"options": str(options_path), "spot": str(spot_path), "rates": str(rates_path)})


@dataclass(frozen=True)
class IngestResult:
    series: Series
    dates: list
    warnings: list
    dropped: dict
    rate_percent: bool


def _date(s):
    return _dt.date.fromisoformat(s.strip())


def _read_table(path, columns, parse, problems):
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError("cannot open %s: %s" % (path, exc)) from exc
    out = []
    with fh:
        reader = csv.DictReader(fh)
        missing = [c for c in columns if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError("%s lacks columns %s" % (path, ", ".join(missing)),
                            [{"file": str(path), "missing_columns": missing}])
        for row in reader:
            line = reader.line_num
            try:
                out.append(parse(row, line))
            except (ValueError, TypeError) as exc:
                problems.append({"file": str(path), "line": line, "error": str(exc)})
    return out


def _parse_quote(row, line):
    q = OptionQuote(_date(row["date"]), _date(row["expiration"]), float(row["strike"]),
                    float(row["best_bid"]), float(row["best_offer"]), float(row["volume"]), line)
    if not all(np.isfinite([q.strike, q.bid, q.offer, q.volume])):
        raise ValueError("non-finite value")
    if q.bid > q.offer:
        raise ValueError("bid %r above offer %r" % (q.bid, q.offer))
    if q.volume < 0 or q.strike < 0 or q.bid < 0:
        raise ValueError("negative volume, strike or bid")
    return q


def _parse_spot(row, line):
    d, v = _date(row["date"]), float(row["close"])
    if not (np.isfinite(v) and v > 0):
        raise ValueError("close must be positive, got %r" % v)
    return d, v, line


def _parse_rate(row, line):
    d, v = _date(row["date"]), float(row["rate"])
    if not np.isfinite(v):
        raise ValueError("non-finite rate")
    return d, v, line


def _unique(rows, path):
    out = {}
    dup = []
    for d, v, line in rows:
        if d in out:
            dup.append({"file": str(path), "line": line, "error": "duplicate date %s" % d})
        out[d] = v
    if dup:
        raise DataError("%d duplicate dates" % len(dup), dup)
    return out


def select_top(quotes, I):
    """The ``I`` quotes with the largest volume; ties by strike then maturity."""
    ranked = sorted(quotes, key=lambda q: (-q.volume, q.strike, q.expiration))
    return ranked[:I]


def ingest(bundle, I=5, m=10):
    """Turn a :class:`MarketDataBundle` into a model-ready :class:`IngestResult`.

    Every spot date after the first gets a return.  A date is kept when it has
    a spot close, at least one quote with positive maturity and a rate (the
    last known rate is carried forward).  Dropped dates and short days are
    counted in ``dropped`` and listed in ``warnings``.
    """
    if I < 1 or m < 1:
        raise DataError("I and m must be at least 1")
    warnings = []
    dropped = {"no_spot": 0, "no_options": 0, "no_rate": 0, "expired_quotes": 0, "short_days": 0}
    rate_values = np.array(list(bundle.rates.values()), dtype=float)
    percent = bool(rate_values.size and np.median(rate_values) > 1.0)
    if percent:
        log.info("rates look like percentages (median %.4g); dividing by 100", np.median(rate_values))
        warnings.append("rates converted from percent to fractions")
    divisor = 100.0 if percent else 1.0

    spot_dates = sorted(bundle.spot)
    closes = np.array([bundle.spot[d] for d in spot_dates])
    ret = np.zeros(closes.size)
    ret[1:] = closes[1:] / closes[:-1] - 1.0
    by_date = {}
    for q in bundle.quotes:
        by_date.setdefault(q.date, []).append(q)

    rate_dates = sorted(bundle.rates)
    all_dates = sorted(set(spot_dates) | set(by_date))
    kept, batches = [], []
    ri = 0
    last_rate = None
    for d in all_dates:
        while ri < len(rate_dates) and rate_dates[ri] <= d:
            last_rate = bundle.rates[rate_dates[ri]] / divisor
            ri += 1
        if d not in bundle.spot:
            dropped["no_spot"] += 1
            continue
        live = [q for q in by_date.get(d, []) if q.expiration > d]
        dropped["expired_quotes"] += len(by_date.get(d, [])) - len(live)
        if not live:
            dropped["no_options"] += 1
            continue
        if last_rate is None:
            dropped["no_rate"] += 1
            continue
        top = select_top(live, I)
        if len(top) < I:
            dropped["short_days"] += 1
            warnings.append("%s: only %d of %d quotes available" % (d, len(top), I))
        kept.append(d)
        batches.append(ObservationBatch(bundle.spot[d], last_rate, np.array([q.strike for q in top]),
                                        np.array([q.maturity for q in top]), np.array([q.mid for q in top])))
    for key in ("no_spot", "no_options", "no_rate"):
        if dropped[key]:
            warnings.append("dropped %d dates: %s" % (dropped[key], key.replace("_", " ")))
    if dropped["expired_quotes"]:
        warnings.append("ignored %d quotes at or past expiration" % dropped["expired_quotes"])
    for w in warnings:
        log.warning(w)
    if not kept:
        raise DataError("no usable dates after ingestion", [{"dropped": dropped}])
    # inputs use the spot series as a whole, so a dropped date still contributes its return
    pos = {d: i for i, d in enumerate(spot_dates)}
    lagged = lagged_returns(ret[1:], m)
    inputs = np.array([lagged[pos[d] - 1] if pos[d] >= 1 else np.zeros(m) for d in kept])
    series = Series(inputs, batches, None, [d.isoformat() for d in kept])
    return IngestResult(series, kept, warnings, dropped, percent)


def load_and_ingest(options_path, spot_path, rates_path, I=5, m=10):
    return ingest(MarketDataBundle.load(options_path, spot_path, rates_path), I, m)


def export_market(ds, out_dir, start="2018-01-01", rate_percent=False):
    """Write a synthetic dataset in the market schema.

    Step ``t`` is dated ``start + t`` calendar days, so maturities in days map
    to expirations exactly.  Bid and offer both equal the quote and volumes
    decrease with the option index, so ingestion with ``I = n_options``
    reproduces the dataset's observation batches.
    """
    if ds.options.day_count != DAY_COUNT:
        raise DataError("market schema uses %g days per year, dataset uses %g"
                        % (DAY_COUNT, ds.options.day_count))
    os.makedirs(out_dir, exist_ok=True)
    d0 = _dt.date.fromisoformat(start)
    day = [d0 + _dt.timedelta(days=t) for t in range(ds.n + 1)]
    paths = {k: os.path.join(out_dir, k + ".csv") for k in ("options", "spot", "rates")}
    with open(paths["options"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(OPTION_COLUMNS)
        for t in range(1, ds.n + 1):
            for i in range(ds.n_options):
                exp = day[t] + _dt.timedelta(days=int(ds.maturity_days[t - 1, i]))
                px = repr(float(ds.quotes[t - 1, i]))
                w.writerow([day[t].isoformat(), exp.isoformat(), repr(float(ds.strikes[t - 1, i])),
                            px, px, 1000 * (ds.n_options - i)])
    with open(paths["spot"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SPOT_COLUMNS)
        for t in range(ds.n + 1):
            w.writerow([day[t].isoformat(), repr(float(ds.prices[t]))])
    with open(paths["rates"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(RATE_COLUMNS)
        w.writerow([day[0].isoformat(), repr(float(ds.rate) * (100.0 if rate_percent else 1.0))])
    return paths
