"""CIR volatility simulation and synthetic option datasets."""

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError, DataError, NumericalError
from .pricing import ObservationBatch, call_price
from .series import Series, lagged_returns

SIGMA_CLIP = (1e-4, 0.9999)


@dataclass(frozen=True)
class CirConfig:
    """Square-root diffusion ``dV = reversion (long_term - V) dt + vol_of_vol sqrt(V) dW``."""

    v0: float = 0.15
    long_term: float = 0.15
    reversion: float = 10.0
    vol_of_vol: float = 0.04
    dt: float = 1.0 / 252.0
    n: int = 200
    seed: int = 0

    def __post_init__(self):
        if not (self.v0 > 0 and self.long_term > 0 and self.reversion > 0
                and self.vol_of_vol >= 0 and self.dt > 0 and self.n >= 1):
            raise ContractError("invalid CIR configuration %r" % (self,))


def simulate_cir(cfg, n_paths=None, rng=None):
    """Euler-Maruyama with full truncation.

    Returns ``V_0..V_n`` as shape (n + 1,), or (n_paths, n + 1) when
    ``n_paths`` is given.
    """
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    k = 1 if n_paths is None else int(n_paths)
    v = np.empty((k, cfg.n + 1))
    v[:, 0] = cfg.v0
    sq_dt = np.sqrt(cfg.dt)
    for t in range(cfg.n):
        z = rng.standard_normal(k)
        vp = np.maximum(v[:, t], 0.0)
        nxt = v[:, t] + cfg.reversion * (cfg.long_term - vp) * cfg.dt + cfg.vol_of_vol * np.sqrt(vp) * sq_dt * z
        v[:, t + 1] = np.maximum(nxt, 0.0)
    return v[0] if n_paths is None else v


def cir_mean(cfg, t):
    return cfg.long_term + (cfg.v0 - cfg.long_term) * np.exp(-cfg.reversion * t)


def cir_var(cfg, t):
    e = np.exp(-cfg.reversion * t)
    s2 = cfg.vol_of_vol**2
    return cfg.v0 * s2 / cfg.reversion * (e - e * e) + cfg.long_term * s2 / (2 * cfg.reversion) * (1 - e) ** 2


@dataclass(frozen=True)
class DatasetOptions:
    """Choices the generating algorithm leaves open.

    Attributes:
        noise_scale: ``"stdev"`` reads ``kappa_v`` as the noise standard
            deviation, ``"variance"`` as its variance.
        return_scale: ``"stdev"`` draws returns with standard deviation V_t,
            ``"variance"`` with variance V_t.
        strike_range: strikes are uniform on this multiple of spot.
        maturity_days: maturities are uniform integers in this range (inclusive).
        day_count: days per year used to turn maturities into years.
    """

    noise_scale: str = "stdev"
    return_scale: str = "stdev"
    strike_range: tuple = (0.9, 1.0)
    maturity_days: tuple = (21, 252)
    day_count: float = 365.0

    def __post_init__(self):
        if self.noise_scale not in ("stdev", "variance") or self.return_scale not in ("stdev", "variance"):
            raise ContractError("scale options must be 'stdev' or 'variance'")
        object.__setattr__(self, "strike_range", tuple(float(x) for x in self.strike_range))
        object.__setattr__(self, "maturity_days", tuple(int(x) for x in self.maturity_days))


@dataclass(frozen=True)
class SyntheticDataset:
    """All arrays of a generated dataset; option arrays have shape (n, I) for t = 1..n."""

    ground_truth: np.ndarray  # (n + 1,)
    deviated: np.ndarray  # (n, I)
    returns: np.ndarray  # (n,)
    prices: np.ndarray  # (n + 1,)
    strikes: np.ndarray
    maturity_days: np.ndarray
    quotes: np.ndarray
    rate: float
    kappa_v: float
    config: CirConfig
    options: DatasetOptions
    seed: int

    @property
    def n(self):
        return self.returns.size

    @property
    def n_options(self):
        return self.quotes.shape[1]

    @property
    def maturities(self):
        return self.maturity_days / self.options.day_count

    def batch(self, t):
        """Observation batch at step ``t`` (1-based)."""
        i = t - 1
        return ObservationBatch(self.prices[t], self.rate, self.strikes[i], self.maturities[i], self.quotes[i])

    def batches(self):
        return [self.batch(t) for t in range(1, self.n + 1)]

    def to_series(self, m):
        """Series with inputs built from the last ``m`` returns and the true volatility."""
        return Series(lagged_returns(self.returns, m), self.batches(), self.ground_truth[1:].copy(),
                      list(range(1, self.n + 1)))

    def manifest(self):
        return {
            "kappa_v": self.kappa_v,
            "n": self.n,
            "n_options": self.n_options,
            "rate": self.rate,
            "p0": float(self.prices[0]),
            "seed": self.seed,
            "cir": asdict(self.config),
            "options": asdict(self.options),
        }


def generate_dataset(cfg, kappa_v=0.01, I=5, p0=2000.0, r=0.02, seed=0, options=DatasetOptions()):
    """Generate a synthetic option dataset on top of a CIR volatility path.

    Randomness: ``seed`` feeds a SeedSequence whose first child drives the CIR
    path and whose second child drives deviations, returns, strikes and
    maturities.
    """
    if I < 1:
        raise ContractError("I must be at least 1")
    ss = np.random.SeedSequence(seed)
    rng_path, rng = (np.random.default_rng(s) for s in ss.spawn(2))
    V = simulate_cir(cfg, rng=rng_path)
    n = cfg.n
    noise_sd = kappa_v if options.noise_scale == "stdev" else np.sqrt(kappa_v)
    deviated = np.empty((n, I))
    returns = np.empty(n)
    prices = np.empty(n + 1)
    prices[0] = p0
    strikes = np.empty((n, I))
    days = np.empty((n, I), dtype=int)
    quotes = np.empty((n, I))
    lo, hi = options.strike_range
    d_lo, d_hi = options.maturity_days
    for t in range(1, n + 1):
        deviated[t - 1] = V[t] + noise_sd * rng.standard_normal(I)
        sd = V[t] if options.return_scale == "stdev" else np.sqrt(V[t])
        for attempt in range(2):
            u = sd * rng.standard_normal()
            if prices[t - 1] * (1.0 + u) > 0:
                break
        else:
            raise NumericalError("non-positive price at step %d after a re-draw" % t)
        returns[t - 1] = u
        prices[t] = prices[t - 1] * (1.0 + u)
        strikes[t - 1] = rng.uniform(lo, hi, I) * prices[t]
        days[t - 1] = rng.integers(d_lo, d_hi + 1, I)
        sig = np.clip(deviated[t - 1], *SIGMA_CLIP)
        quotes[t - 1] = call_price(prices[t], r, strikes[t - 1], days[t - 1] / options.day_count, sig)
    return SyntheticDataset(V, deviated, returns, prices, strikes, days, quotes, float(r), float(kappa_v),
                            cfg, options, seed)


def write_bundle(ds, out_dir):
    """Write ground_truth.csv, quotes.csv, series.csv and manifest.json."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ground_truth.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "volatility"])
        for t, v in enumerate(ds.ground_truth):
            w.writerow([t, repr(float(v))])
    with open(os.path.join(out_dir, "quotes.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "strike", "maturity", "maturity_days", "price", "deviated_volatility"])
        for t in range(1, ds.n + 1):
            for i in range(ds.n_options):
                w.writerow([t, i, repr(float(ds.strikes[t - 1, i])), repr(float(ds.maturities[t - 1, i])),
                            int(ds.maturity_days[t - 1, i]), repr(float(ds.quotes[t - 1, i])),
                            repr(float(ds.deviated[t - 1, i]))])
    with open(os.path.join(out_dir, "series.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "price", "return"])
        w.writerow([0, repr(float(ds.prices[0])), ""])
        for t in range(1, ds.n + 1):
            w.writerow([t, repr(float(ds.prices[t])), repr(float(ds.returns[t - 1]))])
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(ds.manifest(), fh, indent=2, sort_keys=True)


def read_bundle(out_dir):
    """Inverse of :func:`write_bundle`."""
    try:
        with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
            man = json.load(fh)
        with open(os.path.join(out_dir, "ground_truth.csv"), encoding="utf-8") as fh:
            V = np.array([float(r["volatility"]) for r in csv.DictReader(fh)])
        with open(os.path.join(out_dir, "series.csv"), encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        prices = np.array([float(r["price"]) for r in rows])
        returns = np.array([float(r["return"]) for r in rows[1:]])
        n, I = man["n"], man["n_options"]
        strikes = np.empty((n, I))
        days = np.empty((n, I), dtype=int)
        quotes = np.empty((n, I))
        dev = np.empty((n, I))
        with open(os.path.join(out_dir, "quotes.csv"), encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                t, i = int(r["t"]) - 1, int(r["i"])
                strikes[t, i] = float(r["strike"])
                days[t, i] = int(r["maturity_days"])
                quotes[t, i] = float(r["price"])
                dev[t, i] = float(r["deviated_volatility"])
    except (OSError, KeyError, ValueError, IndexError) as exc:
        raise DataError("cannot read dataset bundle in %s: %s" % (out_dir, exc)) from exc
    cfg = CirConfig(**man["cir"])
    opts = DatasetOptions(**man["options"])
    return SyntheticDataset(V, dev, returns, prices, strikes, days, quotes, man["rate"], man["kappa_v"],
                            cfg, opts, man["seed"])
