"""Black-Scholes call pricing and implied volatility."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc

from .errors import DomainError, NumericalError, ShapeError

SIGMA_BRACKET = (1e-6, 5.0)


def norm_cdf(x):
    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


@dataclass(frozen=True)
class OptionSpec:
    """Call option on a spot ``spot`` with rate ``rate``, strike and maturity in years."""

    spot: float
    rate: float
    strike: float
    maturity: float

    def __post_init__(self):
        if not self.spot > 0:
            raise DomainError("spot must be positive")
        if not self.strike >= 0:
            raise DomainError("strike must be non-negative")
        if not self.maturity > 0:
            raise DomainError("maturity must be positive")

    def lower_bound(self):
        return max(0.0, self.spot - self.strike * np.exp(-self.rate * self.maturity))


@dataclass(frozen=True)
class ObservationBatch:
    """The options quoted on one date, stored as parallel arrays.

    Attributes:
        spot, rate: per-option arrays (normally constant within a date).
        strike, maturity: per-option arrays; maturity in years.
        prices: observed prices, or None for a forecast-only batch.
    """

    spot: np.ndarray
    rate: np.ndarray
    strike: np.ndarray
    maturity: np.ndarray
    prices: np.ndarray = None

    def __post_init__(self):
        strike = np.atleast_1d(np.asarray(self.strike, dtype=float))
        n = strike.size
        if n < 1:
            raise ShapeError("a batch needs at least one option")
        arrs = {}
        for name in ("spot", "rate", "maturity"):
            a = np.asarray(getattr(self, name), dtype=float)
            a = np.broadcast_to(a, (n,)).copy() if a.ndim == 0 or a.size == 1 else a
            if a.shape != (n,):
                raise ShapeError("%s has shape %s, expected (%d,)" % (name, a.shape, n))
            arrs[name] = a
        if np.any(arrs["spot"] <= 0) or np.any(strike < 0) or np.any(arrs["maturity"] <= 0):
            raise DomainError("invalid option specification in batch")
        for name, a in arrs.items():
            object.__setattr__(self, name, a)
        object.__setattr__(self, "strike", strike)
        if self.prices is not None:
            prices = np.atleast_1d(np.asarray(self.prices, dtype=float))
            if prices.shape != (n,):
                raise ShapeError("prices shape %s, expected (%d,)" % (prices.shape, n))
            if np.any(prices < 0):
                raise DomainError("prices must be non-negative")
            object.__setattr__(self, "prices", prices)

    @classmethod
    def from_specs(cls, specs, prices=None):
        specs = list(specs)
        return cls(
            np.array([s.spot for s in specs]),
            np.array([s.rate for s in specs]),
            np.array([s.strike for s in specs]),
            np.array([s.maturity for s in specs]),
            prices,
        )

    @property
    def size(self):
        return self.strike.size

    def specs(self):
        return [OptionSpec(*vals) for vals in zip(self.spot, self.rate, self.strike, self.maturity)]

    def without_prices(self):
        return ObservationBatch(self.spot, self.rate, self.strike, self.maturity, None)


def call_price(spot, rate, strike, maturity, sigma):
    """Vectorized Black-Scholes call price; arguments broadcast together."""
    spot, rate, strike, maturity, sigma = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (spot, rate, strike, maturity, sigma))
    )
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    disc = strike * np.exp(-rate * maturity)
    sq = sigma * np.sqrt(maturity)
    with np.errstate(divide="ignore", over="ignore"):
        d_plus = (np.log(spot / strike) + (rate + 0.5 * sigma**2) * maturity) / sq
    d_minus = d_plus - sq
    zero = strike == 0
    price = np.where(zero, spot, spot * norm_cdf(d_plus) - norm_cdf(d_minus) * disc)
    return price


def bs_call_price(spec, sigma):
    return float(call_price(spec.spot, spec.rate, spec.strike, spec.maturity, sigma))


def batch_price(batch, sigma):
    """Prices of every option in ``batch`` at volatility ``sigma``.

    ``batch`` is an :class:`ObservationBatch` or a sequence of
    :class:`OptionSpec`.  ``sigma`` may be a scalar or an array of shape
    ``(k, 1)`` to price ``k`` volatilities at once.
    """
    if not isinstance(batch, ObservationBatch):
        batch = ObservationBatch.from_specs(batch)
    return call_price(batch.spot, batch.rate, batch.strike, batch.maturity, sigma)


def implied_vol(spec, price, xtol=1e-15):
    """Volatility reproducing ``price`` (Brent's method on ``[1e-6, 5]``)."""
    lo = spec.lower_bound()
    if not lo < price < spec.spot:
        raise DomainError(
            "price %.10g outside the no-arbitrage interval (%.10g, %.10g)" % (price, lo, spec.spot)
        )

    def f(s):
        return bs_call_price(spec, s) - price

    a, b = SIGMA_BRACKET
    fa, fb = f(a), f(b)
    if fa > 0 or fb < 0:
        raise NumericalError("no implied volatility in [%g, %g]" % SIGMA_BRACKET)
    return float(brentq(f, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))
