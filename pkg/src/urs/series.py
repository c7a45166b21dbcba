"""Model-ready time series: inputs, option batches and optional ground truth."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def lagged_returns(returns, m):
    """Rows ``u_t = (r_{t-m+1}, ..., r_t)`` with zeros before the start.

    ``returns`` is indexed from 0; the result has the same length.
    """
    r = np.asarray(returns, dtype=float)
    padded = np.concatenate([np.zeros(m - 1), r])
    idx = np.arange(r.size)[:, None] + np.arange(m)[None, :]
    return padded[idx]


@dataclass(frozen=True)
class Series:
    """Aligned inputs and observations for steps ``1..n``.

    Attributes:
        inputs: (n, m) array; row ``t - 1`` drives the transition into step t.
        batches: n observation batches.
        truth: optional (n,) ground-truth volatility.
        labels: optional per-step labels (dates).
    """

    inputs: np.ndarray
    batches: list
    truth: np.ndarray = None
    labels: list = None

    def __post_init__(self):
        if len(self.inputs) != len(self.batches):
            raise ContractError("inputs and batches differ in length")
        if self.truth is not None and len(self.truth) != len(self.batches):
            raise ContractError("truth and batches differ in length")

    def __len__(self):
        return len(self.batches)

    def slice(self, start, stop):
        return Series(
            self.inputs[start:stop],
            self.batches[start:stop],
            None if self.truth is None else self.truth[start:stop],
            None if self.labels is None else self.labels[start:stop],
        )


@dataclass(frozen=True)
class Split:
    """Chronological split: ``n_train`` training steps, then validation, then test."""

    n_train: int
    n_val: int
    n_test: int

    @classmethod
    def from_test_length(cls, n, n_test, n_val):
        n_train = n - n_test - n_val
        if n_train < 1 or n_test < 1 or n_val < 0:
            raise ContractError(
                "series of length %d cannot hold %d test and %d validation steps" % (n, n_test, n_val)
            )
        return cls(n_train, n_val, n_test)
