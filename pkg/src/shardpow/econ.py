"""Fee economics, security ratios and hardware-efficiency growth fits.

Fees and costs are in coin units; hash rates in any common unit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.linear_model import LinearRegression
from sklearn.utils.validation import check_is_fitted

CSV_COLUMNS = ("time_years", "hashes_per_joule")


@dataclass(frozen=True)
class FeeScenario:
    """Per-shard fee pools seen by one miner.

    ``shard_hash_rates[i]`` is the hash rate of everyone else on shard i.
    """

    fees: tuple[float, ...]
    miner_hash_rate: float
    shard_hash_rates: tuple[float, ...]
    costs: tuple[float, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "fees", tuple(self.fees))
        object.__setattr__(self, "shard_hash_rates", tuple(self.shard_hash_rates))
        costs = tuple(self.costs) or (0,) * len(self.fees)
        object.__setattr__(self, "costs", costs)
        if not len(self.fees) == len(self.shard_hash_rates) == len(self.costs):
            raise ValueError("fees, shard_hash_rates and costs need one entry per shard")
        if not self.miner_hash_rate > 0:
            raise ValueError("miner hash rate must be positive")
        if any(x < 0 for x in self.fees + self.shard_hash_rates + self.costs):
            raise ValueError("fees, hash rates and costs must be non-negative")

    def fee_term(self, i: int) -> float:
        mhr = self.miner_hash_rate
        return self.fees[i] * mhr / (self.shard_hash_rates[i] + mhr)


def expected_fee_reward(scenario: FeeScenario) -> float:
    """Sum over shards of TF_i * MHR / (SHR_i + MHR)."""
    return sum(scenario.fee_term(i) for i in range(len(scenario.fees)))


def marginal_profit(scenario: FeeScenario, shard: int) -> float:
    """TF_i / (1 + SHR_i / MHR) - eps_i; negative means the shard is not worth mining."""
    if not 0 <= shard < len(scenario.fees):
        raise IndexError(f"no shard {shard}")
    return scenario.fee_term(shard) - scenario.costs[shard]


def security_factor(budget: float, capitalization: float) -> float:
    if capitalization <= 0:
        raise ValueError("capitalization must be positive")
    return budget / capitalization


def supply_gap(gamma: float, v: float) -> float:
    """Coins minted beyond a value V when the supply overshoots by a factor gamma."""
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if v < 0:
        raise ValueError("V must be non-negative")
    return (gamma - 1) * v


class LogLinearGrowth(RegressorMixin, BaseEstimator):
    """Least-squares line through (time, log efficiency).

    ``fit(X, y)`` takes times in years (one column) and efficiencies;
    ``annual_rate_`` is exp(slope) - 1.  ``predict`` returns efficiencies.
    """

    def fit(self, X, y):
        t = _times(X)
        y = np.asarray(y, dtype=float)
        if t.shape[0] != y.shape[0]:
            raise ValueError("X and y differ in length")
        if t.shape[0] < 2:
            raise ValueError("need at least two points")
        if np.any(~np.isfinite(y)) or np.any(y <= 0):
            raise ValueError("efficiencies must be positive")
        if np.unique(t).size < 2:
            raise ValueError("need at least two distinct times")
        model = LinearRegression().fit(t.reshape(-1, 1), np.log(y))
        self.slope_ = float(model.coef_[0])
        self.intercept_ = float(model.intercept_)
        self.annual_rate_ = math.expm1(self.slope_)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "slope_")
        return np.exp(self.intercept_ + self.slope_ * _times(X))

    def to_dict(self) -> dict:
        check_is_fitted(self, "slope_")
        return {"slope": self.slope_, "intercept": self.intercept_, "annual_rate": self.annual_rate_}


def _times(X) -> np.ndarray:
    t = np.asarray(X, dtype=float)
    if t.ndim == 2:
        if t.shape[1] != 1:
            raise ValueError("X must have exactly one column (time in years)")
        t = t[:, 0]
    if t.ndim != 1 or np.any(~np.isfinite(t)):
        raise ValueError("times must be finite numbers")
    return t


def loglinear_growth(series: Iterable[tuple[float, float]]) -> float:
    """Annual growth rate fitted to (years, efficiency) points."""
    points = list(series)
    if len(points) < 2:
        raise ValueError("need at least two points")
    times = [p[0] for p in points]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    return LogLinearGrowth().fit(times, [p[1] for p in points]).annual_rate_


def read_efficiency_csv(path_or_lines) -> list[tuple[float, float]]:
    """Read a ``time_years,hashes_per_joule`` CSV into (t, e) pairs."""
    if isinstance(path_or_lines, (str, bytes)) or hasattr(path_or_lines, "__fspath__"):
        with open(path_or_lines, newline="") as fh:
            return _read_rows(csv.reader(fh))
    return _read_rows(csv.reader(path_or_lines))


def _read_rows(rows) -> list[tuple[float, float]]:
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows or tuple(c.strip() for c in rows[0]) != CSV_COLUMNS:
        raise ValueError(f"expected header {','.join(CSV_COLUMNS)}")
    out = []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != 2:
            raise ValueError(f"line {n}: expected two columns")
        try:
            out.append((float(r[0]), float(r[1])))
        except ValueError:
            raise ValueError(f"line {n}: not a number") from None
    return out


def fit_series(points: Sequence[tuple[float, float]]) -> dict:
    """Fit summary as a JSON-ready dict."""
    model = LogLinearGrowth().fit([p[0] for p in points], [p[1] for p in points])
    return {**model.to_dict(), "points": len(points)}
