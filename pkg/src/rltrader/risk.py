"""CAPM beta estimation and discretisation of a stock pool into risk bins.

Bins are ordered by ascending risk: bin 0 is the safest third of the pool.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (DegenerateBenchmarkError, DegeneratePoolError, IngestError,
                     InsufficientDataError, MissingScoreError)

N_BINS = 3
PRICE_HEADER = ("stock", "date", "close")


@dataclass(frozen=True)
class PriceSeries:
    stock: str
    dates: tuple[dt.date, ...]
    closes: np.ndarray = field(repr=False)

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=float)
        object.__setattr__(self, "closes", closes)
        if closes.shape != (len(self.dates),):
            raise ValueError("dates and closes differ in length")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError(f"{self.stock}: dates must be strictly increasing")
        if np.any(~(closes > 0)):
            raise ValueError(f"{self.stock}: prices must be positive")


class Returns(NamedTuple):
    dates: tuple[dt.date, ...]
    values: np.ndarray


def daily_returns(series: PriceSeries) -> Returns:
    """Simple returns ``p_t / p_{t-1} - 1`` dated at ``t``."""
    if len(series.dates) < 2:
        raise InsufficientDataError(f"{series.stock}: need at least 2 prices")
    p = series.closes
    return Returns(series.dates[1:], p[1:] / p[:-1] - 1.0)


def align(asset: Returns, benchmark: Returns) -> tuple[np.ndarray, np.ndarray]:
    """Inner join of two return series on date."""
    index = {d: i for i, d in enumerate(benchmark.dates)}
    ia, ib = [], []
    for i, d in enumerate(asset.dates):
        j = index.get(d)
        if j is not None:
            ia.append(i)
            ib.append(j)
    return asset.values[ia], benchmark.values[ib]


def _as_pair(asset_returns, benchmark_returns):
    if isinstance(asset_returns, Returns) and isinstance(benchmark_returns, Returns):
        a, b = align(asset_returns, benchmark_returns)
    else:
        a = np.asarray(asset_returns, dtype=float)
        b = np.asarray(benchmark_returns, dtype=float)
        if a.shape != b.shape:
            raise ValueError("undated return arrays must have equal length")
    if len(a) < 2:
        raise InsufficientDataError("need at least 2 aligned returns")
    return a, b


def capm_regression(asset_returns, benchmark_returns) -> tuple[float, float]:
    """Intercept and slope of ``r_a = intercept + beta * r_b``.

    Covariance and variance both use the n-1 normalisation.
    """
    a, b = _as_pair(asset_returns, benchmark_returns)
    var_b = np.var(b, ddof=1)
    if not var_b > 0:
        raise DegenerateBenchmarkError("benchmark returns have zero variance")
    beta = float(np.cov(a, b, ddof=1)[0, 1] / var_b)
    return float(a.mean() - beta * b.mean()), beta


def capm_beta(asset_returns, benchmark_returns) -> float:
    """``Cov(r_a, r_b) / Var(r_b)`` on date-aligned returns."""
    return capm_regression(asset_returns, benchmark_returns)[1]


def return_sigma(returns) -> float:
    values = returns.values if isinstance(returns, Returns) else np.asarray(returns, float)
    if len(values) < 2:
        raise InsufficientDataError("need at least 2 returns")
    return float(np.std(values, ddof=1))


def riskiness(beta: float, sigma: float, sigma_max: float) -> float:
    """Alternative score ``|beta * sigma / sigma_max|``."""
    if not sigma_max > 0:
        raise DegeneratePoolError("largest sigma in the pool must be positive")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    return abs(beta * sigma / sigma_max)


def bin_sizes(n: int) -> tuple[int, int, int]:
    """Balanced split, larger bins first: 107 -> (36, 36, 35)."""
    base, extra = divmod(n, N_BINS)
    return tuple(base + (1 if i < extra else 0) for i in range(N_BINS))


@dataclass(frozen=True)
class RiskClassification:
    bins: dict[str, int]
    betas: dict[str, float] = field(default_factory=dict)
    sigma: dict[str, float] = field(default_factory=dict)
    scheme: str = "beta"

    def sizes(self) -> tuple[int, ...]:
        counts = [0] * N_BINS
        for b in self.bins.values():
            counts[b] += 1
        return tuple(counts)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "bins": {k: self.bins[k] for k in sorted(self.bins)},
            "betas": {k: self.betas[k] for k in sorted(self.betas)},
            "sigma": {k: self.sigma[k] for k in sorted(self.sigma)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RiskClassification":
        return cls({k: int(v) for k, v in data["bins"].items()},
                   {k: float(v) for k, v in data.get("betas", {}).items()},
                   {k: float(v) for k, v in data.get("sigma", {}).items()},
                   data.get("scheme", "beta"))


def rank_into_bins(scores: Mapping[str, float], pool: Sequence[str] | None = None,
                   scheme: str = "beta") -> RiskClassification:
    """Sort ascending by score (ties: stock id) and cut into three blocks."""
    pool = sorted(scores) if pool is None else list(pool)
    missing = [s for s in pool if s not in scores]
    if missing:
        raise MissingScoreError(f"no risk score for stock {missing[0]!r}")
    order = sorted(pool, key=lambda s: (scores[s], s))
    bins = {}
    start = 0
    for b, size in enumerate(bin_sizes(len(order))):
        for stock in order[start:start + size]:
            bins[stock] = b
        start += size
    return RiskClassification(bins, scheme=scheme)


def classify(prices: Mapping[str, PriceSeries], benchmark: PriceSeries,
             scheme: str = "beta") -> RiskClassification:
    """Estimate betas (and sigmas) for every stock and bin the pool.

    ``scheme`` is ``"beta"`` (rank by beta) or ``"riskiness"`` (rank by
    ``|beta * sigma / max sigma|``).
    """
    bench = daily_returns(benchmark)
    betas, sigmas = {}, {}
    for stock in sorted(prices):
        r = daily_returns(prices[stock])
        betas[stock] = capm_beta(r, bench)
        sigmas[stock] = return_sigma(r)
    if scheme == "beta":
        scores = betas
    elif scheme == "riskiness":
        sigma_max = max(sigmas.values(), default=0.0)
        scores = {s: riskiness(betas[s], sigmas[s], sigma_max) for s in betas}
    else:
        raise ValueError(f"unknown risk scheme {scheme!r}")
    ranked = rank_into_bins(scores, sorted(prices), scheme=scheme)
    return RiskClassification(ranked.bins, betas, sigmas, scheme)


def scramble(classification: RiskClassification, seed: int) -> RiskClassification:
    """Uniformly random stock->bin assignment with the same bin sizes."""
    stocks = sorted(classification.bins)
    labels = np.array([classification.bins[s] for s in stocks])
    labels = np.random.default_rng(seed).permutation(labels)
    return RiskClassification(dict(zip(stocks, labels.tolist())),
                              dict(classification.betas), dict(classification.sigma),
                              f"scrambled:{seed}")


def read_prices(source: str | os.PathLike | IO[str]) -> dict[str, PriceSeries]:
    """Read a ``stock,date,close`` CSV into one series per stock."""
    if isinstance(source, (str, os.PathLike)):
        try:
            with open(source, newline="", encoding="utf-8") as fh:
                return read_prices(fh)
        except OSError as exc:
            raise IngestError(f"cannot read {source}: {exc}") from exc
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(h.strip().lower() for h in header) != PRICE_HEADER:
        raise IngestError(f"price file header must be {','.join(PRICE_HEADER)}")
    rows: dict[str, list[tuple[dt.date, float]]] = {}
    for row in reader:
        if not row:
            continue
        try:
            stock, date, close = (c.strip() for c in row)
            rows.setdefault(stock, []).append((dt.date.fromisoformat(date), float(close)))
        except ValueError as exc:
            raise IngestError(f"line {reader.line_num}: {exc}") from exc
    series = {}
    for stock, obs in rows.items():
        obs.sort(key=lambda o: o[0])
        series[stock] = PriceSeries(stock, tuple(o[0] for o in obs),
                                    np.array([o[1] for o in obs]))
    return series


def write_prices(series: Iterable[PriceSeries], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(PRICE_HEADER)
    for s in series:
        for d, p in zip(s.dates, s.closes):
            writer.writerow([s.stock, d.isoformat(), repr(float(p))])
