"""Synthetic single-factor markets and Q-learning trader agents.

The generator uses the same portfolio, squash, soft-max and update code as
the likelihood engine, so replaying a generated history with the agent's
true parameters reproduces the generation-time choice probabilities
exactly.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import os
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Sequence

import numpy as np

from .ingest import Kind, PlayerHistory, Transaction, make_history, write_transactions
from .model import (ModelParams, Portfolio, initial_q, q_update, softmax_probs, squash,
                    state_of)
from .risk import N_BINS, PriceSeries, RiskClassification, bin_sizes, write_prices

BUY_POLICIES = ("uniform", "round_robin")


@dataclass(frozen=True)
class MarketSpec:
    """Daily single-factor market.

    Stock returns are ``drift[bin] + beta * benchmark + noise`` with beta
    drawn uniformly from the stock's bin range.  ``horizon_days`` counts
    price observations (weekdays from ``start``).
    """

    n_stocks: int = 107
    horizon_days: int = 250
    benchmark_vol: float = 0.01
    bin_beta_ranges: tuple[tuple[float, float], ...] = ((0.3, 0.7), (0.9, 1.3), (1.5, 1.9))
    idio_vol: float = 0.01
    bin_drifts: tuple[float, float, float] = (0.0, 0.0, 0.0)
    start: dt.date = dt.date(2013, 6, 3)
    seed: int = 0

    def __post_init__(self):
        if self.n_stocks < N_BINS:
            raise ValueError(f"need at least {N_BINS} stocks")
        if self.horizon_days < 2:
            raise ValueError("horizon_days must be >= 2")
        if not self.benchmark_vol > 0:
            raise ValueError("benchmark_vol must be positive")
        if self.idio_vol < 0:
            raise ValueError("idio_vol must be nonnegative")
        ranges = self.bin_beta_ranges
        if len(ranges) != N_BINS or len(self.bin_drifts) != N_BINS:
            raise ValueError(f"need {N_BINS} beta ranges and drifts")
        for lo, hi in ranges:
            if lo > hi:
                raise ValueError(f"empty beta range ({lo}, {hi})")
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            if not hi < lo:
                raise ValueError("bin beta ranges must be ordered and non-overlapping")


@dataclass(frozen=True)
class Market:
    benchmark: PriceSeries
    stocks: dict[str, PriceSeries]
    true_bins: dict[str, int]
    true_betas: dict[str, float]

    @property
    def dates(self) -> tuple[dt.date, ...]:
        return self.benchmark.dates

    def classification(self) -> RiskClassification:
        return RiskClassification(dict(self.true_bins), dict(self.true_betas), scheme="true")


def trading_days(start: dt.date, n: int) -> tuple[dt.date, ...]:
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return tuple(days)


def generate_market(spec: MarketSpec) -> Market:
    rng = np.random.default_rng(spec.seed)
    n, horizon = spec.n_stocks, spec.horizon_days
    labels = np.repeat(np.arange(N_BINS), bin_sizes(n))
    labels = rng.permutation(labels)
    ranges = np.array(spec.bin_beta_ranges, dtype=float)
    betas = rng.uniform(ranges[labels, 0], ranges[labels, 1])
    bench = rng.normal(0.0, spec.benchmark_vol, horizon - 1)
    noise = rng.normal(0.0, 1.0, (n, horizon - 1)) * spec.idio_vol
    drift = np.asarray(spec.bin_drifts, dtype=float)[labels]
    returns = drift[:, None] + betas[:, None] * bench[None, :] + noise

    dates = trading_days(spec.start, horizon)

    def prices(r):
        return 100.0 * np.concatenate(([1.0], np.cumprod(1.0 + r)))

    names = [f"S{i:03d}" for i in range(n)]
    stocks = {name: PriceSeries(name, dates, prices(returns[i])) for i, name in enumerate(names)}
    return Market(PriceSeries("BENCH", dates, prices(bench)), stocks,
                  dict(zip(names, labels.tolist())), dict(zip(names, betas.tolist())))


@dataclass(frozen=True)
class AgentSpec:
    """A simulated trader.

    Every sell is a round trip: buy a stock chosen by the agent, sell all of
    it ``hold_days`` trading days later, then buy again the same day.  The
    bin is picked by soft-max over the agent's Q-table; ``buy_policy``
    picks the stock inside the bin.
    """

    params: ModelParams
    n_sells: int
    buy_policy: str = "uniform"
    initial_cash: float = 100_000.0
    stake: float = 10_000.0
    hold_days: int = 1
    start_day: int = 0
    player_id: str = "agent"
    seed: int = 0

    def __post_init__(self):
        if self.n_sells < 1:
            raise ValueError("n_sells must be >= 1")
        if self.buy_policy not in BUY_POLICIES:
            raise ValueError(f"buy_policy must be one of {BUY_POLICIES}")
        if self.hold_days < 1:
            raise ValueError("hold_days must be >= 1")
        if not (self.initial_cash > 0 and self.stake > 0):
            raise ValueError("cash and stake must be positive")

    @property
    def days_needed(self) -> int:
        return self.start_day + self.n_sells * self.hold_days + 1


@dataclass(frozen=True)
class AgentRun:
    history: PlayerHistory
    actions: np.ndarray
    probs: np.ndarray = field(repr=False)
    rewards: np.ndarray = field(repr=False)


PRICE_QUANTUM = Decimal("0.0001")


def _money(x: float) -> Decimal:
    return Decimal(repr(float(x))).quantize(PRICE_QUANTUM)


def generate_agent_history(agent: AgentSpec, market: Market,
                           classification: RiskClassification | None = None) -> AgentRun:
    """Let a Q-learning agent trade ``market`` and log its transactions."""
    if agent.days_needed > len(market.dates):
        raise ValueError(f"agent needs {agent.days_needed} trading days, "
                         f"market has {len(market.dates)}")
    bins = (classification or market.classification()).bins
    members = [sorted(s for s, b in bins.items() if b == k) for k in range(N_BINS)]
    if any(not m for m in members):
        raise ValueError("every bin needs at least one stock")

    rng = np.random.default_rng(agent.seed)
    params = agent.params
    q = initial_q()
    portfolio = Portfolio()
    cash = agent.initial_cash
    cursor = [0] * N_BINS
    txs: list[Transaction] = []
    actions = np.empty(agent.n_sells, dtype=np.int64)
    probs = np.empty((agent.n_sells, N_BINS))
    rewards = np.empty(agent.n_sells)
    day = agent.start_day
    for t in range(agent.n_sells):
        s = state_of(portfolio.profit)
        p = softmax_probs(q[s], params.beta)
        a = int(rng.choice(N_BINS, p=p))
        if agent.buy_policy == "uniform":
            stock = members[a][int(rng.integers(len(members[a])))]
        else:
            stock = members[a][cursor[a] % len(members[a])]
            cursor[a] += 1

        series = market.stocks[stock]
        buy_price = _money(series.closes[day])
        sell_price = _money(series.closes[day + agent.hold_days])
        volume = max(1, math.floor(min(agent.stake, cash) / float(buy_price)))
        txs.append(Transaction(market.dates[day], Kind.BUY, stock, volume,
                               buy_price, volume * buy_price))
        portfolio.buy(stock, volume, float(buy_price))
        day += agent.hold_days
        txs.append(Transaction(market.dates[day], Kind.SELL, stock, volume,
                               sell_price, volume * sell_price))
        raw = portfolio.sell(stock, volume, float(sell_price))
        cash += float(volume * (sell_price - buy_price))

        r = squash(raw, params.rho)
        portfolio.profit += r
        q = q_update(q, s, a, r, state_of(portfolio.profit), params)
        actions[t], probs[t], rewards[t] = a, p, raw

    history, diagnostics = make_history(agent.player_id, txs)
    assert not diagnostics, diagnostics
    return AgentRun(history, actions, probs, rewards)


def simulate_population(market: Market, n_agents: int, params: ModelParams, n_sells: int,
                        seed: int = 0, **agent_kwargs) -> list[AgentRun]:
    """``n_agents`` agents with shared parameters and independent seeds.

    Start days are spread at random over whatever part of the market the
    agents' trading does not need.
    """
    hold = agent_kwargs.get("hold_days", 1)
    slack = len(market.dates) - (n_sells * hold + 1)
    if slack < 0:
        raise ValueError("market horizon too short for the requested sells")
    runs = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_agents)):
        rng = np.random.default_rng(child)
        start = int(rng.integers(slack + 1))
        agent = AgentSpec(params, n_sells, start_day=start, player_id=f"agent{i:03d}",
                          seed=int(child.generate_state(1)[0]), **agent_kwargs)
        runs.append(generate_agent_history(agent, market))
    return runs


def truth_document(market: Market, runs: Sequence[AgentRun],
                   params: Sequence[ModelParams]) -> dict:
    return {
        "agents": [{"agent": run.history.player_id, "params": p.as_dict(),
                    "n_sells": run.history.n_sells} for run, p in zip(runs, params)],
        "true_bins": {k: market.true_bins[k] for k in sorted(market.true_bins)},
        "true_betas": {k: market.true_betas[k] for k in sorted(market.true_betas)},
    }


def write_dataset(out_dir: str | os.PathLike, market: Market, runs: Sequence[AgentRun],
                  params: Sequence[ModelParams]) -> dict[str, Path]:
    """Write transactions, prices, benchmark and ground truth; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / fname for name, fname in (
        ("transactions", "transactions.csv"), ("prices", "prices.csv"),
        ("benchmark", "benchmark.csv"), ("truth", "truth.json"))}
    with open(paths["transactions"], "w", newline="", encoding="utf-8") as fh:
        write_transactions(((r.history.player_id, tx) for r in runs
                            for tx in r.history.transactions), fh)
    with open(paths["prices"], "w", newline="", encoding="utf-8") as fh:
        write_prices((market.stocks[k] for k in sorted(market.stocks)), fh)
    with open(paths["benchmark"], "w", newline="", encoding="utf-8") as fh:
        write_prices([market.benchmark], fh)
    with open(paths["truth"], "w", encoding="utf-8") as fh:
        json.dump(truth_document(market, runs, params), fh, indent=2)
        fh.write("\n")
    return paths
