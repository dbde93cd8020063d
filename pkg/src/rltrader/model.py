"""Q-learning likelihood engine for sell-only trading histories.

A player is modelled as an agent with a 2 x 3 table of action values: two
profit states (loss, win) and three actions, one per risk bin.  Only sells
are choices.  Each sell contributes ``-log P(bin)`` under a soft-max over the
current state's row, then the table is moved towards the squashed sale
reward with the usual one-step Q-learning rule.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple

import numpy as np
from numba import njit

from .errors import OversellError, UnclassifiedStockError, UndefinedLikelihoodError

N_STATES = 2
N_ACTIONS = 3
LOSS, WIN = 0, 1

DEFAULT_RHO = 500.0
ALPHA_BOUNDS = (1e-4, 2.0)
BETA_BOUNDS = (0.0, 50.0)
GAMMA_BOUNDS = (0.0, 0.9999)

REWARD_SCHEMES = ("cost_basis", "eq4_literal")


@dataclass(frozen=True)
class ModelParams:
    """Learning rate, soft-max inverse temperature and discount factor.

    ``gamma == 0`` is the myopic model.  ``rho`` is the reward squash scale
    in GBP and is never fitted.
    """

    alpha: float
    beta: float
    gamma: float = 0.0
    rho: float = DEFAULT_RHO

    def __post_init__(self):
        for name, (lo, hi) in (
            ("alpha", ALPHA_BOUNDS),
            ("beta", BETA_BOUNDS),
            ("gamma", GAMMA_BOUNDS),
        ):
            value = getattr(self, name)
            if not (lo <= value <= hi):
                raise ValueError(f"{name}={value!r} outside [{lo}, {hi}]")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho!r}")

    def as_dict(self) -> dict:
        return asdict(self)


class Portfolio:
    """Per-stock share counts with volume-weighted average purchase price.

    ``profit`` is the running sum of squashed sale rewards; it is maintained
    by callers that replay sells (the portfolio itself only does cost basis).
    """

    def __init__(self):
        self.holdings: dict[str, int] = {}
        self.avg_price: dict[str, float] = {}
        self.profit = 0.0

    def held(self, stock: str) -> int:
        return self.holdings.get(stock, 0)

    def buy(self, stock: str, volume: int, price: float) -> None:
        if volume < 1:
            raise ValueError("volume must be >= 1")
        held = self.held(stock)
        old = self.avg_price.get(stock, 0.0)
        self.avg_price[stock] = (held * old + volume * price) / (held + volume)
        self.holdings[stock] = held + volume

    def sell(self, stock: str, volume: int, price: float) -> float:
        """Remove ``volume`` shares and return the realised gain in GBP."""
        held = self.held(stock)
        if volume > held:
            raise OversellError(f"selling {volume} {stock} with only {held} held")
        reward = volume * (price - self.avg_price[stock])
        self.holdings[stock] = held - volume
        if self.holdings[stock] == 0:
            del self.holdings[stock]
            del self.avg_price[stock]
        return reward


def sell_reward(portfolio: Portfolio, stock: str, volume: int, price: float) -> float:
    """Realised gain of a sale against the pre-sale average cost.

    Mutates ``portfolio``: the holding shrinks, the average price of the
    remaining shares does not change.
    """
    return portfolio.sell(stock, volume, float(price))


def squash(raw_reward, rho: float = DEFAULT_RHO):
    """Map a GBP reward into (-1, 1); ``(1 - e^(-r/rho)) / (1 + e^(-r/rho))``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    # identical to the logistic form, but does not overflow for large |r|
    if np.ndim(raw_reward) == 0:
        return math.tanh(float(raw_reward) / (2.0 * rho))
    return np.tanh(np.asarray(raw_reward, dtype=float) / (2.0 * rho))


def state_of(profit: float) -> int:
    return LOSS if profit < 0 else WIN


def softmax_probs(q_row, beta: float) -> np.ndarray:
    z = beta * np.asarray(q_row, dtype=float)
    z = np.exp(z - z.max())
    return z / z.sum()


def initial_q() -> np.ndarray:
    return np.zeros((N_STATES, N_ACTIONS))


def q_update(q, s: int, a: int, r: float, s_next: int, params: ModelParams) -> np.ndarray:
    """One Q-learning step; returns a new table, ``q`` is left untouched."""
    q = np.array(q, dtype=float)
    target = r + params.gamma * q[s_next].max()
    q[s, a] += params.alpha * (target - q[s, a])
    return q


@dataclass(frozen=True)
class SellEvent:
    step: int
    stock: str
    action: int
    raw_reward: float
    squashed_reward: float
    state_before: int
    state_after: int
    probs: tuple[float, float, float]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["probs"] = list(self.probs)
        return d


class SellSequence(NamedTuple):
    """Parameter-independent arrays derived from a history, one row per sell."""

    stocks: tuple[str, ...]
    actions: np.ndarray
    raw_rewards: np.ndarray
    rewards: np.ndarray
    states_before: np.ndarray
    states_after: np.ndarray

    def __len__(self):
        return len(self.actions)


def _bins_of(classification) -> Mapping[str, int]:
    return getattr(classification, "bins", classification)


def encode_sells(history, classification, rho: float = DEFAULT_RHO,
                 reward: str = "cost_basis") -> SellSequence:
    """Turn a history's sells into action/reward/state arrays.

    States follow the running sum of squashed rewards, so they do not depend
    on the learning parameters and can be computed once per fit.
    """
    if reward == "eq4_literal":
        raise NotImplementedError(
            "reward='eq4_literal' is reserved; only 'cost_basis' is implemented")
    if reward != "cost_basis":
        raise ValueError(f"unknown reward scheme {reward!r}")
    sells = history.sells
    if not sells:
        raise UndefinedLikelihoodError(
            f"player {history.player_id!r} has no sell events")
    bins = _bins_of(classification)
    n = len(sells)
    actions = np.empty(n, dtype=np.int64)
    raw = np.empty(n)
    stocks = []
    for i, sale in enumerate(sells):
        stock = sale.transaction.stock
        try:
            actions[i] = bins[stock]
        except KeyError:
            raise UnclassifiedStockError(f"stock {stock!r} has no risk bin") from None
        raw[i] = sale.raw_reward
        stocks.append(stock)
    # scalar squash per sell, so values match a step-by-step simulation bit for bit
    rewards = np.array([squash(r, rho) for r in raw])
    before = np.empty(n, dtype=np.int64)
    after = np.empty(n, dtype=np.int64)
    profit = 0.0
    for i in range(n):
        before[i] = state_of(profit)
        profit += rewards[i]
        after[i] = state_of(profit)
    return SellSequence(tuple(stocks), actions, raw, rewards, before, after)


def replay_nll(history, classification, params: ModelParams,
               reward: str = "cost_basis") -> tuple[float, list[SellEvent]]:
    """Negative log-likelihood (nats) of a player's sells, with a full trace."""
    seq = encode_sells(history, classification, params.rho, reward)
    q = initial_q()
    nll = 0.0
    trace = []
    for t in range(len(seq)):
        s, a = int(seq.states_before[t]), int(seq.actions[t])
        s_next = int(seq.states_after[t])
        p = softmax_probs(q[s], params.beta)
        nll -= math.log(p[a])
        r = float(seq.rewards[t])
        trace.append(SellEvent(t + 1, seq.stocks[t], a, float(seq.raw_rewards[t]),
                               r, s, s_next, tuple(float(x) for x in p)))
        q = q_update(q, s, a, r, s_next, params)
    return nll, trace


@njit(cache=True)
def _sequence_nll(actions, rewards, states_before, states_after, alpha, beta, gamma):
    q = np.zeros((2, 3))
    total = 0.0
    for t in range(actions.shape[0]):
        s = states_before[t]
        a = actions[t]
        z0 = beta * q[s, 0]
        z1 = beta * q[s, 1]
        z2 = beta * q[s, 2]
        zmax = max(z0, z1, z2)
        lse = zmax + math.log(math.exp(z0 - zmax) + math.exp(z1 - zmax) + math.exp(z2 - zmax))
        total += lse - beta * q[s, a]
        sn = states_after[t]
        target = rewards[t] + gamma * max(q[sn, 0], q[sn, 1], q[sn, 2])
        q[s, a] += alpha * (target - q[s, a])
    return total


def sequence_nll(seq: SellSequence, alpha: float, beta: float, gamma: float = 0.0) -> float:
    """Compiled NLL over a pre-encoded sell sequence; used inside the optimizer."""
    return float(_sequence_nll(seq.actions, seq.rewards, seq.states_before,
                               seq.states_after, float(alpha), float(beta), float(gamma)))
