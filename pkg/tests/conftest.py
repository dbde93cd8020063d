import datetime as dt
from decimal import Decimal

import pytest

from rltrader.ingest import Kind, Transaction, make_history
from rltrader.sim import MarketSpec, generate_market

D0 = dt.date(2014, 1, 6)


def tx(kind, stock, volume, price, day=0):
    price = Decimal(str(price))
    return Transaction(D0 + dt.timedelta(days=day), Kind(kind), stock, volume, price,
                       volume * price)


def history_of(rows, player="p1"):
    """Build a history from ``(kind, stock, volume, price)`` rows, one day apart."""
    txs = [tx(k, s, v, p, day=i) for i, (k, s, v, p) in enumerate(rows)]
    history, _ = make_history(player, txs)
    return history


# one buy, then sells worth +50, 0 and -50 GBP
THREE_SELLS = [("Buy", "VOD", 300, 2.0), ("Sell", "VOD", 100, 2.5),
               ("Sell", "VOD", 100, 2.0), ("Sell", "VOD", 100, 1.5)]


@pytest.fixture
def three_sell_history():
    return history_of(THREE_SELLS)


@pytest.fixture(scope="session")
def long_market():
    return generate_market(MarketSpec(horizon_days=520, seed=1))
