"""Transaction log parsing, per-player histories and activity filtering.

CSV layout (header required)::

    player,date,type,stock,volume,price,total
    p1,2014-01-15,Sell,VOD,100,2.30,230.00

Money is kept as :class:`decimal.Decimal` so that parsing and writing a file
round-trips exactly; floats only appear once a sale's reward is computed.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import os
from dataclasses import dataclass, replace
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import IO, Iterable, Sequence

from .errors import IngestError, OversellError
from .model import Portfolio

HEADER = ("player", "date", "type", "stock", "volume", "price", "total")


class Kind(str, Enum):
    BUY = "Buy"
    SELL = "Sell"

    @classmethod
    def parse(cls, text: str) -> "Kind":
        key = text.strip().lower()
        for kind in cls:
            if kind.value.lower() == key:
                return kind
        raise ValueError(f"unknown transaction type {text!r}")


@dataclass(frozen=True)
class Transaction:
    date: dt.date
    kind: Kind
    stock: str
    volume: int
    price: Decimal
    total: Decimal

    def __post_init__(self):
        if self.volume < 1:
            raise ValueError(f"volume must be >= 1, got {self.volume}")
        if self.price < 0:
            raise ValueError(f"price must be >= 0, got {self.price}")


@dataclass(frozen=True)
class Diagnostic:
    line: int | None
    player: str | None
    message: str

    def to_json(self) -> str:
        return json.dumps({"line": self.line, "player": self.player, "message": self.message})


@dataclass(frozen=True)
class Sale:
    """A valid sell: its position in the history and its realised gain (GBP)."""

    index: int
    transaction: Transaction
    raw_reward: float


@dataclass(frozen=True)
class PlayerHistory:
    player_id: str
    transactions: tuple[Transaction, ...]
    sells: tuple[Sale, ...]
    flagged: tuple[int, ...] = ()

    @property
    def n_sells(self) -> int:
        return len(self.sells)

    @property
    def span_days(self) -> int:
        if not self.transactions:
            return 0
        return (self.transactions[-1].date - self.transactions[0].date).days


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        try:
            return open(source, newline="", encoding="utf-8"), True
        except OSError as exc:
            raise IngestError(f"cannot read {source}: {exc}") from exc
    return source, False


def parse_transactions(source: str | os.PathLike | IO[str],
                       rel_tol: float = 1e-6) -> tuple[list[tuple[str, Transaction]], list[Diagnostic]]:
    """Read the transaction CSV.

    Returns ``(records, diagnostics)``.  Malformed rows are dropped and
    reported with their line number; a ``total`` that disagrees with
    ``volume * price`` beyond ``rel_tol`` only produces a warning.
    """
    stream, owned = _open_text(source)
    records: list[tuple[str, Transaction]] = []
    diagnostics: list[Diagnostic] = []
    try:
        try:
            reader = csv.reader(stream)
            header = next(reader, None)
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot read transactions: {exc}") from exc
        if header is None:
            raise IngestError("transaction file is empty (no header row)")
        header = [h.strip().lower() for h in header]
        if tuple(header) != HEADER:
            raise IngestError(f"unexpected header {header}; want {list(HEADER)}")
        try:
            for row in reader:
                line = reader.line_num
                if not row or all(not cell.strip() for cell in row):
                    continue
                player = row[0].strip() if row else None
                try:
                    tx = _parse_row(row)
                except ValueError as exc:
                    diagnostics.append(Diagnostic(line, player, str(exc)))
                    continue
                expected = tx.volume * tx.price
                if abs(tx.total - expected) > Decimal(repr(rel_tol)) * abs(expected):
                    diagnostics.append(Diagnostic(
                        line, player,
                        f"warning: total {tx.total} != volume*price {expected}"))
                records.append((player, tx))
        except (OSError, UnicodeDecodeError) as exc:
            raise IngestError(f"cannot read transactions: {exc}") from exc
    finally:
        if owned:
            stream.close()
    return records, diagnostics


def _parse_row(row: Sequence[str]) -> Transaction:
    if len(row) != len(HEADER):
        raise ValueError(f"expected {len(HEADER)} fields, got {len(row)}")
    player, date, kind, stock, volume, price, total = (c.strip() for c in row)
    if not player:
        raise ValueError("empty player id")
    if not stock:
        raise ValueError("empty stock id")
    try:
        date = dt.date.fromisoformat(date)
    except ValueError:
        raise ValueError(f"bad date {date!r}") from None
    kind = Kind.parse(kind)
    try:
        volume = int(volume)
    except ValueError:
        raise ValueError(f"bad volume {volume!r}") from None
    if volume < 1:
        raise ValueError(f"non-positive volume {volume}")
    try:
        price, total = Decimal(price), Decimal(total)
    except InvalidOperation:
        raise ValueError(f"bad price/total {price!r}/{total!r}") from None
    if not (price.is_finite() and total.is_finite()):
        raise ValueError("price and total must be finite")
    if price < 0:
        raise ValueError(f"negative price {price}")
    return Transaction(date, kind, stock, volume, price, total)


def write_transactions(records: Iterable[tuple[str, Transaction]], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(HEADER)
    for player, tx in records:
        writer.writerow([player, tx.date.isoformat(), tx.kind.value, tx.stock,
                         tx.volume, str(tx.price), str(tx.total)])


def format_transactions(records: Iterable[tuple[str, Transaction]]) -> str:
    buf = io.StringIO()
    write_transactions(records, buf)
    return buf.getvalue()


def write_diagnostics(diagnostics: Iterable[Diagnostic], stream: IO[str]) -> None:
    for d in diagnostics:
        stream.write(d.to_json() + "\n")


def derive_sells(player_id: str, transactions: Sequence[Transaction]
                 ) -> tuple[tuple[Sale, ...], tuple[int, ...], list[Diagnostic]]:
    """Replay buys into a cost-basis portfolio and price every valid sell.

    A sell that exceeds the shares held is flagged, left out of the sell
    sequence and does not touch the portfolio.
    """
    portfolio = Portfolio()
    sells, flagged, diagnostics = [], [], []
    for i, tx in enumerate(transactions):
        if tx.kind is Kind.BUY:
            portfolio.buy(tx.stock, tx.volume, float(tx.price))
            continue
        try:
            reward = portfolio.sell(tx.stock, tx.volume, float(tx.price))
        except OversellError as exc:
            flagged.append(i)
            diagnostics.append(Diagnostic(None, player_id, f"excluded sell #{i}: {exc}"))
            continue
        sells.append(Sale(i, tx, reward))
    return tuple(sells), tuple(flagged), diagnostics


def make_history(player_id: str, transactions: Sequence[Transaction]
                 ) -> tuple[PlayerHistory, list[Diagnostic]]:
    ordered = tuple(sorted(transactions, key=lambda tx: tx.date))  # sort is stable
    sells, flagged, diagnostics = derive_sells(player_id, ordered)
    return PlayerHistory(player_id, ordered, sells, flagged), diagnostics


def build_histories(records: Iterable[tuple[str, Transaction]]
                    ) -> tuple[list[PlayerHistory], list[Diagnostic]]:
    """Group records by player (first-seen order) into date-sorted histories."""
    grouped: dict[str, list[Transaction]] = {}
    for player, tx in records:
        grouped.setdefault(player, []).append(tx)
    histories, diagnostics = [], []
    for player, txs in grouped.items():
        history, diags = make_history(player, txs)
        histories.append(history)
        diagnostics.extend(diags)
    return histories, diagnostics


def filter_active(histories: Iterable[PlayerHistory], min_sells: int = 5,
                  min_span_days: int = 30) -> list[PlayerHistory]:
    if min_sells < 1 or min_span_days < 0:
        raise ValueError("need min_sells >= 1 and min_span_days >= 0")
    return [h for h in histories
            if h.n_sells >= min_sells and h.span_days >= min_span_days]


def cap_transactions(history: PlayerHistory, cap: int) -> PlayerHistory:
    """Keep the first ``cap`` transactions and re-derive the sells."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if len(history.transactions) <= cap:
        return history
    prefix = history.transactions[:cap]
    sells, flagged, _ = derive_sells(history.player_id, prefix)
    return replace(history, transactions=prefix, sells=sells, flagged=flagged)
