"""Event-by-event limit order book reconstruction with FIFO level queues.

The book is rebuilt by applying messages in stream order. Each price level
keeps a FIFO queue of (order id, remaining size) entries, so queue position
is available at any time. ``apply`` mutates the book in place and returns
an :class:`EventEffect` describing fills and removals caused by the event.

Equal timestamps are processed in file order; that is the only tiebreak the
data offers. Hidden executions (type 5) never touch the visible queues;
they are surfaced in the effect for downstream consumers.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field

from .lobster import Message, SnapshotRow

BUY = 1
SELL = -1


class BookError(ValueError):
    """Inconsistent message for the current book state."""


class OneSidedBookError(BookError):
    """Mid/spread requested while one side of the book is empty."""


@dataclass(slots=True)
class Fill:
    order_id: int
    size: int
    price: int
    direction: int  # side of the resting order that was hit


@dataclass(slots=True)
class EventEffect:
    """What a single message did to the book."""

    fills: list[Fill] = field(default_factory=list)
    submitted: int | None = None
    cancelled: int | None = None
    removed: list[int] = field(default_factory=list)
    hidden_exec: Fill | None = None


class _Side:
    """One side of the book: price -> FIFO queue, with a sorted price index."""

    __slots__ = ("direction", "queues", "volumes", "prices")

    def __init__(self, direction: int):
        self.direction = direction
        self.queues: dict[int, deque[list[int]]] = {}
        self.volumes: dict[int, int] = {}
        # ascending for asks, so best is prices[0]; descending index is
        # emulated by storing negated prices for bids.
        self.prices: list[int] = []

    def _key(self, price: int) -> int:
        return price if self.direction == SELL else -price

    def best(self) -> int | None:
        if not self.prices:
            return None
        key = self.prices[0]
        return key if self.direction == SELL else -key

    def add(self, order_id: int, price: int, size: int) -> None:
        q = self.queues.get(price)
        if q is None:
            q = deque()
            self.queues[price] = q
            self.volumes[price] = 0
            bisect.insort(self.prices, self._key(price))
        q.append([order_id, size])
        self.volumes[price] += size

    def remove_level_if_empty(self, price: int) -> None:
        if not self.queues[price]:
            del self.queues[price]
            del self.volumes[price]
            key = self._key(price)
            idx = bisect.bisect_left(self.prices, key)
            self.prices.pop(idx)

    def top(self, levels: int) -> list[tuple[int, int]]:
        out = []
        for key in self.prices[:levels]:
            price = key if self.direction == SELL else -key
            out.append((price, self.volumes[price]))
        return out


class BookState:
    """Full L-level book with per-level FIFO queues.

    ``strict`` mode raises on crossing submissions (real replay data should
    never cross); lenient mode matches them against the opposite side.
    """

    def __init__(self, strict: bool = True):
        self.strict = strict
        self.bids = _Side(BUY)
        self.asks = _Side(SELL)
        # order_id -> (side, price)
        self.index: dict[int, tuple[_Side, int]] = {}
        self.clock_us = 0

    def side(self, direction: int) -> _Side:
        return self.bids if direction == BUY else self.asks

    def best_bid(self) -> int | None:
        return self.bids.best()

    def best_ask(self) -> int | None:
        return self.asks.best()

    def level_queue(self, direction: int, price: int) -> list[tuple[int, int]]:
        """Copy of the FIFO queue at a price level, front first."""
        q = self.side(direction).queues.get(price)
        return [(oid, sz) for oid, sz in q] if q else []

    # -- event application ------------------------------------------------

    def apply(self, msg: Message) -> EventEffect:
        self.clock_us = msg.time_us
        effect = EventEffect()
        etype = msg.event_type
        if etype == 1:
            self._submit(msg, effect)
        elif etype in (2, 3):
            self._cancel(msg, effect, full=etype == 3)
        elif etype == 4:
            self._execute(msg, effect)
        elif etype == 5:
            effect.hidden_exec = Fill(msg.order_id, msg.size, msg.price, msg.direction)
        # types 6 (auction) and 7 (halt) do not alter the visible book
        return effect

    def _submit(self, msg: Message, effect: EventEffect) -> None:
        if msg.order_id in self.index:
            raise BookError(
                f"duplicate order id {msg.order_id} at t={msg.time_us}"
            )
        remaining = msg.size
        opp = self.side(-msg.direction)
        opp_best = opp.best()
        crosses = opp_best is not None and (
            msg.price >= opp_best if msg.direction == BUY else msg.price <= opp_best
        )
        if crosses:
            if self.strict:
                raise BookError(
                    f"crossing submission id={msg.order_id} at t={msg.time_us}"
                )
            remaining = self._match(msg.direction, msg.price, remaining, effect)
        if remaining > 0:
            self.side(msg.direction).add(msg.order_id, msg.price, remaining)
            self.index[msg.order_id] = (self.side(msg.direction), msg.price)
            effect.submitted = msg.order_id

    def _match(self, direction: int, limit: int, size: int, effect: EventEffect) -> int:
        opp = self.side(-direction)
        while size > 0:
            best = opp.best()
            if best is None:
                break
            if direction == BUY and best > limit:
                break
            if direction == SELL and best < limit:
                break
            q = opp.queues[best]
            head = q[0]
            take = min(size, head[1])
            head[1] -= take
            opp.volumes[best] -= take
            size -= take
            effect.fills.append(Fill(head[0], take, best, -direction))
            if head[1] == 0:
                q.popleft()
                del self.index[head[0]]
                effect.removed.append(head[0])
                opp.remove_level_if_empty(best)
        return size

    def _locate(self, msg: Message) -> tuple[_Side, int]:
        entry = self.index.get(msg.order_id)
        if entry is None:
            raise BookError(
                f"unknown order id {msg.order_id} for type {msg.event_type} "
                f"at t={msg.time_us}"
            )
        return entry

    def _cancel(self, msg: Message, effect: EventEffect, full: bool) -> None:
        side, price = self._locate(msg)
        q = side.queues[price]
        for entry in q:
            if entry[0] == msg.order_id:
                break
        else:  # pragma: no cover - index and queue always agree
            raise BookError(f"order id {msg.order_id} missing from queue")
        reduce = entry[1] if full else min(msg.size, entry[1])
        entry[1] -= reduce
        side.volumes[price] -= reduce
        effect.cancelled = msg.order_id
        if entry[1] == 0:
            q.remove(entry)
            del self.index[msg.order_id]
            effect.removed.append(msg.order_id)
            side.remove_level_if_empty(price)

    def _execute(self, msg: Message, effect: EventEffect) -> None:
        side, price = self._locate(msg)
        q = side.queues[price]
        for entry in q:
            if entry[0] == msg.order_id:
                break
        else:  # pragma: no cover
            raise BookError(f"order id {msg.order_id} missing from queue")
        take = min(msg.size, entry[1])
        entry[1] -= take
        side.volumes[price] -= take
        effect.fills.append(Fill(msg.order_id, take, price, side.direction))
        if entry[1] == 0:
            q.remove(entry)
            del self.index[msg.order_id]
            effect.removed.append(msg.order_id)
            side.remove_level_if_empty(price)

    # -- views -------------------------------------------------------------

    def snapshot(self, levels: int) -> SnapshotRow:
        asks: list[tuple[int, int] | None] = [None] * levels
        bids: list[tuple[int, int] | None] = [None] * levels
        for i, lvl in enumerate(self.asks.top(levels)):
            asks[i] = lvl
        for i, lvl in enumerate(self.bids.top(levels)):
            bids[i] = lvl
        return SnapshotRow(tuple(asks), tuple(bids))

    def midprice(self) -> float:
        bb, ba = self.best_bid(), self.best_ask()
        if bb is None or ba is None:
            raise OneSidedBookError("midprice needs both best levels")
        return (bb + ba) / 2

    def spread(self) -> int:
        bb, ba = self.best_bid(), self.best_ask()
        if bb is None or ba is None:
            raise OneSidedBookError("spread needs both best levels")
        return ba - bb

    def check_invariants(self) -> None:
        bb, ba = self.best_bid(), self.best_ask()
        if bb is not None and ba is not None and bb >= ba:
            raise BookError(f"crossed book: bid {bb} >= ask {ba}")
        for side in (self.bids, self.asks):
            for price, q in side.queues.items():
                if side.volumes[price] != sum(sz for _, sz in q):
                    raise BookError(f"volume cache mismatch at {price}")


def replay(
    messages,
    strict: bool = True,
    levels: int | None = None,
    check: bool = False,
):
    """Apply all messages to a fresh book.

    Returns the final book; if ``levels`` is given, also returns the list
    of post-event snapshots (one per message).
    """
    book = BookState(strict=strict)
    snaps: list[SnapshotRow] = []
    for msg in messages:
        book.apply(msg)
        if check:
            book.check_invariants()
        if levels is not None:
            snaps.append(book.snapshot(levels))
    if levels is not None:
        return book, snaps
    return book
