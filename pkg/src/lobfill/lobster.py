"""Reading and writing of LOBSTER-style message and orderbook CSV files.

Message files have six unnamed columns (time, event type, order id, size,
price, direction); orderbook files have 4*L columns per row in the order
ask_price_1, ask_size_1, bid_price_1, bid_size_1, ..., level L. Prices are
integer dollars times 10000, times are seconds since midnight with up to
six decimal places. Empty book levels are encoded with a sentinel price of
-9999999999 and size 0.

All functions here are pure; parsing the same bytes always yields the same
result. Timestamps are stored as integer microseconds since midnight so
round-trips are exact.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

SENTINEL_PRICE = -9999999999
MICROS = 1_000_000

#: LOBSTER event-type codes: 1 submission, 2 partial cancellation,
#: 3 deletion, 4 visible execution, 5 hidden execution, 6 auction cross,
#: 7 trading halt.
VALID_EVENT_TYPES = frozenset({1, 2, 3, 4, 5, 6, 7})


class LobsterParseError(ValueError):
    """Malformed message or orderbook row; carries the 1-based row number."""

    def __init__(self, row: int, msg: str):
        super().__init__(f"row {row}: {msg}")
        self.row = row


@dataclass(frozen=True, slots=True)
class Message:
    """One LOBSTER book event.

    ``time_us`` is integer microseconds since midnight. ``price`` is the
    integer dollar price times 10000. ``direction`` is +1 for buy orders
    and -1 for sell orders.
    """

    time_us: int
    event_type: int
    order_id: int
    size: int
    price: int
    direction: int

    @property
    def time(self) -> float:
        """Event time in seconds since midnight (float, lossy display only)."""
        return self.time_us / MICROS

    def validate(self) -> None:
        if self.time_us < 0:
            raise ValueError(f"negative time: {self.time_us}")
        if self.event_type not in VALID_EVENT_TYPES:
            raise ValueError(f"unknown event type: {self.event_type}")
        if self.direction not in (-1, 1):
            raise ValueError(f"direction must be +1/-1, got {self.direction}")
        if self.price <= 0:
            raise ValueError(f"price must be positive, got {self.price}")
        if self.event_type == 1 and self.size < 1:
            raise ValueError(f"submission size must be >= 1, got {self.size}")


@dataclass(frozen=True, slots=True)
class SnapshotRow:
    """Top-L book snapshot; ``None`` marks an absent level.

    ``asks`` and ``bids`` are tuples of (price, size) pairs or ``None``,
    one entry per level, level 1 first.
    """

    asks: tuple[tuple[int, int] | None, ...]
    bids: tuple[tuple[int, int] | None, ...]

    @property
    def levels(self) -> int:
        return len(self.asks)

    def validate(self) -> None:
        if len(self.asks) != len(self.bids):
            raise ValueError("ask/bid level counts differ")
        if self.asks[0] is not None and self.bids[0] is not None:
            if self.asks[0][0] <= self.bids[0][0]:
                raise ValueError(
                    f"crossed book: ask {self.asks[0][0]} <= bid {self.bids[0][0]}"
                )
        prev = None
        for lvl in self.asks:
            if lvl is None:
                continue
            if prev is not None and lvl[0] <= prev:
                raise ValueError("ask prices not strictly increasing")
            prev = lvl[0]
        prev = None
        for lvl in self.bids:
            if lvl is None:
                continue
            if prev is not None and lvl[0] >= prev:
                raise ValueError("bid prices not strictly decreasing")
            prev = lvl[0]


def parse_time_us(field: str, row: int) -> int:
    """Parse a seconds-since-midnight decimal into integer microseconds."""
    if "." in field:
        whole, frac = field.split(".", 1)
    else:
        whole, frac = field, ""
    if len(frac) > 6:
        raise LobsterParseError(row, f"time has sub-microsecond precision: {field!r}")
    try:
        return int(whole) * MICROS + int(frac.ljust(6, "0") or "0")
    except ValueError:
        raise LobsterParseError(row, f"bad time field: {field!r}") from None


def format_time_us(time_us: int) -> str:
    """Render integer microseconds as seconds with exactly six decimals."""
    return f"{time_us // MICROS}.{time_us % MICROS:06d}"


def _open_lines(reader) -> Iterator[str]:
    if isinstance(reader, (str, Path)):
        with open(reader, "r", newline="") as fh:
            yield from fh
        return
    if isinstance(reader, bytes):
        reader = io.StringIO(reader.decode("ascii"))
    elif isinstance(reader, str):
        raise TypeError("pass a path, bytes, or file object, not a str of data")
    for line in reader:
        if isinstance(line, bytes):
            line = line.decode("ascii")
        yield line


def parse_messages(reader: str | Path | bytes | IO) -> list[Message]:
    """Parse a LOBSTER message stream into a list of :class:`Message`.

    Non-decreasing timestamps are expected; a decreasing timestamp raises
    a warning (not an error) since exchanges emit equal timestamps freely.
    """
    out: list[Message] = []
    prev_time = -1
    for row, line in enumerate(_open_lines(reader), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 6:
            raise LobsterParseError(row, f"expected 6 columns, got {len(fields)}")
        time_us = parse_time_us(fields[0].strip(), row)
        try:
            event_type = int(fields[1])
            order_id = int(fields[2])
            size = int(fields[3])
            price = int(fields[4])
            direction = int(fields[5])
        except ValueError as exc:
            raise LobsterParseError(row, f"bad integer field: {exc}") from None
        msg = Message(time_us, event_type, order_id, size, price, direction)
        try:
            msg.validate()
        except ValueError as exc:
            raise LobsterParseError(row, str(exc)) from None
        if time_us < prev_time:
            warnings.warn(f"time decreases at row {row}", stacklevel=2)
        prev_time = time_us
        out.append(msg)
    return out


def write_messages(msgs: Iterable[Message], writer: str | Path | IO) -> None:
    """Write messages in LOBSTER CSV format; inverse of :func:`parse_messages`."""
    lines = (
        f"{format_time_us(m.time_us)},{m.event_type},{m.order_id},"
        f"{m.size},{m.price},{m.direction}\n"
        for m in msgs
    )
    if isinstance(writer, (str, Path)):
        with open(writer, "w", newline="") as fh:
            fh.writelines(lines)
    else:
        for line in lines:
            data = line
            if isinstance(writer, (io.RawIOBase, io.BufferedIOBase)):
                data = line.encode("ascii")
            try:
                writer.write(data)
            except TypeError:
                writer.write(line.encode("ascii"))


def parse_snapshots(reader: str | Path | bytes | IO, levels: int) -> list[SnapshotRow]:
    """Parse a LOBSTER orderbook file with ``levels`` book levels per side."""
    out: list[SnapshotRow] = []
    for row, line in enumerate(_open_lines(reader), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 4 * levels:
            raise LobsterParseError(
                row, f"expected {4 * levels} columns, got {len(fields)}"
            )
        try:
            vals = [int(f) for f in fields]
        except ValueError as exc:
            raise LobsterParseError(row, f"bad integer field: {exc}") from None
        asks: list[tuple[int, int] | None] = []
        bids: list[tuple[int, int] | None] = []
        for l in range(levels):
            ap, av, bp, bv = vals[4 * l : 4 * l + 4]
            asks.append(None if abs(ap) == abs(SENTINEL_PRICE) else (ap, av))
            bids.append(None if abs(bp) == abs(SENTINEL_PRICE) else (bp, bv))
        snap = SnapshotRow(tuple(asks), tuple(bids))
        try:
            snap.validate()
        except ValueError as exc:
            raise LobsterParseError(row, str(exc)) from None
        out.append(snap)
    return out


def write_snapshots(rows: Sequence[SnapshotRow], writer: str | Path | IO) -> None:
    """Write orderbook rows in LOBSTER 4*L column format."""

    def render(row: SnapshotRow) -> str:
        cells: list[str] = []
        for ask, bid in zip(row.asks, row.bids):
            ap, av = ask if ask is not None else (SENTINEL_PRICE, 0)
            bp, bv = bid if bid is not None else (SENTINEL_PRICE, 0)
            cells += [str(ap), str(av), str(bp), str(bv)]
        return ",".join(cells) + "\n"

    if isinstance(writer, (str, Path)):
        with open(writer, "w", newline="") as fh:
            fh.writelines(render(r) for r in rows)
    else:
        for r in rows:
            writer.write(render(r))
