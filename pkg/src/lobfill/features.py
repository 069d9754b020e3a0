"""Predictive features over trade-clock lookback windows.

Feature rows are sampled at trade events (type-4 executions), one row per
execution message. A window of length T covers the last T trades strictly
before order submission, earliest trade first.

Columns, raw mode: time of day, realised volatility, volume imbalance,
microprice, then ask price/volume and bid price/volume for levels 1..5.
Order-flow mode replaces the twenty book columns with ten per-level signed
flows. Normalisation (applied per window): prices as tick differences from
the window's last midprice, volumes through log1p, time of day in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .book import BookState
from .lobster import Message

SECONDS_PER_DAY = 86400.0
DEFAULT_LEVELS = 5
DEFAULT_VOL_WINDOW = 1000
ABSENT_TICKS = 100.0  # price placeholder for empty levels, in ticks


class FeatureError(ValueError):
    pass


def volume_imbalance(vb1: float, va1: float) -> float:
    """(bid - ask) / (bid + ask) top-of-book volume ratio, in [-1, 1]."""
    tot = vb1 + va1
    if tot <= 0:
        raise FeatureError("volume imbalance undefined with empty top of book")
    return (vb1 - va1) / tot


def microprice(pb1: float, vb1: float, pa1: float, va1: float) -> float:
    """Volume-weighted top-of-book price."""
    tot = vb1 + va1
    if tot <= 0:
        raise FeatureError("microprice undefined with empty top of book")
    return (vb1 * pa1 + va1 * pb1) / tot


def realized_vol(mids: np.ndarray, window: int = DEFAULT_VOL_WINDOW) -> np.ndarray:
    """Rolling mean of squared log midprice returns; expanding warm-up.

    Output is aligned with ``mids``; the first element is 0 (no return yet).
    """
    mids = np.asarray(mids, dtype=float)
    if mids.size < 2:
        return np.zeros_like(mids)
    r2 = np.square(np.diff(np.log(mids)))
    csum = np.concatenate([[0.0], np.cumsum(r2)])
    n = r2.size
    idx = np.arange(1, n + 1)
    lo = np.maximum(idx - window, 0)
    out = np.zeros(mids.size)
    out[1:] = (csum[idx] - csum[lo]) / (idx - lo)
    return out


def order_flow(prev, cur, levels: int = DEFAULT_LEVELS) -> np.ndarray:
    """Per-level signed flows between two consecutive snapshots.

    Bid level: +dV if the price is unchanged, +V if it improved, -V_prev if
    it worsened; mirrored for the ask side. Returns shape (levels, 2) with
    columns (ask_flow, bid_flow).
    """
    out = np.zeros((levels, 2))
    for l in range(levels):
        for col, (p0, p1, better) in enumerate(
            (
                (prev.asks[l], cur.asks[l], -1),  # lower ask price = improved
                (prev.bids[l], cur.bids[l], +1),
            )
        ):
            if p0 is None and p1 is None:
                continue
            if p0 is None:
                out[l, col] = p1[1]
            elif p1 is None:
                out[l, col] = -p0[1]
            elif p1[0] == p0[0]:
                out[l, col] = p1[1] - p0[1]
            elif (p1[0] - p0[0]) * better > 0:
                out[l, col] = p1[1]
            else:
                out[l, col] = -p0[1]
    return out


def feature_names(mode: str = "raw", levels: int = DEFAULT_LEVELS) -> list[str]:
    names = ["time_of_day", "realized_vol", "imbalance", "microprice"]
    if mode == "raw":
        for l in range(1, levels + 1):
            names += [f"ask_price_{l}", f"ask_vol_{l}", f"bid_price_{l}", f"bid_vol_{l}"]
    elif mode == "orderflow":
        for l in range(1, levels + 1):
            names += [f"ask_flow_{l}", f"bid_flow_{l}"]
    else:
        raise FeatureError(f"unknown feature mode: {mode}")
    return names


@dataclass
class TradeFeatures:
    """Unnormalised per-trade feature rows for one stream."""

    times_us: np.ndarray  # (n,) trade event times
    rows: np.ndarray  # (n, F) raw values; absent book levels are NaN
    mids: np.ndarray  # (n,) midprice at each trade
    mode: str
    levels: int
    tick: int

    @property
    def names(self) -> list[str]:
        return feature_names(self.mode, self.levels)

    def n_trades_before(self, time_us: int) -> int:
        return int(np.searchsorted(self.times_us, time_us, side="left"))


def compute_trade_features(
    messages: list[Message],
    mode: str = "raw",
    levels: int = DEFAULT_LEVELS,
    tick: int = 100,
    vol_window: int = DEFAULT_VOL_WINDOW,
    strict: bool = True,
) -> TradeFeatures:
    """Replay a stream and record one raw feature row per execution message.

    Executions that leave the book one-sided at level 1 are skipped, so
    rows never contain missing top-of-book values.
    """
    names = feature_names(mode, levels)
    book = BookState(strict=strict)
    times: list[int] = []
    mids: list[float] = []
    rows: list[list[float]] = []
    prev_snap = None
    for msg in messages:
        book.apply(msg)
        if msg.event_type != 4:
            continue
        snap = book.snapshot(levels)
        if snap.asks[0] is None or snap.bids[0] is None:
            continue
        pa1, va1 = snap.asks[0]
        pb1, vb1 = snap.bids[0]
        row = [
            msg.time_us / 1e6 / SECONDS_PER_DAY,
            0.0,  # volatility filled in after the pass
            volume_imbalance(vb1, va1),
            microprice(pb1, vb1, pa1, va1),
        ]
        if mode == "raw":
            for l in range(levels):
                for lvl in (snap.asks[l], snap.bids[l]):
                    if lvl is None:
                        row += [np.nan, 0.0]
                    else:
                        row += [float(lvl[0]), float(lvl[1])]
        else:
            flows = (
                order_flow(prev_snap, snap, levels)
                if prev_snap is not None
                else np.zeros((levels, 2))
            )
            row += [float(v) for v in flows.ravel()]
        prev_snap = snap
        times.append(msg.time_us)
        mids.append((pa1 + pb1) / 2.0)
        rows.append(row)
    rows_arr = np.array(rows, dtype=float).reshape(len(rows), len(names))
    mids_arr = np.array(mids, dtype=float)
    if len(rows) >= 1:
        rows_arr[:, 1] = realized_vol(mids_arr, vol_window)
    return TradeFeatures(
        np.array(times, dtype=np.int64), rows_arr, mids_arr, mode, levels, tick
    )


def window_at(tf: TradeFeatures, submit_time_us: int, T: int) -> np.ndarray:
    """Normalised T x F feature window ending strictly before submit time."""
    end = tf.n_trades_before(submit_time_us)
    if end < T:
        raise FeatureError(
            f"need {T} trades before submission, have {end}"
        )
    raw = tf.rows[end - T : end].copy()
    mid_last = tf.mids[end - 1]
    names = tf.names
    for j, name in enumerate(names):
        col = raw[:, j]
        if name == "microprice" or name.startswith(("ask_price", "bid_price")):
            col = (col - mid_last) / tf.tick
            if name.startswith("ask_price"):
                col = np.where(np.isnan(col), ABSENT_TICKS, col)
            elif name.startswith("bid_price"):
                col = np.where(np.isnan(col), -ABSENT_TICKS, col)
        elif name.endswith(("_vol_1", "_vol_2", "_vol_3", "_vol_4", "_vol_5")):
            col = np.log1p(col)
        elif "flow" in name:
            col = np.sign(col) * np.log1p(np.abs(col))
        raw[:, j] = col
    if not np.all(np.isfinite(raw)):
        raise FeatureError("feature window contains non-finite values")
    return raw.astype(np.float32)


def build_window(
    messages: list[Message],
    submit_time_us: int,
    T: int,
    mode: str = "raw",
    levels: int = DEFAULT_LEVELS,
    tick: int = 100,
    strict: bool = True,
) -> np.ndarray:
    """One-shot window construction (replay plus :func:`window_at`)."""
    tf = compute_trade_features(messages, mode=mode, levels=levels, tick=tick, strict=strict)
    return window_at(tf, submit_time_us, T)
