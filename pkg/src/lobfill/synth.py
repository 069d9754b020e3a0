"""Deterministic synthetic LOB message-stream generator.

Zero-intelligence Poisson model: independent limit, market, and cancel
flows with geometric placement depth and geometric sizes. The generator
keeps its own internal book (deliberately separate from
:mod:`lobfill.book`) so it can emit per-message orderbook rows that serve
as an independent oracle for the replay engine.

Market orders are emitted as LOBSTER type-4 execution messages against the
resting queue, so generated streams never contain crossing submissions.
Every stream is a pure function of the seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .lobster import Message, SnapshotRow

BUY = 1
SELL = -1


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    horizon: float = 300.0  # seconds of trading
    start_time: float = 34200.0  # 09:30, seconds since midnight
    tick: int = 100  # price increment in LOBSTER units (dollars x 10000)
    initial_mid: int = 1_000_000  # $100.00

    # Poisson intensities, per second and per side.
    limit_rate: float = 4.0
    market_rate: float = 1.0
    cancel_rate: float = 0.04  # per live order

    # Geometric parameters (mean size ~ 1/(1-q) shares x size_unit).
    limit_size_q: float = 0.75
    market_size_q: float = 0.65
    size_unit: int = 100

    # Placement depth D ~ Geometric(spread_stiffness): buy limits are
    # priced at best_ask - tick*(1+D). Small stiffness pins the spread at
    # one tick (large-tick regime); larger values spread liquidity out.
    spread_stiffness: float = 0.3

    # Intraday U-shape multiplier on all rates: 1 + amplitude * x^2 with
    # x in [-1, 1] over the horizon (peaks at open and close).
    ushape_amplitude: float = 0.0

    # Regime switching: market/limit rates are multiplied by the current
    # regime's factor, cycling every regime_period seconds. A single 1.0
    # entry means stationary flow.
    regime_period: float = 60.0
    regime_market_mults: tuple[float, ...] = (1.0,)
    regime_limit_mults: tuple[float, ...] = (1.0,)

    # Market order flow persistence per regime: each market order repeats
    # the previous market order's side with this probability (order
    # splitting produces such runs empirically). Empty = independent
    # 50/50 sides. Both sides stay equally likely unconditionally, so
    # only the run structure of the flow carries the regime.
    regime_flow_persistence: tuple[float, ...] = ()

    # Liquidity shocks: Poisson-arriving large sweeps followed by a burst
    # of elevated activity (activity clustering). While a shock's boost is
    # active, market and limit intensities are both multiplied by
    # shock_boost, so the trade-clock book dynamics stay near-stationary
    # and the shock itself is the main trace of the elevated-hazard state.
    shock_rate: float = 0.0  # shocks per second
    shock_size: int = 0  # sweep size, in size_unit multiples
    shock_boost: float = 1.0  # rate multiplier while boosted
    shock_duration: float = 0.0  # seconds the boost lasts
    # Shock intensity per regime (cycles with regime_period like the
    # market/limit multipliers): shock_rate is multiplied by the current
    # regime's entry, so sweep arrivals themselves can switch regimes.
    regime_shock_mults: tuple[float, ...] = (1.0,)

    # Initial resting liquidity, emitted as submissions at start_time.
    init_levels: int = 6
    init_orders_per_level: int = 3

    def validate(self) -> None:
        if self.horizon <= 0 or self.tick <= 0:
            raise ValueError("horizon and tick must be positive")
        if min(self.limit_rate, self.market_rate, self.cancel_rate) < 0:
            raise ValueError("rates must be nonnegative")
        if not 0 <= self.spread_stiffness < 1:
            raise ValueError("spread_stiffness must be in [0, 1)")
        if any(not 0 <= p <= 1 for p in self.regime_flow_persistence):
            raise ValueError("flow persistence entries must be in [0, 1]")
        if self.shock_rate < 0 or self.shock_size < 0:
            raise ValueError("shock rate and size must be nonnegative")
        if self.shock_boost <= 0 or self.shock_duration < 0:
            raise ValueError("shock boost must be positive, duration nonnegative")
        if any(m < 0 for m in self.regime_shock_mults):
            raise ValueError("shock regime multipliers must be nonnegative")


class _MiniBook:
    """Generator-internal book: price -> FIFO queues plus level volumes."""

    def __init__(self):
        self.queues = {BUY: {}, SELL: {}}
        self.volumes = {BUY: {}, SELL: {}}
        self.order_price = {}  # order_id -> (side, price)

    def best(self, side: int) -> int | None:
        prices = self.queues[side]
        if not prices:
            return None
        return max(prices) if side == BUY else min(prices)

    def add(self, side: int, price: int, oid: int, size: int) -> None:
        self.queues[side].setdefault(price, deque()).append([oid, size])
        self.volumes[side][price] = self.volumes[side].get(price, 0) + size
        self.order_price[oid] = (side, price)

    def reduce(self, oid: int, amount: int) -> None:
        side, price = self.order_price[oid]
        q = self.queues[side][price]
        for entry in q:
            if entry[0] == oid:
                entry[1] -= amount
                self.volumes[side][price] -= amount
                if entry[1] == 0:
                    q.remove(entry)
                    del self.order_price[oid]
                    if not q:
                        del self.queues[side][price]
                        del self.volumes[side][price]
                return
        raise KeyError(oid)

    def front(self, side: int, price: int) -> list[int]:
        return self.queues[side][price][0]

    def live_orders(self) -> list[int]:
        return sorted(self.order_price)

    def n_orders(self, side: int) -> int:
        return sum(len(q) for q in self.queues[side].values())

    def snapshot(self, levels: int) -> SnapshotRow:
        asks: list[tuple[int, int] | None] = [None] * levels
        bids: list[tuple[int, int] | None] = [None] * levels
        for i, p in enumerate(sorted(self.queues[SELL])[:levels]):
            asks[i] = (p, self.volumes[SELL][p])
        for i, p in enumerate(sorted(self.queues[BUY], reverse=True)[:levels]):
            bids[i] = (p, self.volumes[BUY][p])
        return SnapshotRow(tuple(asks), tuple(bids))


def generate(
    config: SynthConfig, levels: int | None = None
) -> list[Message] | tuple[list[Message], list[SnapshotRow]]:
    """Generate a valid LOBSTER message stream.

    With ``levels`` set, also returns the orderbook row after each message,
    produced from the generator's internal book.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    book = _MiniBook()
    messages: list[Message] = []
    snaps: list[SnapshotRow] = []
    next_oid = 1

    def emit(time_us: int, etype: int, oid: int, size: int, price: int, side: int):
        messages.append(Message(time_us, etype, oid, size, price, side))
        if levels is not None:
            snaps.append(book.snapshot(levels))

    def geom_size(q: float) -> int:
        return int(rng.geometric(1.0 - q)) * config.size_unit

    start_us = round(config.start_time * 1_000_000)
    # Seed both sides with resting depth at t = start.
    half_tick_levels = config.init_levels
    mid = config.initial_mid - config.initial_mid % config.tick
    for lvl in range(1, half_tick_levels + 1):
        for side in (BUY, SELL):
            price = mid - side * config.tick * lvl
            for _ in range(config.init_orders_per_level):
                size = geom_size(config.limit_size_q)
                book.add(side, price, next_oid, size)
                emit(start_us, 1, next_oid, size, price, side)
                next_oid += 1

    def rate_mults(t: float) -> tuple[float, float, float]:
        idx = int((t - config.start_time) / config.regime_period)
        mmult = config.regime_market_mults[idx % len(config.regime_market_mults)]
        lmult = config.regime_limit_mults[idx % len(config.regime_limit_mults)]
        smult = config.regime_shock_mults[idx % len(config.regime_shock_mults)]
        x = 2.0 * (t - config.start_time) / config.horizon - 1.0
        u = 1.0 + config.ushape_amplitude * x * x
        return mmult * u, lmult * u, smult

    def limit_price(side: int) -> int:
        opp_best = book.best(-side)
        own_best = book.best(side)
        depth = int(rng.geometric(1.0 - config.spread_stiffness)) - 1
        if opp_best is not None:
            price = opp_best - side * config.tick * (1 + depth)
        elif own_best is not None:
            price = own_best - side * config.tick * depth
        else:
            price = mid - side * config.tick
        # never cross; never go nonpositive
        if opp_best is not None:
            limit = opp_best - side * config.tick
            price = min(price, limit) if side == BUY else max(price, limit)
        return max(price, config.tick)

    def flow_persistence(t: float) -> float | None:
        if not config.regime_flow_persistence:
            return None
        idx = int((t - config.start_time) / config.regime_period)
        return config.regime_flow_persistence[
            idx % len(config.regime_flow_persistence)
        ]

    def execute_market(time_us: int, side: int, remaining: int) -> None:
        # emitted as type-4 executions of resting orders, front of queue
        # first; stops early rather than emptying a side
        rest_side = -side
        while remaining > 0:
            best = book.best(rest_side)
            if best is None or book.n_orders(rest_side) <= 1:
                break
            head = book.front(rest_side, best)
            take = min(remaining, head[1])
            oid = head[0]
            book.reduce(oid, take)
            emit(time_us, 4, oid, take, best, rest_side)
            remaining -= take

    t = config.start_time
    end = config.start_time + config.horizon
    last_market_side = 0
    boost_until = config.start_time
    while True:
        mmult, lmult, smult = rate_mults(min(t, end - 1e-9))
        if t < boost_until:
            mmult *= config.shock_boost
            lmult *= config.shock_boost
        lam_shock = config.shock_rate * smult if config.shock_size > 0 else 0.0
        n_live = len(book.order_price)
        lam_limit = 2.0 * config.limit_rate * lmult
        lam_market = 2.0 * config.market_rate * mmult
        lam_cancel = config.cancel_rate * n_live
        total = lam_limit + lam_market + lam_cancel + lam_shock
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t >= end:
            break
        time_us = round(t * 1_000_000)
        u = rng.uniform(0.0, total)
        side = BUY if rng.uniform() < 0.5 else SELL
        is_market = lam_limit <= u < lam_limit + lam_market
        if is_market:
            rho = flow_persistence(min(t, end - 1e-9))
            if rho is not None and last_market_side != 0:
                side = (
                    last_market_side
                    if rng.uniform() < rho
                    else -last_market_side
                )
        if u < lam_limit or book.n_orders(-side) == 0:
            price = limit_price(side)
            size = geom_size(config.limit_size_q)
            book.add(side, price, next_oid, size)
            emit(time_us, 1, next_oid, size, price, side)
            next_oid += 1
        elif u < lam_limit + lam_market:
            # Market order hitting the opposite side.
            last_market_side = side
            execute_market(time_us, side, geom_size(config.market_size_q))
        elif u < lam_limit + lam_market + lam_cancel:
            live = book.live_orders()
            oid = int(live[rng.integers(len(live))])
            oside, oprice = book.order_price[oid]
            remaining = next(
                e[1] for e in book.queues[oside][oprice] if e[0] == oid
            )
            if remaining > 1 and rng.uniform() < 0.2:
                cut = int(rng.integers(1, remaining))
                book.reduce(oid, cut)
                emit(time_us, 2, oid, cut, oprice, oside)
            else:
                book.reduce(oid, remaining)
                emit(time_us, 3, oid, remaining, oprice, oside)
        else:
            # Liquidity shock: a large sweep, then a burst of activity.
            last_market_side = side
            execute_market(time_us, side, config.shock_size * config.size_unit)
            boost_until = t + config.shock_duration

    if levels is not None:
        return messages, snaps
    return messages
