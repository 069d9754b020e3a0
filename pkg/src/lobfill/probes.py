"""Right-censored fill-time datasets from tracked and hypothetical orders.

Hypothetical probes are one-share phantom orders that never enter the
book, so replays with and without probes are identical. A probe placed at
price P on side s is considered filled at the first event satisfying any
of the fill conditions:

  * an opposing limit order arrives priced at or through P (such an
    order is marketable against the probe; at-price arrivals can only
    happen for probes resting inside the spread, since an equal-priced
    opposing limit at the best quote would have crossed the real book);
  * an execution occurs on side s at a price equal to or worse than P
    (same-price executions necessarily hit queue positions the probe
    dominates, since the probe rests at the tail when placed; worse-price
    executions imply price priority would have filled the probe first).

A same-price market order smaller than the queue ahead still fills the
probe (it partially fills the order ahead), matching the partial-fill
clause of the first condition. Probes are censored at the last message
time of the stream. Pegged probes follow the level-1 price of their side
and re-enter at the tail of the new queue whenever that price changes;
inside-spread probes keep a fixed price.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .book import BUY, SELL, BookState
from .features import compute_trade_features, window_at
from .lobster import Message

MIN_WALL_Z = 1e-6  # seconds; keeps observed times strictly positive


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeOutcome:
    z: float  # seconds (wall clock) or trade count (transaction clock)
    delta: int  # 1 filled, 0 censored

    def as_tuple(self) -> tuple[float, int]:
        return (self.z, self.delta)


@dataclass
class SurvivalSample:
    """The (x, z, delta) triplet plus provenance metadata."""

    x: np.ndarray  # (T, F) float32 feature window
    z: float
    delta: int
    meta: dict = field(default_factory=dict)


@dataclass
class _Probe:
    side: int
    price: int
    pegged: bool
    submit_time_us: int
    clock: str
    fill_time_us: int | None = None
    trades_seen: int = 0
    fill_trades: int | None = None

    def check_fill(self, msg: Message) -> bool:
        if msg.event_type == 1 and msg.direction == -self.side:
            # opposing limit arrives priced at or through the probe
            if self.side == SELL and msg.price >= self.price:
                return True
            if self.side == BUY and msg.price <= self.price:
                return True
        if msg.event_type == 4 and msg.direction == self.side:
            if self.side == SELL and msg.price >= self.price:
                return True
            if self.side == BUY and msg.price <= self.price:
                return True
        return False


def _outcome(probe: _Probe, end_time_us: int) -> ProbeOutcome:
    filled = probe.fill_time_us is not None
    if probe.clock == "transaction":
        z = probe.fill_trades if filled else probe.trades_seen
        return ProbeOutcome(float(max(z, 1)), int(filled))
    t_end = probe.fill_time_us if filled else end_time_us
    z = (t_end - probe.submit_time_us) / 1e6
    return ProbeOutcome(max(z, MIN_WALL_Z), int(filled))


def run_probes(
    messages: list[Message],
    probes: list[tuple[int, str, int, int]],
    tick: int = 100,
    clock: str = "wall",
    strict: bool = True,
) -> list[ProbeOutcome | None]:
    """Simulate many probes in a single replay pass.

    ``probes`` entries are (side, mode, submit_time_us, k_ticks) with mode
    "pegged" or "inside". ``None`` results are skip signals: an inside
    probe whose spread precondition failed, or a probe whose book side was
    empty at submission. A probe submitted exactly at a message timestamp
    observes only subsequent messages.
    """
    if clock not in ("wall", "transaction"):
        raise ProbeError(f"unknown clock: {clock}")
    if not messages:
        raise ProbeError("empty stream")
    for side, mode, _, _ in probes:
        if side not in (BUY, SELL):
            raise ProbeError(f"bad probe side: {side}")
        if mode not in ("pegged", "inside"):
            raise ProbeError(f"unknown probe mode: {mode}")
    end_time_us = messages[-1].time_us
    order = sorted(range(len(probes)), key=lambda i: probes[i][2])
    results: list[ProbeOutcome | None] = [None] * len(probes)
    active: list[tuple[int, _Probe]] = []
    book = BookState(strict=strict)
    pending = 0  # index into `order` of the next probe to activate

    def activate(up_to_us: int) -> None:
        nonlocal pending
        while pending < len(order) and probes[order[pending]][2] <= up_to_us:
            idx = order[pending]
            side, mode, submit_us, k = probes[idx]
            pending += 1
            best = book.best_ask() if side == SELL else book.best_bid()
            if best is None:
                continue  # cannot place; skip signal
            if mode == "pegged":
                probe = _Probe(side, best, True, submit_us, clock)
            else:
                if book.best_bid() is None or book.best_ask() is None:
                    continue  # skip signal
                if book.spread() // tick <= k:
                    continue  # skip signal
                price = best - k * tick if side == SELL else best + k * tick
                probe = _Probe(side, price, False, submit_us, clock)
            active.append((idx, probe))

    for msg in messages:
        activate(msg.time_us - 1)
        book.apply(msg)
        still_active = []
        for idx, probe in active:
            if msg.event_type == 4:
                probe.trades_seen += 1
            if probe.check_fill(msg):
                probe.fill_time_us = msg.time_us
                probe.fill_trades = probe.trades_seen
                results[idx] = _outcome(probe, end_time_us)
                continue
            if probe.pegged:
                best = book.best_ask() if probe.side == SELL else book.best_bid()
                if best is not None and best != probe.price:
                    probe.price = best  # re-peg to tail of the new queue
            still_active.append((idx, probe))
        active = still_active
        activate(msg.time_us)
    for idx, probe in active:
        results[idx] = _outcome(probe, end_time_us)
    return results


def simulate_pegged(
    messages: list[Message],
    side: int,
    submit_time_us: int,
    clock: str = "wall",
    strict: bool = True,
) -> ProbeOutcome:
    """Fill outcome of a one-share probe pegged to the level-1 price."""
    if not messages or not (
        messages[0].time_us <= submit_time_us <= messages[-1].time_us
    ):
        raise ProbeError("submit time outside stream")
    (res,) = run_probes(
        messages, [(side, "pegged", submit_time_us, 0)], clock=clock, strict=strict
    )
    if res is None:
        raise ProbeError("book empty on probe side at submission")
    return res


def simulate_inside_spread(
    messages: list[Message],
    side: int,
    submit_time_us: int,
    k_ticks: int,
    tick: int = 100,
    clock: str = "wall",
    strict: bool = True,
) -> ProbeOutcome | None:
    """Fixed-price probe k ticks inside the best quote; None = skip signal."""
    if not messages or not (
        messages[0].time_us <= submit_time_us <= messages[-1].time_us
    ):
        raise ProbeError("submit time outside stream")
    (res,) = run_probes(
        messages,
        [(side, "inside", submit_time_us, k_ticks)],
        tick=tick,
        clock=clock,
        strict=strict,
    )
    return res


def track_order(
    messages: list[Message], target_id: int, clock: str = "wall"
) -> ProbeOutcome:
    """Outcome of a real order: filled if its final message is an execution."""
    submit_us = None
    last_msg = None
    trades_at_submit = 0
    trades = 0
    trades_at_last = 0
    for msg in messages:
        if msg.event_type == 4:
            trades += 1
        if msg.order_id != target_id:
            continue
        if msg.event_type == 1:
            submit_us = msg.time_us
            trades_at_submit = trades
        last_msg = msg
        trades_at_last = trades
    if submit_us is None:
        raise ProbeError(f"order {target_id} never submitted")
    delta = int(last_msg.event_type == 4)
    if delta:
        end_us = last_msg.time_us
    elif last_msg.event_type == 1:
        # never touched again: censored at end of day
        end_us = messages[-1].time_us
        trades_at_last = trades
    else:
        end_us = last_msg.time_us
    if clock == "transaction":
        return ProbeOutcome(float(max(trades_at_last - trades_at_submit, 1)), delta)
    z = (end_us - submit_us) / 1e6
    return ProbeOutcome(max(z, MIN_WALL_Z), delta)


def _tracked_candidates(messages: list[Message]) -> list[tuple[int, int]]:
    """(time_us, order_id) of submissions that join or improve the best quote."""
    book = BookState(strict=False)
    out = []
    for msg in messages:
        book.apply(msg)
        if msg.event_type != 1:
            continue
        best = book.best_bid() if msg.direction == BUY else book.best_ask()
        if best == msg.price:
            out.append((msg.time_us, msg.order_id))
    return out


def build_dataset(
    streams: list[list[Message]],
    mode: str,
    n_per_day: int,
    seed: int,
    T: int,
    clock: str = "wall",
    feature_mode: str = "raw",
    tick: int = 100,
    levels: int = 5,
    max_retries: int = 50,
    strict: bool = True,
) -> list[SurvivalSample]:
    """Probe outcomes joined with feature windows, ``n_per_day`` per stream.

    ``mode`` is "tracked", "pegged", or "inside:<k>". Submission times are
    drawn uniformly over each trading day; draws without T prior trades or
    with a skip signal are redrawn (bounded), after which a short day
    contributes fewer samples with a warning.
    """
    if n_per_day < 1:
        raise ProbeError("n_per_day must be >= 1")
    base_mode, k_ticks = mode, 0
    if mode.startswith("inside:"):
        base_mode, k_ticks = "inside", int(mode.split(":", 1)[1])
    if base_mode not in ("tracked", "pegged", "inside"):
        raise ProbeError(f"unknown dataset mode: {mode}")
    samples: list[SurvivalSample] = []
    for day, messages in enumerate(streams):
        rng = np.random.default_rng(np.random.SeedSequence([seed, day]))
        tf = compute_trade_features(
            messages, mode=feature_mode, levels=levels, tick=tick, strict=strict
        )
        t0, t1 = messages[0].time_us, messages[-1].time_us
        candidates = _tracked_candidates(messages) if base_mode == "tracked" else None
        cand_times = (
            np.array([t for t, _ in candidates], dtype=np.int64)
            if candidates is not None
            else None
        )

        # Draw candidate submissions up to the retry budget, then resolve
        # outcomes in one batched replay pass.
        budget = n_per_day * (max_retries + 1)
        draws = [
            (BUY if rng.uniform() < 0.5 else SELL, int(rng.integers(t0, t1 + 1)))
            for _ in range(budget)
        ]

        made = 0
        if base_mode == "tracked":
            seen: set[int] = set()
            for side, submit_us in draws:
                if made >= n_per_day:
                    break
                pos = int(np.searchsorted(cand_times, submit_us, side="left"))
                if pos >= len(candidates):
                    continue
                sub_t, oid = candidates[pos]
                if oid in seen or tf.n_trades_before(sub_t) < T:
                    continue
                seen.add(oid)
                out = track_order(messages, oid, clock)
                samples.append(
                    SurvivalSample(
                        window_at(tf, sub_t, T),
                        out.z,
                        out.delta,
                        {"day": day, "order_id": oid, "submit_us": sub_t},
                    )
                )
                made += 1
        else:
            feasible = [
                (side, submit_us)
                for side, submit_us in draws
                if tf.n_trades_before(submit_us) >= T
            ]
            specs = [
                (side, base_mode, submit_us, k_ticks) for side, submit_us in feasible
            ]
            outcomes = run_probes(messages, specs, tick=tick, clock=clock, strict=strict)
            for (side, submit_us), out in zip(feasible, outcomes):
                if made >= n_per_day:
                    break
                if out is None:
                    continue  # skip signal; next draw acts as the redraw
                meta = {"day": day, "side": side, "submit_us": submit_us}
                if base_mode == "inside":
                    meta["k"] = k_ticks
                samples.append(
                    SurvivalSample(window_at(tf, submit_us, T), out.z, out.delta, meta)
                )
                made += 1
        if made < n_per_day:
            warnings.warn(
                f"day {day}: only {made}/{n_per_day} samples after retries",
                stacklevel=2,
            )
    return samples


@dataclass(frozen=True)
class FillStats:
    fill_probability: float
    mean_filltime: float | None
    n: int


def fill_stats(samples: list[SurvivalSample], horizon: float = np.inf) -> FillStats:
    """Fill probability and mean filltime among fills within a horizon."""
    if not samples:
        raise ProbeError("fill_stats needs at least one sample")
    fills = [s.z for s in samples if s.delta == 1 and s.z <= horizon]
    prob = len(fills) / len(samples)
    mean_ft = float(np.mean(fills)) if fills else None
    return FillStats(prob, mean_ft, len(samples))


# -- dataset files -----------------------------------------------------------


def save_dataset(samples: list[SurvivalSample], path: str | Path, manifest: dict) -> None:
    """Columnar text file (header z, delta, meta, flattened window) plus a
    sidecar JSON manifest describing feature layout and provenance."""
    path = Path(path)
    if not samples:
        raise ProbeError("cannot save an empty dataset")
    T, F = samples[0].x.shape
    meta_keys = sorted(samples[0].meta)
    header = ["z", "delta"] + meta_keys + [f"x{i}" for i in range(T * F)]
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for s in samples:
            cells = [repr(float(s.z)), str(int(s.delta))]
            cells += [str(s.meta.get(k, "")) for k in meta_keys]
            cells += [repr(float(v)) for v in s.x.ravel()]
            fh.write(",".join(cells) + "\n")
    manifest = dict(manifest)
    manifest.update({"T": T, "F": F, "meta_columns": meta_keys})
    with open(path.with_suffix(path.suffix + ".manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path: str | Path) -> tuple[list[SurvivalSample], dict]:
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".manifest.json")) as fh:
        manifest = json.load(fh)
    T, F = manifest["T"], manifest["F"]
    meta_keys = manifest["meta_columns"]
    samples = []
    with open(path) as fh:
        next(fh)  # header
        for line in fh:
            cells = line.rstrip("\n").split(",")
            z = float(cells[0])
            delta = int(cells[1])
            meta = {
                k: (int(v) if v.lstrip("-").isdigit() else v)
                for k, v in zip(meta_keys, cells[2 : 2 + len(meta_keys)])
            }
            x = np.array(
                [float(v) for v in cells[2 + len(meta_keys) :]], dtype=np.float32
            ).reshape(T, F)
            samples.append(SurvivalSample(x, z, delta, meta))
    return samples, manifest
