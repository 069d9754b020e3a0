import io

import numpy as np
import pytest

from lobfill.book import BookState, replay
from lobfill.lobster import write_messages
from lobfill.synth import SynthConfig, generate


def test_same_seed_identical_bytes():
    cfg = SynthConfig(seed=7, horizon=30.0)
    a, b = generate(cfg), generate(cfg)
    bufs = []
    for msgs in (a, b):
        buf = io.StringIO()
        write_messages(msgs, buf)
        bufs.append(buf.getvalue())
    assert bufs[0] == bufs[1]
    assert generate(SynthConfig(seed=8, horizon=30.0)) != a


def test_replay_clean_and_never_crossed():
    msgs = generate(SynthConfig(seed=1, horizon=60.0))
    book = replay(msgs, strict=True, check=True)
    bb, ba = book.best_bid(), book.best_ask()
    if bb is not None and ba is not None:
        assert bb < ba


def test_snapshots_match_independent_replay():
    msgs, snaps = generate(SynthConfig(seed=3, horizon=60.0), levels=5)
    _, replay_snaps = replay(msgs, strict=True, levels=5)
    assert snaps == replay_snaps


def test_degenerate_rates_one_sided_flow():
    # no market orders, no cancels: only submissions ever appear
    cfg = SynthConfig(seed=2, horizon=20.0, market_rate=0.0, cancel_rate=0.0)
    msgs = generate(cfg)
    assert {m.event_type for m in msgs} == {1}


def test_nonincreasing_time_never_happens():
    msgs = generate(SynthConfig(seed=5, horizon=60.0))
    times = [m.time_us for m in msgs]
    assert times == sorted(times)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        generate(SynthConfig(horizon=-1.0))
    with pytest.raises(ValueError):
        generate(SynthConfig(spread_stiffness=1.5))


def test_ushape_concentrates_trades_at_open_and_close():
    cfg = SynthConfig(
        seed=11, horizon=600.0, ushape_amplitude=4.0, market_rate=2.0
    )
    msgs = [m for m in generate(cfg) if m.event_type == 4]
    t0 = cfg.start_time
    counts, _ = np.histogram(
        [m.time for m in msgs], bins=6, range=(t0, t0 + cfg.horizon)
    )
    mid = counts[2] + counts[3]
    ends = counts[0] + counts[-1]
    assert ends > mid


def test_regime_switching_changes_trade_rate():
    cfg = SynthConfig(
        seed=4,
        horizon=240.0,
        regime_period=60.0,
        regime_market_mults=(3.0, 0.2),
    )
    msgs = [m for m in generate(cfg) if m.event_type == 4]
    t0 = cfg.start_time
    counts, _ = np.histogram(
        [m.time for m in msgs], bins=4, range=(t0, t0 + cfg.horizon)
    )
    assert counts[0] > counts[1] and counts[2] > counts[3]


def test_flow_persistence_produces_side_runs():
    base = dict(seed=9, horizon=600.0, market_rate=2.0)
    cfg = SynthConfig(regime_flow_persistence=(0.9,), **base)
    trades = {}
    for m in generate(cfg):
        if m.event_type == 4:
            # one market order can print several executions; keep one
            # side per timestamp (the aggressor side is -resting side)
            trades[m.time_us] = -m.direction
    sides = list(trades.values())
    repeats = np.mean([a == b for a, b in zip(sides, sides[1:])])
    assert repeats > 0.75
    assert 0.35 < np.mean([s == 1 for s in sides]) < 0.65
    # persistence off: the stream is unchanged from the default
    assert generate(SynthConfig(**base)) == generate(
        SynthConfig(regime_flow_persistence=(), **base)
    )


def test_liquidity_shocks_sweep_and_boost_activity():
    base = dict(seed=13, horizon=1200.0, market_rate=1.5, cancel_rate=0.02)
    msgs = generate(
        SynthConfig(
            shock_rate=1 / 200.0,
            shock_size=60,
            shock_boost=6.0,
            shock_duration=90.0,
            **base,
        )
    )
    # sweeps show up as many executions sharing one timestamp
    per_ts = {}
    for m in msgs:
        if m.event_type == 4:
            per_ts[m.time_us] = per_ts.get(m.time_us, 0) + 1
    sweeps = sorted(t / 1e6 for t, k in per_ts.items() if k >= 10)
    assert sweeps, "no large sweeps found"
    # message rate inside boost windows well above the quiet rate
    times = np.array([m.time_us for m in msgs]) / 1e6
    boosted = np.zeros(len(times), dtype=bool)
    for t0 in sweeps:
        boosted |= (times > t0) & (times <= t0 + 90.0)
    quiet_rate = (~boosted).sum() / (1200.0 - 90.0 * len(sweeps))
    boost_rate = boosted.sum() / (90.0 * len(sweeps))
    assert boost_rate > 2.0 * quiet_rate
    # shocks off: the stream is unchanged from the default
    assert generate(SynthConfig(**base)) == generate(
        SynthConfig(shock_boost=2.0, shock_duration=30.0, **base)
    )
