import numpy as np
import pytest

from lobfill.book import BUY, SELL
from lobfill.lobster import Message
from lobfill.probes import (
    MIN_WALL_Z,
    ProbeError,
    SurvivalSample,
    build_dataset,
    fill_stats,
    load_dataset,
    run_probes,
    save_dataset,
    simulate_inside_spread,
    simulate_pegged,
    track_order,
)
from lobfill.synth import SynthConfig, generate


def M(t, typ, oid, size, price, direction):
    return Message(int(round(t * 1e6)), typ, oid, size, price, direction)


BASE = [
    M(1.0, 1, 1, 100, 1000, BUY),
    M(1.0, 1, 2, 100, 1010, SELL),
]


def test_same_price_execution_fills_pegged_probe():
    msgs = BASE + [M(2.0, 4, 2, 50, 1010, SELL)]
    out = simulate_pegged(msgs, SELL, int(1.5e6))
    assert out.delta == 1
    assert out.z == pytest.approx(0.5)


def test_opposite_side_execution_does_not_fill():
    msgs = BASE + [M(2.0, 4, 1, 50, 1000, BUY)]
    out = simulate_pegged(msgs, SELL, int(1.5e6))
    assert out.delta == 0
    assert out.z == pytest.approx(0.5)  # censored at end of stream


def test_better_priced_execution_does_not_fill_fixed_probe():
    # probe rests at 1010; a new sell at 1005 trades without reaching it
    msgs = BASE + [
        M(1.8, 1, 3, 50, 1005, SELL),
        M(2.0, 4, 3, 50, 1005, SELL),
    ]
    out = simulate_inside_spread(msgs, SELL, int(1.5e6), k_ticks=0, tick=1)
    assert out.delta == 0


def test_worse_priced_execution_fills_by_price_priority():
    msgs = BASE + [M(2.0, 4, 2, 100, 1010, SELL)]
    out = simulate_inside_spread(msgs, SELL, int(1.5e6), k_ticks=3, tick=1)
    assert out.delta == 1  # probe at 1007 would have traded before 1010


def test_opposing_limit_priced_through_fills():
    msgs = BASE + [M(2.0, 1, 9, 30, 1011, BUY)]  # buy through the ask
    out = simulate_pegged(msgs, SELL, int(1.5e6), strict=False)
    assert out.delta == 1
    assert out.z == pytest.approx(0.5)


def test_pegged_probe_follows_best_quote():
    # ask improves to 1005; pegged probe re-enters there and fills on the
    # 1005 execution, while a fixed probe at 1010 stays unfilled
    msgs = BASE + [
        M(1.8, 1, 3, 50, 1005, SELL),
        M(2.0, 4, 3, 50, 1005, SELL),
    ]
    pegged = simulate_pegged(msgs, SELL, int(1.5e6))
    fixed = simulate_inside_spread(msgs, SELL, int(1.5e6), k_ticks=0, tick=1)
    assert pegged.delta == 1 and fixed.delta == 0


def test_buy_side_mirror():
    msgs = BASE + [M(2.0, 4, 1, 40, 1000, BUY)]
    out = simulate_pegged(msgs, BUY, int(1.5e6))
    assert out.delta == 1


def test_monotone_in_aggressiveness():
    # a trade at 1006 reaches the probe at 1005 but not the less
    # aggressive ones resting at 1007 and 1010
    msgs = BASE + [
        M(1.9, 1, 4, 50, 1006, SELL),
        M(2.0, 4, 4, 50, 1006, SELL),
        M(4.0, 1, 8, 10, 990, BUY),  # stream continues past the trade
    ]
    specs = [(SELL, "inside", int(1.5e6), k) for k in (0, 3, 5)]
    k0, k3, k5 = run_probes(msgs, specs, tick=1)
    assert k5.delta == 1
    assert k0.delta == 0 and k3.delta == 0
    assert k5.z < k0.z  # fills strictly earlier than the censoring time


def test_inside_spread_skip_signal_when_spread_too_tight():
    msgs = BASE + [M(3.0, 1, 8, 10, 990, BUY)]
    out = simulate_inside_spread(msgs, SELL, int(1.5e6), k_ticks=10, tick=1)
    assert out is None  # spread is 10 ticks; k must be strictly inside


def test_skip_signal_when_side_empty():
    msgs = [M(1.0, 1, 1, 100, 1000, BUY), M(3.0, 3, 1, 100, 1000, BUY)]
    (res,) = run_probes(msgs, [(SELL, "pegged", int(2.0e6), 0)])
    assert res is None


def test_probe_activation_is_strictly_before_observation():
    # a probe submitted exactly at the execution's timestamp misses it
    msgs = BASE + [M(2.0, 4, 2, 50, 1010, SELL), M(3.0, 4, 2, 50, 1010, SELL)]
    late = simulate_pegged(msgs, SELL, int(2.0e6))
    early = simulate_pegged(msgs, SELL, int(2.0e6) - 1)
    assert early.delta == 1 and early.z == pytest.approx(MIN_WALL_Z)
    assert late.delta == 1 and late.z == pytest.approx(1.0)


def test_transaction_clock_counts_trades():
    msgs = BASE + [
        M(2.0, 4, 1, 10, 1000, BUY),
        M(3.0, 4, 1, 10, 1000, BUY),
        M(4.0, 4, 2, 10, 1010, SELL),
    ]
    out = simulate_pegged(msgs, SELL, int(1.5e6), clock="transaction")
    assert (out.z, out.delta) == (3.0, 1)
    censored = simulate_pegged(
        msgs[:-1] + [M(4.0, 1, 8, 10, 990, BUY)], SELL, int(1.5e6), clock="transaction"
    )
    assert (censored.z, censored.delta) == (2.0, 0)


def test_invalid_inputs():
    with pytest.raises(ProbeError, match="clock"):
        run_probes(BASE, [], clock="lunar")
    with pytest.raises(ProbeError, match="empty"):
        run_probes([], [])
    with pytest.raises(ProbeError, match="side"):
        run_probes(BASE, [(0, "pegged", int(0.5e6), 0)])
    with pytest.raises(ProbeError, match="mode"):
        run_probes(BASE, [(BUY, "weird", int(0.5e6), 0)])
    with pytest.raises(ProbeError, match="outside"):
        simulate_pegged(BASE, SELL, int(99.0e6))


def test_track_order_filled_cancelled_and_resting():
    msgs = [
        M(1.0, 1, 5, 100, 1000, BUY),
        M(1.0, 1, 2, 100, 1010, SELL),
        M(2.0, 1, 6, 100, 999, BUY),
        M(3.0, 4, 5, 100, 1000, BUY),
        M(4.0, 3, 6, 100, 999, BUY),
        M(6.0, 1, 7, 10, 998, BUY),
    ]
    filled = track_order(msgs, 5)
    assert (filled.z, filled.delta) == (2.0, 1)
    cancelled = track_order(msgs, 6)
    assert (cancelled.z, cancelled.delta) == (2.0, 0)
    resting = track_order(msgs, 7)  # censored at end of stream, z floored
    assert (resting.z, resting.delta) == (MIN_WALL_Z, 0)
    with pytest.raises(ProbeError, match="never submitted"):
        track_order(msgs, 99)


def test_fill_stats_hand_case():
    samples = [
        SurvivalSample(np.zeros((1, 1), np.float32), 1.0, 1),
        SurvivalSample(np.zeros((1, 1), np.float32), 2.0, 0),
    ]
    st = fill_stats(samples)
    assert (st.fill_probability, st.mean_filltime, st.n) == (0.5, 1.0, 2)
    st2 = fill_stats(samples, horizon=0.5)
    assert st2.fill_probability == 0.0 and st2.mean_filltime is None
    with pytest.raises(ProbeError):
        fill_stats([])


@pytest.fixture(scope="module")
def day():
    return generate(SynthConfig(seed=21, horizon=180.0, market_rate=2.0))


def test_build_dataset_shapes_and_determinism(day):
    a = build_dataset([day], "pegged", n_per_day=12, seed=3, T=5)
    b = build_dataset([day], "pegged", n_per_day=12, seed=3, T=5)
    assert len(a) == 12
    for s in a:
        assert s.x.shape == (5, 24) and s.x.dtype == np.float32
        assert s.z > 0 and s.delta in (0, 1)
    assert all(
        np.array_equal(x.x, y.x) and x.z == y.z and x.delta == y.delta
        for x, y in zip(a, b)
    )
    c = build_dataset([day], "pegged", n_per_day=12, seed=4, T=5)
    assert any(x.z != y.z or not np.array_equal(x.x, y.x) for x, y in zip(a, c))


def test_build_dataset_tracked_and_inside_modes(day):
    tracked = build_dataset([day], "tracked", n_per_day=6, seed=0, T=4)
    assert len(tracked) == 6
    assert all("order_id" in s.meta for s in tracked)
    assert len({s.meta["order_id"] for s in tracked}) == 6
    with pytest.warns(UserWarning, match="samples after retries"):
        inside = build_dataset(
            [day], "inside:40", n_per_day=30, seed=0, T=4, max_retries=1
        )
    assert all(s.meta["k"] == 40 for s in inside)


def test_build_dataset_rejects_bad_mode(day):
    with pytest.raises(ProbeError, match="mode"):
        build_dataset([day], "nope", n_per_day=1, seed=0, T=4)
    with pytest.raises(ProbeError, match="n_per_day"):
        build_dataset([day], "pegged", n_per_day=0, seed=0, T=4)


def test_dataset_save_load_round_trip(tmp_path, day):
    samples = build_dataset([day], "pegged", n_per_day=8, seed=1, T=5)
    path = tmp_path / "ds.csv"
    save_dataset(samples, path, {"note": "unit"})
    loaded, manifest = load_dataset(path)
    assert manifest["T"] == 5 and manifest["F"] == 24
    assert manifest["note"] == "unit"
    assert len(loaded) == len(samples)
    for s, l in zip(samples, loaded):
        assert np.array_equal(s.x, l.x)
        assert s.z == l.z and s.delta == l.delta
        assert l.meta["day"] == s.meta["day"]
