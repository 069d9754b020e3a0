import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lobfill.survival import (
    ConvergenceError,
    SurvivalStatsError,
    aft_hazard,
    brier,
    c_td,
    censoring_km,
    cox_fit,
    cox_partial_loglik,
    kaplan_meier,
    neg_rcll,
    rcll,
)

# -- Kaplan-Meier --------------------------------------------------------------


def test_km_all_events_hand_case():
    km = kaplan_meier([1, 2, 3, 4], [1, 1, 1, 1])
    assert np.allclose(km.surv, [0.75, 0.5, 0.25, 0.0])
    assert km.survival(0.5) == 1.0
    assert km.survival(1.0) == 0.75
    assert km.survival(2.5) == 0.5
    assert km.survival(100.0) == 0.0


def test_km_censoring_shrinks_risk_set():
    km = kaplan_meier([1, 2, 3], [1, 0, 1])
    assert np.allclose(km.times, [1, 3])
    assert np.allclose(km.surv, [2 / 3, 0.0])
    assert km.survival(2.5) == pytest.approx(2 / 3)


def test_km_no_censoring_equals_empirical_survival():
    rng = np.random.default_rng(0)
    z = rng.exponential(size=200)
    km = kaplan_meier(z, np.ones_like(z))
    grid = np.quantile(z, [0.1, 0.5, 0.9])
    emp = [(z > t).mean() for t in grid]
    assert np.allclose(km.survival(grid), emp)


def _km_bruteforce(z, delta, t):
    """Literal product over event times <= t of (1 - k_i / n_i)."""
    z = np.asarray(z, float)
    delta = np.asarray(delta, int)
    s = 1.0
    for ti in sorted(set(z[delta == 1])):
        if ti > t:
            break
        k = int(np.sum((z == ti) & (delta == 1)))
        n = int(np.sum(z >= ti))
        s *= 1.0 - k / n
    return s


@settings(max_examples=60, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.integers(min_value=1, max_value=20),
            st.integers(min_value=0, max_value=1),
        ),
        min_size=1,
        max_size=50,
    ),
    st.floats(min_value=0.0, max_value=25.0),
)
def test_km_matches_bruteforce_product(pairs, t):
    z = [p[0] for p in pairs]
    delta = [p[1] for p in pairs]
    km = kaplan_meier(z, delta)
    assert km.survival(t) == pytest.approx(_km_bruteforce(z, delta, t), abs=1e-12)


def test_censoring_km_flips_indicator():
    z = [1, 2, 3, 4]
    d = [1, 0, 1, 0]
    g = censoring_km(z, d)
    flipped = kaplan_meier(z, [0, 1, 0, 1])
    assert np.allclose(g.surv, flipped.surv)


def test_input_validation():
    with pytest.raises(SurvivalStatsError):
        kaplan_meier([], [])
    with pytest.raises(SurvivalStatsError):
        kaplan_meier([0.0, 1.0], [1, 1])
    with pytest.raises(SurvivalStatsError):
        kaplan_meier([1.0, 1.0], [1, 2])
    with pytest.raises(SurvivalStatsError):
        kaplan_meier([1.0], [1, 1])


# -- Cox proportional hazards ---------------------------------------------------


def test_cox_partial_loglik_null_hand_case():
    # two distinct events, beta = 0: L = (1/2) * (1/1)
    ll = cox_partial_loglik(np.zeros(1), [1.0, 2.0], [1, 1], [[0.0], [0.0]])
    assert ll == pytest.approx(math.log(0.5))


def test_cox_recovers_exponential_coefficient():
    rng = np.random.default_rng(42)
    n, beta_true = 600, 0.8
    x = rng.normal(size=(n, 1))
    t = rng.exponential(1.0, size=n) / np.exp(beta_true * x[:, 0])
    c = rng.exponential(2.0, size=n)
    z = np.minimum(t, c)
    delta = (t <= c).astype(int)
    model = cox_fit(z, delta, x)
    assert model.beta[0] == pytest.approx(beta_true, abs=0.15)
    # fitted coefficient attains at least the true coefficient's likelihood
    assert cox_partial_loglik(model.beta, z, delta, x) >= cox_partial_loglik(
        np.array([beta_true]), z, delta, x
    )


def test_cox_survival_is_valid_curve():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100, 2))
    z = rng.exponential(1.0, size=100) + 0.01
    delta = rng.integers(0, 2, size=100)
    delta[0] = 1
    model = cox_fit(z, delta, x)
    grid = np.linspace(0.01, z.max(), 25)
    s = model.survival(grid, x[0])
    assert np.all((0 <= s) & (s <= 1))
    assert np.all(np.diff(s) <= 1e-12)
    assert model.cumhaz0(0.0) == 0.0


def test_cox_iteration_budget_enforced():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(60, 1))
    z = rng.exponential(1.0, size=60) / np.exp(0.9 * x[:, 0])
    with pytest.raises(ConvergenceError, match="converge"):
        cox_fit(z, np.ones(60, dtype=int), x, max_iter=1)


def test_cox_needs_events():
    with pytest.raises(SurvivalStatsError):
        cox_fit([1.0, 2.0], [0, 0], [[0.0], [1.0]])


# -- accelerated failure time -----------------------------------------------


def test_aft_hazard_transform():
    assert aft_hazard(3.0, None, lambda x: 2.0, lambda t: 3.0) == 6.0
    assert aft_hazard(3.0, None, lambda x: 2.0, lambda t: t) == 12.0
    t = np.array([1.0, 2.0])
    assert np.allclose(aft_hazard(t, None, lambda x: 2.0, lambda u: u), [4.0, 8.0])
    with pytest.raises(SurvivalStatsError):
        aft_hazard(1.0, None, lambda x: 0.0, lambda t: 1.0)


# -- scoring rules -------------------------------------------------------------


class ExpModel:
    """Unit-rate exponential: S(t) = f(t) = exp(-t)."""

    def survival(self, t, x=None):
        return np.exp(-np.asarray(t, dtype=float))

    def density(self, t, x=None):
        return np.exp(-np.asarray(t, dtype=float))


class CovExpModel:
    """Exponential with per-sample rate x: S(t|x) = exp(-x t)."""

    def survival(self, t, x):
        return math.exp(-float(x) * float(t))

    def density(self, t, x):
        return float(x) * math.exp(-float(x) * float(t))


def test_rcll_exponential_closed_form():
    m = ExpModel()
    assert rcll(m, [2.0], [1]) == pytest.approx(-2.0)
    assert rcll(m, [2.0], [0]) == pytest.approx(-2.0)
    assert rcll(m, [1.0, 2.0], [1, 0]) == pytest.approx(-1.5)
    assert neg_rcll(m, [1.0, 2.0], [1, 0]) == pytest.approx(1.5)


def test_rcll_matches_bruteforce_loop():
    rng = np.random.default_rng(3)
    z = rng.exponential(1.0, size=40) + 0.01
    delta = rng.integers(0, 2, size=40)
    x = rng.uniform(0.5, 2.0, size=40)
    m = CovExpModel()
    expect = np.mean(
        [
            math.log(m.density(z[i], x[i]) if delta[i] else m.survival(z[i], x[i]))
            for i in range(40)
        ]
    )
    assert rcll(m, z, delta, x) == pytest.approx(expect, abs=1e-12)


def test_rcll_rejects_nonpositive_model_values():
    class Broken:
        def survival(self, t, x=None):
            return 0.0

        def density(self, t, x=None):
            return -1.0

    with pytest.raises(SurvivalStatsError, match="nonpositive"):
        rcll(Broken(), [1.0], [1])
    with pytest.raises(SurvivalStatsError, match="nonpositive"):
        rcll(Broken(), [1.0], [0])


def test_ctd_enumerated_hand_case():
    m = CovExpModel()
    z = [1.0, 2.0, 3.0]
    delta = [1, 1, 1]
    assert c_td(m, z, delta, [3.0, 2.0, 1.0]) == pytest.approx(1.0)
    # one of three comparable pairs discordant
    assert c_td(m, z, delta, [3.0, 1.0, 2.0]) == pytest.approx(2 / 3)


def test_ctd_censored_samples_not_comparable_first():
    m = CovExpModel()
    # i censored: pair (i, j) never comparable even with z_i < z_j
    with pytest.raises(SurvivalStatsError, match="comparable"):
        c_td(m, [1.0, 2.0], [0, 1], [1.0, 2.0])


def test_ctd_invariant_under_monotone_transform():
    class Squared:
        def __init__(self, base):
            self.base = base

        def survival(self, t, x):
            return self.base.survival(t, x) ** 2

    m = CovExpModel()
    rng = np.random.default_rng(5)
    z = rng.exponential(1.0, size=30) + 0.01
    delta = np.ones(30, dtype=int)
    x = rng.uniform(0.5, 3.0, size=30)
    assert c_td(m, z, delta, x) == pytest.approx(
        c_td(Squared(m), z, delta, x), abs=1e-12
    )


def test_brier_uncensored_constant_model():
    class Half:
        def survival(self, t, x=None):
            return 0.5

    z = [1.0, 2.0, 3.0, 4.0]
    delta = [1, 1, 1, 1]
    assert brier(Half(), z, delta, None, t=2.5) == pytest.approx(0.25)


def test_brier_matches_bruteforce_loop():
    rng = np.random.default_rng(7)
    n = 50
    z = rng.exponential(1.0, size=n) + 0.01
    delta = rng.integers(0, 2, size=n)
    delta[np.argmax(z)] = 1  # keep G positive at every observed time
    x = rng.uniform(0.5, 2.0, size=n)
    m = CovExpModel()
    G = censoring_km(z, delta)
    t = float(np.median(z))
    expect = []
    for i in range(n):
        s = m.survival(t, x[i])
        if z[i] <= t and delta[i] == 1:
            expect.append(s * s / G.survival(z[i]))
        elif z[i] > t:
            expect.append((1 - s) ** 2 / G.survival(z[i]))
        else:
            expect.append(0.0)
    assert brier(m, z, delta, x, t) == pytest.approx(np.mean(expect), abs=1e-12)


def test_brier_zero_weight_raises():
    class Half:
        def survival(self, t, x=None):
            return 0.5

    # the largest observation is censored, so G hits 0 there
    z = [1.0, 2.0, 3.0]
    delta = [1, 1, 0]
    G = censoring_km(z, delta)
    assert G.survival(3.0) == 0.0
    with pytest.raises(SurvivalStatsError, match="G"):
        brier(Half(), z, delta, None, t=2.5, G=G)
