import csv

import numpy as np
import pytest

from lobfill.interpret import (
    InterpretError,
    attention_lag_profile,
    attention_summary,
    beeswarm_export,
    exact_shapley,
    feature_value_fn,
    model_shapley,
    sampled_shapley,
)
from lobfill.models import ModelConfig, SurvivalModel

RNG = np.random.default_rng(11)


def linear_value(weights, base=0.0):
    w = np.asarray(weights, dtype=float)
    return lambda mask: base + float(w[mask].sum())


def test_exact_shapley_linear_value_recovers_weights():
    w = np.array([1.0, -2.0, 0.5, 3.0])
    phi = exact_shapley(linear_value(w, base=7.0), 4)
    assert np.allclose(phi, w, atol=1e-12)


def test_exact_shapley_symmetry_and_null_player():
    # v = x0 AND x1; feature 2 never matters
    def v(mask):
        return float(mask[0] and mask[1])

    phi = exact_shapley(v, 3)
    assert phi[0] == pytest.approx(phi[1])
    assert phi[2] == pytest.approx(0.0)
    assert phi.sum() == pytest.approx(1.0)


def test_sampled_shapley_converges_to_exact():
    w = RNG.normal(size=5)

    def v(mask):
        # interaction makes the game non-additive
        return float(w[mask].sum()) + (0.7 if mask[0] and mask[3] else 0.0)

    exact = exact_shapley(v, 5)
    approx = sampled_shapley(v, 5, n_permutations=4000, seed=0)
    assert np.allclose(approx, exact, atol=1e-2)


def test_sampled_shapley_efficiency_is_exact_at_any_budget():
    w = RNG.normal(size=6)

    def v(mask):
        return float(np.tanh(w[mask].sum()))

    full = np.ones(6, dtype=bool)
    empty = np.zeros(6, dtype=bool)
    for n_perm in (1, 3, 17):
        phi = sampled_shapley(v, 6, n_permutations=n_perm, seed=2)
        assert phi.sum() == pytest.approx(v(full) - v(empty), abs=1e-12)


def test_sampled_shapley_input_validation():
    with pytest.raises(InterpretError):
        sampled_shapley(lambda m: 0.0, 3, n_permutations=0)
    with pytest.raises(InterpretError):
        exact_shapley(lambda m: 0.0, 21)


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(
        T=5, F=4, encoder="conv_transformer", latent=4, hidden=8, heads=2,
        decoder_hidden=(6,), seed=0,
    )
    return SurvivalModel.build(cfg, t_max=50.0)


def test_model_shapley_efficiency(model):
    x = RNG.normal(size=(5, 4)).astype(np.float32)
    bg = np.zeros((5, 4), dtype=np.float32)
    value = feature_value_fn(model, x, bg, t=2.0)
    phi = model_shapley(model, x, bg, t=2.0, n_permutations=20, seed=1)
    full = model.survival(2.0, x)
    none = model.survival(2.0, bg)
    assert phi.sum() == pytest.approx(full - none, abs=1e-6)
    assert np.allclose(
        phi, exact_shapley(value, 4), atol=0.05
    )  # loose: only 20 permutations
    with pytest.raises(InterpretError):
        feature_value_fn(model, x, bg[:3], t=1.0)


def test_attention_summary_and_lag_profile(model):
    windows = RNG.normal(size=(3, 5, 4)).astype(np.float32)
    summary = attention_summary(model, windows)
    assert summary.shape == (2, 5, 5)
    assert np.allclose(summary.sum(axis=-1), 1.0, atol=1e-5)
    assert np.all(summary[:, np.triu_indices(5, k=1)[0], np.triu_indices(5, k=1)[1]] == 0)
    profile = attention_lag_profile(summary)
    assert profile.shape == (5,)
    assert np.all(profile >= 0)
    with pytest.raises(InterpretError):
        attention_summary(model, windows[0])


def test_beeswarm_export_format(tmp_path):
    names = ["imbalance", "microprice"]
    values = np.array([[0.1, -0.2], [0.3, 0.4]])
    phis = np.array([[0.01, 0.02], [-0.05, 0.0]])
    path = tmp_path / "bees.csv"
    beeswarm_export(path, names, values, phis)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sample", "feature", "value", "shapley"]
    assert len(rows) == 1 + 4
    assert rows[1] == ["0", "imbalance", "0.1", "0.01"]
    assert rows[4] == ["1", "microprice", "0.4", "0.0"]
    with pytest.raises(InterpretError):
        beeswarm_export(path, names, values, phis[:1])
    with pytest.raises(InterpretError):
        beeswarm_export(path, ["only-one"], values, phis)
