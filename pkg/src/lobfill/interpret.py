"""Interpretation tools: attention heatmaps and Shapley attributions.

Shapley values are computed against a value function over feature
subsets: absent features are replaced by the corresponding columns of a
background window. The permutation-sampling estimator telescopes, so
the efficiency identity sum(phi) = v(all) - v(none) holds exactly for
any number of sampled permutations; an exact enumerator over all 2^n
subsets is provided for small n as an independent cross-check.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .models import SurvivalModel


class InterpretError(ValueError):
    pass


# -- attention ------------------------------------------------------------------


def attention_heatmap(model: SurvivalModel, x: np.ndarray) -> np.ndarray:
    """(heads, T, T) attention weights for one feature window."""
    return model.attention(x)


def attention_summary(model: SurvivalModel, windows: np.ndarray) -> np.ndarray:
    """Mean attention pattern over a batch of windows, per head."""
    windows = np.asarray(windows, dtype=np.float32)
    if windows.ndim != 3:
        raise InterpretError("expected a batch of (T, F) windows")
    maps = np.stack([model.attention(w) for w in windows])
    return maps.mean(axis=0)


def attention_lag_profile(heatmap: np.ndarray) -> np.ndarray:
    """Average weight put on each lookback lag, aggregated over heads and
    query positions (lag 0 = the current step)."""
    heads, T, _ = heatmap.shape
    profile = np.zeros(T)
    counts = np.zeros(T)
    for t in range(T):
        for lag in range(t + 1):
            profile[lag] += heatmap[:, t, t - lag].sum()
            counts[lag] += heads
    return profile / np.maximum(counts, 1)


# -- Shapley values --------------------------------------------------------------


def sampled_shapley(
    value, n_features: int, n_permutations: int, seed: int = 0
) -> np.ndarray:
    """Permutation-sampling Shapley estimate.

    ``value`` maps a boolean inclusion mask of length ``n_features`` to a
    scalar. Marginal contributions along each random permutation are
    averaged; their sum telescopes to v(all) - v(none) exactly.
    """
    if n_permutations < 1:
        raise InterpretError("need at least one permutation")
    rng = np.random.default_rng(seed)
    phi = np.zeros(n_features)
    mask = np.zeros(n_features, dtype=bool)
    for _ in range(n_permutations):
        order = rng.permutation(n_features)
        mask[:] = False
        prev = float(value(mask))
        for j in order:
            mask[j] = True
            cur = float(value(mask))
            phi[j] += cur - prev
            prev = cur
    return phi / n_permutations


def exact_shapley(value, n_features: int) -> np.ndarray:
    """Exact Shapley values by enumerating all 2^n subsets (small n only)."""
    if n_features > 20:
        raise InterpretError("exact enumeration is limited to 20 features")
    n = n_features
    vals = np.empty(1 << n)
    mask = np.zeros(n, dtype=bool)
    for s in range(1 << n):
        for j in range(n):
            mask[j] = bool(s >> j & 1)
        vals[s] = float(value(mask))
    fact = [math.factorial(k) for k in range(n + 1)]
    phi = np.zeros(n)
    for s in range(1 << n):
        size = bin(s).count("1")
        w = fact[size] * fact[n - size - 1] / fact[n]
        for j in range(n):
            if not s >> j & 1:
                phi[j] += w * (vals[s | (1 << j)] - vals[s])
    return phi


def feature_value_fn(
    model: SurvivalModel,
    x: np.ndarray,
    background: np.ndarray,
    t: float,
):
    """Value function over feature columns of one window: masked-out
    columns are replaced by the background window's columns."""
    x = np.asarray(x, dtype=np.float32)
    background = np.asarray(background, dtype=np.float32)
    if x.shape != background.shape:
        raise InterpretError("window and background shapes differ")

    def value(mask: np.ndarray) -> float:
        mixed = np.where(mask[None, :], x, background)
        return model.survival(t, mixed)

    return value


def model_shapley(
    model: SurvivalModel,
    x: np.ndarray,
    background: np.ndarray,
    t: float,
    n_permutations: int = 200,
    seed: int = 0,
) -> np.ndarray:
    """Shapley attribution of S(t | x) over the window's feature columns."""
    value = feature_value_fn(model, x, background, t)
    return sampled_shapley(value, x.shape[1], n_permutations, seed)


def beeswarm_export(
    path: str | Path,
    feature_names: list[str],
    feature_values: np.ndarray,
    shapley: np.ndarray,
) -> None:
    """One CSV row per (sample, feature): name, value, attribution.

    ``feature_values`` and ``shapley`` are (n_samples, n_features); the
    output is the long-format table beeswarm plots are drawn from.
    """
    feature_values = np.asarray(feature_values)
    shapley = np.asarray(shapley)
    if feature_values.shape != shapley.shape:
        raise InterpretError("feature values and attributions differ in shape")
    if feature_values.shape[1] != len(feature_names):
        raise InterpretError("feature name count does not match columns")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "feature", "value", "shapley"])
        for i in range(feature_values.shape[0]):
            for j, name in enumerate(feature_names):
                writer.writerow(
                    [i, name, repr(float(feature_values[i, j])), repr(float(shapley[i, j]))]
                )
