"""Training and evaluation of the neural fill-time models.

Models are trained by minimizing the negative right-censored
log-likelihood with Adam, global gradient-norm clipping and early
stopping on the validation loss. Evaluation reuses the scoring rules
from :mod:`lobfill.survival` through a latent-caching adapter so the
encoder runs once per sample.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .models import ModelConfig, SurvivalModel, rcll_loss
from .probes import SurvivalSample
from .survival import SurvivalStatsError, brier, c_td, censoring_km, neg_rcll


class TrainingError(RuntimeError):
    pass


@dataclass
class Dataset:
    x: np.ndarray  # (n, T, F) float32
    z: np.ndarray  # (n,)
    delta: np.ndarray  # (n,)

    def __post_init__(self):
        if not (len(self.x) == len(self.z) == len(self.delta)):
            raise TrainingError("dataset arrays disagree on length")

    def __len__(self):
        return len(self.z)

    @classmethod
    def from_samples(cls, samples: list[SurvivalSample]) -> "Dataset":
        if not samples:
            raise TrainingError("empty sample list")
        return cls(
            np.stack([s.x for s in samples]).astype(np.float32),
            np.array([s.z for s in samples], dtype=np.float64),
            np.array([s.delta for s in samples], dtype=np.int64),
        )


def split_chronological(
    samples: list[SurvivalSample], fractions=(0.7, 0.15, 0.15)
) -> tuple[list[SurvivalSample], list[SurvivalSample], list[SurvivalSample]]:
    """Train/validation/test split in submission order (no shuffling, so
    the evaluation sets are strictly later than the training set)."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
        raise TrainingError("fractions must be three numbers summing to 1")
    ordered = sorted(samples, key=lambda s: (s.meta.get("day", 0), s.meta.get("submit_us", 0)))
    n = len(ordered)
    a = int(n * fractions[0])
    b = a + int(n * fractions[1])
    return ordered[:a], ordered[a:b], ordered[b:]


class Adam:
    """Adam over a ParamStore, with global gradient-norm clipping."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=5.0):
        self.store = store
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {n: np.zeros_like(p.value) for n, p in store.items()}
        self.v = {n: np.zeros_like(p.value) for n, p in store.items()}

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))
        if not np.isfinite(total):
            raise TrainingError("non-finite gradient")
        scale = 1.0 if total <= self.clip_norm else self.clip_norm / total
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        correction = np.sqrt(1 - b2**self.t) / (1 - b1**self.t)
        for name, g in grads.items():
            g = g * scale
            self.m[name] = b1 * self.m[name] + (1 - b1) * g
            self.v[name] = b2 * self.v[name] + (1 - b2) * g * g
            p = self.store[name]
            p.value -= (
                self.lr * correction * self.m[name] / (np.sqrt(self.v[name]) + self.eps)
            ).astype(p.value.dtype)
        return total


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    floor: float = 1e-12


@dataclass
class FitResult:
    model: SurvivalModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = np.inf
    wall_seconds: float = 0.0


def _dataset_loss(model: SurvivalModel, data: Dataset, floor: float, batch: int) -> float:
    total, n = 0.0, len(data)
    for lo in range(0, n, batch):
        hi = min(lo + batch, n)
        loss, _ = rcll_loss(model, data.x[lo:hi], data.z[lo:hi], data.delta[lo:hi], floor)
        total += float(loss.data) * (hi - lo)
    return total / n


def fit(
    model_config: ModelConfig,
    train: Dataset,
    val: Dataset,
    train_config: TrainConfig = TrainConfig(),
) -> FitResult:
    """Train a model on ``train``, early-stopping on validation loss.

    The best-validation parameters are restored before returning. The
    time standardization constant is the training-set maximum time; the
    per-feature standardization constants are training-set moments.
    """
    t0 = time.perf_counter()
    t_max = float(train.z.max())
    flat = train.x.reshape(-1, train.x.shape[-1]).astype(np.float64)
    x_loc = flat.mean(axis=0)
    x_scale = np.maximum(flat.std(axis=0), 1e-6)
    model = SurvivalModel.build(model_config, t_max=t_max, x_loc=x_loc, x_scale=x_scale)
    opt = Adam(model.store, lr=train_config.lr, clip_norm=train_config.clip_norm)
    rng = np.random.default_rng(train_config.seed)
    result = FitResult(model)
    best_values: dict[str, np.ndarray] = {}
    bad_epochs = 0
    n = len(train)
    batch = min(train_config.batch_size, n)
    for epoch in range(train_config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, batch):
            idx = order[lo : lo + batch]
            loss, leaves = rcll_loss(
                model, train.x[idx], train.z[idx], train.delta[idx], train_config.floor
            )
            if not np.isfinite(loss.data):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {lo // batch}"
                )
            loss.backward()
            grads = {name: leaf.grad for name, leaf in leaves.items() if leaf.grad is not None}
            opt.step(grads)
            epoch_loss += float(loss.data) * len(idx)
        val_loss = _dataset_loss(model, val, train_config.floor, batch)
        result.history.append(
            {"epoch": epoch, "train_loss": epoch_loss / n, "val_loss": val_loss}
        )
        if val_loss < result.best_val - 1e-9:
            result.best_val = val_loss
            result.best_epoch = epoch
            best_values = {name: p.value.copy() for name, p in model.store.items()}
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > train_config.patience:
                break
    if best_values:
        for name, value in best_values.items():
            model.store[name].value[...] = value
    result.wall_seconds = time.perf_counter() - t0
    return result


class LatentModel:
    """Scoring adapter: covariates are precomputed latent vectors, so the
    encoder runs once per sample instead of once per pair."""

    def __init__(self, model: SurvivalModel):
        self._model = model

    def encode(self, x: np.ndarray, chunk: int = 64) -> np.ndarray:
        # chunked so long-window attention stays within memory
        return np.concatenate(
            [self._model._latent(x[lo : lo + chunk]) for lo in range(0, len(x), chunk)]
        )

    def survival(self, t, latent):
        s, _ = self._model.curves_from_latent(np.asarray(latent), t)
        return float(s[0]) if np.ndim(t) == 0 else s

    def density(self, t, latent):
        _, f = self._model.curves_from_latent(np.asarray(latent), t)
        return float(f[0]) if np.ndim(t) == 0 else f


def evaluate(model: SurvivalModel, data: Dataset, horizons=None) -> dict:
    """Scoring summary: negative right-censored log-likelihood,
    time-dependent concordance, and Brier scores at the given horizons
    (default: the median observed time)."""
    adapter = LatentModel(model)
    latents = adapter.encode(data.x)
    out = {
        "n": len(data),
        "event_rate": float(np.mean(data.delta)),
        "neg_rcll": neg_rcll(adapter, data.z, data.delta, latents),
    }
    try:
        out["c_td"] = c_td(adapter, data.z, data.delta, latents)
    except Exception:
        out["c_td"] = None
    if horizons is None:
        horizons = [float(np.median(data.z))]
    G = censoring_km(data.z, data.delta)
    out["brier"] = {}
    for h in horizons:
        try:
            out["brier"][str(h)] = brier(
                adapter, data.z, data.delta, latents, t=float(h), G=G
            )
        except SurvivalStatsError:
            out["brier"][str(h)] = None  # censoring weight vanished at z > h
    return out


def compare_encoders(
    train: Dataset,
    val: Dataset,
    test: Dataset,
    base_config: ModelConfig,
    encoders=("mlp", "cnn", "conv_transformer"),
    seeds=(0, 1, 2, 3, 4),
    train_config: TrainConfig = TrainConfig(),
) -> dict:
    """Mean test negative log-likelihood per encoder across seeds."""
    from dataclasses import replace

    results: dict = {}
    for encoder in encoders:
        per_seed = []
        for seed in seeds:
            cfg = replace(base_config, encoder=encoder, seed=seed)
            tc = replace(train_config, seed=seed)
            res = fit(cfg, train, val, tc)
            score = evaluate(res.model, test)
            per_seed.append(
                {
                    "seed": seed,
                    "neg_rcll": score["neg_rcll"],
                    "c_td": score["c_td"],
                    "best_epoch": res.best_epoch,
                    "wall_seconds": res.wall_seconds,
                }
            )
        results[encoder] = {
            "per_seed": per_seed,
            "mean_neg_rcll": float(np.mean([r["neg_rcll"] for r in per_seed])),
        }
    return results


def kernel_sweep(
    train: Dataset,
    val: Dataset,
    test: Dataset,
    base_config: ModelConfig,
    sizes=(1, 2, 3, 5, 10, 25, 50),
    train_config: TrainConfig = TrainConfig(),
) -> dict:
    """Test loss of the conv-transformer as the kernel size varies."""
    from dataclasses import replace

    out = {}
    for s in sizes:
        if s > base_config.T:
            continue
        cfg = replace(base_config, encoder="conv_transformer", kernel_size=s)
        res = fit(cfg, train, val, train_config)
        out[int(s)] = evaluate(res.model, test)["neg_rcll"]
    return out
