"""Neural survival models for limit order fill times.

An encoder maps a (T, F) feature window to a latent vector; a monotonic
decoder maps (latent, time) to the fill-time distribution function. Three
encoders share the decoder:

* ``mlp``: flattened window through one tanh layer;
* ``cnn``: stacked dilated causal convolutions, last time step;
* ``conv_transformer``: queries, keys and values produced by dilated
  causal convolutions, multi-head attention under a causal mask, heads
  merged linearly, last time step.

The decoder's weights on every path from the time input are kept strictly
positive (softplus reparameterization), and the hidden activations (tanh)
and output (sigmoid) are increasing, so the estimated distribution
function is non-decreasing in time by construction and the density --
obtained by in-graph tangent propagation -- is non-negative. Time enters
the decoder as log1p(t) / log1p(t_max); the chain-rule factor converts
the tangent back to a density in t. Feature windows pass through a fixed
per-feature affine standardization (fitted on the training set) before
the encoder, so mixed-scale columns do not saturate the tanh units.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor

ENCODERS = ("mlp", "cnn", "conv_transformer")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    T: int
    F: int
    encoder: str = "conv_transformer"
    latent: int = 16
    hidden: int = 32
    heads: int = 4
    kernel_size: int = 3
    dilation: int = 1
    decoder_hidden: tuple[int, ...] = (32, 32)
    seed: int = 0

    def validate(self) -> None:
        if self.encoder not in ENCODERS:
            raise ModelError(f"unknown encoder: {self.encoder}")
        if min(self.T, self.F, self.latent, self.hidden) < 1:
            raise ModelError("dimensions must be positive")
        if self.encoder == "conv_transformer" and self.hidden % self.heads:
            raise ModelError("hidden width must be divisible by the head count")
        if self.kernel_size < 1 or self.dilation < 1:
            raise ModelError("kernel size and dilation must be >= 1")
        if not self.decoder_hidden:
            raise ModelError("decoder needs at least one hidden layer")


def _glorot(rng, fan_in, fan_out, shape):
    return rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), shape).astype(
        np.float32
    )


def _positive_init(rng, shape):
    # softplus of these raws lands near 0.2-0.6: small positive weights
    return rng.normal(-1.0, 0.3, shape).astype(np.float32)


def init_params(config: ModelConfig) -> ParamStore:
    config.validate()
    rng = np.random.default_rng(config.seed)
    store = ParamStore()
    T, F, H, L = config.T, config.F, config.hidden, config.latent
    s = config.kernel_size
    if config.encoder == "mlp":
        store.add("enc/w0", _glorot(rng, T * F, H, (T * F, H)))
        store.add("enc/b0", np.zeros(H, np.float32))
        store.add("enc/w1", _glorot(rng, H, L, (H, L)))
        store.add("enc/b1", np.zeros(L, np.float32))
    elif config.encoder == "cnn":
        store.add("enc/k0", _glorot(rng, s * F, H, (s, F, H)))
        store.add("enc/b0", np.zeros(H, np.float32))
        store.add("enc/k1", _glorot(rng, s * H, H, (s, H, H)))
        store.add("enc/b1", np.zeros(H, np.float32))
        store.add("enc/w_out", _glorot(rng, H, L, (H, L)))
        store.add("enc/b_out", np.zeros(L, np.float32))
    else:
        d_k = H // config.heads
        for h in range(config.heads):
            for role in ("q", "k", "v"):
                store.add(
                    f"enc/head{h}/{role}", _glorot(rng, s * F, d_k, (s, F, d_k))
                )
        store.add("enc/w_merge", _glorot(rng, H, L, (H, L)))
        store.add("enc/b_merge", np.zeros(L, np.float32))
    prev = L
    for i, width in enumerate(config.decoder_hidden):
        if i == 0:
            store.add("dec/0/wt", _positive_init(rng, (1, width)), positive=True)
            store.add("dec/0/wx", _glorot(rng, L, width, (L, width)))
        else:
            store.add(f"dec/{i}/w", _positive_init(rng, (prev, width)), positive=True)
        store.add(f"dec/{i}/b", np.zeros(width, np.float32))
        prev = width
    store.add("dec/out/w", _positive_init(rng, (prev, 1)), positive=True)
    store.add("dec/out/b", np.zeros(1, np.float32))
    return store


def _leaf(leaves, store, name) -> Tensor:
    return ParamStore.constrained(leaves[name], store[name].positive)


def encode(
    config: ModelConfig,
    store: ParamStore,
    leaves: dict,
    x: Tensor,
    full_attention: bool = False,
) -> tuple[Tensor, Tensor | None]:
    """Latent vectors (B, latent) plus attention weights where they exist.

    Only the final time step feeds the latent, so by default attention is
    evaluated for the final-position query alone (an O(T) pass with
    identical output); weights then have shape (heads, B, T). With
    ``full_attention`` the complete causal map is materialized and weights
    have shape (heads, B, T, T).
    """
    p = lambda name: _leaf(leaves, store, name)
    if config.encoder == "mlp":
        flat = x.reshape((-1, config.T * config.F))
        h = ad.tanh(flat @ p("enc/w0") + p("enc/b0"))
        return h @ p("enc/w1") + p("enc/b1"), None
    if config.encoder == "cnn":
        h = ad.tanh(
            ad.dilated_causal_conv1d(x, p("enc/k0"), p("enc/b0"), config.dilation)
        )
        h = ad.tanh(
            ad.dilated_causal_conv1d(h, p("enc/k1"), p("enc/b1"), config.dilation)
        )
        last = h[:, -1, :]
        return last @ p("enc/w_out") + p("enc/b_out"), None
    mask = ad.causal_mask(config.T, dtype=x.dtype) if full_attention else None
    heads_out, heads_w = [], []
    for h_i in range(config.heads):
        # tanh keeps the attention logits bounded: raw windows contain
        # large placeholder values for absent book levels
        q = ad.tanh(
            ad.dilated_causal_conv1d(x, p(f"enc/head{h_i}/q"), dilation=config.dilation)
        )
        k = ad.tanh(
            ad.dilated_causal_conv1d(x, p(f"enc/head{h_i}/k"), dilation=config.dilation)
        )
        v = ad.tanh(
            ad.dilated_causal_conv1d(x, p(f"enc/head{h_i}/v"), dilation=config.dilation)
        )
        if not full_attention:
            q = q[:, -1:, :]  # the final row is unmasked: it sees every step
        out, w = ad.masked_attention(q, k, v, mask)
        heads_out.append(out)
        heads_w.append(w)
    merged = ad.concat(heads_out, axis=-1)
    last = merged[:, -1, :]
    latent = ad.tanh(last) @ p("enc/w_merge") + p("enc/b_merge")
    if full_attention:
        attn = ad.concat([w.reshape((1,) + w.shape) for w in heads_w], axis=0)
    else:
        attn = ad.concat(
            [w.reshape((1, w.shape[0], w.shape[-1])) for w in heads_w], axis=0
        )
    return latent, attn


def decode(
    config: ModelConfig, store: ParamStore, leaves: dict, latent: Tensor, t_std: Tensor
) -> tuple[Tensor, Tensor]:
    """Distribution function F(t|x) and its tangent dF/dt_std, both (B, 1).

    The tangent is propagated through the graph alongside the activations,
    so the density stays trainable.
    """
    p = lambda name: _leaf(leaves, store, name)
    wt = p("dec/0/wt")
    h = ad.tanh(t_std @ wt + latent @ p("dec/0/wx") + p("dec/0/b"))
    u = (1.0 - h * h) * wt  # wt broadcasts over the batch
    for i in range(1, len(config.decoder_hidden)):
        w = p(f"dec/{i}/w")
        h_new = ad.tanh(h @ w + p(f"dec/{i}/b"))
        u = (1.0 - h_new * h_new) * (u @ w)
        h = h_new
    w_out = p("dec/out/w")
    cdf = ad.sigmoid(h @ w_out + p("dec/out/b"))
    tangent = cdf * (1.0 - cdf) * (u @ w_out)
    return cdf, tangent


class SurvivalModel:
    """Encoder-decoder fill-time model with numpy scoring interfaces."""

    def __init__(
        self,
        config: ModelConfig,
        store: ParamStore,
        t_max: float = 1.0,
        x_loc: np.ndarray | None = None,
        x_scale: np.ndarray | None = None,
    ):
        config.validate()
        if t_max <= 0:
            raise ModelError("t_max must be positive")
        self.config = config
        self.store = store
        self.t_max = float(t_max)
        self.x_loc = (
            np.zeros(config.F, np.float32)
            if x_loc is None
            else np.asarray(x_loc, np.float32).reshape(config.F)
        )
        self.x_scale = (
            np.ones(config.F, np.float32)
            if x_scale is None
            else np.asarray(x_scale, np.float32).reshape(config.F)
        )
        if np.any(self.x_scale <= 0):
            raise ModelError("x_scale entries must be positive")

    @classmethod
    def build(
        cls,
        config: ModelConfig,
        t_max: float = 1.0,
        x_loc: np.ndarray | None = None,
        x_scale: np.ndarray | None = None,
    ) -> "SurvivalModel":
        return cls(config, init_params(config), t_max, x_loc, x_scale)

    # -- feature standardization ---------------------------------------------

    def x_standardize(self, x: np.ndarray) -> np.ndarray:
        """Per-feature affine map fitted on the training set; identity by
        default. Keeps tick-offset, volume and placeholder columns on a
        common scale so the tanh units start in their linear range."""
        return (x - self.x_loc.astype(x.dtype)) / self.x_scale.astype(x.dtype)

    # -- time standardization ----------------------------------------------

    def t_standardize(self, t: np.ndarray) -> np.ndarray:
        return np.log1p(t) / math.log1p(self.t_max)

    def t_chain(self, t: np.ndarray) -> np.ndarray:
        """d(t_std)/dt, the factor converting tangents to densities."""
        return 1.0 / ((1.0 + t) * math.log1p(self.t_max))

    # -- graph forward -------------------------------------------------------

    def forward(self, x: np.ndarray, t: np.ndarray, leaves=None, dtype=np.float32):
        """Graph outputs for a batch: survival, density (both (B, 1) Tensors),
        the parameter leaves, and final-position attention weights of shape
        (heads, B, T) (None for attention-free encoders).

        ``dtype`` controls graph precision; float64 is used by gradient
        checks, float32 everywhere else."""
        x = np.asarray(x, dtype=dtype)
        t = np.asarray(t, dtype=dtype)
        if x.ndim == 2:
            x = x[None]
        if x.shape[1:] != (self.config.T, self.config.F):
            raise ModelError(
                f"window shape {x.shape[1:]} != {(self.config.T, self.config.F)}"
            )
        if t.ndim == 0:
            t = t[None]
        if t.shape[0] != x.shape[0]:
            raise ModelError("batch sizes of x and t differ")
        if leaves is None:
            leaves = self.store.leaves(dtype if dtype != np.float32 else None)
        latent, attn = encode(self.config, self.store, leaves, Tensor(self.x_standardize(x)))
        t_std = Tensor(self.t_standardize(t.astype(np.float64)).astype(dtype)[:, None])
        cdf, tangent = decode(self.config, self.store, leaves, latent, t_std)
        surv = 1.0 - cdf
        chain = self.t_chain(t.astype(np.float64)).astype(dtype)[:, None]
        density = tangent * Tensor(chain)
        return surv, density, leaves, attn

    # -- numpy inference ------------------------------------------------------

    def _latent(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 2:
            x = x[None]
        leaves = self.store.leaves()
        latent, _ = encode(self.config, self.store, leaves, Tensor(self.x_standardize(x)))
        return latent.data

    def curves_from_latent(self, latent: np.ndarray, t) -> tuple[np.ndarray, np.ndarray]:
        """(survival, density) for one latent row over a vector of times."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        leaves = self.store.leaves()
        lat = Tensor(np.broadcast_to(latent, (t_arr.size, latent.size)).copy())
        t_std = Tensor(self.t_standardize(t_arr).astype(np.float32)[:, None])
        cdf, tangent = decode(self.config, self.store, leaves, lat, t_std)
        surv = 1.0 - cdf.data[:, 0]
        dens = tangent.data[:, 0] * self.t_chain(t_arr)
        return surv, dens

    def survival(self, t, x) -> float | np.ndarray:
        s, _ = self.curves_from_latent(self._latent(x)[0], t)
        return float(s[0]) if np.isscalar(t) or np.ndim(t) == 0 else s

    def density(self, t, x) -> float | np.ndarray:
        _, f = self.curves_from_latent(self._latent(x)[0], t)
        return float(f[0]) if np.isscalar(t) or np.ndim(t) == 0 else f

    def density_by_reverse_mode(self, t: float, x) -> float:
        """Density as -dS/dt by differentiating the graph with respect to
        the time input; cross-checks the in-graph tangent."""
        latent = self._latent(x)[0]
        leaves = self.store.leaves()
        t_arr = np.asarray([t], dtype=np.float64)
        t_std = Tensor(self.t_standardize(t_arr)[:, None].astype(np.float32))
        cdf, _ = decode(
            self.config, self.store, leaves, Tensor(latent[None]), t_std
        )
        g = ad.grad_wrt(cdf.sum(), t_std)  # dF/dt_std = -dS/dt_std
        return float(g[0, 0]) * float(self.t_chain(t_arr)[0])

    def attention(self, x: np.ndarray) -> np.ndarray:
        """(heads, T, T) attention weights for one window."""
        if self.config.encoder != "conv_transformer":
            raise ModelError("attention weights exist only for conv_transformer")
        x = np.asarray(x, dtype=np.float32)
        if x.ndim == 2:
            x = x[None]
        leaves = self.store.leaves()
        _, attn = encode(
            self.config, self.store, leaves, Tensor(self.x_standardize(x)),
            full_attention=True,
        )
        return attn.data[:, 0]

    # -- persistence ----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "config": asdict(self.config),
            "t_max": self.t_max,
            "x_loc": [float(v) for v in self.x_loc],
            "x_scale": [float(v) for v in self.x_scale],
        }
        meta["config"]["decoder_hidden"] = list(self.config.decoder_hidden)
        ad.save_checkpoint(path, self.store, meta)

    @classmethod
    def load(cls, path: str | Path) -> "SurvivalModel":
        store, meta = ad.load_checkpoint(path)
        cfg = dict(meta["config"])
        cfg["decoder_hidden"] = tuple(cfg["decoder_hidden"])
        return cls(
            ModelConfig(**cfg),
            store,
            meta["t_max"],
            meta.get("x_loc"),
            meta.get("x_scale"),
        )


def rcll_loss(
    model: SurvivalModel,
    x: np.ndarray,
    z: np.ndarray,
    delta: np.ndarray,
    floor: float = 1e-12,
    dtype=np.float32,
):
    """Negative right-censored log-likelihood as a graph scalar, plus the
    parameter leaves for gradient extraction."""
    z = np.asarray(z, dtype=np.float64)
    delta = np.asarray(delta, dtype=dtype)[:, None]
    surv, density, leaves, _ = model.forward(x, z, dtype=dtype)
    log_f = ad.log(ad.maximum(density, floor))
    log_s = ad.log(ad.maximum(surv, floor))
    ll = Tensor(delta) * log_f + Tensor(1.0 - delta) * log_s
    return -ll.mean(), leaves
