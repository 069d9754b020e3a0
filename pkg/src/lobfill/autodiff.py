"""Minimal reverse-mode automatic differentiation on numpy arrays.

Just enough machinery for the survival models in this package: a taped
``Tensor`` with broadcasting-aware elementwise ops, batched matmul,
stable softmax with an additive attention mask, a dilated causal shift,
and parameter storage with an in-graph positivity constraint. Training
runs in float32; gradient-check tests may build float64 graphs, so every
op preserves the dtype of its inputs.

The derivative of model outputs with respect to an *input* (not a
parameter) is available through :func:`grad_wrt`, which is how survival
curves are turned into densities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POSITIVE_EPS = 1e-6  # added after softplus so constrained weights stay > 0
MASK_NEG = -1e9  # additive stand-in for -inf in masked softmax


class AutodiffError(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """Array node in a reverse-mode computation graph."""

    __slots__ = ("data", "parents", "_backward", "grad")

    def __init__(self, data, parents=(), backward=None, dtype=None):
        self.data = np.asarray(data, dtype=dtype or getattr(data, "dtype", None))
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.parents = tuple(parents)
        self._backward = backward
        self.grad: np.ndarray | None = None

    # -- bookkeeping -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=self.dtype), self.shape)
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, seed=None) -> None:
        """Accumulate gradients of this node into every graph leaf."""
        if seed is None:
            if self.data.size != 1:
                raise AutodiffError("backward() without seed needs a scalar")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                stack.append((p, False))
        self._accumulate(np.broadcast_to(seed, self.shape))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, expo):
        return power(self, expo)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def constant(x, dtype=np.float32) -> Tensor:
    return Tensor(np.asarray(x, dtype=dtype))


# -- primitives ------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, (a, b))
    out._backward = lambda g: (a._accumulate(g), b._accumulate(g))
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, (a, b))
    out._backward = lambda g: (a._accumulate(g * b.data), b._accumulate(g * a.data))
    return out


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data / b.data, (a, b))

    def back(g):
        a._accumulate(g / b.data)
        b._accumulate(-g * a.data / (b.data * b.data))

    out._backward = back
    return out


def power(a, expo: float) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data**expo, (a,))
    out._backward = lambda g: a._accumulate(g * expo * a.data ** (expo - 1))
    return out


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data @ b.data, (a, b))

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_unbroadcast(ga, a.shape) if ga.shape != a.shape else ga)
        b._accumulate(_unbroadcast(gb, b.shape) if gb.shape != b.shape else gb)

    out._backward = back
    return out


def tanh(a) -> Tensor:
    a = _wrap(a)
    y = np.tanh(a.data)
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * (1.0 - y * y))
    return out


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    y = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * y * (1.0 - y))
    return out


def exp(a) -> Tensor:
    a = _wrap(a)
    y = np.exp(a.data)
    out = Tensor(y, (a,))
    out._backward = lambda g: a._accumulate(g * y)
    return out


def log(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.log(a.data), (a,))
    out._backward = lambda g: a._accumulate(g / a.data)
    return out


def softplus(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.logaddexp(0.0, a.data), (a,))
    sig = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))
    out._backward = lambda g: a._accumulate(g * sig)
    return out


def maximum(a, floor: float) -> Tensor:
    """Elementwise max with a constant; gradient flows where a > floor."""
    a = _wrap(a)
    mask = (a.data > floor).astype(a.dtype)
    out = Tensor(np.maximum(a.data, floor), (a,))
    out._backward = lambda g: a._accumulate(g * mask)
    return out


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    out._backward = back
    return out


def mean_(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape), (a,))
    out._backward = lambda g: a._accumulate(g.reshape(a.shape))
    return out


def swap_last2(a) -> Tensor:
    a = _wrap(a)
    out = Tensor(np.swapaxes(a.data, -1, -2), (a,))
    out._backward = lambda g: a._accumulate(np.swapaxes(g, -1, -2))
    return out


def take(a, key) -> Tensor:
    a = _wrap(a)
    out = Tensor(a.data[key], (a,))

    def back(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        np.add.at(full, key, g)
        a._accumulate(full)

    out._backward = back
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    out._backward = back
    return out


def shift_time(a, k: int) -> Tensor:
    """Causal shift along the time axis (second to last): out_t = a_{t-k},
    zero-padded at the start. k = 0 is the identity."""
    a = _wrap(a)
    if k < 0:
        raise AutodiffError("causal shift requires k >= 0")
    if k == 0:
        y = a.data.copy()
    else:
        y = np.zeros_like(a.data)
        y[..., k:, :] = a.data[..., :-k, :]
    out = Tensor(y, (a,))

    def back(g):
        gx = np.zeros(a.shape, dtype=a.dtype)
        if k == 0:
            gx += g
        else:
            gx[..., :-k, :] = g[..., k:, :]
        a._accumulate(gx)

    out._backward = back
    return out


def softmax(a, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Stable softmax; ``mask`` is added to the logits first (use
    ``MASK_NEG`` entries to forbid positions)."""
    a = _wrap(a)
    logits = a.data if mask is None else a.data + mask
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, (a,))

    def back(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - inner))

    out._backward = back
    return out


# -- composite layers ---------------------------------------------------------


def dilated_causal_conv1d(x, kernel, bias=None, dilation: int = 1) -> Tensor:
    """Causal 1-d convolution over the time axis with kernel dilation.

    ``x`` has shape (..., T, F); ``kernel`` has shape (s, F, D). Output at
    time t is sum over tap tau of x_{t - dilation*tau} @ kernel[tau], with
    zeros before the start of the window.
    """
    kernel = _wrap(kernel)
    s = kernel.shape[0]
    out = None
    for tau in range(s):
        term = matmul(shift_time(x, dilation * tau), take(kernel, tau))
        out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, bias)
    return out


def causal_mask(T: int, dtype=np.float32) -> np.ndarray:
    """Additive (T, T) mask forbidding attention to strictly future steps."""
    m = np.zeros((T, T), dtype=dtype)
    m[np.triu_indices(T, k=1)] = MASK_NEG
    return m


def masked_attention(q, k, v, mask: np.ndarray | None = None):
    """Scaled dot-product attention with an additive mask.

    Returns (output, attention weights); weights are a Tensor so the map
    stays differentiable and inspectable.
    """
    d_k = q.shape[-1]
    # scale q before the product: one (T, d) pass instead of a (T, T) one
    scores = matmul(mul(q, 1.0 / np.sqrt(d_k)), swap_last2(k))
    weights = softmax(scores, mask=mask)
    return matmul(weights, v), weights


def grad_wrt(output: Tensor, wrt: Tensor, seed=None) -> np.ndarray:
    """Gradient of ``output`` with respect to one tensor in its graph."""
    output.backward(seed)
    if wrt.grad is None:
        raise AutodiffError("tensor is not part of the output's graph")
    return wrt.grad


# -- parameters and checkpoints ------------------------------------------------


@dataclass
class Param:
    value: np.ndarray  # raw, unconstrained storage
    positive: bool = False  # expose through softplus(value) + eps


class ParamStore:
    """Named trainable arrays plus their positivity constraints."""

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray, positive: bool = False) -> None:
        if name in self._params:
            raise AutodiffError(f"duplicate parameter: {name}")
        self._params[name] = Param(np.asarray(value, dtype=np.float32), positive)

    def __contains__(self, name):
        return name in self._params

    def __getitem__(self, name) -> Param:
        return self._params[name]

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def n_values(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def leaves(self, dtype=None) -> dict[str, Tensor]:
        """Fresh leaf tensors for one forward pass; read ``.grad`` after
        backward to get parameter gradients."""
        return {
            name: Tensor(p.value.astype(dtype) if dtype else p.value.copy())
            for name, p in self._params.items()
        }

    @staticmethod
    def constrained(leaf: Tensor, positive: bool) -> Tensor:
        return add(softplus(leaf), POSITIVE_EPS) if positive else leaf


def save_checkpoint(path: str | Path, store: ParamStore, meta: dict) -> None:
    """Write a two-file checkpoint: a JSON manifest and a raw buffer of
    little-endian float32 values, concatenated in manifest order."""
    path = Path(path)
    if path.suffix != ".json":
        raise AutodiffError("checkpoint path must end in .json")
    bin_path = path.with_suffix(".bin")
    entries = []
    offset = 0
    chunks = []
    for name, p in store.items():
        flat = np.ascontiguousarray(p.value, dtype="<f4").ravel()
        entries.append(
            {
                "name": name,
                "shape": list(p.value.shape),
                "offset": offset,
                "positive": p.positive,
            }
        )
        offset += flat.size
        chunks.append(flat.tobytes())
    manifest = {
        "format": "lobfill-checkpoint-v1",
        "n_values": offset,
        "params": entries,
        "meta": meta,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[ParamStore, dict]:
    path = Path(path)
    with open(path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "lobfill-checkpoint-v1":
        raise AutodiffError(f"unrecognized checkpoint format in {path}")
    raw = np.frombuffer(Path(path.with_suffix(".bin")).read_bytes(), dtype="<f4")
    if raw.size != manifest["n_values"]:
        raise AutodiffError("checkpoint buffer length does not match manifest")
    store = ParamStore()
    for e in manifest["params"]:
        size = int(np.prod(e["shape"])) if e["shape"] else 1
        chunk = raw[e["offset"] : e["offset"] + size]
        store.add(e["name"], chunk.reshape(e["shape"]).copy(), e["positive"])
    return store, manifest["meta"]
