"""Point-set outline classifier with separate location and angle pathways.

Graph, per sample of ``K`` points::

    loc (K, 4) -> shared MLP 64-128-128-256 ┐
                                            ├ concat (K, 512) -> shared 512-1024
    ang (K, 4) -> shared MLP 64-128-128-256 ┘
    -> max over points (1024) -> 512 -> dropout -> 256 -> dropout -> c -> softmax

Every layer but the last uses ReLU.  Forward, backward and the Adam update
are written out by hand on numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import ShapeMismatch, StaleCache

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
DEFAULT_LR = 1e-6


@dataclass(frozen=True)
class NetConfig:
    n_classes: int
    K: int = 512
    branch_widths: tuple = (64, 128, 128, 256)
    fusion_widths: tuple = (512, 1024)
    head_widths: tuple = (512, 256)  # the final c-unit layer is implicit
    dropout_rate: float = 0.7
    use_angle: bool = True
    loc_scale: float = 0.01  # mm -> dm, keeps first-layer activations O(1) at init

    def __post_init__(self):
        object.__setattr__(self, "branch_widths", tuple(self.branch_widths))
        object.__setattr__(self, "fusion_widths", tuple(self.fusion_widths))
        object.__setattr__(self, "head_widths", tuple(self.head_widths))
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        shapes = []
        branches = ("loc", "ang") if self.use_angle else ("loc",)
        for name in branches:
            fan = 4
            for i, w in enumerate(self.branch_widths):
                shapes.append((f"{name}{i}", fan, w))
                fan = w
        fan = self.branch_widths[-1] * len(branches)
        for i, w in enumerate(self.fusion_widths):
            shapes.append((f"fuse{i}", fan, w))
            fan = w
        for i, w in enumerate(self.head_widths + (self.n_classes,)):
            shapes.append((f"head{i}", fan, w))
            fan = w
        return shapes

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "K": self.K,
            "branch_widths": list(self.branch_widths),
            "fusion_widths": list(self.fusion_widths),
            "head_widths": list(self.head_widths),
            "dropout_rate": self.dropout_rate,
            "use_angle": self.use_angle,
            "loc_scale": self.loc_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**d)


@dataclass
class NetParams:
    """Named weight matrices ``<layer>.W`` and biases ``<layer>.b``.

    ``version`` is bumped by every in-place update so stale forward caches
    can be detected.
    """

    arrays: dict
    version: int = 0

    def __getitem__(self, key):
        return self.arrays[key]

    def keys(self):
        return self.arrays.keys()

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.arrays.items()}, self.version)

    def astype(self, dtype) -> "NetParams":
        return NetParams({k: v.astype(dtype) for k, v in self.arrays.items()}, self.version)

    @property
    def dtype(self):
        return next(iter(self.arrays.values())).dtype

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, params: NetParams, lr: float = DEFAULT_LR) -> "AdamState":
        return cls(
            {k: np.zeros_like(v) for k, v in params.arrays.items()},
            {k: np.zeros_like(v) for k, v in params.arrays.items()},
            lr=lr,
        )


def init_params(rng: np.random.Generator, cfg: NetConfig, dtype=np.float64) -> NetParams:
    """He-uniform weights (LeCun-uniform for the logit layer), zero biases."""
    arrays = {}
    shapes = cfg.layer_shapes()
    for i, (name, fan_in, fan_out) in enumerate(shapes):
        gain = 3.0 if i == len(shapes) - 1 else 6.0
        bound = np.sqrt(gain / fan_in)
        arrays[f"{name}.W"] = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
        arrays[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
    return NetParams(arrays)


@dataclass
class ForwardCache:
    cfg: NetConfig
    params: NetParams
    version: int
    shape: tuple  # (B, K)
    inputs: dict  # layer name -> input activations
    relu_out: dict  # layer name -> post-ReLU output (ReLU layers only)
    dropout: dict  # layer name -> inverted-dropout multiplier
    pool_idx: np.ndarray
    logits: np.ndarray
    used: bool = False


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(loc, ang, params: NetParams, cfg: NetConfig, mode: str = "eval",
            rng: np.random.Generator | None = None):
    """Class probabilities for a batch ``loc, ang`` of shape ``(B, K', 4)``.

    Any point count ``K'`` is accepted: max-pooling makes the result
    independent of point order and of repeated points.  Returns
    ``(probs, cache)``; ``cache`` feeds :func:`backward`.
    """
    loc = np.asarray(loc, dtype=params.dtype) * params.dtype.type(cfg.loc_scale)
    ang = np.asarray(ang, dtype=params.dtype)
    if loc.ndim == 2:
        loc, ang = loc[None], ang[None]
    if loc.ndim != 3 or loc.shape[2] != 4 or ang.shape != loc.shape:
        raise ShapeMismatch(f"expected (B, K, 4) inputs, got {loc.shape} and {ang.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train" and cfg.dropout_rate > 0
    if train and rng is None:
        raise ValueError("train mode needs a random generator for dropout")
    b, k, _ = loc.shape
    inputs, relu_out, drop = {}, {}, {}
    p = params.arrays

    def dense(name, x, relu=True):
        inputs[name] = x
        z = x @ p[f"{name}.W"]
        z += p[f"{name}.b"]
        if relu:
            np.maximum(z, 0, out=z)
            relu_out[name] = z
        return z

    branch_out = []
    branches = (("loc", loc), ("ang", ang)) if cfg.use_angle else (("loc", loc),)
    for name, x in branches:
        h = x.reshape(b * k, 4)
        for i in range(len(cfg.branch_widths)):
            h = dense(f"{name}{i}", h)
        branch_out.append(h)
    h = np.concatenate(branch_out, axis=1) if len(branch_out) > 1 else branch_out[0]
    for i in range(len(cfg.fusion_widths)):
        h = dense(f"fuse{i}", h)
    pooled, idx = kernels.maxpool_forward(h.reshape(b, k, -1))
    h = pooled
    n_head = len(cfg.head_widths)
    for i in range(n_head):
        h = dense(f"head{i}", h)
        if train:
            keep = 1.0 - cfg.dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
            drop[f"head{i}"] = mask
            h = h * mask
    logits = dense(f"head{n_head}", h, relu=False)
    probs = _softmax(logits)
    cache = ForwardCache(cfg, params, params.version, (b, k), inputs, relu_out, drop, idx, logits)
    return probs, cache


def backward(cache: ForwardCache, dlogits) -> dict:
    """Gradients of every parameter given ``dLoss/dlogits`` of shape ``(B, c)``."""
    if cache.used:
        raise StaleCache("forward cache already consumed by a backward pass")
    if cache.params.version != cache.version:
        raise StaleCache("parameters changed since the forward pass")
    cache.used = True
    cfg, p = cache.cfg, cache.params.arrays
    b, k = cache.shape
    dlogits = np.asarray(dlogits, dtype=cache.logits.dtype)
    if dlogits.shape != cache.logits.shape:
        raise ShapeMismatch(f"dlogits shape {dlogits.shape} != logits shape {cache.logits.shape}")
    grads = {}

    def dense_back(name, g):
        if name in cache.relu_out:
            g = g * (cache.relu_out[name] > 0)
        x = cache.inputs[name]
        grads[f"{name}.W"] = x.T @ g
        grads[f"{name}.b"] = g.sum(axis=0)
        return g @ p[f"{name}.W"].T

    n_head = len(cfg.head_widths)
    g = dense_back(f"head{n_head}", dlogits)
    for i in reversed(range(n_head)):
        if f"head{i}" in cache.dropout:
            g = g * cache.dropout[f"head{i}"]
        g = dense_back(f"head{i}", g)
    g = kernels.maxpool_backward(g, cache.pool_idx, k).reshape(b * k, -1)
    for i in reversed(range(len(cfg.fusion_widths))):
        g = dense_back(f"fuse{i}", g)
    width = cfg.branch_widths[-1]
    branches = ("loc", "ang") if cfg.use_angle else ("loc",)
    for j, name in enumerate(branches):
        gb = g[:, j * width : (j + 1) * width]
        for i in reversed(range(len(cfg.branch_widths))):
            gb = dense_back(f"{name}{i}", gb)
    return grads


def adam_step(params: NetParams, grads: dict, state: AdamState) -> tuple[NetParams, AdamState]:
    """One bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for key, w in params.arrays.items():
        g = grads[key]
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        w -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(w.dtype, copy=False)
    params.version += 1
    return params, state


def predict(loc, ang, params: NetParams, cfg: NetConfig, batch_size: int = 64) -> np.ndarray:
    """Eval-mode probabilities, in chunks to bound memory."""
    out = []
    for i in range(0, len(loc), batch_size):
        probs, _ = forward(loc[i : i + batch_size], ang[i : i + batch_size], params, cfg, "eval")
        out.append(probs)
    return np.concatenate(out) if out else np.empty((0, cfg.n_classes))


DESK_WIDTHS = {"branch_widths": (16, 32, 32, 64), "fusion_widths": (128, 256), "head_widths": (128, 64)}


def desk_config(n_classes: int, K: int = 512) -> NetConfig:
    """Reduced-width variant of the default graph for CPU-scale experiments."""
    return NetConfig(n_classes=n_classes, K=K, **DESK_WIDTHS)


def with_classes(cfg: NetConfig, n_classes: int) -> NetConfig:
    return replace(cfg, n_classes=n_classes)
