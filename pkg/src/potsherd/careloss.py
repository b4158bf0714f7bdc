"""Cross-entropy reweighted by true-class accuracy and predicted-class false positives.

For sample ``i`` with label ``y`` and prediction ``yhat = argmax p_i``::

    u_j    = exp(-alpha_u * psi_j) / sum_k exp(-alpha_u * psi_k)
    vhat_j = exp(+alpha_v * rho_j) / sum_k exp(+alpha_v * rho_k)
    v_i    = (1 + [y != yhat] * vhat_yhat) / eta        (sum_i v_i = 1 per batch)
    loss_i = u_y * v_i * (-log p_i[y])

``psi_j`` is the accuracy on class ``j`` and ``rho_j`` the share of all
misclassifications that landed in class ``j``, both counted over a window of
``b`` batches.  At the end of each window the weights move towards their new
targets with momentum ``gamma`` and the counters are reset.  The weights are
constants for differentiation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import IndexOutOfRange, ZeroProbability

ALPHA_U = 6.0
ALPHA_V = 5.0
GAMMA = 0.8
WINDOW = 50
PROB_FLOOR = 1e-12
UNSEEN_ACCURACY = 0.5


@dataclass
class ClassStats:
    correct: np.ndarray
    total: np.ndarray
    false_pos: np.ndarray
    missed: int = 0
    batches: int = 0

    @classmethod
    def empty(cls, n_classes: int) -> "ClassStats":
        z = np.zeros(n_classes, dtype=np.int64)
        return cls(z.copy(), z.copy(), z.copy())

    @property
    def n_classes(self) -> int:
        return len(self.total)

    def accuracy(self) -> np.ndarray:
        """Per-class accuracy psi; classes absent from the window get 0.5."""
        with np.errstate(invalid="ignore", divide="ignore"):
            psi = self.correct / self.total
        return np.where(self.total > 0, psi, UNSEEN_ACCURACY)

    def false_positive_rate(self) -> np.ndarray:
        """Share rho of the window's misclassifications predicted as each class."""
        if self.missed == 0:
            return np.zeros(self.n_classes)
        return self.false_pos / self.missed

    def to_dict(self) -> dict:
        return {
            "correct": self.correct.tolist(),
            "total": self.total.tolist(),
            "false_pos": self.false_pos.tolist(),
            "missed": int(self.missed),
            "batches": int(self.batches),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassStats":
        return cls(
            np.asarray(d["correct"], dtype=np.int64),
            np.asarray(d["total"], dtype=np.int64),
            np.asarray(d["false_pos"], dtype=np.int64),
            int(d["missed"]),
            int(d["batches"]),
        )


def update_stats(stats: ClassStats, labels, predictions) -> ClassStats:
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError("labels and predictions differ in length")
    c = stats.n_classes
    for arr, name in ((labels, "label"), (predictions, "prediction")):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise IndexOutOfRange(f"{name} outside [0, {c})")
    miss = labels != predictions
    return ClassStats(
        correct=stats.correct + np.bincount(labels[~miss], minlength=c),
        total=stats.total + np.bincount(labels, minlength=c),
        false_pos=stats.false_pos + np.bincount(predictions[miss], minlength=c),
        missed=stats.missed + int(miss.sum()),
        batches=stats.batches + 1,
    )


@dataclass
class LossWeights:
    u: np.ndarray
    vhat_norm: np.ndarray
    alpha_u: float = ALPHA_U
    alpha_v: float = ALPHA_V
    gamma: float = GAMMA
    refreshed: bool = False  # momentum history exists only after the first refresh

    @classmethod
    def uniform(cls, n_classes: int, **kw) -> "LossWeights":
        return cls(np.full(n_classes, 1.0 / n_classes), np.full(n_classes, 1.0 / n_classes), **kw)

    def to_dict(self) -> dict:
        return {
            "u": self.u.tolist(),
            "vhat_norm": self.vhat_norm.tolist(),
            "alpha_u": self.alpha_u,
            "alpha_v": self.alpha_v,
            "gamma": self.gamma,
            "refreshed": self.refreshed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        d = dict(d)
        d["u"] = np.asarray(d["u"], dtype=float)
        d["vhat_norm"] = np.asarray(d["vhat_norm"], dtype=float)
        return cls(**d)


def _normalized_exp(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


def target_weights(psi, rho, alpha_u: float = ALPHA_U, alpha_v: float = ALPHA_V):
    """Un-smoothed ``(u, vhat_norm)`` for the given accuracy / false-positive vectors."""
    return _normalized_exp(-alpha_u * np.asarray(psi, float)), _normalized_exp(alpha_v * np.asarray(rho, float))


def refresh_weights(weights: LossWeights, stats: ClassStats) -> tuple[LossWeights, ClassStats]:
    """Move the weights towards the window's targets; returns fresh counters too."""
    u_t, v_t = target_weights(stats.accuracy(), stats.false_positive_rate(), weights.alpha_u, weights.alpha_v)
    if weights.refreshed:
        g = weights.gamma
        u = g * weights.u + (1 - g) * u_t
        v = g * weights.vhat_norm + (1 - g) * v_t
    else:
        u, v = u_t, v_t
    new = LossWeights(u / u.sum(), v / v.sum(), weights.alpha_u, weights.alpha_v, weights.gamma, True)
    return new, ClassStats.empty(stats.n_classes)


@dataclass
class CareLossResult:
    loss: float
    per_sample: np.ndarray
    u: np.ndarray  # per-sample true-class weight
    v: np.ndarray  # per-sample miss weight
    predictions: np.ndarray
    dlogits: np.ndarray
    clamped: bool


def careloss(probs, labels, weights: LossWeights, *, v_sum: str = "one") -> CareLossResult:
    """Batch CareLoss and its gradient with respect to the logits.

    ``v_sum`` selects the per-batch normalisation of ``v``: ``"one"`` makes
    the ``v`` terms sum to 1, ``"batch"`` to the batch size.
    """
    if v_sum not in ("one", "batch"):
        raise ValueError(f"v_sum must be 'one' or 'batch', got {v_sum!r}")
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = probs.shape
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise IndexOutOfRange(f"label outside [0, {c})")
    pred = np.argmax(probs, axis=1)
    miss = pred != labels
    raw_v = 1.0 + miss * weights.vhat_norm[pred]
    eta = raw_v.sum() if v_sum == "one" else raw_v.sum() / n
    v = raw_v / eta
    u = weights.u[labels]
    p_true = probs[np.arange(n), labels]
    clamped = bool(np.any(p_true < PROB_FLOOR))
    if clamped:
        warnings.warn("probability of a true class below 1e-12 was clamped", ZeroProbability, stacklevel=2)
    ce = -np.log(np.maximum(p_true, PROB_FLOOR))
    w = u * v
    per_sample = w * ce
    dlogits = probs * w[:, None]
    dlogits[np.arange(n), labels] -= w
    return CareLossResult(float(per_sample.sum()), per_sample, u, v, pred, dlogits.astype(probs.dtype), clamped)


def cross_entropy(probs, labels) -> CareLossResult:
    """Plain mean cross-entropy in the same result shape, for baselines."""
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    ones = np.full(n, 1.0)
    w = ones / n
    p_true = probs[np.arange(n), labels]
    ce = -np.log(np.maximum(p_true, PROB_FLOOR))
    dlogits = probs * w[:, None]
    dlogits[np.arange(n), labels] -= w
    return CareLossResult(
        float((w * ce).sum()), w * ce, ones, w, np.argmax(probs, axis=1), dlogits.astype(probs.dtype),
        bool(np.any(p_true < PROB_FLOOR)),
    )


@dataclass
class CareLossTracker:
    """Windowed statistics and weights as used inside a training loop."""

    n_classes: int
    window: int = WINDOW
    alpha_u: float = ALPHA_U
    alpha_v: float = ALPHA_V
    gamma: float = GAMMA
    v_sum: str = "one"
    weights: LossWeights = None
    stats: ClassStats = None
    refreshes: int = 0

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights.uniform(self.n_classes, alpha_u=self.alpha_u, alpha_v=self.alpha_v, gamma=self.gamma)
        if self.stats is None:
            self.stats = ClassStats.empty(self.n_classes)

    def __call__(self, probs, labels) -> CareLossResult:
        res = careloss(probs, labels, self.weights, v_sum=self.v_sum)
        self.observe(labels, res.predictions)
        return res

    def observe(self, labels, predictions) -> bool:
        """Count a batch; refresh the weights at the end of a window."""
        self.stats = update_stats(self.stats, labels, predictions)
        if self.stats.batches >= self.window:
            self.last_psi = self.stats.accuracy()
            self.last_rho = self.stats.false_positive_rate()
            self.weights, self.stats = refresh_weights(self.weights, self.stats)
            self.refreshes += 1
            return True
        return False

    def to_dict(self) -> dict:
        return {
            "window": self.window,
            "v_sum": self.v_sum,
            "refreshes": self.refreshes,
            "weights": self.weights.to_dict(),
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CareLossTracker":
        w = LossWeights.from_dict(d["weights"])
        return cls(
            n_classes=len(w.u), window=d["window"], alpha_u=w.alpha_u, alpha_v=w.alpha_v, gamma=w.gamma,
            v_sum=d.get("v_sum", "one"), weights=w, stats=ClassStats.from_dict(d["stats"]),
            refreshes=d.get("refreshes", 0),
        )
