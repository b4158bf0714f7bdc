"""Training on synthetic sherds generated on the fly, and evaluation.

Every sample of every step is drawn from its own generator seeded by
``(seed, step, index)``, so runs are reproducible independent of the number
of data workers.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import careloss as cl
from .catalog import Catalog, densify, load_catalog
from .errors import DegenerateSherd, EmptyOutline, UnknownLabel, ZeroProbability
from .outlinenet import AdamState, NetConfig, NetParams, adam_step, backward, forward, init_params
from .pointprep import (
    EVAL_SAMPLING,
    TRAIN_SAMPLING,
    EncodedSample,
    SamplingConfig,
    augment_scale,
    center_outline,
    encode,
    prepare,
    random_rotation,
    sample_points,
)
from .synthgeom import (
    Chain,
    ProfileExtent,
    SherdOutline,
    assemble_outline,
    check_sherd,
    clip_chains,
    project_chains,
    sample_cut_lines,
    sample_cutting_plane,
    section_chains,
)

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SHERD_TRIES = 200
DEFAULT_KS = (1, 2, 5, 10)


# --------------------------------------------------------------------------
# synthetic data


def synthesize_outline(sketch, rng: np.random.Generator, *, rotate: bool = True, scale: bool = True,
                       counter: dict | None = None) -> SherdOutline:
    """One random sherd outline of ``sketch``; degenerate cuts are silently redrawn."""
    extent = ProfileExtent.of(sketch)
    height = extent.z_max - extent.z_min
    for _ in range(SHERD_TRIES):
        plane = sample_cutting_plane(rng, extent, sketch)
        chains = section_chains(sketch, plane)
        if not chains:
            continue
        if rotate:
            rot = random_rotation(rng)
            chains = [Chain(c.points @ rot.T, c.side) for c in chains]
        chains = project_chains(chains, plane)
        for cut in sample_cut_lines(chains, height, rng):
            chains = clip_chains(chains, cut)
        try:
            check_sherd(chains)
        except DegenerateSherd:
            if counter is not None:
                counter["degenerate"] = counter.get("degenerate", 0) + 1
            continue
        outline = assemble_outline(chains, sketch.class_id)
        return augment_scale(outline, rng) if scale else outline
    raise DegenerateSherd(f"no usable sherd from {sketch.source_id!r} after {SHERD_TRIES} tries")


@dataclass
class StreamSpec:
    sampling: SamplingConfig = TRAIN_SAMPLING
    rotate: bool = True
    scale: bool = True
    encoding: str = "group_hot"


def _make_sample(catalog: Catalog, spec: StreamSpec, seed: int, step: int, index: int):
    rng = np.random.default_rng([seed, step, index])
    label = int(rng.integers(len(catalog)))
    sketches = catalog[catalog.class_ids[label]]
    sketch = sketches[int(rng.integers(len(sketches)))]
    counter = {}
    outline = synthesize_outline(sketch, rng, rotate=spec.rotate, scale=spec.scale, counter=counter)
    enc = encode(sample_points(center_outline(outline), spec.sampling, rng), label, spec.encoding)
    return enc, counter.get("degenerate", 0)


_WORKER_STATE = {}


def _worker_init(catalog, spec):
    _WORKER_STATE["catalog"] = catalog
    _WORKER_STATE["spec"] = spec


def _worker_sample(args):
    return _make_sample(_WORKER_STATE["catalog"], _WORKER_STATE["spec"], *args)


def stack_batch(samples: list[EncodedSample], trim: bool = True):
    """Stack samples into ``(B, K', 4)`` arrays.

    With ``trim`` the repeated padding beyond the largest distinct count in
    the batch is dropped; max-pooling makes this exact.
    """
    k = max(s.n_distinct or s.K for s in samples) if trim else samples[0].K
    loc = np.stack([s.loc[:k] for s in samples])
    ang = np.stack([s.ang[:k] for s in samples])
    labels = np.array([-1 if s.label is None else s.label for s in samples], dtype=np.int64)
    return loc, ang, labels


class SherdStream:
    """Class-balanced synthetic batches, optionally produced by worker processes."""

    def __init__(self, catalog: Catalog, spec: StreamSpec, seed: int, workers: int = 1):
        self.catalog = catalog
        self.spec = spec
        self.seed = seed
        self.degenerate = 0
        self.gen_seconds = 0.0
        self.generated = 0
        self._pool = None
        if workers > 1:
            self._pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(catalog, spec))

    def samples(self, step: int, size: int) -> list[EncodedSample]:
        t0 = time.perf_counter()
        if self._pool is None:
            out = [_make_sample(self.catalog, self.spec, self.seed, step, i) for i in range(size)]
        else:
            out = list(self._pool.map(_worker_sample, [(self.seed, step, i) for i in range(size)], chunksize=8))
        self.gen_seconds += time.perf_counter() - t0
        self.generated += size
        self.degenerate += sum(d for _, d in out)
        return [s for s, _ in out]

    def batch(self, step: int, size: int):
        return stack_batch(self.samples(step, size))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_eval_set(catalog: Catalog, per_class: int, seed: int, augment: bool = False) -> list[SherdOutline]:
    """Synthetic sherds, ``per_class`` for every class, unaugmented unless ``augment``."""
    out = []
    for label, class_id in enumerate(catalog.class_ids):
        sketches = catalog[class_id]
        for i in range(per_class):
            rng = np.random.default_rng([seed, 7919, label, i])
            sketch = sketches[i % len(sketches)]
            out.append(synthesize_outline(sketch, rng, rotate=augment, scale=augment))
    return out


# --------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    net: NetConfig
    params: NetParams
    class_ids: list
    adam: AdamState | None = None
    step: int = 0
    loss_state: dict | None = None
    encoding: str = "group_hot"
    train_sampling: SamplingConfig = TRAIN_SAMPLING
    extra: dict = field(default_factory=dict)

    def save(self, path) -> None:
        meta = {
            "format": "potsherd-checkpoint",
            "version": CHECKPOINT_VERSION,
            "net": self.net.to_dict(),
            "class_ids": list(self.class_ids),
            "step": self.step,
            "loss_state": self.loss_state,
            "encoding": self.encoding,
            "train_sampling": asdict(self.train_sampling),
            "extra": self.extra,
            "adam": None,
        }
        arrays = {f"param/{k}": v for k, v in self.params.arrays.items()}
        if self.adam is not None:
            meta["adam"] = {"step": self.adam.step, "lr": self.adam.lr, "beta1": self.adam.beta1,
                            "beta2": self.adam.beta2, "eps": self.adam.eps}
            arrays.update({f"adam_m/{k}": v for k, v in self.adam.m.items()})
            arrays.update({f"adam_v/{k}": v for k, v in self.adam.v.items()})
        arrays["meta"] = np.array(json.dumps(meta))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != "potsherd-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} checkpoint")
            groups = {"param": {}, "adam_m": {}, "adam_v": {}}
            for key in data.files:
                if "/" in key:
                    g, name = key.split("/", 1)
                    groups[g][name] = data[key]
        adam = None
        if meta["adam"] is not None:
            adam = AdamState(groups["adam_m"], groups["adam_v"], **meta["adam"])
        return cls(
            net=NetConfig.from_dict(meta["net"]),
            params=NetParams(groups["param"]),
            class_ids=meta["class_ids"],
            adam=adam,
            step=meta["step"],
            loss_state=meta["loss_state"],
            encoding=meta["encoding"],
            train_sampling=SamplingConfig(**meta["train_sampling"]),
            extra=meta.get("extra", {}),
        )


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    catalog: str | None = None
    steps: int = 50_000
    batch_size: int = 128
    seed: int = 0
    lr: float = 1e-6
    sampling: SamplingConfig = TRAIN_SAMPLING
    rotate: bool = True
    scale: bool = True
    encoding: str = "group_hot"
    net: dict = field(default_factory=dict)  # NetConfig fields other than n_classes
    loss: str = "careloss"  # or "ce"
    alpha_u: float = cl.ALPHA_U
    alpha_v: float = cl.ALPHA_V
    gamma: float = cl.GAMMA
    window: int = cl.WINDOW
    v_sum: str = "one"
    dtype: str = "float32"
    profile_spacing: float = 0.5
    checkpoint_every: int = 1000
    val_per_class: int = 10
    workers: int = 1
    log_every: int = 100

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("sampling"), dict):
            d["sampling"] = SamplingConfig(**d["sampling"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def __post_init__(self):
        if "K" in self.net and self.net["K"] != self.sampling.K:
            raise ValueError(f"net K {self.net['K']} differs from sampling K {self.sampling.K}")
        if "n_classes" in self.net:
            raise ValueError("n_classes comes from the catalog")
        if self.loss not in ("careloss", "ce"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: dict
    best: Checkpoint | None = None


def prepare_catalog(catalog: Catalog, spacing: float) -> Catalog:
    """Densify every sketch so section outlines follow the profile closely."""
    return Catalog({cid: tuple(densify(s, spacing) for s in sk) for cid, sk in catalog.classes.items()})


def train(cfg: TrainConfig, catalog: Catalog | None = None, out_dir=None, progress=None) -> TrainResult:
    """Train a classifier on class-balanced synthetic sherds.

    Each step draws ``batch_size`` fresh samples, runs forward, the loss,
    backward and an Adam update; CareLoss statistics are folded in after
    every batch and the weights refreshed every ``window`` batches.
    """
    if catalog is None:
        if cfg.catalog is None:
            raise ValueError("no catalog given")
        catalog = load_catalog(cfg.catalog)
    catalog = prepare_catalog(catalog, cfg.profile_spacing)
    c = len(catalog)
    net_cfg = NetConfig(n_classes=c, **{"K": cfg.sampling.K, **cfg.net})
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng([cfg.seed, 1])
    params = init_params(rng, net_cfg, dtype=np.float64).astype(dtype)
    adam = AdamState.zeros_like(params, lr=cfg.lr)
    tracker = cl.CareLossTracker(c, cfg.window, cfg.alpha_u, cfg.alpha_v, cfg.gamma, cfg.v_sum)
    drop_rng = np.random.default_rng([cfg.seed, 2])

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    val_set = make_eval_set(catalog, cfg.val_per_class, cfg.seed + 104729) if cfg.val_per_class > 0 else []

    history = {"loss": [], "acc": [], "u_dev": [], "v_dev": [], "refresh": [], "val": []}
    step_seconds = 0.0
    best, best_score = None, -1.0
    spec = StreamSpec(cfg.sampling, cfg.rotate, cfg.scale, cfg.encoding)
    log.info("training: %d classes, %d steps, seed %d", c, cfg.steps, cfg.seed)
    train_log = _open_csv(out_dir, "train_log.csv", ["step", "loss", "batch_acc", "u_norm", "v_norm", "gen_samples_per_s", "train_samples_per_s"])
    loss_log = _open_csv(out_dir, "careloss_log.csv", ["step"] + [f"{k}_{j}" for k in ("psi", "rho", "u") for j in range(c)])

    def snapshot(step):
        return Checkpoint(net_cfg, params.copy(), catalog.class_ids, None, step, tracker.to_dict(), cfg.encoding, cfg.sampling,
                          {"train_config": _jsonable(cfg.to_dict())})

    history["clamped"] = 0
    with SherdStream(catalog, spec, cfg.seed, cfg.workers) as stream, warnings.catch_warnings():
        warnings.simplefilter("ignore", ZeroProbability)
        for step in range(cfg.steps):
            loc, ang, labels = stream.batch(step, cfg.batch_size)
            t0 = time.perf_counter()
            probs, cache = forward(loc, ang, params, net_cfg, "train", drop_rng)
            probs64 = probs.astype(np.float64)
            if cfg.loss == "careloss":
                res = tracker(probs64, labels)
                u_dev = abs(tracker.weights.u.sum() - 1.0)
                v_dev = abs(res.v.sum() - (1.0 if cfg.v_sum == "one" else len(labels)))
                if u_dev > 1e-9 or v_dev > 1e-9:
                    raise RuntimeError(f"step {step}: loss weights lost normalisation (u {u_dev:.2e}, v {v_dev:.2e})")
                history["u_dev"].append(u_dev)
                history["v_dev"].append(v_dev)
                if tracker.stats.batches == 0:
                    history["refresh"].append(step)
                    if loss_log:
                        loss_log[1].writerow([step + 1] + list(tracker.last_psi) + list(tracker.last_rho) + list(tracker.weights.u))
            else:
                res = cl.cross_entropy(probs64, labels)
            grads = backward(cache, res.dlogits.astype(dtype))
            adam_step(params, grads, adam)
            step_seconds += time.perf_counter() - t0
            history["clamped"] += res.clamped
            acc = float(np.mean(res.predictions == labels))
            history["loss"].append(res.loss)
            history["acc"].append(acc)
            if train_log and (step + 1) % cfg.log_every == 0:
                gen_rate = stream.generated / max(stream.gen_seconds, 1e-9)
                train_rate = stream.generated / max(step_seconds, 1e-9)
                train_log[1].writerow([step + 1, res.loss, acc, float(np.linalg.norm(tracker.weights.u)),
                                       float(np.linalg.norm(res.v)), gen_rate, train_rate])
            if progress is not None:
                progress(step, res.loss, acc)
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                ck = snapshot(step + 1)
                if val_set:
                    score = evaluate(ck, val_set, ks=(1,), seed=cfg.seed).mean[1]
                    history["val"].append((step + 1, score))
                    if score > best_score:
                        best, best_score = ck, score
                        if out_dir is not None:
                            ck.save(out_dir / "best.ckpt")
                if out_dir is not None:
                    ck.save(out_dir / "last.ckpt")
        history["degenerate"] = stream.degenerate
        history["gen_samples_per_s"] = stream.generated / max(stream.gen_seconds, 1e-9)
        history["train_samples_per_s"] = stream.generated / max(step_seconds, 1e-9)
    for f in (train_log, loss_log):
        if f:
            f[0].close()
    log.info(
        "done: %d degenerate redraws; generation %.0f samples/s vs training %.0f samples/s",
        history["degenerate"], history["gen_samples_per_s"], history["train_samples_per_s"],
    )
    final = snapshot(cfg.steps)
    final.adam = adam
    if out_dir is not None:
        final.save(out_dir / "last.ckpt")
    return TrainResult(final, history, best)


def _open_csv(out_dir, name, header):
    if out_dir is None:
        return None
    fh = open(Path(out_dir) / name, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(header)
    return fh, w


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=lambda o: asdict(o) if hasattr(o, "__dataclass_fields__") else str(o)))


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Metrics:
    class_ids: list
    ks: tuple
    counts: np.ndarray  # samples per class
    per_class: dict  # k -> (c,) top-k accuracy, nan where a class has no samples
    mean: dict  # k -> mean over classes with samples
    sd: dict  # k -> population SD over classes with samples
    confusion: np.ndarray  # (c, c) rows true, columns top-1 prediction

    def to_dict(self) -> dict:
        return {
            "class_ids": list(self.class_ids),
            "ks": list(self.ks),
            "counts": self.counts.tolist(),
            "per_class": {str(k): [None if np.isnan(x) else float(x) for x in v] for k, v in self.per_class.items()},
            "mean": {str(k): v for k, v in self.mean.items()},
            "sd": {str(k): v for k, v in self.sd.items()},
            "confusion": self.confusion.tolist(),
        }

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "mean", "sd"])
        for k in self.ks:
            w.writerow([k, self.mean[k], self.sd[k]])
        return buf.getvalue()

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "count"] + [f"top{k}" for k in self.ks])
        for i, cid in enumerate(self.class_ids):
            w.writerow([cid, int(self.counts[i])] + [self.per_class[k][i] for k in self.ks])
        return buf.getvalue()

    def confusion_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(self.class_ids))
        for cid, row in zip(self.class_ids, self.confusion):
            w.writerow([cid] + [int(x) for x in row])
        return buf.getvalue()


def true_class_ranks(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """0-based rank of the true class; ties go to the lower class index."""
    order = np.argsort(-probs, axis=1, kind="stable")
    return np.argmax(order == labels[:, None], axis=1)


def metrics_from_probs(probs, labels, class_ids, ks=DEFAULT_KS) -> Metrics:
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    c = len(class_ids)
    ranks = true_class_ranks(probs, labels) if len(labels) else np.empty(0, dtype=np.int64)
    counts = np.bincount(labels, minlength=c)
    seen = counts > 0
    per_class, mean, sd = {}, {}, {}
    for k in ks:
        hits = np.bincount(labels, weights=(ranks < k).astype(float), minlength=c)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.where(seen, hits / np.maximum(counts, 1), np.nan)
        per_class[k] = acc
        mean[k] = float(np.mean(acc[seen])) if seen.any() else float("nan")
        sd[k] = float(np.std(acc[seen])) if seen.any() else float("nan")
    confusion = np.zeros((c, c), dtype=np.int64)
    if len(labels):
        np.add.at(confusion, (labels, np.argmax(probs, axis=1)), 1)
    return Metrics(list(class_ids), tuple(ks), counts, per_class, mean, sd, confusion)


def encode_dataset(dataset, sampling: SamplingConfig, seed: int, encoding: str, class_ids) -> tuple:
    index = {cid: i for i, cid in enumerate(class_ids)}
    samples = []
    for i, outline in enumerate(dataset):
        if outline.class_id not in index:
            raise UnknownLabel(f"label {outline.class_id!r} is not a model class")
        rng = np.random.default_rng([seed, 31, i])
        samples.append(prepare(outline, sampling, rng, index[outline.class_id], encoding))
    return samples


def predict_samples(ck: Checkpoint, samples: list[EncodedSample], batch_size: int = 64) -> np.ndarray:
    """Eval-mode probabilities, batching samples of similar size together."""
    if not samples:
        return np.empty((0, ck.net.n_classes))
    probs = np.empty((len(samples), ck.net.n_classes))
    order = np.argsort([s.n_distinct or s.K for s in samples], kind="stable")
    for i in range(0, len(order), batch_size):
        idx = order[i : i + batch_size]
        loc, ang, _ = stack_batch([samples[j] for j in idx])
        probs[idx], _ = forward(loc, ang, ck.params, ck.net, "eval")
    return probs


def evaluate(ck: Checkpoint, dataset: list[SherdOutline], ks=DEFAULT_KS, sampling: SamplingConfig = EVAL_SAMPLING,
             seed: int = 0) -> Metrics:
    """Per-class top-k accuracy, mean and SD across classes, confusion matrix."""
    samples = encode_dataset(dataset, sampling, seed, ck.encoding, ck.class_ids)
    probs = predict_samples(ck, samples)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return metrics_from_probs(probs, labels, ck.class_ids, ks)


def classify(ck: Checkpoint, outline: SherdOutline, sampling: SamplingConfig = EVAL_SAMPLING, seed: int = 0):
    """Ranked ``(class_id, probability)`` pairs, most probable first."""
    surface = outline.sides != 2
    if surface.sum() < 2 or not outline.runs():
        raise EmptyOutline("outline needs at least 2 connected inner/outer points")
    sample = prepare(outline, sampling, np.random.default_rng(seed), None, ck.encoding)
    probs = predict_samples(ck, [sample])[0]
    order = np.argsort(-probs, kind="stable")
    return [(ck.class_ids[i], float(probs[i])) for i in order]


def sweep_sampling(resolution: float, base_k: int = 512, base_resolution: float = 2.0, cap: int = 4096) -> SamplingConfig:
    return SamplingConfig(min(int(math.floor(base_k * base_resolution / resolution + 1e-9)), cap), resolution)


def resolution_sweep(ck: Checkpoint, dataset, resolutions, seed: int = 0) -> list[tuple[float, float, float]]:
    """``(resolution_mm, mean top-1, mean top-5)`` per evaluation resolution."""
    rows = []
    for res in resolutions:
        m = evaluate(ck, dataset, ks=(1, 5), sampling=sweep_sampling(res), seed=seed)
        rows.append((float(res), m.mean[1], m.mean[5]))
    return rows


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["resolution_mm", "top1", "top5"])
    for r in rows:
        w.writerow([f"{r[0]:g}", f"{r[1]:.6f}", f"{r[2]:.6f}"])
    return buf.getvalue()
