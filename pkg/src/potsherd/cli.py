"""``potsherd`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error.
The output directory defaults to ``$POTSHERD_OUT`` when set, else the
current directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import harness
from .catalog import load_catalog, save_catalog
from .errors import PotsherdError
from .fixtures import CatalogSpec, make_parametric_catalog, prototype_separation
from .outlinenet import DESK_WIDTHS
from .pointprep import EVAL_SAMPLING, SamplingConfig
from .synthgeom import (
    ProfileExtent,
    SherdOutline,
    assemble_outline,
    brute_force_fracture,
    generate_fracture,
    outline_hausdorff,
    project_chains,
    sample_cutting_plane,
    section_chains,
)

DEFAULT_SEED = 1234
OUT_ENV = "POTSHERD_OUT"
log = logging.getLogger("potsherd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUT_ENV) or ".")


def _seed(args) -> int:
    log.info("seed: %d", args.seed)
    return args.seed


def _dataset(args):
    """Labelled outlines from ``--data`` (file or directory) or synthesised from ``--catalog``."""
    if args.data:
        path = Path(args.data)
        files = sorted(path.glob("*.json")) if path.is_dir() else [path]
        if not files:
            raise PotsherdError(f"{path}: no outline files")
        return [SherdOutline.load(f) for f in files]
    if not args.catalog:
        raise UsageError("give --data or --catalog")
    catalog = harness.prepare_catalog(load_catalog(args.catalog), 0.5)
    return harness.make_eval_set(catalog, args.per_class, args.seed)


def cmd_fixture(args):
    _seed(args)
    catalog = make_parametric_catalog(
        CatalogSpec(n_classes=args.classes, sketches_per_class=args.sketches, min_separation=args.separation),
        np.random.default_rng(args.seed),
    )
    out = Path(args.out) if args.out else _out_dir(None) / "catalog.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_catalog(catalog, out)
    print(f"{out}: {len(catalog)} classes, prototype separation {prototype_separation(catalog):.1f} mm")


def cmd_gen(args):
    seed = _seed(args)
    catalog = harness.prepare_catalog(load_catalog(args.catalog), 0.5)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outlines = harness.make_eval_set(catalog, args.per_class, seed, augment=args.augment)
    width = len(str(args.per_class))
    for n, outline in enumerate(outlines):
        label, i = divmod(n, args.per_class)
        outline.save(out / f"{label:03d}_{i:0{width}d}.json")
    print(f"wrote {len(outlines)} outlines to {out}")


def cmd_train(args):
    doc = {}
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise PotsherdError(f"{args.config}: {exc}") from exc
    for key in ("catalog", "steps", "batch_size", "lr", "loss", "workers"):
        val = getattr(args, key)
        if val is not None:
            doc[key] = val
    doc["seed"] = args.seed
    if args.desk:
        doc["net"] = {**DESK_WIDTHS, **doc.get("net", {})}
    doc.setdefault("workers", os.cpu_count() or 1)
    try:
        cfg = harness.TrainConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise PotsherdError(f"{args.config or 'training options'}: {exc}") from exc
    if cfg.catalog is None:
        raise UsageError("no catalog: give --catalog or set it in the config file")
    _seed(args)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "train_config.json").write_text(json.dumps(harness._jsonable(cfg.to_dict()), indent=2))

    def progress(step, loss, acc):
        if (step + 1) % cfg.log_every == 0:
            log.info("step %d loss %.5f batch acc %.3f", step + 1, loss, acc)

    result = harness.train(cfg, out_dir=out, progress=progress)
    print(f"checkpoint: {out / 'last.ckpt'}")
    if result.best is not None:
        print(f"best checkpoint: {out / 'best.ckpt'} (step {result.best.step})")


def cmd_eval(args):
    seed = _seed(args)
    ck = harness.Checkpoint.load(args.checkpoint)
    data = _dataset(args)
    sampling = SamplingConfig(args.K, args.resolution)
    metrics = harness.evaluate(ck, data, ks=harness.DEFAULT_KS, sampling=sampling, seed=seed)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics.to_dict(), indent=2))
    (out / "summary.csv").write_text(metrics.summary_csv())
    (out / "per_class.csv").write_text(metrics.per_class_csv())
    (out / "confusion.csv").write_text(metrics.confusion_csv())
    sys.stdout.write(metrics.summary_csv())


def cmd_classify(args):
    ck = harness.Checkpoint.load(args.checkpoint)
    outline = SherdOutline.load(args.outline)
    ranked = harness.classify(ck, outline, SamplingConfig(args.K, args.resolution), seed=args.seed)
    if args.top is not None:
        if args.top < 1:
            raise UsageError("--top must be at least 1")
        ranked = ranked[: args.top]
    if args.json:
        print(json.dumps([{"class_id": c, "probability": p} for c, p in ranked], indent=2))
    else:
        for c, p in ranked:
            print(f"{c} {p:.6f}")


def cmd_sweep(args):
    seed = _seed(args)
    ck = harness.Checkpoint.load(args.checkpoint)
    data = _dataset(args)
    try:
        resolutions = [float(r) for r in args.resolutions.split(",")]
    except ValueError as exc:
        raise UsageError(f"--resolutions: {exc}") from exc
    text = harness.sweep_csv(harness.resolution_sweep(ck, data, resolutions, seed=seed))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def cmd_oracle_check(args):
    seed = _seed(args)
    catalog = load_catalog(args.catalog)
    sketches = list(catalog.sketches())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(args.planes):
        sketch = sketches[int(rng.integers(len(sketches)))]
        plane = sample_cutting_plane(rng, ProfileExtent.of(sketch), sketch)
        origin = np.zeros(3)
        fast = generate_fracture(sketch, plane, origin=origin) if not args.allow_small else _unchecked(sketch, plane)
        slow = brute_force_fracture(sketch, plane, args.step, origin=origin)
        d = outline_hausdorff(fast, slow)
        worst = max(worst, d)
        print(f"{i:3d} {sketch.source_id} tilt={plane.tilt:.2f} az={plane.azimuth:.2f} "
              f"offset={plane.offset:.2f} hausdorff={d:.4f}")
    ok = worst <= args.tol
    print(f"max hausdorff {worst:.4f} mm, tolerance {args.tol} mm: {'ok' if ok else 'FAILED'}")
    return 0 if ok else 2


def _unchecked(sketch, plane):
    return assemble_outline(project_chains(section_chains(sketch, plane), plane, np.zeros(3)), sketch.class_id)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="potsherd", description="Sherd outline synthesis, training and classification.")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"random seed (default {DEFAULT_SEED})")
        return sp

    def dataset(sp):
        sp.add_argument("--data", help="outline JSON file or directory of them")
        sp.add_argument("--catalog", help="synthesise an unaugmented set from this catalog instead")
        sp.add_argument("--per-class", type=int, default=50)

    sp = seeded(sub.add_parser("fixture", help="write a parametric test catalog"))
    sp.add_argument("--classes", type=int, default=10)
    sp.add_argument("--sketches", type=int, default=2)
    sp.add_argument("--separation", type=float, default=10.0, help="min prototype Hausdorff distance, mm")
    sp.add_argument("--out", help="output file (default $POTSHERD_OUT/catalog.json)")
    sp.set_defaults(func=cmd_fixture)

    sp = seeded(sub.add_parser("gen", help="write synthetic sherd outlines"))
    sp.add_argument("--catalog", required=True)
    sp.add_argument("--per-class", type=int, default=50)
    sp.add_argument("--augment", action="store_true", help="apply training-time rotation and scale")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gen)

    sp = seeded(sub.add_parser("train", help="train a classifier"))
    sp.add_argument("--config", help="JSON file with TrainConfig fields")
    sp.add_argument("--catalog")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--batch-size", dest="batch_size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--loss", choices=("careloss", "ce"))
    sp.add_argument("--desk", action="store_true", help="reduced layer widths for CPU runs")
    sp.add_argument("--workers", type=int, help="data generation processes (default: CPU count)")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train)

    sp = seeded(sub.add_parser("eval", help="evaluate a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    dataset(sp)
    sp.add_argument("--K", type=int, default=EVAL_SAMPLING.K)
    sp.add_argument("--resolution", type=float, default=EVAL_SAMPLING.resolution)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = seeded(sub.add_parser("classify", help="rank classes for one outline"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--outline", required=True)
    sp.add_argument("--top", type=int)
    sp.add_argument("--json", action="store_true")
    sp.add_argument("--K", type=int, default=EVAL_SAMPLING.K)
    sp.add_argument("--resolution", type=float, default=EVAL_SAMPLING.resolution)
    sp.set_defaults(func=cmd_classify)

    sp = seeded(sub.add_parser("sweep", help="accuracy against evaluation sampling resolution"))
    sp.add_argument("--checkpoint", required=True)
    dataset(sp)
    sp.add_argument("--resolutions", default="0.5,1,2,4,8", help="comma-separated mm values")
    sp.add_argument("--out", help="CSV file (also printed)")
    sp.set_defaults(func=cmd_sweep)

    sp = seeded(sub.add_parser("oracle-check", help="compare fast sections against the mesh oracle"))
    sp.add_argument("--catalog", required=True)
    sp.add_argument("--planes", type=int, default=20)
    sp.add_argument("--tol", type=float, default=0.5, help="mm")
    sp.add_argument("--step", type=float, default=0.1, help="oracle angular step, degrees")
    sp.add_argument("--allow-small", action="store_true", help="skip the minimum sherd size check")
    sp.set_defaults(func=cmd_oracle_check)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        code = args.func(args)
    except UsageError as exc:
        print(f"{parser.format_usage()}potsherd: error: {exc}", file=sys.stderr)
        return 1
    except (PotsherdError, OSError, ValueError) as exc:
        print(f"potsherd: {exc}", file=sys.stderr)
        return 2
    return code or 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
