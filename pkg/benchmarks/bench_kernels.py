"""Compiled vs numpy kernels, alone and inside the sherd pipeline.

    python benchmarks/bench_kernels.py [--repeat 5] [--number 200]

Prints best-of-``repeat`` microseconds per call for each backend and the
speedup.  The pipeline rows swap the backend in place so everything else
(glue code, numpy work outside the kernels) is shared.
"""
import argparse
import contextlib
import timeit

import numpy as np

from potsherd import kernels
from potsherd.fixtures import make_parametric_catalog
from potsherd.harness import prepare_catalog, synthesize_outline
from potsherd.pointprep import TRAIN_SAMPLING, prepare
from potsherd.synthgeom import ProfileExtent, generate_fracture, sample_cutting_plane

KERNELS = ("circle_plane_section", "section_polyline", "section_planar", "section_outline", "clip_polyline",
           "sample_runs", "maxpool_forward", "maxpool_backward")


@contextlib.contextmanager
def backend(module):
    saved = {name: getattr(kernels, name) for name in KERNELS}
    try:
        for name in KERNELS:
            setattr(kernels, name, getattr(module, name))
        yield
    finally:
        for name, fn in saved.items():
            setattr(kernels, name, fn)


def cases(rng):
    n = 4000
    r = rng.uniform(20, 120, n)
    z = np.cumsum(rng.uniform(0, 0.1, n))
    missing = np.zeros(n, bool)
    missing[n // 2] = True
    pts = np.cumsum(rng.normal(size=(n, 2)), axis=0)
    garc = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    pos = np.sort(rng.uniform(0, garc[-1], 512))
    h = rng.normal(size=(32, 512, 64)).astype(np.float32)
    g = rng.normal(size=(32, 64)).astype(np.float32)
    _, idx = kernels.maxpool_forward(h)
    return {
        "circle_plane_section": lambda k: k.circle_plane_section(r, z, 60.0, 0.2, 1e-9),
        "section_polyline": lambda k: k.section_polyline(r, z, missing, 60.0, 0.2, 1e-9),
        "section_planar": lambda k: k.section_planar(np.column_stack([r, z]), missing, 60.0, 0.2, 1e-9, 0.98, 0.2),
        "section_outline": lambda k: k.section_outline([(np.column_stack([r, z]), missing, 0)], 60.0, 0.2, 1e-9,
                                                       0.98, 0.2),
        "clip_polyline": lambda k: k.clip_polyline(pts, 0.1, 1.0, -2.0),
        "sample_runs": lambda k: k.sample_runs(pts, garc, np.array([0]), np.array([n]), pos, 0.5),
        "maxpool_forward": lambda k: k.maxpool_forward(h),
        "maxpool_backward": lambda k: k.maxpool_backward(g, idx, 512),
    }


def best_us(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    args = ap.parse_args()

    found = kernels.available_backends()
    names = sorted(found)
    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        rows.append((name, [best_us(lambda m=found[b]: fn(m), args.repeat, args.number) for b in names]))

    catalog = prepare_catalog(make_parametric_catalog(n_classes=4), 0.5)
    sketch = next(catalog.sketches())
    plane = sample_cutting_plane(np.random.default_rng(1), ProfileExtent.of(sketch), sketch)
    pipeline = {
        "generate_fracture": lambda: generate_fracture(sketch, plane),
        "sherd+encode": lambda: prepare(synthesize_outline(sketch, np.random.default_rng(2)), TRAIN_SAMPLING,
                                        np.random.default_rng(3)),
    }
    for name, fn in pipeline.items():
        times = []
        for b in names:
            with backend(found[b]):
                times.append(best_us(fn, args.repeat, max(args.number // 10, 5)))
        rows.append((name, times))

    print(f"{'kernel':<22}" + "".join(f"{b + ' us':>14}" for b in names) + ("   speedup" if len(names) == 2 else ""))
    for name, times in rows:
        line = f"{name:<22}" + "".join(f"{t:>14.1f}" for t in times)
        if len(names) == 2:
            line += f"{times[names.index('python')] / times[names.index('cython')]:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
