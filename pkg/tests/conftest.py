import time

import numpy as np
import pytest

from potsherd.catalog import Catalog, densify, sketch_from_arrays
from potsherd.fixtures import make_parametric_catalog
from potsherd.harness import TrainConfig, make_eval_set, prepare_catalog, train
from potsherd.outlinenet import DESK_WIDTHS

# desk-scale end-to-end run; see README for why the widths and batch are reduced
E2E_STEPS = 10_000
E2E_BATCH = 32
E2E_LR = 1e-4
E2E_SEED = 7
HELD_OUT_PER_CLASS = 50


def cone_sketch(class_id="cone", r0=40.0, r1=80.0, h=60.0, t=5.0, n=None):
    """Truncated cone bowl: flat base, straight flaring wall."""
    inner = [(0.0, t), (r0, t), (r1, h)]
    outer = [(0.0, 0.0), (r0 + t, 0.0), (r1 + t, h)]
    sk = sketch_from_arrays(class_id, inner, outer, f"{class_id}/0")
    if n:
        total = sk.inner.length + sk.outer.length
        sk = densify(sk, total / n)
    return sk


def manifest(classes):
    """Manifest document from ``{class_id: [(inner, outer), ...]}``."""
    return {
        "classes": [
            {
                "class_id": cid,
                "sketches": [
                    {"source_id": f"{cid}/{i}", "inner": [list(p) for p in inn], "outer": [list(p) for p in out]}
                    for i, (inn, out) in enumerate(sketches)
                ],
            }
            for cid, sketches in classes.items()
        ]
    }


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def cone():
    return cone_sketch()


@pytest.fixture(scope="session")
def fixture_catalog():
    return make_parametric_catalog(n_classes=10)


@pytest.fixture(scope="session")
def small_catalog():
    return make_parametric_catalog(n_classes=3)


@pytest.fixture(scope="session")
def e2e_run(fixture_catalog):
    """The 10-class desk-scale training run shared by several tests."""
    cfg = TrainConfig(
        steps=E2E_STEPS, batch_size=E2E_BATCH, lr=E2E_LR, seed=E2E_SEED, net=dict(DESK_WIDTHS),
        val_per_class=0, checkpoint_every=0,
    )
    t0 = time.perf_counter()
    result = train(cfg, fixture_catalog)
    train_seconds = time.perf_counter() - t0
    held_out = make_eval_set(prepare_catalog(fixture_catalog, cfg.profile_spacing), HELD_OUT_PER_CLASS, 4242)
    return {"result": result, "held_out": held_out, "train_seconds": train_seconds, "cfg": cfg}


def as_catalog(*sketches):
    classes = {}
    for s in sketches:
        classes.setdefault(s.class_id, []).append(s)
    return Catalog({k: tuple(v) for k, v in classes.items()})


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store and print one acceptance line."""
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
