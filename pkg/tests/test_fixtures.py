import json

import numpy as np
import pytest

from potsherd.catalog import load_catalog, save_catalog
from potsherd.fixtures import CatalogSpec, make_parametric_catalog, prototype_separation


def test_ten_classes_two_sketches(fixture_catalog):
    assert len(fixture_catalog) == 10
    assert all(len(fixture_catalog[c]) == 2 for c in fixture_catalog.class_ids)


def test_passes_load_validation(tmp_path, fixture_catalog):
    p = tmp_path / "c.json"
    save_catalog(fixture_catalog, p)
    assert load_catalog(p).class_ids == fixture_catalog.class_ids


def test_separation_at_least_configured():
    for sep in (10.0, 15.0):
        cat = make_parametric_catalog(CatalogSpec(n_classes=12, min_separation=sep), np.random.default_rng(3))
        assert prototype_separation(cat) >= sep


def test_deterministic(tmp_path):
    a = make_parametric_catalog(n_classes=5, rng=np.random.default_rng(1))
    b = make_parametric_catalog(n_classes=5, rng=np.random.default_rng(1))
    save_catalog(a, tmp_path / "a.json")
    save_catalog(b, tmp_path / "b.json")
    assert json.loads((tmp_path / "a.json").read_text()) == json.loads((tmp_path / "b.json").read_text())


def test_needs_two_classes():
    with pytest.raises(ValueError):
        make_parametric_catalog(n_classes=1)


def test_profiles_start_on_axis(fixture_catalog):
    for sk in fixture_catalog.sketches():
        assert sk.inner.points[0, 0] == 0 and sk.outer.points[0, 0] == 0
        assert np.all(sk.inner.points[:, 0] >= 0) and np.all(sk.outer.points[:, 0] >= 0)
