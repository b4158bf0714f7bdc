import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.spatial.transform import Rotation

from potsherd.errors import BreakLabel, EmptyOutline
from potsherd.pointprep import (
    EVAL_SAMPLING,
    SCALE_BOUNDS,
    SCALE_MEAN,
    SCALE_VARIANCE,
    TRAIN_SAMPLING,
    PointSample,
    SamplingConfig,
    augment_fracture,
    augment_scale,
    center_outline,
    compute_angle,
    draw_scale,
    encode,
    prepare,
    random_rotation,
    sample_points,
)
from potsherd.synthgeom import BREAK, INNER, OUTER, SherdOutline


def line(length, n=None, side=INNER):
    n = n or int(length) + 1
    x = np.linspace(0, length, n)
    return SherdOutline(np.stack([x, np.zeros(n)], axis=1), np.full(n, side))


def two_sided(length):
    a = line(length / 2)
    b = line(length / 2, side=OUTER)
    b.points[:, 1] += 5
    return SherdOutline(np.vstack([a.points, b.points]), np.concatenate([a.sides, b.sides]))


class TestCenter:
    def test_example(self):
        o = center_outline(SherdOutline([(1, 1), (3, 1)], [INNER, INNER]))
        np.testing.assert_allclose(o.points, [(-1, 0), (1, 0)])

    def test_idempotent_and_isometric(self, rng):
        pts = rng.normal(size=(40, 2)) * 30
        sides = rng.integers(0, 3, 40)
        sides[:2] = INNER
        o = center_outline(SherdOutline(pts, sides))
        surf = o.points[sides != BREAK]
        np.testing.assert_allclose(surf.mean(axis=0), 0, atol=1e-9)
        np.testing.assert_allclose(center_outline(o).points, o.points, atol=1e-12)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d1 = np.linalg.norm(o.points[:, None] - o.points[None], axis=-1)
        np.testing.assert_allclose(d0, d1, atol=1e-9)
        np.testing.assert_allclose(o.points - pts, np.broadcast_to(o.points[0] - pts[0], pts.shape), atol=1e-9)

    def test_only_breaks(self):
        with pytest.raises(EmptyOutline):
            center_outline(SherdOutline([(0, 0), (1, 1)], [BREAK, BREAK]))


class TestAugment:
    def test_zero_angle_identity(self, rng):
        pts = rng.normal(size=(20, 3))
        np.testing.assert_allclose(augment_fracture(pts, rng, angle=0.0), pts, atol=1e-12)

    def test_isometry(self, rng):
        pts = rng.normal(size=(30, 3)) * 50
        out = augment_fracture(pts, rng)
        d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
        d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_angle_is_half_normal(self):
        rng = np.random.default_rng(5)
        mats = np.stack([random_rotation(rng) for _ in range(100_000)])
        angles = np.degrees(Rotation.from_matrix(mats).magnitude())
        assert stats.kstest(angles, stats.halfnorm(scale=10.0).cdf).pvalue > 0.01

    def test_axis_is_isotropic(self):
        rng = np.random.default_rng(6)
        axes = Rotation.from_matrix(np.stack([random_rotation(rng) for _ in range(20_000)])).as_rotvec()
        axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        np.testing.assert_allclose(axes.mean(axis=0), 0, atol=0.03)

    def test_unit_scale_identity(self, rng):
        o = two_sided(100)
        np.testing.assert_array_equal(augment_scale(o, rng, scale=1.0).points, o.points)

    def test_scale_bounds_and_mean(self):
        rng = np.random.default_rng(8)
        s = np.array([draw_scale(rng) for _ in range(100_000)])
        assert s.min() >= SCALE_BOUNDS[0] and s.max() <= SCALE_BOUNDS[1]
        sd = np.sqrt(SCALE_VARIANCE)
        dens = lambda x: stats.norm.pdf(x, SCALE_MEAN, sd)
        mass = integrate.quad(dens, *SCALE_BOUNDS)[0]
        mean = integrate.quad(lambda x: x * dens(x), *SCALE_BOUNDS)[0] / mass
        # 4 standard errors of the sample mean
        assert abs(s.mean() - mean) < 4 * s.std() / np.sqrt(len(s))


class TestSampling:
    def test_long_outline_hits_k(self, rng):
        ps = sample_points(line(2000, 4001), TRAIN_SAMPLING, rng)
        assert len(ps) == 512 and ps.n_distinct == 512
        assert len(np.unique(ps.xy, axis=0)) == 512

    def test_short_outline_padded(self, rng):
        ps = sample_points(line(100), TRAIN_SAMPLING, rng)
        assert len(ps) == 512 and ps.n_distinct == 50
        assert len(np.unique(ps.xy, axis=0)) == 50
        # padding repeats sampled points
        distinct = {tuple(p) for p in ps.xy[:50]}
        assert all(tuple(p) in distinct for p in ps.xy[50:])

    def test_minimum_spacing(self, rng):
        for res in (0.5, 1.0, 2.0, 3.7):
            ps = sample_points(line(300), SamplingConfig(4096, res), rng)
            x = np.sort(ps.xy[: ps.n_distinct, 0])
            assert np.diff(x).min() >= 0.75 * res - 1e-9

    def test_breaks_never_sampled(self, rng):
        # a 30 mm break bridge between two 50 mm surface runs
        pts = np.array([(0, 0), (50, 0), (65, 20), (80, 0), (130, 0)], float)
        sides = np.array([INNER, INNER, BREAK, OUTER, OUTER])
        o = SherdOutline(pts, sides)
        ps = sample_points(o, SamplingConfig(4096, 0.5), rng)
        assert ps.n_distinct == 200
        np.testing.assert_allclose(ps.xy[:, 1], 0, atol=1e-12)
        assert np.all((ps.xy[:, 0] <= 50) | (ps.xy[:, 0] >= 80))
        assert np.all((ps.side == INNER) == (ps.xy[:, 0] <= 50))

    def test_empty(self, rng):
        with pytest.raises(EmptyOutline):
            sample_points(SherdOutline([(0, 0), (1, 0)], [BREAK, BREAK]), TRAIN_SAMPLING, rng)

    def test_eval_config_never_fewer(self, rng):
        for length in rng.uniform(20, 3000, 200):
            a = sample_points(line(length), TRAIN_SAMPLING, rng).n_distinct
            b = sample_points(line(length), EVAL_SAMPLING, rng).n_distinct
            assert b >= a

    def test_bad_config(self):
        with pytest.raises(ValueError):
            SamplingConfig(8, 1.0)
        with pytest.raises(ValueError):
            SamplingConfig(64, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(
        seg=st.lists(st.floats(0.5, 40.0), min_size=2, max_size=30),
        k=st.integers(16, 700),
        res=st.floats(0.3, 5.0),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_count_formula(self, seg, k, res, seed):
        rng = np.random.default_rng(seed)
        ang = rng.uniform(-1, 1, len(seg))
        steps = np.stack([np.cos(ang), np.sin(ang)], axis=1) * np.array(seg)[:, None]
        pts = np.vstack([[0, 0], np.cumsum(steps, axis=0)])
        o = SherdOutline(pts, np.full(len(pts), OUTER))
        L = float(np.sum(seg))
        ps = sample_points(o, SamplingConfig(k, res), rng)
        want = max(1, min(k, int(np.floor(L / res + 1e-9))))
        assert len(ps) == k
        assert ps.n_distinct == want
        assert len(np.unique(ps.xy, axis=0)) == want


class TestAngle:
    def test_straight(self):
        s, c = compute_angle(line(100), [10, 50, 90], 2.0)
        np.testing.assert_allclose(s, 0, atol=1e-12)
        np.testing.assert_allclose(c, -1, atol=1e-12)

    def test_right_angle(self):
        o = SherdOutline([(0, 0), (10, 0), (10, 10)], [INNER] * 3)
        s, c = compute_angle(o, [10.0], 1.0)
        assert s[0] == pytest.approx(1.0) and c[0] == pytest.approx(0.0, abs=1e-12)

    def test_endpoint_clamped(self):
        s, c = compute_angle(line(100), [0.0, 100.0], 2.0)
        assert np.all(np.isfinite(s)) and np.all(np.isfinite(c))
        np.testing.assert_allclose(s**2 + c**2, 1, atol=1e-9)

    def test_rotation_invariant(self, rng):
        t = np.linspace(0, 3, 200)
        pts = np.stack([40 * np.cos(t), 25 * np.sin(t)], axis=1)
        o = SherdOutline(pts, np.full(200, OUTER))
        pos = rng.uniform(0, o.arc_length(), 50)
        s0, c0 = compute_angle(o, pos, 2.0)
        for a in rng.uniform(0, 2 * np.pi, 5):
            R = np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
            s1, c1 = compute_angle(SherdOutline(pts @ R.T, o.sides), pos, 2.0)
            np.testing.assert_allclose(s1, s0, atol=1e-9)
            np.testing.assert_allclose(c1, c0, atol=1e-9)

    def test_neighbours_stay_on_own_run(self):
        # corner only across the break: each run is straight so angles are pi
        o = SherdOutline([(0, 0), (10, 0), (12, 5), (10, 10), (0, 10)], [INNER, INNER, BREAK, OUTER, OUTER])
        s, c = compute_angle(o, [9.5, 10.5], 2.0)
        np.testing.assert_allclose(c, -1, atol=1e-12)


class TestEncode:
    def sample(self, xy, side, theta):
        theta = np.asarray(theta, float)
        return PointSample(np.asarray(xy, float), np.asarray(side), np.sin(theta), np.cos(theta), len(side))

    def test_examples(self):
        e = encode(self.sample([(3, -2), (5, 7)], [INNER, OUTER], [np.pi, np.pi / 2]), label=4)
        np.testing.assert_allclose(e.loc, [(3, -2, 0, 0), (0, 0, 5, 7)], atol=1e-15)
        np.testing.assert_allclose(e.ang, [(0, -1, 0, 0), (0, 0, 1, 0)], atol=1e-15)
        assert e.label == 4

    def test_group_invariants(self, rng):
        o = two_sided(400)
        e = prepare(o, TRAIN_SAMPLING, rng, 1)
        inner_active = np.any(e.ang[:, :2] != 0, axis=1)
        outer_active = np.any(e.ang[:, 2:] != 0, axis=1)
        assert np.all(inner_active ^ outer_active)
        assert np.all(e.loc[inner_active, 2:] == 0) and np.all(e.loc[outer_active, :2] == 0)
        norm_in = e.ang[inner_active, 0] ** 2 + e.ang[inner_active, 1] ** 2
        norm_out = e.ang[outer_active, 2] ** 2 + e.ang[outer_active, 3] ** 2
        np.testing.assert_allclose(norm_in, 1, atol=1e-6)
        np.testing.assert_allclose(norm_out, 1, atol=1e-6)

    def test_break_rejected(self):
        with pytest.raises(BreakLabel):
            encode(self.sample([(0, 0)], [BREAK], [0.0]))

    def test_one_hot(self):
        e = encode(self.sample([(3, -2), (5, 7)], [INNER, OUTER], [np.pi, np.pi / 2]), mode="one_hot")
        np.testing.assert_allclose(e.loc, [(3, -2, 1, 0), (5, 7, 0, 1)], atol=1e-15)
        np.testing.assert_allclose(e.ang[:, 2:], [(1, 0), (0, 1)])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            encode(self.sample([(0, 0)], [INNER], [0.0]), mode="other")

    def test_deterministic(self):
        o = two_sided(300)
        a = prepare(o, TRAIN_SAMPLING, np.random.default_rng(3), 0)
        b = prepare(o, TRAIN_SAMPLING, np.random.default_rng(3), 0)
        np.testing.assert_array_equal(a.loc, b.loc)
        np.testing.assert_array_equal(a.ang, b.ang)


def test_resolution_limits_high_frequency_content():
    """Tracing noise finer than the resolution leaves less high-band energy at 2 mm than at 0.5 mm."""
    x = np.arange(0, 400, 0.02)
    y = 0.3 * np.sin(2 * np.pi * x / 0.8)  # 0.8 mm wavelength noise on a straight edge
    o = SherdOutline(np.stack([x, y], axis=1), np.full(len(x), OUTER))
    grid = np.arange(5, 395, 0.1)

    def high_band_energy(res, seed):
        ps = sample_points(o, SamplingConfig(4096, res), np.random.default_rng(seed))
        xy = ps.xy[: ps.n_distinct]
        order = np.argsort(xy[:, 0])
        sig = np.interp(grid, xy[order, 0], xy[order, 1])
        spec = np.abs(np.fft.rfft(sig - sig.mean())) ** 2
        freq = np.fft.rfftfreq(len(grid), 0.1)
        return spec[freq > 0.5].sum()

    for seed in range(3):
        assert high_band_energy(2.0, seed) < high_band_energy(0.5, seed)
