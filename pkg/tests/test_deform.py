import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ssal.deform import (
    DeformConfig,
    bezier_map,
    deform,
    deform_traced,
    inpaint,
    inpaint_regions,
    local_shuffle,
    nonlinear_intensity,
    outpaint,
    outpaint_regions,
    rect_mask,
)
from ssal.errors import ConfigError

CFG = DeformConfig()
OPS = {
    "nonlinear": lambda img, rng: nonlinear_intensity(img, rng),
    "shuffle": lambda img, rng: local_shuffle(img, rng, CFG),
    "inpaint": lambda img, rng: inpaint(img, rng, CFG),
    "outpaint": lambda img, rng: outpaint(img, rng, CFG),
    "deform": lambda img, rng: deform(img, rng, CFG),
}


def _img(seed, size=32):
    return np.random.default_rng(seed).random((size, size)).astype(np.float32)


def test_bezier_diagonal_is_identity():
    img = _img(0)
    np.testing.assert_allclose(bezier_map(img, (1 / 3, 1 / 3), (2 / 3, 2 / 3)), img, atol=1e-6)


@given(st.tuples(st.floats(0, 1), st.floats(0, 1)), st.tuples(st.floats(0, 1), st.floats(0, 1)))
@settings(max_examples=50, deadline=None)
def test_bezier_fixes_endpoints(c1, c2):
    out = bezier_map(np.array([[0.0, 1.0]]), c1, c2)
    assert out[0, 0] == pytest.approx(0.0, abs=1e-6)
    assert out[0, 1] == pytest.approx(1.0, abs=1e-6)


def _bezier_oracle(x_target, pts, n=100_000):
    """Dense parametric sampling, then bisection on x(t); independent of the interp path."""
    pts = np.asarray(pts, dtype=float)

    def at(t):
        s = 1 - t
        b = np.array([s**3, 3 * s * s * t, 3 * s * t * t, t**3])
        return pts[:, 0] @ b, pts[:, 1] @ b

    t = np.linspace(0, 1, n)
    xs, _ = at(t)
    i = int(np.searchsorted(xs, x_target))
    lo, hi = t[max(i - 1, 0)], t[min(i, n - 1)]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if at(mid)[0] < x_target:
            lo = mid
        else:
            hi = mid
    return float(at(0.5 * (lo + hi))[1])


def test_bezier_matches_dense_sampling_oracle():
    pts = [(0, 0), (0.2, 0.8), (0.8, 0.2), (1, 1)]
    for x in (0.5, 0.13, 0.77):
        expected = _bezier_oracle(x, pts)
        got = float(bezier_map(np.array([[x]]), pts[1], pts[2])[0, 0])
        assert got == pytest.approx(expected, abs=1e-3)


@pytest.mark.parametrize("name", list(OPS))
@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_operators_preserve_unit_range(name, seed):
    out = OPS[name](_img(seed % 1000), np.random.default_rng(seed))
    assert out.dtype == np.float32
    assert out.min() >= 0.0 and out.max() <= 1.0


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_shuffle_preserves_multiset(seed):
    img = _img(seed % 97)
    out = local_shuffle(img, np.random.default_rng(seed), CFG)
    np.testing.assert_array_equal(np.sort(out, axis=None), np.sort(img, axis=None))


def test_shuffle_constant_unchanged():
    img = np.full((32, 32), 0.3, np.float32)
    np.testing.assert_array_equal(local_shuffle(img, np.random.default_rng(0), CFG), img)


def test_single_window_changes_one_rectangle():
    cfg = DeformConfig(shuffle_windows=1, shuffle_max_frac=0.25)
    img = _img(4, 64)  # distinct values almost surely
    max_side = int(0.25 * 64)
    for seed in range(20):
        out = local_shuffle(img, np.random.default_rng(seed), cfg)
        changed = np.argwhere(out != img)
        if len(changed) == 0:
            continue  # identity permutation drawn
        (r0, c0), (r1, c1) = changed.min(0), changed.max(0)
        assert r1 - r0 + 1 <= max_side and c1 - c0 + 1 <= max_side
        box_out, box_in = out[r0:r1 + 1, c0:c1 + 1], img[r0:r1 + 1, c0:c1 + 1]
        np.testing.assert_array_equal(np.sort(box_out, None), np.sort(box_in, None))
        outside = np.ones_like(img, bool)
        outside[r0:r1 + 1, c0:c1 + 1] = False
        np.testing.assert_array_equal(out[outside], img[outside])


def test_shuffle_window_too_small_rejected():
    with pytest.raises(ConfigError):
        local_shuffle(_img(0, 8), np.random.default_rng(0), DeformConfig(shuffle_max_frac=0.2))


@pytest.mark.parametrize("seed", range(10))
def test_inpaint_outside_patches_untouched(seed):
    img = _img(seed, 64)
    rects = inpaint_regions(img.shape, np.random.default_rng(seed), CFG)
    out = inpaint(img, np.random.default_rng(seed), CFG)
    outside = ~rect_mask(img.shape, rects)
    np.testing.assert_array_equal(out[outside], img[outside])
    lo, hi = CFG.paint_patch_count_range
    assert lo <= len(rects) <= hi
    for top, left, ph, pw in rects:
        assert top >= 1 and left >= 1 and top + ph <= 63 and left + pw <= 63
    max_frac = hi * CFG.paint_patch_frac_range[1] ** 2
    assert (~outside).mean() <= max_frac + 1e-12


def test_inpaint_reproducible():
    img = _img(1, 64)
    a = inpaint(img, np.random.default_rng(9), CFG)
    b = inpaint(img, np.random.default_rng(9), CFG)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("seed", range(10))
def test_outpaint_retained_region_exact(seed):
    img = _img(seed, 64)
    rects = outpaint_regions(img.shape, np.random.default_rng(seed), CFG)
    out = outpaint(img, np.random.default_rng(seed), CFG)
    keep = rect_mask(img.shape, rects)
    assert 1 <= len(rects) <= 2
    assert keep.mean() >= 0.25
    np.testing.assert_array_equal(out[keep], img[keep])
    np.testing.assert_array_equal(outpaint(img, np.random.default_rng(seed), CFG), out)


def test_outpaint_complement_is_uniform_noise():
    img = np.zeros((128, 128), np.float32)
    noise = []
    seed = 0
    while sum(len(n) for n in noise) < 10_000:
        rects = outpaint_regions(img.shape, np.random.default_rng(seed), CFG)
        out = outpaint(img, np.random.default_rng(seed), CFG)
        noise.append(out[~rect_mask(img.shape, rects)])
        seed += 1
    sample = np.concatenate(noise)[:10_000]
    assert stats.kstest(sample, "uniform").pvalue > 0.01


def test_all_zero_probabilities_is_identity():
    cfg = DeformConfig(p_nonlinear=0, p_shuffle=0, p_paint=0)
    img = _img(3)
    out, applied = deform_traced(img, np.random.default_rng(0), cfg)
    np.testing.assert_array_equal(out, img)
    assert applied == []


def test_paint_always_exactly_one_kind():
    cfg = DeformConfig(p_paint=1.0)
    for seed in range(200):
        _, applied = deform_traced(_img(0, 16), np.random.default_rng(seed), cfg)
        assert ("inpaint" in applied) != ("outpaint" in applied)


def test_application_rates_match_probabilities():
    cfg = DeformConfig()
    img = _img(0, 16)
    counts = {"nonlinear": 0, "shuffle": 0, "inpaint": 0, "outpaint": 0}
    n = 10_000
    for seed in range(n):
        for name in deform_traced(img, np.random.default_rng(seed), cfg)[1]:
            counts[name] += 1
    painted = counts["inpaint"] + counts["outpaint"]
    assert abs(counts["nonlinear"] / n - cfg.p_nonlinear) <= 0.03
    assert abs(counts["shuffle"] / n - cfg.p_shuffle) <= 0.03
    assert abs(painted / n - cfg.p_paint) <= 0.03
    assert abs(counts["inpaint"] / painted - cfg.p_inpaint_given_paint) <= 0.03


def test_deform_deterministic():
    img = _img(2, 64)
    a = deform(img, np.random.default_rng(42), CFG)
    b = deform(img, np.random.default_rng(42), CFG)
    np.testing.assert_allclose(a, b, atol=1e-6)


@pytest.mark.parametrize("bad", [dict(p_shuffle=1.5), dict(shuffle_windows=0), dict(paint_patch_count_range=(3, 1)),
                                 dict(paint_patch_frac_range=(0.0, 0.2)), dict(outpaint_keep_frac_range=(0.3, 0.6))])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        DeformConfig(**bad)
