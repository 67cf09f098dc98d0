import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from maskloc import cam
from maskloc.classifier import build_default


def test_zero_head_gives_flat_zero_heatmap():
    model = build_default(32)
    dense = model.net.layers[-1]
    dense.weight = np.zeros_like(dense.weight)
    heat = cam.grad_cam(model, np.random.default_rng(0).uniform(size=(32, 32)))
    assert not heat.upsampled.any()
    assert cam.init_position(heat) is None


def test_heatmap_non_negative_and_shapes():
    model = build_default(32, seed=4)
    rng = np.random.default_rng(1)
    for _ in range(100):
        heat = cam.grad_cam(model, rng.uniform(size=(32, 32)))
        assert heat.raw.shape == (4, 4) and heat.upsampled.shape == (32, 32)
        assert heat.raw.min() >= 0 and heat.upsampled.min() >= 0


def test_gradcam_weights_match_definition():
    from maskloc import diffnet
    from maskloc.classifier import normalize

    model = build_default(32, seed=2)
    img = np.random.default_rng(3).uniform(size=(32, 32))
    _, trace = diffnet.forward(model.net, normalize(img, model.norm_stats))
    g = diffnet.backward(model.net, trace).cam[0]
    a = trace.cam_activation[0]
    ref = np.zeros(a.shape[1:])
    for k in range(a.shape[0]):
        ref += g[k].mean() * a[k]
    np.testing.assert_allclose(cam.grad_cam(model, img).raw, np.maximum(ref, 0), rtol=1e-12, atol=1e-15)


def test_upsample_modes():
    grid = np.arange(4.0).reshape(2, 2)
    near = cam.upsample(grid, (4, 4), "nearest")
    np.testing.assert_array_equal(near, np.kron(grid, np.ones((2, 2))))
    bil = cam.upsample(grid, (4, 4))
    np.testing.assert_allclose(bil[0], [0, 0.25, 0.75, 1.0])
    np.testing.assert_allclose(cam.upsample(np.full((3, 3), 2.0), (9, 9)), 2.0)
    with pytest.raises(ValueError):
        cam.upsample(grid, (4, 4), "cubic")


def test_init_single_pixel():
    h = np.zeros((20, 20))
    h[7, 13] = 1.0
    assert cam.init_position(h) == (13.0, 7.0)


def test_init_constant_is_none():
    assert cam.init_position(np.full((10, 10), 0.3)) is None


def test_init_two_symmetric_hotspots_falls_back_to_member():
    h = np.zeros((30, 30))
    h[14:17, 4:7] = h[14:17, 23:26] = 1.0  # 18 px, more than the top 1% (9 px)
    members = {(float(x), float(y)) for y in range(14, 17) for x in (*range(4, 7), *range(23, 26))}
    rng = np.random.default_rng(0)
    seen = {cam.init_position(h, rng) for _ in range(60)}
    assert seen <= members
    assert any(x < 15 for x, _ in seen) and any(x > 15 for x, _ in seen)


def test_init_threshold_includes_ties():
    h = np.zeros((10, 10))
    h[2, 2] = h[2, 3] = 1.0  # two tied maxima, top-1% of 100 pixels is one pixel
    assert cam.init_position(h) == (2.5, 2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(-8, 8), st.integers(-8, 8), st.integers(0, 10**6))
def test_init_translation_equivariance(dx, dy, seed):
    rng = np.random.default_rng(seed)
    h = np.zeros((48, 48))
    blob = rng.uniform(0.1, 1.0, (5, 5))
    h[20:25, 20:25] = blob
    h2 = np.zeros_like(h)
    h2[20 + dy : 25 + dy, 20 + dx : 25 + dx] = blob
    p = cam.init_position(h, np.random.default_rng(1))
    q = cam.init_position(h2, np.random.default_rng(1))
    assert q[0] - p[0] == pytest.approx(dx, abs=1e-9)
    assert q[1] - p[1] == pytest.approx(dy, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_init_in_bounds_and_in_top_set(seed):
    rng = np.random.default_rng(seed)
    h = rng.exponential(size=(25, 31)) ** 3
    p = cam.init_position(h, rng)
    assert 0 <= p[0] <= 30 and 0 <= p[1] <= 24
    thr = np.sort(h, axis=None)[int(np.ceil(0.99 * h.size)) - 1]
    ix, iy = int(round(p[0])), int(round(p[1]))
    assert h[iy, ix] >= thr


def test_heatmap_image_scaling():
    out = cam.heatmap_image(np.array([[1.0, 3.0], [2.0, 5.0]]))
    assert out.min() == 0 and out.max() == 1
    assert not cam.heatmap_image(np.ones((3, 3))).any()


def test_trained_heatmap_peaks_on_particle(bench):
    spec = bench.spec.__class__(max_count=1, empty_fraction=0.0, seed=99)
    from maskloc import synth

    rng = np.random.default_rng(123)
    hits = 0
    for _ in range(50):
        s = synth.generate_patch(spec, rng)
        heat = cam.grad_cam(bench.model, s.image)
        iy, ix = np.unravel_index(heat.upsampled.argmax(), heat.upsampled.shape)
        cx, cy = s.centers[0]
        hits += np.hypot(ix - cx, iy - cy) <= 1.5 * s.radius_px
    assert hits >= 45
