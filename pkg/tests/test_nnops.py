import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from s2sr.autodiff import no_grad, precision, tensor
from s2sr.checks import adjoint_error, coordinate_gradcheck
from s2sr.errors import NonDivisibleError, ShapeMismatchError
from s2sr.nnops import (
    avg_pool2,
    bicubic_up2,
    conv2d,
    conv_s2,
    depthwise_conv2d,
    neighborhood_flatten,
    transposed_conv2d_s2,
)


def f64(shape, seed, requires_grad=True, scale=1.0):
    rng = np.random.default_rng(seed)
    return tensor(
        scale * rng.standard_normal(shape), requires_grad=requires_grad, dtype=np.float64
    )


def brute_conv2d(x, w, b, pad):
    o, cin, kh, kw = w.shape
    _, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = h + 2 * pad - kh + 1
    w_out = wd + 2 * pad - kw + 1
    out = np.zeros((o, h_out, w_out))
    for oc in range(o):
        for y in range(h_out):
            for xx in range(w_out):
                acc = 0.0
                for c in range(cin):
                    for i in range(kh):
                        for j in range(kw):
                            acc += w[oc, c, i, j] * xp[c, y + i, xx + j]
                out[oc, y, xx] = acc + (b[oc] if b is not None else 0.0)
    return out


def test_conv2d_identity_kernel():
    x = f64((3, 6, 6), seed=0, requires_grad=False)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = conv2d(x, tensor(w, dtype=np.float64), pad=1)
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_conv2d_1x1_constant():
    x = tensor(np.full((1, 4, 4), 3.0))
    w = tensor(np.full((1, 1, 1, 1), 2.0))
    out = conv2d(x, w, pad=0)
    np.testing.assert_allclose(out.data, 6.0, atol=1e-6)


def test_conv2d_matches_brute_force():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 5, 5))
    w = rng.standard_normal((1, 1, 3, 3))
    out = conv2d(tensor(x, dtype=np.float64), tensor(w, dtype=np.float64), pad=1)
    np.testing.assert_allclose(out.data, brute_conv2d(x, w, None, 1), atol=1e-6)
    # multi-channel with bias and pad 0
    x = rng.standard_normal((3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d(
        tensor(x, dtype=np.float64),
        tensor(w, dtype=np.float64),
        tensor(b, dtype=np.float64),
        pad=0,
    )
    np.testing.assert_allclose(out.data, brute_conv2d(x, w, b, 0), atol=1e-6)


def test_conv2d_channel_mismatch():
    x = tensor(np.zeros((2, 4, 4)))
    w = tensor(np.zeros((1, 3, 3, 3)))
    with pytest.raises(ShapeMismatchError):
        conv2d(x, w, pad=1)


def test_depthwise_matches_per_channel_oracle():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 5, 5))
    w = rng.standard_normal((6, 3, 3))
    out = depthwise_conv2d(tensor(x, dtype=np.float64), tensor(w, dtype=np.float64))
    for c in range(6):
        want = brute_conv2d(x[c : c + 1], w[c][None, None], None, 1)
        np.testing.assert_allclose(out.data[c], want[0], atol=1e-6)


def test_depthwise_identity():
    x = f64((6, 5, 5), seed=3, requires_grad=False)
    w = np.zeros((6, 3, 3))
    w[:, 1, 1] = 1.0
    out = depthwise_conv2d(x, tensor(w, dtype=np.float64))
    np.testing.assert_allclose(out.data, x.data, atol=1e-12)


def test_depthwise_param_count_is_54_for_6ch():
    w = np.zeros((6, 3, 3))
    assert w.size == 54


def test_transposed_shapes_and_zero_kernel():
    x = f64((6, 4, 5), seed=4, requires_grad=False)
    w = tensor(np.zeros((6, 3, 3)), dtype=np.float64)
    out = transposed_conv2d_s2(x, w)
    assert out.shape == (6, 8, 10)
    assert np.array_equal(out.data, np.zeros((6, 8, 10)))


def test_transposed_adjoint_identity():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((3, 3, 3))
    wt = tensor(w, dtype=np.float64)

    def fwd(x):
        with no_grad():
            return transposed_conv2d_s2(tensor(x, dtype=np.float64), wt).data

    def adj(y):
        with no_grad():
            return conv_s2(tensor(y, dtype=np.float64), wt).data

    for seed in range(5):
        err = adjoint_error(
            fwd, adj, (3, 4, 4), (3, 8, 8), np.random.default_rng(seed)
        )
        assert err <= 1e-5


def test_transposed_impulse_places_flipped_kernel():
    # single impulse at (1,1) -> kernel centered at output (2,2)
    x = np.zeros((1, 3, 3))
    x[0, 1, 1] = 1.0
    w = np.arange(9.0).reshape(1, 3, 3)
    out = transposed_conv2d_s2(tensor(x, dtype=np.float64), tensor(w, dtype=np.float64))
    np.testing.assert_allclose(out.data[0, 1:4, 1:4], w[0], atol=1e-12)


def test_avg_pool_block_mean():
    x = tensor(np.array([[[0.0, 1.0], [2.0, 3.0]]]))
    out = avg_pool2(x)
    np.testing.assert_allclose(out.data, [[[1.5]]], atol=1e-7)
    with pytest.raises(NonDivisibleError):
        avg_pool2(tensor(np.zeros((1, 3, 4))))


def test_avg_pool_constant():
    x = tensor(np.full((2, 6, 6), 0.7))
    np.testing.assert_allclose(avg_pool2(x).data, 0.7, atol=1e-7)


def test_neighborhood_flatten_center_and_shift():
    x = np.arange(16.0).reshape(1, 4, 4)
    out = neighborhood_flatten(tensor(x, dtype=np.float64), 3)
    assert out.shape == (9, 4, 4)
    np.testing.assert_array_equal(out.data[4], x[0])  # center tap
    np.testing.assert_array_equal(out.data[0, 1:, 1:], x[0, :-1, :-1])
    assert np.all(out.data[0, 0, :] == 0)  # zero border
    ident = neighborhood_flatten(tensor(x, dtype=np.float64), 1)
    np.testing.assert_array_equal(ident.data, x)


NN_GRADCHECK_CASES = [
    (
        "conv2d",
        lambda x, w, b: (conv2d(x, w, b, pad=1) ** 2.0).sum(),
        [(2, 4, 4), (3, 2, 3, 3), (3,)],
    ),
    (
        "conv2d_1x1",
        lambda x, w: (conv2d(x, w, pad=0) ** 2.0).sum(),
        [(3, 4, 4), (2, 3, 1, 1)],
    ),
    (
        "depthwise",
        lambda x, w: (depthwise_conv2d(x, w) ** 2.0).sum(),
        [(2, 4, 4), (2, 3, 3)],
    ),
    (
        "transposed_s2",
        lambda x, w: (transposed_conv2d_s2(x, w) ** 2.0).sum(),
        [(2, 3, 3), (2, 3, 3)],
    ),
    ("avg_pool", lambda x: (avg_pool2(x) ** 2.0).sum(), [(2, 4, 4)]),
    (
        "neighborhood",
        lambda x: (neighborhood_flatten(x, 3) ** 2.0).sum(),
        [(2, 4, 4)],
    ),
    (
        "conv_s2",
        lambda x, w: (conv_s2(x, w) ** 2.0).sum(),
        [(2, 4, 4), (2, 3, 3)],
    ),
]


@pytest.mark.parametrize(
    "fn,shapes",
    [(c[1], c[2]) for c in NN_GRADCHECK_CASES],
    ids=[c[0] for c in NN_GRADCHECK_CASES],
)
def test_nnop_gradchecks(fn, shapes):
    for seed in (0, 1):
        inputs = [f64(s, seed=seed * 7 + k) for k, s in enumerate(shapes)]
        err = coordinate_gradcheck(fn, inputs)
        assert err <= 1e-6, f"gradient mismatch {err:.2e}"


# -- bicubic --


def catmull_rom(t):
    t = abs(t)
    if t <= 1:
        return 1.5 * t**3 - 2.5 * t**2 + 1.0
    if t < 2:
        return -0.5 * (t**3 - 5 * t**2 + 8 * t - 4)
    return 0.0


def reflect(i, n):
    period = 2 * n - 2
    m = i % period
    return m if m < n else period - m


def brute_bicubic_up2(plane):
    h, w = plane.shape
    out = np.zeros((2 * h, 2 * w))
    for oy in range(2 * h):
        for ox in range(2 * w):
            cy = (oy + 0.5) / 2.0 - 0.5
            cx = (ox + 0.5) / 2.0 - 0.5
            iy, ix = int(np.floor(cy)), int(np.floor(cx))
            acc = 0.0
            for dy in range(-1, 3):
                for dx in range(-1, 3):
                    wy = catmull_rom(cy - (iy + dy))
                    wx = catmull_rom(cx - (ix + dx))
                    acc += (
                        wy * wx * plane[reflect(iy + dy, h), reflect(ix + dx, w)]
                    )
            out[oy, ox] = acc
    return out


def test_bicubic_constant_exact():
    x = np.full((2, 5, 5), 0.37, dtype=np.float32)
    out = bicubic_up2(x)
    assert out.shape == (2, 10, 10)
    assert np.array_equal(out, np.full((2, 10, 10), np.float32(0.37)))


def test_bicubic_linear_ramp_interior():
    # cubic interpolation reproduces linear functions away from borders
    h = w = 8
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ramp = 0.3 * yy + 0.1 * xx
    out = bicubic_up2(ramp[None])[0]
    oy, ox = np.mgrid[0 : 2 * h, 0 : 2 * w].astype(np.float64)
    want = 0.3 * ((oy + 0.5) / 2 - 0.5) + 0.1 * ((ox + 0.5) / 2 - 0.5)
    np.testing.assert_allclose(out[4:-4, 4:-4], want[4:-4, 4:-4], atol=1e-6)


def test_bicubic_matches_brute_force():
    rng = np.random.default_rng(8)
    plane = rng.uniform(0, 1, (4, 4))
    out = bicubic_up2(plane[None])[0]
    np.testing.assert_allclose(out, brute_bicubic_up2(plane), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), h=st.integers(2, 7), w=st.integers(2, 7))
def test_bicubic_range_is_bounded(seed, h, w):
    rng = np.random.default_rng(seed)
    plane = rng.uniform(0, 1, (1, h, w))
    out = bicubic_up2(plane)
    # cubic can overshoot, but not beyond the kernel's negative-lobe bound
    assert out.min() >= -0.2 and out.max() <= 1.2


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_conv_avgpool_composition_matches_db(seed):
    rng = np.random.default_rng(seed)
    x = tensor(rng.standard_normal((6, 8, 8)), dtype=np.float64)
    w = tensor(rng.standard_normal((6, 3, 3)), dtype=np.float64)
    with no_grad():
        composed = avg_pool2(depthwise_conv2d(x, w)).data
        blurred = depthwise_conv2d(x, w).data
    want = blurred.reshape(6, 4, 2, 4, 2).mean(axis=(2, 4))
    np.testing.assert_allclose(composed, want, atol=1e-10)
