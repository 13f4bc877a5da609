import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from cov3d_prep.resample import STANDARD_SIZES, antialias_sigma, resize, target_shape


def test_standard_sizes():
    assert STANDARD_SIZES["small"].shape == (64, 128, 128)
    assert STANDARD_SIZES["medium"].shape == (256, 256, 176)
    assert STANDARD_SIZES["large"].shape == (320, 320, 224)


def test_identity():
    v = np.random.default_rng(0).random((5, 6, 7)).astype(np.float32)
    np.testing.assert_array_equal(resize(v, v.shape), v)


@pytest.mark.parametrize("target", [(1, 1, 1), (3, 9, 2), (13, 5, 8), "small"])
def test_constant(target):
    out = resize(np.full((7, 6, 5), 0.7), target)
    assert out.shape == target_shape(target)
    np.testing.assert_allclose(out, 0.7, atol=1e-6)


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_affine_reproduced_on_upsampling(axis):
    n = 8
    shape = [4, 4, 4]
    shape[axis] = n
    line = 3.0 * np.arange(n) + 1.0
    v = np.broadcast_to(line.reshape([-1 if a == axis else 1 for a in range(3)]), shape).copy()
    target = list(shape)
    target[axis] = 2 * n
    out = np.moveaxis(resize(v, target), axis, 0)

    x = (np.arange(2 * n) + 0.5) / 2 - 0.5
    interior = (x >= 0) & (x <= n - 1)
    expected = 3.0 * x + 1.0
    assert interior.sum() == 2 * n - 2
    dev = np.abs(out[interior] - expected[interior, None, None])
    assert dev.max() < 1e-6


def test_zero_target_rejected():
    with pytest.raises(ValueError):
        resize(np.zeros((2, 2, 2)), (0, 2, 2))


def test_unknown_size():
    with pytest.raises(ValueError):
        resize(np.zeros((2, 2, 2)), "huge")


def test_sigma():
    assert antialias_sigma(300, 100) == 1.0
    assert antialias_sigma(100, 300) == 0.0


def _gauss_matrix(n, sigma, truncate=4.0):
    if sigma == 0:
        return np.eye(n)
    radius = int(truncate * sigma + 0.5)
    offsets = np.arange(-radius, radius + 1)
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    w /= w.sum()
    m = np.zeros((n, n))
    for i in range(n):
        for o, wk in zip(offsets, w):
            m[i, min(max(i + o, 0), n - 1)] += wk
    return m


def _interp_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    s = n_in / n_out
    for i in range(n_out):
        x = min(max((i + 0.5) * s - 0.5, 0.0), n_in - 1.0)
        lo = math.floor(x)
        hi = min(lo + 1, n_in - 1)
        m[i, lo] += 1 - (x - lo)
        m[i, hi] += x - lo
    return m


def _oracle(v, target):
    out = v
    for axis, n_out in enumerate(target):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        op = _interp_matrix(n_in, n_out) @ _gauss_matrix(n_in, antialias_sigma(n_in, n_out))
        out = np.moveaxis(np.tensordot(op, np.moveaxis(out, axis, 0), axes=1), 0, axis)
    return out


@pytest.mark.parametrize("target", [(4, 9, 5), (20, 3, 11), (7, 7, 2)])
def test_matches_dense_matrix_oracle(target):
    v = np.random.default_rng(3).random((12, 9, 10))
    np.testing.assert_allclose(resize(v, target), _oracle(v, target), rtol=0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(np.float64, hnp.array_shapes(min_dims=3, max_dims=3, min_side=1, max_side=9),
               elements=st.floats(-5, 5)),
    st.tuples(*[st.integers(1, 12)] * 3),
)
def test_output_within_input_range(v, target):
    out = resize(v, target)
    assert out.min() >= v.min() - 1e-6
    assert out.max() <= v.max() + 1e-6


def test_deterministic():
    v = np.random.default_rng(5).random((30, 20, 10))
    a = resize(v, (9, 31, 4))
    b = resize(v, (9, 31, 4))
    assert a.tobytes() == b.tobytes()
