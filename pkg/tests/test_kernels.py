"""The numba and numpy kernel lanes compute the same arithmetic."""

import numpy as np

from histexpr import _kernels as K
from histexpr import accel

RNG = np.random.default_rng(0)


def test_backend_flag_is_consistent():
    assert accel.BACKEND in ("numba", "numpy")
    assert accel.NUMBA_ENABLED == (accel.BACKEND == "numba")


def test_conv5_forward_lanes_agree():
    zpad = np.zeros((3, 24))
    zpad[:, 2:22] = RNG.normal(size=(3, 20))
    w = RNG.normal(size=(6, 5))
    b = RNG.normal(size=6)
    np.testing.assert_allclose(
        K.conv5_forward(zpad, w, b), K._conv5_forward_np(zpad, w, b),
        rtol=1e-13, atol=1e-13,
    )


def test_conv5_backward_lanes_agree():
    zpad = np.zeros((2, 14))
    zpad[:, 2:12] = RNG.normal(size=(2, 10))
    da = np.ascontiguousarray(RNG.normal(size=(2, 10, 4)))
    dw1, db1 = K.conv5_backward(zpad, da)
    dw2, db2 = K._conv5_backward_np(zpad, da)
    np.testing.assert_allclose(dw1, dw2, rtol=1e-12, atol=1e-13)
    np.testing.assert_allclose(db1, db2, rtol=1e-12, atol=1e-13)


def test_bias_relu_lanes_agree():
    x = RNG.normal(size=(40, 7))
    b = RNG.normal(size=7)
    np.testing.assert_array_equal(K.bias_relu(x, b), K._bias_relu_np(x, b))


def test_relu_backward_lanes_agree():
    h = np.maximum(RNG.normal(size=(30, 5)), 0.0)
    dh1 = RNG.normal(size=(30, 5))
    dh2 = dh1.copy()
    np.testing.assert_array_equal(
        K.relu_backward(dh1, h), K._relu_backward_np(dh2, h)
    )


def test_adam_update_lanes_agree():
    n = 257
    grad = RNG.normal(size=n)
    state_a = [RNG.normal(size=n), np.abs(RNG.normal(size=n)),
               np.abs(RNG.normal(size=n))]
    state_b = [arr.copy() for arr in state_a]
    K.adam_update(state_a[0], grad, state_a[1], state_a[2], 3,
                  1e-3, 0.9, 0.999, 1e-8)
    K._adam_update_np(state_b[0], grad, state_b[1], state_b[2], 3,
                      1e-3, 0.9, 0.999, 1e-8)
    for a, b in zip(state_a, state_b):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=1e-15)


def test_cindex_lanes_agree():
    for _ in range(25):
        n = int(RNG.integers(3, 60))
        t = RNG.integers(1, 10, size=n).astype(np.float64)
        e = RNG.integers(0, 2, size=n)
        r = RNG.integers(-3, 4, size=n).astype(np.float64)
        assert K.cindex_counts(t, e, r) == K._cindex_counts_np(t, e, r)
