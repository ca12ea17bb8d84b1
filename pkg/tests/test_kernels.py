"""Cross-backend agreement: the compiled kernels and the numpy fallback must
produce the same results (up to summation reordering) and identical argmax
semantics."""

import numpy as np
import numpy.testing as npt
import pytest

from ftcnn import kernels
from util import brute_force_conv

BACKENDS = [kernels.get_backend(name) for name in kernels.available_backends()]
IDS = list(kernels.available_backends())


def test_compiled_backend_present():
    # The build should have produced the extension in this environment.
    assert "cython" in kernels.available_backends()


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
@pytest.mark.parametrize("stride", [1, 2, 4])
def test_conv_forward_against_oracle(impl, stride):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 11, 11))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = impl.conv2d_forward(x, w, b, stride)
    want = brute_force_conv(x, w, b, stride=stride)
    npt.assert_allclose(got, want, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
@pytest.mark.parametrize("stride", [1, 2])
def test_conv_backward_backends_agree(stride):
    rng = np.random.default_rng(1)
    x = rng.normal(size=(3, 2, 10, 10))
    w = rng.normal(size=(5, 2, 3, 3))
    oh = (10 - 3) // stride + 1
    gy = rng.normal(size=(3, 5, oh, oh))
    a = kernels.get_backend("python").conv2d_backward(x, w, gy, stride)
    b = kernels.get_backend("cython").conv2d_backward(x, w, gy, stride)
    for ga, gb in zip(a, b):
        npt.assert_allclose(ga, gb, rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend unavailable")
def test_maxpool_backends_agree_including_ties():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 9, 9))
    # inject exact ties inside pooling windows; first maximum must win
    x[0, 0, 0, 0] = x[0, 0, 0, 1] = 5.0
    x[1, 2, 4, 4] = x[1, 2, 5, 5] = 7.0
    ya, ia = kernels.get_backend("python").maxpool_forward(x, 3, 3, 2)
    yb, ib = kernels.get_backend("cython").maxpool_forward(x, 3, 3, 2)
    npt.assert_array_equal(ya, yb)
    npt.assert_array_equal(ia, ib)
    gy = rng.normal(size=ya.shape)
    ga = kernels.get_backend("python").maxpool_backward(gy, ia, 3, 3, 2, 9, 9)
    gb = kernels.get_backend("cython").maxpool_backward(gy, ib, 3, 3, 2, 9, 9)
    npt.assert_allclose(ga, gb, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_maxpool_gradient_scatters_to_argmax(impl):
    x = np.array([[[[1.0, 2.0], [4.0, 3.0]]]])
    y, idx = impl.maxpool_forward(x, 2, 2, 2)
    assert y[0, 0, 0, 0] == 4.0
    gx = impl.maxpool_backward(np.ones_like(y), idx, 2, 2, 2, 2, 2)
    npt.assert_array_equal(gx[0, 0], [[0.0, 0.0], [1.0, 0.0]])


@pytest.mark.parametrize("impl", BACKENDS, ids=IDS)
def test_overlapping_pool_windows_accumulate(impl):
    # stride 1 with 2x2 windows: the global max feeds several windows
    x = np.zeros((1, 1, 3, 3))
    x[0, 0, 1, 1] = 9.0
    y, idx = impl.maxpool_forward(x, 2, 2, 1)
    gx = impl.maxpool_backward(np.ones_like(y), idx, 2, 2, 1, 3, 3)
    assert gx[0, 0, 1, 1] == 4.0  # all four windows point at the center
