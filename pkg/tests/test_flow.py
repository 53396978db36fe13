import numpy as np
import pytest

from stclstm_depth.errors import PreconditionError
from stclstm_depth.flow import FlowParams, divergence, forward_gradient, optical_flow


def smooth_image(h=64, w=64, shift=0.0):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs = xs - shift
    return 0.5 + 0.25 * np.sin(2 * np.pi * xs / 16.0) + 0.25 * np.cos(2 * np.pi * ys / 20.0)


def interior(m, border=8):
    return m[border:-border, border:-border]


def test_identical_images_have_zero_flow():
    a = smooth_image()
    flow = optical_flow(a, a.copy())
    assert flow.u.shape == a.shape
    assert np.abs(flow.u).max() < 0.05
    assert np.abs(flow.v).max() < 0.05


def test_shift_right_by_one_pixel():
    a = smooth_image()
    b = smooth_image(shift=1.0)
    flow = optical_flow(a, b)
    assert 0.7 <= np.median(interior(flow.u)) <= 1.3
    assert -0.2 <= np.median(interior(flow.v)) <= 0.2


def test_reverse_flow_is_antisymmetric():
    a = smooth_image()
    b = smooth_image(shift=1.0)
    forward = optical_flow(a, b)
    backward = optical_flow(b, a)
    assert abs(np.median(interior(forward.u)) + np.median(interior(backward.u))) < 0.3


def test_flow_is_deterministic():
    a = smooth_image()
    b = smooth_image(shift=0.5)
    f1 = optical_flow(a, b)
    f2 = optical_flow(a, b)
    assert np.array_equal(f1.u, f2.u)
    assert np.array_equal(f1.v, f2.v)


def test_gradient_divergence_adjoint():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((9, 11))
    p1 = rng.standard_normal((9, 11))
    p2 = rng.standard_normal((9, 11))
    # The dual variables live in the range of the gradient: zero last column/row
    p1[:, -1] = 0.0
    p2[-1, :] = 0.0
    dx, dy = forward_gradient(m)
    lhs = np.sum(dx * p1 + dy * p2)
    rhs = -np.sum(m * divergence(p1, p2))
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_forward_gradient_borders():
    m = np.arange(12, dtype=np.float64).reshape(3, 4)
    dx, dy = forward_gradient(m)
    assert np.all(dx[:, :-1] == 1.0) and np.all(dx[:, -1] == 0.0)
    assert np.all(dy[:-1] == 4.0) and np.all(dy[-1] == 0.0)


def test_magnitude_and_max_abs():
    a = smooth_image(32, 32)
    flow = optical_flow(a, smooth_image(32, 32, shift=1.0), FlowParams(levels=2))
    assert np.allclose(flow.magnitude(), np.hypot(flow.u, flow.v))
    assert flow.max_abs() >= np.abs(flow.u).max()


def test_preconditions():
    a = smooth_image(16, 16)
    with pytest.raises(PreconditionError):
        optical_flow(a, smooth_image(16, 20))
    with pytest.raises(PreconditionError):
        optical_flow(np.stack([a, a, a], -1), np.stack([a, a, a], -1))
    bad = a.copy()
    bad[0, 0] = np.nan
    with pytest.raises(PreconditionError):
        optical_flow(a, bad)
    with pytest.raises(PreconditionError):
        FlowParams(scale=1.0)
    with pytest.raises(PreconditionError):
        FlowParams(levels=0)
