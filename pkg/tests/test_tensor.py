import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import finite_difference_error
from olr import layers as Ly
from olr import tensor as T
from olr.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from olr.optim import RmsPropState, rmsprop_step
from olr.tensor import Tensor


# -- forward shapes -------------------------------------------------------------

def test_conv_transpose_doubles_reference_stage():
    net = Ly.Network([Ly.conv_t(3, 3, 128, 2, "same")], (6, 6, 512), dtype=np.float32)
    out = net(np.zeros((1, 6, 6, 512), np.float32))
    assert out.shape == (1, 12, 12, 128)


def test_valid_conv_shrinks_by_two():
    net = Ly.Network([Ly.conv(3, 3, 64, 1, "valid")], (24, 24, 64))
    assert net(np.zeros((1, 24, 24, 64), np.float32)).shape == (1, 22, 22, 64)


def test_identity_kernel_is_identity(rng):
    x = rng.random((2, 7, 5, 3))
    w = np.zeros((3, 3, 3, 3))
    w[1, 1] = np.eye(3)
    np.testing.assert_array_equal(T.conv2d(x, w, None, 1, "same").data, x)


def test_same_padding_rounds_up():
    assert T.conv_output_size(7, 3, 2, "same")[0] == 4
    assert T.conv_output_size(32, 3, 2, "same")[0] == 16


def test_shape_error_names_layer():
    net = Ly.Network([Ly.flatten(), Ly.dense(4)], (2, 3))
    with pytest.raises(Ly.ShapeError, match="dimension 1"):
        net(np.zeros((1, 2, 4), np.float32))
    with pytest.raises(Ly.ShapeError, match=r"layer 1 \(reshape"):
        Ly.Network([Ly.flatten(), Ly.reshape(5)], (2, 3))


def test_conv_channel_mismatch():
    with pytest.raises(ValueError, match="channels"):
        T.conv2d(np.zeros((1, 4, 4, 3)), np.zeros((3, 3, 2, 1)))


# -- backward ----------------------------------------------------------------------

def test_sum_gradient_is_ones(rng):
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [6.0])


def test_backward_needs_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (x * 2).backward()


def test_unreachable_parameter_gets_zero():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones((2, 2)), requires_grad=True)
    ga, gb = T.grad((a * 3).sum(), [a, b])
    np.testing.assert_array_equal(ga, [3.0, 3.0])
    np.testing.assert_array_equal(gb, np.zeros((2, 2)))


def test_random_two_layer_conv_net_matches_finite_differences(rng):
    x = rng.standard_normal((2, 6, 6, 2))
    w1, b1 = rng.standard_normal((3, 3, 2, 3)) * 0.5, rng.standard_normal(3) * 0.1
    w2, b2 = rng.standard_normal((3, 3, 3, 2)) * 0.5, rng.standard_normal(2) * 0.1

    def net(x, w1, b1, w2, b2):
        h = T.relu(T.conv2d(x, w1, b1, 1, "same"))
        h = T.max_pool2d(h, 2)
        return T.conv2d(h, w2, b2, 1, "valid")

    assert finite_difference_error(net, [x, w1, b1, w2, b2]) < 1e-4


def test_adjoint_identity(rng):
    x = rng.standard_normal((2, 8, 8, 3))
    y = rng.standard_normal((2, 4, 4, 5))
    w = rng.standard_normal((3, 3, 3, 5))
    lhs = (T.conv2d(x, w, None, 2, "same").data * y).sum()
    rhs = (x * T.conv_transpose2d(y, w, None, 2, "same").data).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_gradient_accumulates_over_shared_use(rng):
    w = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    x1, x2 = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    (T.matmul(x1, w).sum() + T.matmul(x2, w).sum()).backward()
    np.testing.assert_allclose(w.grad, (x1.sum(0) + x2.sum(0))[:, None] * np.ones((1, 2)))


# -- softmax with temperature ---------------------------------------------------------

def test_softmax_temperature_values():
    np.testing.assert_allclose(T.softmax_temperature([0.0, 0.0], 1.0), [0.5, 0.5])
    np.testing.assert_allclose(T.softmax_temperature([5.0, 1.0, -3.0], 1e6), [1 / 3] * 3, atol=1e-4)
    e = math.e
    np.testing.assert_allclose(T.softmax_temperature([2.0, 0.0], 2.0), [e / (e + 1), 1 / (e + 1)],
                               rtol=1e-12)


def test_softmax_temperature_rejects_nonpositive():
    with pytest.raises(ValueError):
        T.softmax_temperature([1.0, 2.0], 0.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=6),
       st.floats(0.05, 50), st.floats(0.05, 50))
def test_softmax_sums_to_one_and_entropy_grows_with_temperature(logits, t1, t2):
    lo, hi = sorted((t1, t2))
    p_lo, p_hi = T.softmax_temperature(logits, lo), T.softmax_temperature(logits, hi)
    assert abs(p_lo.sum() - 1) < 1e-9 and abs(p_hi.sum() - 1) < 1e-9
    assert T.entropy(p_hi) >= T.entropy(p_lo) - 1e-9


# -- RMSProp ---------------------------------------------------------------------------

def test_rmsprop_zero_gradient_only_decays():
    p = np.array([1.0, -2.0])
    state = RmsPropState(0.1, 0.9, 1e-8, [np.array([4.0, 1.0])])
    rmsprop_step(state, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p, [1.0, -2.0])
    np.testing.assert_allclose(state.mean_square[0], [3.6, 0.9])


def test_rmsprop_one_step_by_hand():
    p = np.array([1.0])
    state = RmsPropState(0.1, 0.9, 1e-8)
    rmsprop_step(state, [p], [np.array([2.0])])
    assert p[0] == pytest.approx(1 - 0.1 * 2 / math.sqrt(0.1 * 4 + 1e-8), rel=1e-15)


def test_rmsprop_accumulator_grows():
    p = np.array([0.5])
    state = RmsPropState(0.01)
    rmsprop_step(state, [p], [np.array([1.0])])
    first = state.mean_square[0].copy()
    rmsprop_step(state, [p], [np.array([1.0])])
    assert state.mean_square[0][0] > first[0]
    assert (state.mean_square[0] >= 0).all()


def test_rmsprop_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        rmsprop_step(RmsPropState(), [np.zeros(2)], [np.zeros(3)])


# -- checkpoints -------------------------------------------------------------------------

def test_empty_checkpoint_round_trip(tmp_path):
    save_checkpoint({}, tmp_path / "e.olr")
    assert (tmp_path / "e.olr").read_bytes() == b"OLR1\x00\x00\x00\x00"
    assert load_checkpoint(tmp_path / "e.olr") == {}


def test_checkpoint_bit_exact(tmp_path):
    value = np.array([[1.5, -0.0, np.pi], [1e-30, np.inf, 7.0]], dtype=np.float32)
    save_checkpoint({"w": value, "scalar": np.float32(2.5)}, tmp_path / "c.olr")
    out = load_checkpoint(tmp_path / "c.olr")
    assert list(out) == ["w", "scalar"]
    assert out["w"].tobytes() == value.tobytes()
    assert out["scalar"].shape == ()


def test_checkpoint_layout(tmp_path):
    save_checkpoint({"ab": np.array([1.0], np.float32)}, tmp_path / "c.olr")
    raw = (tmp_path / "c.olr").read_bytes()
    assert raw == b"OLR1" + (1).to_bytes(4, "little") + (2).to_bytes(2, "little") + b"ab" \
        + bytes([1]) + (1).to_bytes(4, "little") + np.float32(1.0).tobytes()


def test_checkpoint_corruption_reports_offset(tmp_path):
    save_checkpoint({"w": np.ones((2, 3), np.float32)}, tmp_path / "c.olr")
    raw = (tmp_path / "c.olr").read_bytes()
    (tmp_path / "bad.olr").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="offset 0"):
        load_checkpoint(tmp_path / "bad.olr")
    (tmp_path / "short.olr").write_bytes(raw[:-5])
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(tmp_path / "short.olr")
    assert info.value.offset == 4 + 4 + 2 + 1 + 1 + 8


def test_checkpoint_rejects_empty_name(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint({"": np.zeros(1)}, tmp_path / "c.olr")
