import numpy as np
import pytest

import sfdehaze.functional as F
from sfdehaze.checkpoint import CheckpointError
from sfdehaze.gradcheck import check_gradients
from sfdehaze.models import (TAP_CHANNELS, DrnModule, SourceNet, StudentNet, assemble_student,
                             net_from_checkpoint, source_checkpoint, student_checkpoint)
from sfdehaze.tensor import FrozenParameterError, ShapeError, Tensor, backward, default_dtype, no_grad


def _trained_like(seed=0):
    net = SourceNet(seed)
    rng = np.random.default_rng(seed + 1)
    net.dec2.weight.data = rng.standard_normal(net.dec2.weight.shape).astype(np.float32) * 0.05
    return net


def test_untrained_source_is_identity(rng):
    x = rng.uniform(0, 1, (2, 3, 16, 12)).astype(np.float32)
    with no_grad():
        out, _ = SourceNet()(Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_tap_channels(rng):
    with no_grad():
        _, taps = SourceNet()(Tensor(rng.uniform(0, 1, (1, 3, 16, 16))))
    assert {k: v.shape[1] for k, v in taps.items()} == {"enc1": 16, "enc2": 32, "body": 32}
    assert taps["enc1"].shape[2:] == (8, 8) and taps["body"].shape[2:] == (4, 4)


def test_source_rejects_bad_extent():
    with pytest.raises(ShapeError, match="multiple of 4"):
        SourceNet()(Tensor(np.zeros((1, 3, 10, 12))))
    with pytest.raises(ShapeError):
        SourceNet()(Tensor(np.zeros((1, 4, 8, 8))))


def test_source_param_count():
    assert SourceNet().num_parameters() == 65_635


def test_drn_identity_at_init(rng):
    x = rng.standard_normal((2, 4, 6, 6)).astype(np.float32)
    with no_grad():
        y = DrnModule(4)(Tensor(x))
    np.testing.assert_array_equal(y.data, x)


def test_drn_constant_channel():
    drn = DrnModule(2)
    x = Tensor(np.full((1, 2, 4, 4), 0.6))
    inv, mu, sd = F.instance_norm(x, drn.eps)
    np.testing.assert_allclose(inv.data, 0.0, atol=1e-6)
    np.testing.assert_allclose((x - inv).data, 0.6, atol=1e-6)
    np.testing.assert_allclose(mu.data, 0.6, atol=1e-7)
    np.testing.assert_allclose(sd.data, np.sqrt(drn.eps), rtol=1e-5)


def test_drn_channel_mismatch():
    with pytest.raises(ShapeError):
        DrnModule(4)(Tensor(np.zeros((1, 3, 4, 4))))


def test_drn_grad_check(rng):
    drn = DrnModule(3).astype(np.float64)
    drn.fusion.weight.data = rng.standard_normal(drn.fusion.weight.shape) * 0.3
    with default_dtype(np.float64):
        x = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
        err = check_gradients(lambda *_: F.sum(drn(x) ** 2), [x, drn.fusion.weight, drn.fusion.bias],
                              max_elements=30, rng=rng)
    assert err < 1e-3


def test_student_equals_teacher_bit_exactly(rng):
    ckpt = source_checkpoint(_trained_like())
    teacher = net_from_checkpoint(ckpt)
    student = assemble_student(ckpt)
    x = Tensor(rng.uniform(0, 1, (2, 3, 32, 32)).astype(np.float32))
    with no_grad():
        t_out, t_taps = teacher(x)
        s_out, s_taps = student(x)
    np.testing.assert_array_equal(s_out.data, t_out.data)
    for k in t_taps:
        np.testing.assert_array_equal(s_taps[k].data, t_taps[k].data)


def test_student_trainable_params_are_drn_only():
    student = assemble_student(source_checkpoint(SourceNet()))
    trainable = [p for p in student.parameters() if p.requires_grad]
    assert {id(p) for p in trainable} == {id(p) for p in student.drn_parameters()}
    expected = sum(9 * 3 * c * c + c for c in TAP_CHANNELS.values())
    assert sum(p.size for p in trainable) == expected == 62_288
    assert all(p.frozen for p in student.source.parameters())


def test_empty_insertion_is_teacher(rng):
    ckpt = source_checkpoint(_trained_like())
    student = assemble_student(ckpt, ())
    assert student.drn_parameters() == []
    x = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    with no_grad():
        np.testing.assert_array_equal(student(x)[0].data, net_from_checkpoint(ckpt)(x)[0].data)


def test_unknown_insertion_point():
    with pytest.raises(ValueError):
        StudentNet(SourceNet(), ("dec1",))


def test_no_gradient_reaches_frozen_source(rng):
    student = assemble_student(source_checkpoint(_trained_like()))
    out, _ = student(Tensor(rng.uniform(0, 1, (1, 3, 16, 16))))
    backward(F.mean(out * out))
    assert all(p.grad is None for p in student.source.parameters())
    assert any(p.grad is not None and np.any(p.grad) for p in student.drn_parameters())


def test_unfreezing_source_mid_graph_is_caught(rng):
    student = assemble_student(source_checkpoint(_trained_like()))
    w = student.source.enc1.weight
    w.frozen = False
    w.requires_grad = True
    out, _ = student(Tensor(rng.uniform(0, 1, (1, 3, 8, 8))))
    w.frozen = True
    with pytest.raises(FrozenParameterError):
        backward(F.mean(out))


def test_architecture_mismatch():
    student_ck = student_checkpoint(assemble_student(source_checkpoint(SourceNet())))
    with pytest.raises(CheckpointError):
        assemble_student(student_ck)


def test_student_checkpoint_round_trip(rng):
    student = assemble_student(source_checkpoint(_trained_like()), ("enc2",))
    student.drn.enc2.fusion.bias.data[:] = 0.01
    back = net_from_checkpoint(student_checkpoint(student))
    assert back.insertion_points == ("enc2",)
    x = Tensor(rng.uniform(0, 1, (1, 3, 16, 16)).astype(np.float32))
    with no_grad():
        np.testing.assert_array_equal(back(x)[0].data, student(x)[0].data)
