import numpy as np
import pytest

import sfdehaze.functional as F
from sfdehaze.tensor import (AutodiffError, FrozenParameterError, Tensor, backward, current_graph,
                             default_dtype, no_grad)


def test_default_dtype_is_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32
    assert Tensor(np.zeros(3, dtype=np.float64)).dtype == np.float64
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_linear_map_gradient():
    x = Tensor([1.0, -2.0, 3.0])
    w = Tensor([0.5, 0.5, 0.5], requires_grad=True)
    backward(F.sum(w * x))
    np.testing.assert_array_equal(w.grad, x.data)


def test_quadratic_gradient():
    w = Tensor([3.0], requires_grad=True)
    backward(F.sum(w * w))
    assert w.grad[0] == pytest.approx(6.0)


def test_grad_has_same_dims_as_data():
    x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    backward(F.mean(x * 2.0))
    assert x.grad.shape == x.shape


def test_non_scalar_loss_is_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(AutodiffError):
        backward(x * 2.0)


def test_loss_without_grad_is_rejected():
    with pytest.raises(AutodiffError):
        backward(F.sum(Tensor(np.ones(3))))


def test_graph_is_consumed_by_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = F.sum(x * x)
    assert len(current_graph().nodes) > 0
    backward(loss)
    assert len(current_graph().nodes) == 0


def test_graph_records_in_topological_order():
    x = Tensor(np.ones(3), requires_grad=True)
    y = F.relu(x * 2.0)
    F.sum(y + x)
    seen = set()
    for node in current_graph().nodes:
        for inp in node.inputs:
            if inp.requires_grad and inp is not x:
                assert id(inp) in seen
        seen.add(id(node.output))


def test_gradients_accumulate_over_reuse():
    x = Tensor([2.0], requires_grad=True)
    backward(F.sum(x * x + x * 3.0))
    assert x.grad[0] == pytest.approx(7.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = F.sum(x * x)
    assert not y.requires_grad
    assert len(current_graph().nodes) == 0


def test_detached_branch_gets_no_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(F.sum(x * x.detach()))
    np.testing.assert_allclose(x.grad, [1.0, 2.0])


def test_frozen_tensor_refuses_gradient():
    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = F.sum(w * w)
    w.frozen = True  # frozen after recording, so the tape still reaches it
    with pytest.raises(FrozenParameterError):
        backward(loss)


def test_freeze_clears_requires_grad():
    w = Tensor([1.0], requires_grad=True)
    w.freeze()
    assert w.frozen and not w.requires_grad
    y = w * 2.0
    assert not y.requires_grad


def test_operator_sugar_matches_functional():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    np.testing.assert_allclose((a + b).data, [4, 7])
    np.testing.assert_allclose((a - b).data, [-2, -3])
    np.testing.assert_allclose((a * b).data, [3, 10])
    np.testing.assert_allclose((a / b).data, [1 / 3, 0.4], rtol=1e-6)
    np.testing.assert_allclose((-a).data, [-1, -2])
    np.testing.assert_allclose((a ** 2).data, [1, 4])
    np.testing.assert_allclose((1.0 - a).data, [0, -1])
    np.testing.assert_allclose((2.0 / b).data, [2 / 3, 0.4], rtol=1e-6)
