import numpy as np
import pytest

from srtr import tensor as T
from srtr.errors import ConfigError, DimensionError, NumericError
from srtr.tensor import ParamStore, Tensor


def test_broadcast_gradient_is_reduced_to_operand_shape():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    T.tsum((a + b) * b).backward()
    assert b.grad.shape == (4,)
    np.testing.assert_allclose(b.grad, 3 * (1 + 2 * np.arange(4.0)))
    np.testing.assert_allclose(a.grad, np.tile(np.arange(4.0), (3, 1)))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad == pytest.approx(12.0)


def test_softmax_rows_sum_to_one_and_survive_large_logits():
    x = Tensor(np.array([[1000.0, 999.0, -1000.0], [0.0, 0.0, 0.0]]))
    s = T.softmax(x, axis=-1).data
    assert np.abs(s.sum(-1) - 1).max() < 1e-12
    assert np.isfinite(s).all()


def test_logsumexp_mask_ignores_masked_entries():
    x = Tensor(np.array([[1.0, 50.0, 2.0]]))
    got = T.logsumexp(x, axis=-1, mask=np.array([[True, False, True]])).data
    assert got[0] == pytest.approx(np.log(np.exp(1) + np.exp(2)))


def test_l2_normalize_gives_unit_rows():
    x = Tensor(np.random.default_rng(0).normal(size=(5, 7)))
    n = np.linalg.norm(T.l2_normalize(x).data, axis=-1)
    assert np.abs(n - 1).max() < 1e-12


def test_matmul_rejects_vectors_and_mismatch():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_non_finite_softmax_input_raises():
    with pytest.raises(NumericError):
        T.softmax(Tensor(np.array([np.nan, 1.0])))


def test_precision_modes_switch_dtype():
    with T.precision("fast"):
        assert Tensor([1.0, 2.0]).data.dtype == np.float32
    assert Tensor([1.0, 2.0]).data.dtype == np.float64
    with pytest.raises(ConfigError):
        T.set_mode("turbo")


def test_param_store_init_depends_on_name_not_order():
    a, b = ParamStore(5), ParamStore(5)
    a.xavier("x", 4, 3)
    a.xavier("y", 4, 3)
    b.xavier("y", 4, 3)
    b.xavier("x", 4, 3)
    assert np.array_equal(a["x"].data, b["x"].data)
    assert not np.array_equal(a["x"].data, a["y"].data)


def test_param_store_state_round_trip():
    a = ParamStore(0)
    a.normal("w", (3, 2))
    b = ParamStore(1)
    b.normal("w", (3, 2))
    b.load_state(a.state())
    assert np.array_equal(a["w"].data, b["w"].data)


def test_grad_check_flags_a_wrong_backward():
    x = Tensor(np.linspace(0.5, 2, 4), requires_grad=True)

    def broken():
        out = T.custom_op(x.data ** 2, (x,), lambda g: (g * x.data,))  # should be 2x
        return T.tsum(out)

    assert T.grad_check(broken, [x]) > 0.1
    assert T.grad_check(lambda: T.tsum(T.square(x)), [x]) < 1e-8
