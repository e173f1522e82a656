import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from multiling import autograd as ag
from multiling.autograd import NumericFault, ShapeError, Tensor

from conftest import finite_difference, rel_err


def grad_of(t: Tensor) -> np.ndarray:
    # an untouched leaf has an implicit zero gradient
    return np.zeros_like(t.data) if t.grad is None else t.grad


def test_softmax_temperature_example():
    out = ag.softmax(Tensor([2.0, 0.0]), temperature=2.0).data
    np.testing.assert_allclose(out, [math.e / (math.e + 1), 1 / (math.e + 1)], atol=1e-12)
    np.testing.assert_allclose(out, [0.7311, 0.2689], atol=1e-4)


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(0).normal(size=(4, 7))
    np.testing.assert_allclose(ag.softmax(Tensor(x), axis=-1).data.sum(axis=-1), 1.0, atol=1e-12)


def test_mean_over_axis_example():
    np.testing.assert_array_equal(ag.mean_over_axis(Tensor([[1.0, 3.0], [3.0, 1.0]]), axis=0).data, [2.0, 2.0])


def test_backward_square():
    p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    ag.backward((p * p).sum())
    np.testing.assert_array_equal(p.grad, [2.0, 4.0, 6.0])


def test_backward_independent_parameter_has_zero_grad():
    p = Tensor([1.0, 2.0], requires_grad=True)
    q = Tensor([3.0], requires_grad=True)
    ag.backward((q * q).sum())
    np.testing.assert_array_equal(grad_of(p), [0.0, 0.0])


def test_gradients_accumulate_over_reuse():
    p = Tensor([2.0], requires_grad=True)
    ag.backward((p * p + p * 3.0 + p).sum())
    np.testing.assert_allclose(p.grad, [2 * 2.0 + 3.0 + 1.0])


def test_backward_rejects_non_scalar():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        ag.backward(p * 2.0)


def test_global_grad_norm_examples():
    a = Tensor([0.0, 0.0], requires_grad=True)
    a.grad = np.array([3.0, 4.0])
    assert ag.global_grad_norm([a]) == 5.0
    b = Tensor([0.0, 0.0], requires_grad=True)
    b.grad = np.zeros(2)
    assert ag.global_grad_norm([b]) == 0.0
    assert ag.global_grad_norm([a, b]) == 5.0


def test_global_grad_norm_missing_grad():
    with pytest.raises(ValueError):
        ag.global_grad_norm([Tensor([1.0], requires_grad=True)])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2,\)"):
        ag.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(2)))
    with pytest.raises(ShapeError):
        ag.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))


def test_debug_mode_reports_non_finite():
    x = Tensor([1.0, -1.0], requires_grad=True)
    with ag.debug_mode():
        with pytest.raises(NumericFault, match="mul"):
            ag.mul(x, Tensor([np.inf, 1.0]))
    # outside debug mode the same op just propagates inf
    assert np.isinf(ag.mul(x, Tensor([np.inf, 1.0])).data[0])


def test_no_grad_builds_no_graph():
    p = Tensor([1.0], requires_grad=True)
    with ag.no_grad():
        y = p * p
    assert not y.requires_grad


def test_masked_softmax_gives_zero_weight():
    out = ag.softmax(Tensor([[1.0, 5.0, 2.0]]), mask=np.array([[True, False, True]])).data
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[0, [0, 2]], [1 / (1 + math.e), math.e / (1 + math.e)], atol=1e-12)


def test_log_softmax_stable_for_large_inputs():
    out = ag.log_softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, -1000.0], atol=1e-12)


@given(arrays(np.float64, (3, 5), elements=st.floats(-5, 5)), st.floats(0.25, 4.0))
def test_softmax_temperature_identity(x, t):
    np.testing.assert_array_equal(ag.softmax(Tensor(x), temperature=t).data, ag.softmax(Tensor(x / t)).data)


@given(arrays(np.float64, (2, 6), elements=st.floats(-10, 10)))
def test_log_softmax_matches_log_of_softmax(x):
    np.testing.assert_allclose(
        ag.log_softmax(Tensor(x)).data, np.log(ag.softmax(Tensor(x)).data), atol=1e-12, rtol=0
    )


def test_gelu_matches_tanh_formula():
    x = np.linspace(-3, 3, 13)
    ref = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    np.testing.assert_allclose(ag.gelu(Tensor(x)).data, ref, atol=1e-15)


def test_layer_norm_output_statistics():
    x = np.random.default_rng(1).normal(3.0, 2.0, size=(4, 16))
    y = ag.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)


# finite-difference checks of every differentiable op --------------------------------------------------

def _op_cases(rng):
    ids = rng.integers(0, 5, size=(2, 3))
    mask = np.array([[True, True, False], [True, False, True]])
    return {
        "matmul": ([(2, 3), (3, 4)], lambda a, b: ag.matmul(a, b)),
        "batched_matmul": ([(2, 3, 4), (2, 4, 2)], lambda a, b: ag.matmul(a, b)),
        "add_bias": ([(2, 3), (3,)], lambda a, b: a + b),
        "mul": ([(2, 3), (2, 3)], lambda a, b: a * b),
        "sub": ([(2, 3), (2, 3)], lambda a, b: a - b),
        "mean_axis": ([(3, 4)], lambda a: ag.mean_over_axis(a, axis=1)),
        "sum": ([(3, 4)], lambda a: a.sum(axis=0)),
        "softmax_T": ([(2, 5)], lambda a: ag.softmax(a, axis=-1, temperature=2.0)),
        "softmax_mask": ([(2, 3)], lambda a: ag.softmax(a, axis=-1, mask=mask)),
        "log_softmax": ([(2, 5)], lambda a: ag.log_softmax(a, axis=-1, temperature=1.5)),
        "layer_norm": ([(2, 6), (6,), (6,)], lambda a, g, b: ag.layer_norm(a, g, b)),
        "gelu": ([(2, 5)], ag.gelu),
        "embedding": ([(5, 3)], lambda w: ag.embedding_lookup(w, ids)),
        "concat": ([(2, 3), (2, 2)], lambda a, b: ag.concat([a, b], axis=1)),
        "slice": ([(4, 3)], lambda a: a[1:3]),
        "fancy_index": ([(4, 3)], lambda a: a[np.array([0, 2, 2]), np.array([1, 0, 0])]),
        "reshape_transpose": ([(2, 6)], lambda a: a.reshape(3, 4).transpose(1, 0)),
    }


@pytest.mark.parametrize("name", sorted(_op_cases(np.random.default_rng(0))))
def test_op_gradient_matches_finite_differences(name):
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng([trial, 7])
        shapes, fn = _op_cases(rng)[name]
        inputs = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
        weights = None

        def loss_value():
            out = fn(*inputs)
            return float(np.sum(out.data * weights))

        out = fn(*inputs)
        weights = rng.normal(size=out.shape)
        ag.backward((out * Tensor(weights)).sum())
        for t in inputs:
            for idx in np.ndindex(t.shape):
                num = finite_difference(loss_value, t.data, idx)
                worst = max(worst, rel_err(grad_of(t)[idx], num) if abs(num) > 1e-7 else abs(grad_of(t)[idx]))
    assert worst < 1e-4, f"{name}: worst relative error {worst:.2e}"


def test_backward_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
        x = Tensor(rng.normal(size=(3, 4)))
        ag.backward(ag.log_softmax(ag.gelu(ag.matmul(x, w))).sum())
        return w.grad

    assert np.array_equal(run(), run())
