import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import fd_check, naive_conv
from dprp.errors import ConfigError, DimensionError, InputError, NumericError, UsageError
from dprp.nn import avg_pool2d, conv2d, conv_output_size, cross_entropy, global_avg_pool
from dprp.tensor import (
    GradTape,
    Tensor,
    add,
    alloc_audit,
    backward,
    div,
    get_dtype,
    l2_norm,
    matmul,
    mean,
    mul,
    parameter,
    precision,
    relu,
    reshape,
    scale,
    sub,
    tabs,
    take,
    transpose,
    tsum,
)


def test_matmul_examples():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, b).data, b.data)
    assert matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_gradient(rng):
    a, b = parameter(rng.standard_normal((5, 7))), parameter(rng.standard_normal((7, 3)))
    w = rng.standard_normal((5, 3))
    assert fd_check(lambda: tsum(mul(matmul(a, b), w)), [a, b]) < 1e-6


def test_backward_sum_and_square(rng):
    x = parameter(rng.standard_normal((3, 4, 2)))
    with GradTape() as tape:
        loss = tsum(x)
    np.testing.assert_array_equal(backward(loss, tape)[x], np.ones((3, 4, 2)))
    with GradTape() as tape:
        loss = tsum(mul(x, x))
    np.testing.assert_allclose(backward(loss, tape)[x], 2 * x.data)


def test_backward_rejects_non_scalar(rng):
    x = parameter(rng.standard_normal(3))
    with GradTape() as tape:
        y = scale(x, 2.0)
    with pytest.raises(UsageError):
        backward(y, tape)


def test_unreached_parameter_gets_zero_gradient(rng):
    x, y = parameter(rng.standard_normal(3)), parameter(rng.standard_normal((2, 2)))
    with GradTape() as tape:
        loss = tsum(x)
    g = backward(loss, tape, [x, y])
    np.testing.assert_array_equal(g[y], np.zeros((2, 2)))


def test_backward_visits_entries_in_reverse(rng):
    x = parameter(rng.standard_normal(4))
    seen = []
    with GradTape() as tape:
        loss = tsum(relu(scale(x, 3.0)))
    for e in tape.entries:
        fn = e.backward
        e.backward = lambda g, fn=fn, op=e.op: (seen.append(op), fn(g))[1]
    backward(loss, tape)
    assert seen == [e.op for e in reversed(tape.entries)]


def test_untracked_ops_are_not_recorded(rng):
    x = Tensor(rng.standard_normal(3))
    with GradTape() as tape:
        tsum(mul(x, x))
    assert len(tape) == 0


def test_non_finite_is_a_hard_error():
    with pytest.raises(NumericError, match="div"):
        div(Tensor([1.0]), Tensor([0.0]))
    with pytest.raises(NumericError, match="mul"), np.errstate(over="ignore"):
        mul(Tensor([1e300]), Tensor([1e300]))
    with pytest.raises(NumericError):
        Tensor([np.nan])


def test_precision_switch():
    with precision(32):
        assert Tensor([1.0]).data.dtype == np.float32
    assert get_dtype() == np.float64
    with pytest.raises(UsageError):
        with precision(16):
            pass


def test_operators_match_functions(rng):
    a, b = Tensor(rng.standard_normal((2, 3))), Tensor(rng.standard_normal((2, 3)))
    np.testing.assert_array_equal((a + b).data, add(a, b).data)
    np.testing.assert_array_equal((a - b).data, sub(a, b).data)
    np.testing.assert_array_equal((a * b).data, mul(a, b).data)
    np.testing.assert_array_equal((a @ b.T).data, matmul(a, transpose(b)).data)
    np.testing.assert_array_equal((-a).data, -a.data)
    np.testing.assert_array_equal(a[1:].data, a.data[1:])


def test_subgradient_zero_at_kinks():
    x = parameter([0.0, 0.0])
    for fn in (relu, tabs, l2_norm):
        with GradTape() as tape:
            loss = tsum(fn(x))
        np.testing.assert_array_equal(backward(loss, tape)[x], [0.0, 0.0])


# ----- finite-difference sweep over primitives, 20 random instances each -----

UNARY = {
    "relu": relu,
    "abs": tabs,
    "sum": tsum,
    "mean": mean,
    "l2_norm": l2_norm,
    "scale": lambda a: scale(a, -1.7),
    "reshape": lambda a: reshape(a, (-1,)),
    "transpose": transpose,
    "take": lambda a: take(a, (slice(1, None), slice(None, None, 2))),
}
BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def _away_from_kinks(x):
    return np.where(np.abs(x) < 1e-3, 0.5, x)


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitive_gradients(name, rng):
    fn = UNARY[name]
    for _ in range(20):
        shape = tuple(rng.integers(2, 6, size=2))
        a = parameter(_away_from_kinks(rng.standard_normal(shape)))
        w = rng.standard_normal(np.shape(fn(Tensor(a.data)).data))
        assert fd_check(lambda: tsum(mul(fn(a), w)), [a]) < 1e-5


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_primitive_gradients(name, rng):
    fn = BINARY[name]
    for _ in range(20):
        shape = tuple(rng.integers(1, 5, size=2))
        a = parameter(rng.standard_normal(shape))
        b = parameter(_away_from_kinks(rng.standard_normal(shape[1:])))  # broadcast
        w = rng.standard_normal(shape)
        assert fd_check(lambda: tsum(mul(fn(a, b), w)), [a, b]) < 1e-5


# ----- convolution ------------------------------------------------------------


def test_conv_examples():
    out = conv2d(Tensor(np.ones((1, 3, 3))), Tensor([[[[2.0]]]]))
    np.testing.assert_array_equal(out.data, 2 * np.ones((1, 3, 3)))
    assert conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), pad=1).shape == (1, 4, 4)


def test_conv_matches_naive_oracle(rng):
    x, k = rng.standard_normal((2, 5, 5)), rng.standard_normal((3, 2, 3, 3))
    np.testing.assert_allclose(conv2d(Tensor(x), Tensor(k)).data, naive_conv(x, k, 0, 1), atol=1e-12, rtol=0)


@pytest.mark.parametrize("pad", [0, 1, 2])
@pytest.mark.parametrize("stride", [1, 2])
@pytest.mark.parametrize("ksize", [1, 3, 5])
def test_conv_grid_matches_naive_oracle(pad, stride, ksize, rng, kernel_backend):
    size = ksize + 2 * stride + 1 - 2 * pad
    size += (size - ksize + 2 * pad) % stride  # keep the extent integral
    size = max(size, ksize)
    while (size - ksize + 2 * pad) % stride:
        size += 1
    x, k = rng.standard_normal((2, size, size)), rng.standard_normal((3, 2, ksize, ksize))
    got = conv2d(Tensor(x), Tensor(k), pad, stride).data
    np.testing.assert_allclose(got, naive_conv(x, k, pad, stride), atol=1e-12, rtol=0)


def test_conv_gradients(rng, kernel_backend):
    for pad, stride in [(0, 1), (1, 1), (1, 2)]:
        x = parameter(rng.standard_normal((2, 2, 5, 5)))
        k = parameter(rng.standard_normal((3, 2, 3, 3)))
        out_shape = conv2d(Tensor(x.data), Tensor(k.data), pad, stride).shape
        w = rng.standard_normal(out_shape)
        assert fd_check(lambda: tsum(mul(conv2d(x, k, pad, stride), w)), [x, k]) < 1e-5


def test_conv_errors():
    with pytest.raises(ConfigError):
        conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), pad=0, stride=2)
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 1, 3, 3))))


def test_conv_output_size():
    assert conv_output_size(32, 3, 1, 1) == 32
    assert conv_output_size(32, 3, 1, 2, strict=False) == 16
    with pytest.raises(ConfigError):
        conv_output_size(32, 3, 1, 2)


def test_pool_gradients(rng):
    x = parameter(rng.standard_normal((2, 3, 4, 4)))
    w1, w2 = rng.standard_normal((2, 3, 2, 2)), rng.standard_normal((2, 3))
    assert fd_check(lambda: tsum(mul(avg_pool2d(x, 2), w1)), [x]) < 1e-5
    assert fd_check(lambda: tsum(mul(global_avg_pool(x), w2)), [x]) < 1e-5


# ----- cross-entropy ----------------------------------------------------------


def test_cross_entropy_examples():
    z = np.zeros((1, 3))
    z[0, 1] = 1000.0
    assert abs(cross_entropy(Tensor(z), [1]).item()) < 1e-12
    assert cross_entropy(Tensor(np.zeros((4, 10))), [0, 3, 5, 9]).item() == pytest.approx(np.log(10), abs=1e-12)


def test_cross_entropy_gradient(rng):
    z = parameter(rng.standard_normal((4, 5)))
    y = rng.integers(0, 5, 4)
    assert fd_check(lambda: cross_entropy(z, y), [z]) < 1e-6


def test_cross_entropy_label_range():
    with pytest.raises(InputError):
        cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=6), st.floats(-50, 50))
def test_cross_entropy_shift_invariant(row, c):
    with precision(64):
        z = np.array([row])
        a = cross_entropy(Tensor(z), [0]).item()
        b = cross_entropy(Tensor(z + c), [0]).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_alloc_audit_reports_shapes():
    seen = []
    with alloc_audit(lambda op, shape: seen.append((op, shape))):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 4))))
    assert seen == [("matmul", (2, 4))]
