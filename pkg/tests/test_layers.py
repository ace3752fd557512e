import numpy as np
import pytest

from oracles import fd_check, naive_conv
from dprp.errors import ConfigError, DimensionError
from dprp.layers import (
    ConvShape,
    FactorizedParam,
    FcShape,
    Layer,
    LayerSpec,
    Model,
    architecture_to_json,
    desk_architecture,
    draw_dense,
    forward_conv,
    forward_fc,
    init_factorized,
    inverse_reshape,
    parse_architecture,
    reshape_filter,
)
from dprp.nn import conv2d, cross_entropy
from dprp.tensor import Tensor, alloc_audit, matmul, mul, parameter, precision, tsum


def conv_spec(S, C, L, p=1, s=1):
    return LayerSpec("conv", ConvShape(S=S, C=C, L1=L, L2=L, p=p, s=s))


def fc_spec(d1, d2):
    return LayerSpec("fc", FcShape(D1=d1, D2=d2), activation="none")


def test_reshape_index_map():
    k = np.arange(2 * 3 * 3 * 3, dtype=float).reshape(2, 3, 3, 3)
    m = reshape_filter(k)
    # 1-based (s=2, c=1, l2=2, l1=3) -> (i=4, j=6)
    assert m[4 - 1, 6 - 1] == k[1, 0, 1, 2]
    assert reshape_filter(np.array([[[[7.0]]]])).tolist() == [[7.0]]


def test_reshape_round_trip(rng):
    for _ in range(20):
        S, C, L1, L2 = rng.integers(1, 6, 4)
        k = rng.standard_normal((S, C, L2, L1))
        sh = ConvShape(S=int(S), C=int(C), L1=int(L1), L2=int(L2))
        np.testing.assert_array_equal(inverse_reshape(reshape_filter(k), sh), k)
    sh = ConvShape(1, 1, 1, 1)
    assert inverse_reshape(np.zeros((1, 1)), sh).shape == (1, 1, 1, 1)
    assert not inverse_reshape(np.zeros((sh.h, sh.w)), sh).any()


def test_reshape_errors():
    with pytest.raises(DimensionError):
        reshape_filter(np.zeros((3, 3)))
    with pytest.raises(DimensionError):
        inverse_reshape(np.zeros((4, 4)), ConvShape(2, 3, 3, 3))


def test_init_shapes(rng):
    p = init_factorized(conv_spec(16, 16, 3), rng)
    assert (p.h, p.w, p.theta) == (256, 9, 9)
    assert p.U.shape == (256, 9) and p.sigma.shape == (9,) and p.V.shape == (9, 9)
    q = init_factorized(fc_spec(64, 10), rng)
    assert (q.h, q.w, q.theta) == (10, 64, 10)


def test_init_reconstructs_the_drawn_parameter(rng):
    spec = conv_spec(8, 4, 3)
    dense = draw_dense(spec, np.random.default_rng(5))
    p = init_factorized(spec, np.random.default_rng(5))
    m = reshape_filter(dense)
    assert np.linalg.norm(p.dense_matrix() - m) / np.linalg.norm(m) < 1e-6


def test_dense_spec_rejected(rng):
    with pytest.raises(ConfigError):
        init_factorized(LayerSpec("conv", ConvShape(2, 2, 3, 3), factorized=False), rng)


@pytest.mark.parametrize("bits,tol", [(32, 1e-5), (64, 1e-10)])
def test_full_rank_equivalence(bits, tol, rng):
    with precision(bits):
        for S, C, L, p, s, hw in [(8, 3, 3, 1, 1, 8), (4, 5, 3, 0, 1, 7), (6, 2, 5, 2, 2, 9)]:
            spec = conv_spec(S, C, L, p, s)
            layer = Layer(spec, "c", np.random.default_rng(S))
            x = Tensor(rng.standard_normal((2, C, hw, hw)))
            ref = conv2d(x, Tensor(layer.init_dense), p, s).data
            got = forward_conv(layer.param, spec.shape, x).data
            assert np.max(np.abs(got - ref)) < tol * max(1.0, np.max(np.abs(ref)))
        layer = Layer(fc_spec(12, 5), "f", rng)
        x = Tensor(rng.standard_normal((3, 12)))
        ref = x.data @ layer.init_dense.T
        assert np.max(np.abs(forward_fc(layer.param, x).data - ref)) < tol * max(1.0, np.max(np.abs(ref)))


def _param(u, s, v, bias=None):
    u, v = np.asarray(u, float), np.asarray(v, float)
    return FactorizedParam(
        parameter(u), parameter(np.asarray(s, float)), parameter(v), u.shape[0], v.shape[0],
        min(u.shape[0], v.shape[0]), None if bias is None else parameter(bias),
    )


def test_zero_sigma_gives_bias(rng):
    sh = ConvShape(2, 3, 3, 3, 1, 1)
    b = np.array([0.5, -1.0])
    p = _param(rng.standard_normal((6, 2)), [0.0, 0.0], rng.standard_normal((9, 2)), b)
    y = forward_conv(p, sh, Tensor(rng.standard_normal((3, 4, 4)))).data
    np.testing.assert_allclose(y, np.broadcast_to(b[:, None, None], y.shape))
    q = _param(rng.standard_normal((3, 2)), [0.0, 0.0], rng.standard_normal((4, 2)), np.array([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(forward_fc(q, Tensor(rng.standard_normal((2, 4)))).data, [[1, 2, 3]] * 2)


def test_rank_one_filter_matches_oracle(rng):
    sh = ConvShape(2, 2, 3, 3, 1, 1)
    u, v = np.zeros((4, 1)), np.zeros((9, 1))
    u[0, 0] = v[0, 0] = 1.0
    p = _param(u, [1.0], v)
    k = inverse_reshape(p.dense_matrix(), sh)
    assert np.count_nonzero(k) == 1
    x = rng.standard_normal((2, 5, 5))
    np.testing.assert_allclose(forward_conv(p, sh, Tensor(x)).data, naive_conv(x, k, 1, 1), atol=1e-12)


def test_fc_diagonal_example():
    p = _param(np.eye(2), [2.0, 3.0], np.eye(2))
    np.testing.assert_allclose(forward_fc(p, Tensor([[1.0, 1.0]])).data, [[2.0, 3.0]])


def test_fc_width_mismatch(rng):
    p = init_factorized(fc_spec(4, 3), rng)
    with pytest.raises(DimensionError):
        forward_fc(p, Tensor(np.ones((2, 5))))


def test_forward_fc_never_builds_h_by_w(rng):
    p = init_factorized(fc_spec(64, 10), rng)
    shapes = []
    with alloc_audit(lambda op, shape: shapes.append(shape)):
        forward_fc(p, Tensor(rng.standard_normal((1, 64))))
    assert (10, 64) not in shapes and (64, 10) not in shapes


def test_parameter_count_law(rng):
    for _ in range(10):
        S, C = (int(v) for v in rng.integers(1, 10, 2))
        L = int(rng.choice([1, 3, 5]))
        layer = Layer(conv_spec(S, C, L), "c", rng)
        p = layer.param
        stored = sum(t.data.size for t in p.factor_tensors().values())
        assert stored == p.r * (S * C + L * L + 1)
        assert layer.trainable_count() == stored + S
    layer = Layer(fc_spec(7, 3), "f", rng)
    assert layer.param.factor_count() == 3 * (7 + 3 + 1)


def test_gradients_nonzero_and_match_fd(rng):
    spec = conv_spec(3, 2, 3)
    layer = Layer(spec, "c", rng)
    x = Tensor(rng.standard_normal((2, 2, 5, 5)))
    w = rng.standard_normal((2, 3, 5, 5))
    params = list(layer.tensors().values())
    err = fd_check(lambda: tsum(mul(layer(x), w)), params)
    assert err < 1e-5
    for t in (layer.param.U, layer.param.sigma, layer.param.V):
        assert np.max(np.abs(t.grad)) > 0


def test_model_forward_and_names(rng):
    model = Model.build(desk_architecture(4), (3, 16, 16), rng)
    assert [l.name for l in model.weight_layers()] == ["conv1", "conv2", "conv3", "fc1"]
    out = model(Tensor(rng.standard_normal((2, 3, 16, 16))))
    assert out.shape == (2, 4)
    assert [p.theta for p in model.factorized()] == [9, 9, 9, 4]
    assert model.trainable_count() == 6454


def test_model_gradient_fd(rng):
    model = Model.build(desk_architecture(3), (3, 8, 8), rng)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    y = np.array([0, 2])
    err = fd_check(lambda: cross_entropy(model(x), y), list(model.tensors().values()), coords=6, rng=rng)
    assert err < 1e-4


def test_architecture_json_round_trip():
    items = desk_architecture(10)
    assert parse_architecture(architecture_to_json(items)) == items
    items = parse_architecture([{"kind": "dense-conv", "S": 4, "C": 3, "L": 3, "p": 1}, {"kind": "gap"},
                                {"kind": "fc", "D1": 4, "D2": 2}])
    assert not items[0].factorized and items[2].factorized


@pytest.mark.parametrize("entry", [
    {"kind": "conv", "S": 4, "C": 3},
    {"kind": "conv", "S": 4, "C": 3, "L": 3, "colour": 1},
    {"kind": "pool"},
    {"kind": "dense-fc", "D1": 2, "D2": 2, "factorized": True},
])
def test_architecture_rejects(entry):
    with pytest.raises(ConfigError):
        parse_architecture([entry])
