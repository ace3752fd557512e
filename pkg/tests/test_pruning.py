import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tau_linear_scan
from dprp.errors import UsageError
from dprp.layers import ConvShape, FcShape, LayerSpec, Model, desk_architecture, forward_conv, init_factorized
from dprp.metrics import param_counts
from dprp.pruning import compute_tau, prune_step, truncate
from dprp.tensor import Tensor


def test_tau_examples():
    assert compute_tau([1.0, 0.5, 0.004, 0.003], 0.01) == 2
    assert compute_tau(0.5 ** np.arange(8), 0.1) == 8
    assert compute_tau([1.0, 1e-6, 1e-7], 0.1) == 1
    with pytest.raises(UsageError):
        compute_tau([], 0.1)


def test_tau_boundary_ratio_fails():
    # equality is a failure: the rule needs a strict inequality
    assert compute_tau([1.0, 0.1], 0.1) == 1


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=12),
    st.lists(st.booleans(), min_size=12, max_size=12),
    st.floats(1e-3, 1e3),
    st.floats(1e-3, 0.9),
)
def test_tau_scale_and_sign_invariant(vals, signs, c, eps):
    s = np.array(vals)
    tau = compute_tau(s, eps)
    assert tau == tau_linear_scan(s, eps)
    flipped = np.where(signs[: len(s)], -s, s)
    assert compute_tau(flipped, eps) == tau
    assert compute_tau(c * s, eps) == tau_linear_scan(c * s, eps)


def conv_layer(rng, S=16, C=16):
    return init_factorized(LayerSpec("conv", ConvShape(S, C, 3, 3, 1, 1)), rng, "conv")


def test_truncate_identity_at_full_rank(rng):
    p = conv_layer(rng)
    _, ev = truncate(p, 9)
    assert ev is None and p.r == 9


def test_truncate_counts(rng):
    p = conv_layer(rng)
    _, ev = truncate(p, 7, epoch=3)
    assert ev.params_removed == 2 * (256 + 9 + 1) == 532
    assert (ev.rank_before, ev.rank_after, ev.epoch, len(ev.removed)) == (9, 7, 3, 2)
    assert p.U.shape == (256, 7) and p.V.shape == (9, 7) and p.sigma.shape == (7,)
    assert p.factor_count() == param_counts(LayerSpec("conv", ConvShape(16, 16, 3, 3)), 7)[1]


def test_truncate_range(rng):
    p = conv_layer(rng)
    for bad in (0, 10):
        with pytest.raises(UsageError):
            truncate(p, bad)


def test_truncate_cuts_momentum_in_lockstep(rng):
    p = conv_layer(rng)
    mom = {t: rng.standard_normal(t.shape) for t in p.tensors().values()}
    ref = {t: v.copy() for t, v in mom.items()}
    truncate(p, 5, mom)
    np.testing.assert_array_equal(mom[p.U], ref[p.U][:, :5])
    np.testing.assert_array_equal(mom[p.sigma], ref[p.sigma][:5])
    np.testing.assert_array_equal(mom[p.bias], ref[p.bias])


def test_truncate_equals_zeroing_tail(rng):
    p = conv_layer(rng, 4, 3)
    sh = ConvShape(4, 3, 3, 3, 1, 1)
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    p.sigma.data[6:] = 0.0
    zeroed = forward_conv(p, sh, x).data
    truncate(p, 6)
    np.testing.assert_allclose(forward_conv(p, sh, x).data, zeroed, atol=1e-12)


def test_truncate_small_tail_barely_moves_output(rng):
    p = conv_layer(rng, 4, 3)
    sh = ConvShape(4, 3, 3, 3, 1, 1)
    p.sigma.data[6:] = [5e-7, 2e-7, 1e-7]
    x = Tensor(rng.standard_normal((2, 3, 6, 6)))
    before = forward_conv(p, sh, x).data
    truncate(p, 6)
    assert np.max(np.abs(forward_conv(p, sh, x).data - before)) < 1e-4


def test_prune_step_and_fixed_point(rng):
    model = Model.build(desk_architecture(4), (3, 8, 8), rng)
    layers = model.factorized()
    assert prune_step(layers, 0.01, 1) == []  # Kaiming draws decay slowly
    layers[0].sigma.data[4:] = 1e-5
    layers[3].sigma.data[2:] = 1e-9
    events = prune_step(layers, 0.1, 2)
    assert [(e.layer, e.rank_after) for e in events] == [("conv1", 4), ("fc1", 2)]
    enumerated = sum(p.r * (p.h + p.w + 1) for p in layers) + sum(p.bias.size for p in layers)
    assert model.trainable_count() == enumerated
    assert prune_step(layers, 0.1, 3) == []


def test_event_json(rng):
    p = init_factorized(LayerSpec("fc", FcShape(5, 4), activation="none"), rng, "fc1")
    p.sigma.data[3] = 0.0
    _, ev = truncate(p, 3, epoch=1)
    assert ev.to_json() == {"epoch": 1, "layer": "fc1", "rank_before": 4, "rank_after": 3,
                            "removed": [0.0], "params_removed": 10}
