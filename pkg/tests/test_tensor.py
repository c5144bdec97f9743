"""Autodiff kernel tests: trivial identities, loop oracles, finite differences."""

import numpy as np
import pytest

import seqkd.tensor as T
from seqkd.errors import ContractError, DimensionError, LengthError

from oracles import (
    avgpool1d_oracle,
    conv1d_oracle,
    finite_difference,
    log_softmax_oracle,
    max_rel_err,
    maxpool1d_oracle,
    maxpool2d_oracle,
)

FD_TOL = 1e-4


def params_like(rng, *shapes):
    return [T.parameter(rng.normal(size=s)) for s in shapes]


def check_grads(build, params, tol=FD_TOL):
    """Backprop ``build()`` and compare every parameter gradient to central FD."""
    for p in params:
        p.zero_grad()
    with T.Tape() as tape:
        loss = build()
        tape.backward(loss)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    def value():
        return build().item()

    numeric = finite_difference(value, [p.data for p in params])
    for a, n in zip(analytic, numeric):
        assert max_rel_err(a, n) < tol


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = T.constant(np.eye(2))
    b = T.constant(np.array([[3.0, 4.0], [5.0, 6.0]]))
    assert np.array_equal(T.matmul(a, b).data, b.data)


def test_matmul_hand_case():
    out = T.matmul(T.constant([[1.0, 2.0]]), T.constant([[3.0], [4.0]]))
    assert out.data.tolist() == [[11.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError) as ei:
        T.matmul(T.constant(np.zeros((2, 3))), T.constant(np.zeros((4, 2))))
    assert "(2, 3)" in str(ei.value) and "(4, 2)" in str(ei.value)


def test_matmul_grad_of_sum_is_ones_times_bt():
    rng = np.random.default_rng(7)
    a = T.parameter(rng.normal(size=(3, 4)))
    b = T.parameter(rng.normal(size=(4, 2)))
    with T.Tape() as tape:
        loss = T.matmul(a, b).sum()
        tape.backward(loss)
    expected = np.ones((3, 2)) @ b.data.T
    np.testing.assert_allclose(a.grad, expected, atol=1e-12)
    check_grads(lambda: T.matmul(a, b).sum(), [a, b])


# ---------------------------------------------------------------------------
# conv1d


def test_conv1d_width1_identity(kernel_backend):
    x = T.constant(np.arange(5.0).reshape(5, 1))
    w = T.constant(np.ones((1, 1, 1)))
    b = T.constant(np.zeros(1))
    np.testing.assert_array_equal(T.conv1d(x, w, b).data, x.data)


def test_conv1d_zero_input(kernel_backend):
    rng = np.random.default_rng(0)
    x = T.constant(np.zeros((2, 8, 3)))
    w = T.constant(rng.normal(size=(3, 3, 4)))
    b = T.constant(np.zeros(4))
    assert not T.conv1d(x, w, b).data.any()


def test_conv1d_matches_loop_oracle(kernel_backend):
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 8, 3))
    w = rng.normal(size=(3, 3, 4))
    b = rng.normal(size=4)
    got = T.conv1d(T.constant(x), T.constant(w), T.constant(b)).data
    np.testing.assert_allclose(got, conv1d_oracle(x, w, b), atol=1e-12)


def test_conv1d_channel_mismatch(kernel_backend):
    with pytest.raises(DimensionError):
        T.conv1d(T.constant(np.zeros((2, 8, 3))), T.constant(np.zeros((3, 5, 4))), T.constant(np.zeros(4)))


def test_conv1d_even_kernel_rejected(kernel_backend):
    with pytest.raises(DimensionError):
        T.conv1d(T.constant(np.zeros((2, 8, 3))), T.constant(np.zeros((4, 3, 4))), T.constant(np.zeros(4)))


def test_conv1d_grads(kernel_backend):
    rng = np.random.default_rng(11)
    x, w, b = params_like(rng, (2, 6, 3), (3, 3, 2), (2,))
    check_grads(lambda: T.conv1d(x, w, b).sum(), [x, w, b])
    check_grads(lambda: T.square(T.conv1d(x, w, b)).sum(), [x, w, b])


# ---------------------------------------------------------------------------
# pooling / upsampling


def test_maxpool1d_hand_case(kernel_backend):
    x = T.constant(np.array([[1.0], [3.0], [2.0], [0.0]]))
    np.testing.assert_array_equal(T.maxpool1d(x, 2).data, [[3.0], [2.0]])


def test_maxpool1d_constant(kernel_backend):
    x = T.constant(np.full((8, 2), 1.5))
    out = T.maxpool1d(x, 2)
    assert out.data.shape == (4, 2)
    assert (out.data == 1.5).all()


def test_maxpool1d_matches_loop_oracle(kernel_backend):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1, 16, 4))
    got = T.maxpool1d(T.constant(x), 2).data
    np.testing.assert_array_equal(got, maxpool1d_oracle(x, 2))


def test_maxpool1d_indivisible_length(kernel_backend):
    with pytest.raises(LengthError):
        T.maxpool1d(T.constant(np.zeros((5, 2))), 2)


def test_maxpool1d_tie_routes_to_lowest_index(kernel_backend):
    x = T.parameter(np.array([[2.0], [2.0], [1.0], [5.0]]))
    with T.Tape() as tape:
        tape.backward(T.maxpool1d(x, 2).sum())
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0], [0.0], [1.0]])


def test_avgpool1d_hand_case(kernel_backend):
    x = T.constant(np.array([[1.0], [2.0], [3.0], [4.0]]))
    np.testing.assert_array_equal(T.avgpool1d(x, 4).data, [[2.5]])


def test_avgpool1d_constant(kernel_backend):
    x = T.constant(np.full((8, 3), -0.25))
    assert (T.avgpool1d(x, 4).data == -0.25).all()


def test_avgpool1d_matches_loop_oracle(kernel_backend):
    rng = np.random.default_rng(6)
    x = rng.normal(size=(1, 12, 2))
    np.testing.assert_array_equal(T.avgpool1d(T.constant(x), 4).data, avgpool1d_oracle(x, 4))


def test_avgpool1d_indivisible_length(kernel_backend):
    with pytest.raises(LengthError):
        T.avgpool1d(T.constant(np.zeros((6, 2))), 4)


def test_maxpool2d_zeros(kernel_backend):
    assert T.maxpool2d(T.constant(np.zeros((4, 4))), 4).data.tolist() == [[0.0]]


def test_maxpool2d_single_spike(kernel_backend):
    for pos in [(0, 0), (1, 3), (3, 2)]:
        x = np.zeros((4, 4))
        x[pos] = 7.0
        assert T.maxpool2d(T.constant(x), 4).data.tolist() == [[7.0]]


def test_maxpool2d_matches_loop_oracle(kernel_backend):
    rng = np.random.default_rng(9)
    x = rng.normal(size=(1, 8, 8))
    np.testing.assert_array_equal(T.maxpool2d(T.constant(x), 4).data, maxpool2d_oracle(x, 4))


def test_maxpool2d_indivisible(kernel_backend):
    with pytest.raises(LengthError):
        T.maxpool2d(T.constant(np.zeros((6, 8))), 4)


def test_upsample1d_hand_case(kernel_backend):
    x = T.constant(np.array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_array_equal(
        T.upsample1d(x, 2).data, [[1.0, 2.0], [1.0, 2.0], [3.0, 4.0], [3.0, 4.0]]
    )


def test_upsample1d_factor1_identity(kernel_backend):
    x = np.random.default_rng(1).normal(size=(3, 2))
    np.testing.assert_array_equal(T.upsample1d(T.constant(x), 1).data, x)


def test_upsample1d_grad_sums_over_copies(kernel_backend):
    x = T.parameter(np.random.default_rng(2).normal(size=(6, 3)))
    with T.Tape() as tape:
        tape.backward(T.upsample1d(x, 2).sum())
    np.testing.assert_array_equal(x.grad, 2.0 * np.ones((6, 3)))


def test_avgpool_then_upsample_reproduces_constant(kernel_backend):
    x = T.constant(np.full((16, 3), 0.75))
    out = T.upsample1d(T.avgpool1d(x, 4), 4)
    np.testing.assert_array_equal(out.data, x.data)


def test_pool_grads(kernel_backend):
    rng = np.random.default_rng(13)
    x = T.parameter(rng.normal(size=(2, 8, 3)))
    check_grads(lambda: T.square(T.maxpool1d(x, 2)).sum(), [x])
    check_grads(lambda: T.square(T.avgpool1d(x, 4)).sum(), [x])
    check_grads(lambda: T.square(T.upsample1d(x, 2)).sum(), [x])
    y = T.parameter(rng.normal(size=(2, 8, 8)))
    check_grads(lambda: T.square(T.maxpool2d(y, 4)).sum(), [y])


# ---------------------------------------------------------------------------
# nonlinearities


def test_softmax_symmetry():
    out = T.softmax(T.constant(np.array([0.0, 0.0])))
    np.testing.assert_allclose(out.data, [0.5, 0.5])


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(17)
    x = T.constant(rng.normal(size=(4, 9)) * 10)
    s = T.softmax(x, axis=-1).data.sum(axis=-1)
    np.testing.assert_allclose(s, np.ones(4), atol=1e-12)


def test_softmax_invalid_axis():
    with pytest.raises(DimensionError):
        T.softmax(T.constant(np.zeros((2, 2))), axis=2)


def test_log_softmax_matches_naive_formula():
    rng = np.random.default_rng(19)
    v = rng.normal(size=7)
    got = T.log_softmax(T.constant(v)).data
    np.testing.assert_allclose(got, log_softmax_oracle(v), atol=1e-12)
    np.testing.assert_allclose(np.exp(got).sum(), 1.0, atol=1e-12)


def test_log_softmax_stable_at_large_magnitude():
    v = np.array([1e4, -1e4, 0.0])
    out = T.log_softmax(T.constant(v)).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out[0], 0.0, atol=1e-12)


def test_layer_norm_constant_row_is_zero():
    x = T.constant(np.full((3, 5), 2.0))
    gain = T.constant(np.ones(5))
    bias = T.constant(np.zeros(5))
    np.testing.assert_array_equal(T.layer_norm(x, gain, bias).data, np.zeros((3, 5)))


def test_dropout_identity_at_zero():
    x = T.parameter(np.random.default_rng(0).normal(size=(4, 4)))
    assert T.dropout(x, 0.0) is x


def test_dropout_scales_kept_values():
    rng = np.random.default_rng(23)
    x = T.constant(np.ones((1000,)))
    out = T.dropout(x, 0.5, rng=rng).data
    kept = out[out != 0.0]
    assert np.allclose(kept, 2.0)
    assert 0.35 < (out != 0).mean() < 0.65


def test_nonlinearity_grads():
    rng = np.random.default_rng(29)
    x = T.parameter(rng.normal(size=(3, 6)))
    gain = T.parameter(rng.normal(size=6))
    bias = T.parameter(rng.normal(size=6))
    check_grads(lambda: T.square(T.softmax(x, axis=-1)).sum(), [x])
    check_grads(lambda: T.square(T.log_softmax(x, axis=-1)).sum(), [x])
    check_grads(lambda: T.square(T.gelu(x)).sum(), [x])
    check_grads(lambda: T.square(T.layer_norm(x, gain, bias)).sum(), [x, gain, bias])


# ---------------------------------------------------------------------------
# tape / backward contracts


def test_backward_requires_scalar():
    x = T.parameter(np.ones((2, 2)))
    with T.Tape() as tape:
        y = x + x
        with pytest.raises(ContractError):
            tape.backward(y)


def test_backward_empty_tape_is_noop():
    tape = T.Tape()
    tape.backward(T.Tensor(np.array(1.0)))
    assert len(tape) == 0


def test_backward_sum_gives_ones():
    x = T.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    with T.Tape() as tape:
        tape.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_backward_zero_times_x_gives_zeros():
    x = T.parameter(np.random.default_rng(0).normal(size=(3, 4)))
    with T.Tape() as tape:
        tape.backward(T.scale(x, 0.0).sum())
    np.testing.assert_array_equal(x.grad, np.zeros((3, 4)))


def test_no_grad_detaches():
    x = T.parameter(np.ones(3))
    with T.Tape() as tape:
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad
        z = x.sum()
        tape.backward(z)
    assert len(tape) == 1


def test_ops_outside_tape_are_detached():
    x = T.parameter(np.ones(3))
    y = x * 3.0
    assert not y.requires_grad and y.grad is None


def test_masked_fill_values_and_grad():
    rng = np.random.default_rng(31)
    x = T.parameter(rng.normal(size=(2, 4)))
    keep = np.array([[True, False, True, True], [False, False, True, True]])
    out = T.masked_fill(x, keep, -1e9)
    assert (out.data[~keep] == -1e9).all()
    np.testing.assert_array_equal(out.data[keep], x.data[keep])
    with T.Tape() as tape:
        tape.backward(T.masked_fill(x, keep, -1e9).sum())
    np.testing.assert_array_equal(x.grad, keep.astype(float))


def test_embedding_lookup_grad_scatters():
    table = T.parameter(np.random.default_rng(3).normal(size=(5, 3)))
    ids = np.array([[0, 2, 2], [4, 0, 1]])
    with T.Tape() as tape:
        out = T.embedding_lookup(table, ids)
        assert out.data.shape == (2, 3, 3)
        tape.backward(out.sum())
    expected = np.zeros((5, 3))
    for row in ids.reshape(-1):
        expected[row] += 1.0
    np.testing.assert_array_equal(table.grad, expected)


def test_composite_grads_across_seeds(kernel_backend):
    """Chained primitives (the shapes the model uses) vs finite differences."""
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        x = T.parameter(rng.normal(size=(2, 8, 3)))
        w = T.parameter(rng.normal(size=(3, 3, 4)) * 0.5)
        b = T.parameter(rng.normal(size=4) * 0.1)
        proj = T.parameter(rng.normal(size=(4, 5)) * 0.5)

        def build():
            h = T.gelu(T.conv1d(x, w, b))
            h = T.maxpool1d(h, 2)
            h = T.matmul(h, proj)
            h = T.softmax(h, axis=-1)
            h = T.upsample1d(h, 2)
            return T.square(h).sum()

        check_grads(build, [x, w, b, proj])
