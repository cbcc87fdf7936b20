import numpy as np
import pytest

from seqids import layers as L
from seqids import tensor as T
from seqids.errors import ContractError, ShapeError
from seqids.tensor import Tensor, grad_check_all


def sdpa_brute_force(q, k, v):
    """Double-loop reference: softmax(q k^T / sqrt(d)) v, computed row by row."""
    tq, d = q.shape
    tk, dv = v.shape[0], v.shape[1]
    out = np.zeros((tq, dv))
    for i in range(tq):
        scores = np.zeros(tk)
        for j in range(tk):
            scores[j] = np.dot(q[i], k[j]) / np.sqrt(d)
        e = np.exp(scores - scores.max())
        w = e / e.sum()
        for j in range(tk):
            out[i] += w[j] * v[j]
    return out


# ---------------------------------------------------------------------------
# Conv1D

def test_conv1d_one_by_one_identity():
    p = L.Conv1DParams(kernels=Tensor(np.ones((1, 1, 1)), requires_grad=True),
                       bias=Tensor(np.zeros(1), requires_grad=True))
    x = Tensor(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(L.conv1d_forward(x, p).data, x.data)


def test_conv1d_hand_cross_correlation_valid():
    # out[t] = sum_i x[t+i] * k[i]: [1*1+2*0+3*(-1), 2*1+3*0+4*(-1)] = [-2, -2]
    p = L.Conv1DParams(kernels=Tensor(np.array([[[1.0, 0.0, -1.0]]])),
                       bias=Tensor(np.zeros(1)), padding="valid")
    x = Tensor(np.array([[1.0], [2.0], [3.0], [4.0]]))
    np.testing.assert_allclose(L.conv1d_forward(x, p).data, [[-2.0], [-2.0]])


def test_conv1d_same_padding_preserves_length():
    rng = np.random.default_rng(0)
    p = L.init_conv1d(rng, in_channels=2, out_channels=5, kernel_size=3)
    x = Tensor(rng.normal(size=(7, 2)))
    assert L.conv1d_forward(x, p).shape == (7, 5)


def test_conv1d_channel_mismatch():
    rng = np.random.default_rng(1)
    p = L.init_conv1d(rng, in_channels=3, out_channels=4)
    with pytest.raises(ShapeError):
        L.conv1d_forward(Tensor(np.zeros((5, 2))), p)


def test_conv1d_gradients():
    rng = np.random.default_rng(2)
    for padding in ("same", "valid"):
        p = L.init_conv1d(rng, in_channels=2, out_channels=3, kernel_size=3, padding=padding)
        x = Tensor(rng.normal(size=(2, 6, 2)), requires_grad=True)
        err = grad_check_all(
            lambda: T.tsum(T.mul(L.conv1d_forward(x, p), L.conv1d_forward(x, p))),
            [x, p.kernels, p.bias], h=1e-6)
        assert err < 1e-5


def test_conv1d_strided():
    rng = np.random.default_rng(3)
    p = L.init_conv1d(rng, 1, 1, kernel_size=2, stride=2, padding="valid")
    x = Tensor(rng.normal(size=(6, 1)), requires_grad=True)
    out = L.conv1d_forward(x, p)
    assert out.shape == (3, 1)
    err = grad_check_all(lambda: T.tsum(L.conv1d_forward(x, p)), [x, p.kernels], h=1e-6)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# BatchNorm

def test_batchnorm_train_normalizes_per_channel():
    rng = np.random.default_rng(4)
    p = L.init_batchnorm(rng, channels=3)
    x = Tensor(rng.normal(loc=5.0, scale=2.0, size=(4, 6, 3)))
    out = L.batchnorm_forward(x, p, mode="train").data
    np.testing.assert_allclose(out.mean(axis=(0, 1)), np.zeros(3), atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(0, 1)), np.ones(3), atol=2e-3)


def test_batchnorm_constant_channel_is_zeroed_without_nan():
    rng = np.random.default_rng(5)
    p = L.init_batchnorm(rng, channels=2)
    x = Tensor(np.full((3, 4, 2), 7.0))
    out = L.batchnorm_forward(x, p, mode="train").data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, np.zeros_like(out))


def test_batchnorm_infer_matches_hand_formula():
    p = L.init_batchnorm(np.random.default_rng(6), channels=2)
    p.gamma.data = np.array([2.0, 0.5])
    p.beta.data = np.array([1.0, -1.0])
    p.running_mean.data = np.array([3.0, -2.0])
    p.running_var.data = np.array([4.0, 9.0])
    x = np.array([[[5.0, 1.0], [3.0, -2.0]]])
    out = L.batchnorm_forward(Tensor(x), p, mode="infer").data
    expected = (x - p.running_mean.data) / np.sqrt(p.running_var.data + p.epsilon) \
        * p.gamma.data + p.beta.data
    np.testing.assert_allclose(out, expected)


def test_batchnorm_single_element_train_is_contract_error():
    p = L.init_batchnorm(np.random.default_rng(7), channels=2)
    with pytest.raises(ContractError):
        L.batchnorm_forward(Tensor(np.zeros((1, 1, 2))), p, mode="train")


def test_batchnorm_identical_constant_samples_give_zero_before_scale_shift():
    # statistics pool over batch and time, so "identical" means constant
    # along both; gamma=1, beta=0 at init exposes the raw normalization
    rng = np.random.default_rng(8)
    p = L.init_batchnorm(rng, channels=3)
    row = np.tile(rng.normal(size=(1, 1, 3)), (4, 5, 1))
    out = L.batchnorm_forward(Tensor(row), p, mode="train").data
    np.testing.assert_allclose(out, np.zeros_like(out), atol=1e-6)


def test_batchnorm_gradients_both_modes():
    rng = np.random.default_rng(9)
    p = L.init_batchnorm(rng, channels=2)
    p.running_mean.data = rng.normal(size=2)
    p.running_var.data = np.abs(rng.normal(size=2)) + 0.5
    x = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)
    for mode in ("train", "infer"):
        err = grad_check_all(
            lambda m=mode: T.tsum(T.mul(L.batchnorm_forward(x, p, m),
                                        L.batchnorm_forward(x, p, m))),
            [x, p.gamma, p.beta], h=1e-6)
        assert err < 1e-5, mode


def test_batchnorm_updates_running_stats_with_momentum():
    p = L.init_batchnorm(np.random.default_rng(10), channels=1, momentum=0.9)
    x = Tensor(np.arange(8, dtype=float).reshape(2, 4, 1))
    L.batchnorm_forward(x, p, mode="train")
    np.testing.assert_allclose(p.running_mean.data, [0.9 * 0.0 + 0.1 * 3.5])
    np.testing.assert_allclose(p.running_var.data, [0.9 * 1.0 + 0.1 * x.data.var()])


# ---------------------------------------------------------------------------
# GRU / BiGRU

def test_gru_zero_weights_halve_hidden_state():
    # z = sigmoid(0) = 0.5 and the candidate is tanh(0) = 0, so h' = 0.5 h
    p = L.GRUParams(
        update=L.GateParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))), Tensor(np.zeros(3))),
        reset=L.GateParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))), Tensor(np.zeros(3))),
        candidate=L.GateParams(Tensor(np.zeros((3, 2))), Tensor(np.zeros((3, 3))), Tensor(np.zeros(3))),
        hidden_size=3)
    h = np.array([1.0, -2.0, 4.0])
    out = L.gru_cell_step(Tensor([0.3, 0.7]), Tensor(h), p)
    np.testing.assert_allclose(out.data, 0.5 * h)


def test_gru_gates_stay_in_unit_interval():
    rng = np.random.default_rng(11)
    p = L.init_gru(rng, input_size=4, hidden_size=5)
    x = Tensor(rng.normal(size=(3, 4)) * 3)
    h = Tensor(rng.normal(size=(3, 5)) * 3)
    wt, ut = L._gate_transposes(p)
    z = T.sigmoid(T.matmul(x, wt[0]) + T.matmul(h, ut[0]) + p.update.b).data
    r = T.sigmoid(T.matmul(x, wt[1]) + T.matmul(h, ut[1]) + p.reset.b).data
    assert np.all((z > 0) & (z < 1)) and np.all((r > 0) & (r < 1))


def test_gru_step_gradients():
    rng = np.random.default_rng(12)
    p = L.init_gru(rng, input_size=3, hidden_size=4)
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    h = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    params = [x, h] + [t for g in (p.update, p.reset, p.candidate) for t in (g.W, g.U, g.b)]
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.gru_cell_step(x, h, p), L.gru_cell_step(x, h, p))),
        params, h=1e-6)
    assert err < 1e-5


def test_gru_dimension_mismatch():
    p = L.init_gru(np.random.default_rng(13), input_size=3, hidden_size=4)
    with pytest.raises(ShapeError):
        L.gru_cell_step(Tensor(np.zeros(2)), Tensor(np.zeros(4)), p)
    with pytest.raises(ShapeError):
        L.gru_cell_step(Tensor(np.zeros(3)), Tensor(np.zeros(5)), p)


def test_bigru_single_step_reduces_to_two_cells():
    rng = np.random.default_rng(14)
    fwd = L.init_gru(rng, 3, 4)
    bwd = L.init_gru(rng, 3, 4)
    x1 = rng.normal(size=3)
    out = L.bigru_forward(Tensor(x1.reshape(1, 3)), fwd, bwd)
    zero = Tensor(np.zeros(4))
    expect_f = L.gru_cell_step(Tensor(x1), zero, fwd).data
    expect_b = L.gru_cell_step(Tensor(x1), zero, bwd).data
    np.testing.assert_allclose(out.data, np.concatenate([expect_f, expect_b]).reshape(1, 8))


def test_bigru_backward_half_equals_forward_on_reversed_input():
    rng = np.random.default_rng(15)
    a = L.init_gru(rng, 2, 3)
    b = L.init_gru(rng, 2, 3)
    x = rng.normal(size=(5, 2))
    out = L.bigru_forward(Tensor(x), a, b).data
    out_rev = L.bigru_forward(Tensor(x[::-1].copy()), b, a).data
    # the backward half over x equals the time-reversed forward half over reversed x
    np.testing.assert_allclose(out[:, 3:], out_rev[::-1, :3], atol=1e-12)


def test_bigru_hidden_size_mismatch():
    rng = np.random.default_rng(16)
    with pytest.raises(ContractError):
        L.bigru_forward(Tensor(np.zeros((4, 2))), L.init_gru(rng, 2, 3), L.init_gru(rng, 2, 5))


def test_bigru_reference_output_shape():
    rng = np.random.default_rng(17)
    fwd = L.init_gru(rng, 1, 64)
    bwd = L.init_gru(rng, 1, 64)
    out = L.bigru_forward(Tensor(rng.normal(size=(60, 1))), fwd, bwd)
    assert out.shape == (60, 128)


def test_bigru_gradients():
    rng = np.random.default_rng(18)
    fwd = L.init_gru(rng, 2, 3)
    bwd = L.init_gru(rng, 2, 3)
    x = Tensor(rng.normal(size=(2, 4, 2)), requires_grad=True)
    checked = [x, fwd.update.W, fwd.candidate.U, bwd.reset.W, bwd.candidate.b]
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.bigru_forward(x, fwd, bwd), L.bigru_forward(x, fwd, bwd))),
        checked, h=1e-6)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# LayerNorm

def test_layernorm_rows_normalized():
    rng = np.random.default_rng(19)
    p = L.init_layernorm(rng, features=6)
    x = Tensor(rng.normal(loc=3.0, scale=4.0, size=(5, 6)))
    out = L.layernorm_forward(x, p).data
    np.testing.assert_allclose(out.mean(axis=-1), np.zeros(5), atol=1e-6)
    np.testing.assert_allclose(out.var(axis=-1), np.ones(5), atol=1e-3)


def test_layernorm_constant_row_is_zero():
    p = L.init_layernorm(np.random.default_rng(20), features=4)
    out = L.layernorm_forward(Tensor(np.full((2, 4), 9.0)), p).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, np.zeros_like(out))


def test_layernorm_affine_input_invariance():
    rng = np.random.default_rng(21)
    p = L.init_layernorm(rng, features=8)
    x = rng.normal(size=(4, 8))
    base = L.layernorm_forward(Tensor(x), p).data
    scaled = L.layernorm_forward(Tensor(3.0 * x + 11.0), p).data
    # equality is exact only up to the epsilon variance floor
    np.testing.assert_allclose(scaled, base, atol=1e-4)


def test_layernorm_gradients():
    rng = np.random.default_rng(22)
    p = L.init_layernorm(rng, features=5)
    x = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.layernorm_forward(x, p), L.layernorm_forward(x, p))),
        [x, p.gamma, p.beta], h=1e-6)
    assert err < 1e-5


# ---------------------------------------------------------------------------
# Attention

def test_sdpa_single_key_returns_value_row():
    rng = np.random.default_rng(23)
    q = Tensor(rng.normal(size=(4, 3)))
    k = Tensor(rng.normal(size=(1, 3)))
    v = Tensor(rng.normal(size=(1, 5)))
    out = L.scaled_dot_product_attention(q, k, v).data
    np.testing.assert_allclose(out, np.repeat(v.data, 4, axis=0), atol=1e-12)


def test_sdpa_dominant_self_match():
    # Q = K = 10*I: each query overwhelmingly attends to its own value row
    q = Tensor(10.0 * np.eye(2))
    v = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    out, w = L.scaled_dot_product_attention(q, q, v, return_weights=True)
    scores = (10 * np.eye(2)) @ (10 * np.eye(2)).T / np.sqrt(2)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    expect_w = e / e.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(w.data, expect_w, atol=1e-12)
    np.testing.assert_allclose(out.data, expect_w @ v.data, atol=1e-12)
    assert w.data[0, 0] > 0.999


def test_sdpa_matches_brute_force():
    rng = np.random.default_rng(24)
    q, k, v = rng.normal(size=(3, 8, 8))
    out = L.scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, sdpa_brute_force(q, k, v), atol=1e-6)


def test_sdpa_scale_is_sqrt_of_query_depth():
    rng = np.random.default_rng(25)
    q = rng.normal(size=(5, 64))
    k = rng.normal(size=(5, 64))
    v = rng.normal(size=(5, 4))
    _, w = L.scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v), return_weights=True)
    scores = q @ k.T / 8.0  # sqrt(64) = 8
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    np.testing.assert_allclose(w.data, e / e.sum(axis=1, keepdims=True), atol=1e-12)


def test_sdpa_rows_sum_to_one():
    rng = np.random.default_rng(26)
    q, k, v = (Tensor(rng.normal(size=(6, 4))) for _ in range(3))
    _, w = L.scaled_dot_product_attention(q, k, v, return_weights=True)
    assert np.all((w.data > 0) & (w.data < 1))
    np.testing.assert_allclose(w.data.sum(axis=1), np.ones(6), atol=1e-6)


def test_sdpa_depth_mismatch():
    with pytest.raises(ShapeError):
        L.scaled_dot_product_attention(
            Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))), Tensor(np.zeros((2, 4))))


def test_sdpa_gradients():
    rng = np.random.default_rng(27)
    q = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    k = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    v = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.scaled_dot_product_attention(q, k, v),
                             L.scaled_dot_product_attention(q, k, v))),
        [q, k, v], h=1e-6)
    assert err < 1e-5


def test_mha_single_head_identity_projection_reduces_to_sdpa():
    rng = np.random.default_rng(28)
    p = L.init_mha(rng, model_dim=4, num_heads=1, key_dim=4)
    p.w_o = Tensor(np.eye(4), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 4)))
    out = L.multi_head_attention(x, p).data
    q = x.data @ p.w_q[0].data
    k = x.data @ p.w_k[0].data
    v = x.data @ p.w_v[0].data
    expect = L.scaled_dot_product_attention(Tensor(q), Tensor(k), Tensor(v)).data
    np.testing.assert_allclose(out, expect, atol=1e-12)


def test_mha_preserves_reference_shape():
    rng = np.random.default_rng(29)
    p = L.init_mha(rng, model_dim=128, num_heads=4, key_dim=64)
    x = Tensor(rng.normal(size=(60, 128)))
    assert L.multi_head_attention(x, p).shape == (60, 128)


def test_mha_gradients():
    rng = np.random.default_rng(30)
    p = L.init_mha(rng, model_dim=8, num_heads=2, key_dim=3)
    x = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
    checked = [x, p.w_q[0], p.w_k[1], p.w_v[0], p.w_o]
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.multi_head_attention(x, p), L.multi_head_attention(x, p))),
        checked, h=1e-6)
    assert err < 1e-5


def test_mha_width_mismatch():
    p = L.init_mha(np.random.default_rng(31), model_dim=8, num_heads=2, key_dim=4)
    with pytest.raises(ShapeError):
        L.multi_head_attention(Tensor(np.zeros((3, 5))), p)


# ---------------------------------------------------------------------------
# Dropout / Dense

def test_dropout_infer_is_identity():
    x = Tensor(np.arange(5, dtype=float))
    assert L.dropout_forward(x, 0.5, mode="infer") is x


def test_dropout_rate_zero_is_identity():
    x = Tensor(np.arange(5, dtype=float))
    rng = np.random.default_rng(32)
    assert L.dropout_forward(x, 0.0, mode="train", rng=rng) is x


def test_dropout_statistics():
    rng = np.random.default_rng(33)
    x = Tensor(np.full(100_000, 2.0))
    out = L.dropout_forward(x, 0.5, mode="train", rng=rng).data
    zero_frac = np.mean(out == 0.0)
    assert abs(zero_frac - 0.5) < 0.01
    assert abs(out.mean() - x.data.mean()) / x.data.mean() < 0.02


def test_dropout_bad_rate():
    with pytest.raises(ContractError):
        L.dropout_forward(Tensor([1.0]), 1.0, mode="train", rng=np.random.default_rng(0))


def test_dense_identity():
    p = L.DenseParams(W=Tensor(np.eye(3)), b=Tensor(np.zeros(3)), activation="none")
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(L.dense_forward(Tensor(x), p).data, x)


def test_dense_softmax_sums_to_one_over_six_classes():
    rng = np.random.default_rng(34)
    p = L.init_dense(rng, in_features=10, out_features=6, activation="softmax")
    out = L.dense_forward(Tensor(rng.normal(size=(4, 10))), p).data
    np.testing.assert_allclose(out.sum(axis=1), np.ones(4), atol=1e-6)


def test_dense_relu_zeroes_negative_preactivations():
    p = L.DenseParams(W=Tensor(np.array([[1.0], [-1.0]])), b=Tensor(np.zeros(2)),
                      activation="relu")
    out = L.dense_forward(Tensor(np.array([2.0])), p).data
    np.testing.assert_allclose(out, [2.0, 0.0])


def test_dense_gradients():
    rng = np.random.default_rng(35)
    p = L.init_dense(rng, in_features=4, out_features=3, activation="relu")
    x = Tensor(rng.normal(size=(2, 4)) + 0.3, requires_grad=True)
    err = grad_check_all(
        lambda: T.tsum(T.mul(L.dense_forward(x, p), L.dense_forward(x, p))),
        [x, p.W, p.b], h=1e-6)
    assert err < 1e-5


def test_dense_width_mismatch():
    p = L.init_dense(np.random.default_rng(36), in_features=4, out_features=3)
    with pytest.raises(ShapeError):
        L.dense_forward(Tensor(np.zeros(5)), p)
