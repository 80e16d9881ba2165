import numpy as np
import pytest

from oracles import softmax
from restc import tensor as T
from restc.dataio import AugmentedExample, make_batches
from restc.errors import ConfigError, ContractError
from restc.gradcheck import numeric_grad, relative_error
from restc.graphs import build_cfg, propagation_matrix
from restc.model import RESTC, ModelConfig
from restc.params import ModelParams
from restc.temporal import (embed_with_positions, encode_temporal, init_temporal_params, multi_head_attention,
                            temporal_enhanced, temporal_view, transformer_layer)

N, D, L = 6, 4, 5
CLS = N + 1


def make_params(seed=0, dim=D, layers=2):
    p = ModelParams(np.random.default_rng(seed), dim)
    init_temporal_params(p, N, dim, L, layers)
    return p


def padded(prefixes, width=L + 1):
    items = np.zeros((len(prefixes), width), dtype=np.int64)
    lengths = np.array([len(s) for s in prefixes])
    for r, s in enumerate(prefixes):
        items[r, :len(s)] = s
        items[r, len(s)] = CLS
    mask = np.arange(width)[None, :] <= lengths[:, None]
    return items, lengths, mask


# -- embedding ------------------------------------------------------------------------

def test_embedding_hand_assembled():
    item_table = T.Tensor([[0, 0], [1, 2], [3, 4]])     # pad, item 1, CLS
    pos_table = T.Tensor([[10, 20], [30, 40]])
    out = embed_with_positions(item_table, pos_table, np.array([[1, 2]])).data
    np.testing.assert_array_equal(out[0], [[1, 2, 10, 20], [3, 4, 30, 40]])


def test_padding_rows_are_position_only():
    p = make_params()
    items, _, _ = padded([[1, 2]])
    out = embed_with_positions(p["item_emb"], p["temporal.pos"], items).data
    np.testing.assert_array_equal(out[0, 3:, :D], 0.0)
    np.testing.assert_array_equal(out[0, 3:, D:], p["temporal.pos"].data[3:L + 1])


def test_order_changes_initial_embedding():
    p = make_params()
    a = embed_with_positions(p["item_emb"], p["temporal.pos"], padded([[1, 2, 3]])[0]).data
    b = embed_with_positions(p["item_emb"], p["temporal.pos"], padded([[3, 2, 1]])[0]).data
    assert not np.allclose(a, b)


def test_embedding_index_out_of_range():
    p = make_params()
    with pytest.raises(ContractError):
        embed_with_positions(p["item_emb"], p["temporal.pos"], np.array([[N + 2, 0]]))


# -- attention / transformer layer -------------------------------------------------------

def test_single_token_attention_mask():
    p = make_params()
    items, _, mask = padded([[4]])
    x = embed_with_positions(p["item_emb"], p["temporal.pos"], items)
    _, attn = multi_head_attention(x, mask, p["temporal.layer0.wq"], p["temporal.layer0.wk"],
                                   p["temporal.layer0.wv"], 2, return_weights=True)
    a = attn.data[0]                       # [heads, W, W]
    assert np.all(np.abs(a.sum(axis=-1) - 1) < 1e-9)
    np.testing.assert_array_equal(a[:, :, 2:], 0.0)


def test_zero_query_key_gives_uniform_attention():
    p = make_params()
    items, _, mask = padded([[1, 2, 3]])
    x = embed_with_positions(p["item_emb"], p["temporal.pos"], items)
    zero = T.Tensor(np.zeros((2 * D, 2 * D)))
    _, attn = multi_head_attention(x, mask, zero, zero, p["temporal.layer0.wv"], 2, return_weights=True)
    np.testing.assert_allclose(attn.data[0, :, :, :4], 0.25, atol=1e-15)


def test_heads_must_divide_width():
    p = make_params()
    items, _, mask = padded([[1]])
    x = embed_with_positions(p["item_emb"], p["temporal.pos"], items)
    with pytest.raises(ConfigError):
        multi_head_attention(x, mask, p["temporal.layer0.wq"], p["temporal.layer0.wk"],
                             p["temporal.layer0.wv"], 3)


def test_layer_gradient_wrt_value_projection():
    p = make_params(3)
    items, _, mask = padded([[1, 2, 3], [4, 5]])
    x = embed_with_positions(p["item_emb"], p["temporal.pos"], items)
    w = np.random.default_rng(1).normal(size=(2, L + 1, 2 * D))
    out = transformer_layer(p, 0, x, mask, heads=2, dropout=0.0)
    T.backward((out * w).sum())
    wv = p["temporal.layer0.wv"]

    def f():
        with T.no_grad():
            return float(np.sum(transformer_layer(p, 0, x, mask, 2, 0.0).data * w))

    assert relative_error(wv.grad, numeric_grad(f, wv.data)) < 1e-4


# -- temporal-enhanced module ------------------------------------------------------------

def test_enhanced_single_item_returns_its_initial_row():
    rng = np.random.default_rng(0)
    x_out = T.Tensor(rng.normal(size=(1, 3, 4)))
    x_init = T.Tensor(rng.normal(size=(1, 3, 4)))
    w3, w4 = T.Tensor(rng.normal(size=(4, 4))), T.Tensor(rng.normal(size=(4, 4)))
    h_t, x_c, gamma = temporal_enhanced(x_out, x_init, np.array([1]), w3, w4, T.Tensor(np.zeros(4)),
                                        T.Tensor(rng.normal(size=4)), return_weights=True)
    np.testing.assert_array_equal(gamma.data[0], [1, 0, 0])
    np.testing.assert_allclose(h_t.data[0], x_init.data[0, 0])
    np.testing.assert_array_equal(x_c.data[0], x_out.data[0, 1])


def test_enhanced_zero_f_gives_mean_of_values():
    rng = np.random.default_rng(1)
    x_out = T.Tensor(rng.normal(size=(1, 5, 4)))
    x_init = T.Tensor(rng.normal(size=(1, 5, 4)))
    w = T.Tensor(rng.normal(size=(4, 4)))
    h_t, _ = temporal_enhanced(x_out, x_init, np.array([3]), w, w, T.Tensor(np.zeros(4)), T.Tensor(np.zeros(4)))
    np.testing.assert_allclose(h_t.data[0], x_init.data[0, :3].mean(axis=0), atol=1e-15)


def test_enhanced_scalar_trace():
    # D = 2 (width 4), M = 2: rows 0, 1 real, row 2 is CLS
    x_out = np.array([[[0.5, -0.2, 0.1, 0.3], [0.0, 0.4, -0.5, 0.2], [0.3, 0.3, -0.1, 0.6]]])
    x_init = np.array([[[1.0, 0.0, 0.5, -1.0], [0.0, 2.0, -0.5, 1.0], [9.0, 9.0, 9.0, 9.0]]])
    w3 = np.diag([1.0, -1.0, 0.5, 2.0])
    w4 = np.full((4, 4), 0.1)
    b3 = np.array([0.0, 0.1, 0.0, -0.1])
    f_t = np.array([1.0, -0.5, 2.0, 0.3])
    q = x_out[0, 2] @ w3
    logits = [np.maximum(q + x_out[0, i] @ w4 + b3, 0) @ f_t for i in range(2)]
    gamma = softmax(np.array(logits))
    expected = gamma[0] * x_init[0, 0] + gamma[1] * x_init[0, 1]
    h_t, _ = temporal_enhanced(T.Tensor(x_out), T.Tensor(x_init), np.array([2]), T.Tensor(w3), T.Tensor(w4),
                               T.Tensor(b3), T.Tensor(f_t))
    np.testing.assert_allclose(h_t.data[0], expected, atol=1e-14)


# -- temporal view -------------------------------------------------------------------------

def test_view_has_unit_norm_and_is_deterministic_in_eval():
    p = make_params(2)
    items, lengths, mask = padded([[1, 2, 3], [4], [5, 6, 5, 6]])
    a = encode_temporal(p, items, lengths, mask, training=False).data
    b = encode_temporal(p, items, lengths, mask, training=False).data
    assert np.all(np.abs(np.linalg.norm(a, axis=1) - 1) < 1e-6)
    np.testing.assert_array_equal(a, b)


def test_view_of_constant_map_is_normalised_bias():
    h = T.Tensor(np.random.default_rng(0).normal(size=(2, 4)))
    bias = np.array([3.0, -4.0])
    out = temporal_view(h, h, T.Tensor(np.zeros((8, 2))), T.Tensor(np.zeros(2)), T.Tensor(np.zeros((2, 2))),
                        T.Tensor(bias), dropout=0.0)
    np.testing.assert_allclose(out.data, [[0.6, -0.8], [0.6, -0.8]])


def test_dropout_only_active_in_training():
    p = make_params(4)
    items, lengths, mask = padded([[1, 2, 3]])
    rng = np.random.default_rng(0)
    a = encode_temporal(p, items, lengths, mask, dropout=0.5, rng=rng, training=True).data
    b = encode_temporal(p, items, lengths, mask, dropout=0.5, rng=rng, training=True).data
    assert not np.array_equal(a, b)


def test_extra_padding_does_not_change_temporal_view():
    cfg = ModelConfig(n_items=N, dim=D, max_len=12)
    model = RESTC(cfg, seed=5)
    prop = propagation_matrix(build_cfg([[1, 2, 3, 4, 5, 6]], N))
    ex = [AugmentedExample((1, 2, 3), 4, 3), AugmentedExample((5, 6), 1, 2)]
    (short,) = make_batches(ex, 2, 3, cls_index=CLS)
    (long,) = make_batches(ex, 2, 12, cls_index=CLS)
    with T.no_grad():
        a = model.forward(short, prop).temporal.data
        b = model.forward(long, prop).temporal.data
    np.testing.assert_array_equal(a, b)
