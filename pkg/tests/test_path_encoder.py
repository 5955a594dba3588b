"""Path embedding: pooling, padding independence, caching, enrichment."""

from __future__ import annotations

import numpy as np
import pytest

from dnmt import path_encoder as pe
from dnmt import tensor as tt
from dnmt.tensor import Tensor


def small_params(seed: int = 0, label_count: int = 6, dim: int = 4) -> pe.PathEncoderParams:
    return pe.PathEncoderParams.init(label_count, dim, head_count=2, inner_dim=8,
                                     layer_count=2, dropout=0.0,
                                     rng=np.random.default_rng(seed))


def test_identical_paths_bitwise_equal():
    params = small_params()
    rows = pe.encode_token_paths([(3, 4), (3, 4), (5,), (3, 4)], params)
    assert rows.shape == (4, 4)
    np.testing.assert_array_equal(rows.data[0], rows.data[1])
    np.testing.assert_array_equal(rows.data[0], rows.data[3])
    assert not np.array_equal(rows.data[0], rows.data[2])


def test_zeroed_params_produce_exact_zero():
    # all parameters zeroed, including every layer-norm gain and bias:
    # the final normalization then maps anything to 0, so d_i vanishes
    # even though positional encodings enter the path inputs
    params = small_params()
    for _name, t in params.named():
        t.data[:] = 0.0
    out = pe.encode_path([1, 2, 3], params)
    assert out.shape == (4,)
    assert not out.data.any()


def test_mean_pool_excludes_pad():
    params = small_params(seed=1)
    plain = pe.encode_path([2, 3, 4], params)
    padded = pe.encode_path([2, 3, 4], params, padded_len=7, pad_id=0)
    np.testing.assert_array_equal(padded.data, plain.data)


def test_padded_len_too_short():
    params = small_params()
    with pytest.raises(ValueError, match="padded_len"):
        pe.encode_path([1, 2, 3], params, padded_len=2)


def test_empty_path_rejected():
    params = small_params()
    with pytest.raises(tt.EmptyInputError):
        pe.encode_path([], params)
    with pytest.raises(tt.EmptyInputError):
        pe.encode_token_paths([], params)


def test_label_order_matters():
    # positional encoding is added before the stack, so a reversed path
    # must encode differently under generic weights
    params = small_params(seed=2)
    fwd = pe.encode_path([1, 2], params)
    rev = pe.encode_path([2, 1], params)
    assert not np.allclose(fwd.data, rev.data, atol=1e-6)


class TestEnrich:
    def test_hand_sum(self):
        out = pe.enrich_embeddings(Tensor([[1.0, 2.0]]), Tensor([[0.5, -2.0]]))
        np.testing.assert_allclose(out.data, [[1.5, 0.0]], atol=1e-7)

    def test_zero_path_embedding_is_identity(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)))
        out = pe.enrich_embeddings(x, Tensor(np.zeros((3, 4))))
        np.testing.assert_array_equal(out.data, x.data)

    def test_zero_word_embedding_passes_paths(self):
        d = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
        out = pe.enrich_embeddings(Tensor(np.zeros((3, 4))), d)
        np.testing.assert_array_equal(out.data, d.data)

    def test_shape_mismatch(self):
        with pytest.raises(tt.ShapeError):
            pe.enrich_embeddings(Tensor(np.zeros((3, 4))), Tensor(np.zeros((4, 3))))


def test_gradients_reach_label_table(float64_mode):
    params = small_params(seed=3)
    with tt.Tape() as tape:
        rows = pe.encode_token_paths([(1, 2), (3,)], params)
        loss = tt.sum_all(tt.mul(rows, rows))
        tape.backward(loss)
    grad = params.label_embed.grad
    assert grad is not None
    assert np.abs(grad[[1, 2, 3]]).sum() > 0
    # labels that never appear get no gradient
    assert not grad[[0, 4, 5]].any()


def test_path_encoder_gradients(float64_mode, gradcheck):
    params = small_params(seed=4)

    def loss():
        rows = pe.encode_token_paths([(1, 2), (3,), (1, 2)], params)
        return tt.sum_all(tt.mul(rows, rows))

    layer = params.stack.layers[0]
    gradcheck(loss, {
        "embed": params.label_embed,
        "wq0": layer.self_attn.wq[0],
        "ffn_w1": layer.ffn.w1,
        "final_gain": params.stack.final_ln.gain,
    })
