import numpy as np
import pytest

from fsdetr import oracles
from fsdetr.attention import (
    SampleCounter,
    c2f_forward,
    da_aifi,
    deformable_attention,
    make_c2f,
    make_da_aifi,
    make_deform_attn,
    make_shab,
    make_shsa,
    shab_forward,
    shsa_forward,
    sincos_position_encoding,
    grid_reference_points,
)
from fsdetr.params import ParamStore
from fsdetr.tensor import ShapeError, Tensor, layer_norm, softmax


def randomize(store, rng, scale=0.5):
    for t in store.tensors():
        t.data[:] = rng.uniform(-scale, scale, size=t.shape)


def np_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


class TestShsa:
    def test_identity_half(self):
        store = ParamStore(0)
        p = make_shsa(store, 6)
        p.out_proj.weight.data[:] = np.eye(6).reshape(6, 6, 1, 1)
        x = np.random.default_rng(0).standard_normal((6, 3, 3))
        out = shsa_forward(Tensor(x), p).data
        np.testing.assert_array_equal(out[3:], x[3:])

    def test_single_position(self):
        store = ParamStore(1)
        p = make_shsa(store, 4)
        p.out_proj.weight.data[:] = np.eye(4).reshape(4, 4, 1, 1)
        x = np.random.default_rng(1).standard_normal((4, 1, 1))
        out = shsa_forward(Tensor(x), p).data
        wv = p.qkv_proj.weight.data[2 * p.d_attn :, :, 0, 0]
        np.testing.assert_allclose(out[:2, 0, 0], wv @ x[:2, 0, 0], atol=1e-14)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        store = ParamStore(2)
        p = make_shsa(store, 4)
        randomize(store, rng)
        x = rng.standard_normal((4, 3, 3))
        ref = oracles.shsa(x, p.qkv_proj.weight.data, p.out_proj.weight.data, p.d_attn)
        np.testing.assert_allclose(shsa_forward(Tensor(x), p).data, ref, atol=1e-10)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        store = ParamStore(3)
        p = make_shsa(store, 4)
        randomize(store, rng)
        x = rng.standard_normal((4, 1, 9))
        perm = rng.permutation(9)
        a = shsa_forward(Tensor(x[:, :, perm]), p).data
        b = shsa_forward(Tensor(x), p).data[:, :, perm]
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_odd_channels_rejected(self):
        with pytest.raises(ShapeError):
            make_shsa(ParamStore(0), 5)
        p = make_shsa(ParamStore(0), 4)
        with pytest.raises(ShapeError):
            shsa_forward(Tensor(np.ones((5, 2, 2))), p)

    def test_default_width(self):
        p = make_shsa(ParamStore(0), 8)
        assert p.d_attn == 4
        assert p.qkv_proj.out_channels == 3 * 4


class TestC2f:
    def test_n0_degenerate(self):
        rng = np.random.default_rng(4)
        store = ParamStore(4)
        p = make_c2f(store, 4, 6, n=0)
        randomize(store, rng)
        x = rng.standard_normal((4, 5, 5))
        y = oracles.conv1x1(x, p.entry_conv.weight.data, p.entry_conv.bias.data)
        ref = oracles.conv1x1(y, p.exit_conv.weight.data, p.exit_conv.bias.data)
        np.testing.assert_allclose(c2f_forward(Tensor(x), p).data, ref, atol=1e-12)

    def test_n1_concat_width(self):
        p = make_c2f(ParamStore(0), 8, 8, n=1)
        assert p.exit_conv.in_channels == 3 * p.hidden

    def test_n2_matches_composition(self):
        rng = np.random.default_rng(5)
        store = ParamStore(5)
        p = make_c2f(store, 4, 4, n=2)
        randomize(store, rng)
        x = rng.standard_normal((4, 5, 5))
        conv = lambda a, c: oracles.conv2d(a, c.weight.data, c.bias.data, padding=c.padding)
        y = conv(x, p.entry_conv)
        parts = [y[:2], y[2:]]
        cur = parts[-1]
        for b in p.bottlenecks:
            cur = cur + conv(conv(cur, b.conv1), b.conv2)
            parts.append(cur)
        ref = conv(np.concatenate(parts), p.exit_conv)
        np.testing.assert_allclose(c2f_forward(Tensor(x), p).data, ref, atol=1e-12)

    def test_channel_mismatch_rejected(self):
        p = make_c2f(ParamStore(0), 4, 4, n=1)
        with pytest.raises(ShapeError):
            c2f_forward(Tensor(np.ones((3, 4, 4))), p)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            make_c2f(ParamStore(0), 4, 4, kind="mystery")


class TestShab:
    def test_zero_entry_gives_exit_bias(self):
        store = ParamStore(6)
        p = make_shab(store, 4)
        p.entry_conv.weight.data[:] = 0.0
        p.entry_conv.bias.data[:] = 0.0
        x = np.random.default_rng(6).standard_normal((4, 3, 3))
        out = shab_forward(Tensor(x), p).data
        expected = np.broadcast_to(p.exit_conv.bias.data[:, None, None], out.shape)
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_shape(self):
        p = make_shab(ParamStore(7), 8)
        assert shab_forward(Tensor(np.ones((8, 16, 16))), p).shape == (8, 16, 16)

    def test_matches_composition(self):
        rng = np.random.default_rng(8)
        store = ParamStore(8)
        p = make_shab(store, 8)
        randomize(store, rng)
        x = rng.standard_normal((8, 3, 3))
        y = oracles.conv1x1(x, p.entry_conv.weight.data, p.entry_conv.bias.data)
        blk = p.bottlenecks[0]
        z = oracles.shsa(y[4:], blk.qkv_proj.weight.data, blk.out_proj.weight.data, blk.d_attn)
        ref = oracles.conv1x1(np.concatenate([y[:4], y[4:], z]), p.exit_conv.weight.data, p.exit_conv.bias.data)
        np.testing.assert_allclose(shab_forward(Tensor(x), p).data, ref, atol=1e-10)


def identity_deform(d, heads, points):
    p = make_deform_attn(ParamStore(0), d, heads, points)
    p.value_proj.weight.data[:] = np.eye(d).reshape(d, d, 1, 1)
    p.value_proj.bias.data[:] = 0.0
    p.output_proj.weight.data[:] = np.eye(d)
    p.output_proj.bias.data[:] = 0.0
    return p


class TestDeformableAttention:
    def test_single_sample_identity(self):
        rng = np.random.default_rng(9)
        vmap = rng.standard_normal((4, 5, 5))
        refs = rng.uniform(0.1, 0.9, size=(6, 2))
        p = identity_deform(4, heads=2, points=1)
        out = deformable_attention(Tensor(rng.standard_normal((6, 4))), Tensor(refs), Tensor(vmap), p).data
        for q in range(6):
            expected = oracles.bilinear(vmap, refs[q, 0] * 5 - 0.5, refs[q, 1] * 5 - 0.5)
            np.testing.assert_allclose(out[q], expected, atol=1e-13)

    def test_identical_points_uniform_weights(self):
        rng = np.random.default_rng(10)
        vmap = rng.standard_normal((4, 5, 5))
        refs = rng.uniform(0, 1, size=(3, 2))
        queries = Tensor(rng.standard_normal((3, 4)))
        one = deformable_attention(queries, Tensor(refs), Tensor(vmap), identity_deform(4, 2, 1)).data
        four = deformable_attention(queries, Tensor(refs), Tensor(vmap), identity_deform(4, 2, 4)).data
        np.testing.assert_allclose(four, one, atol=1e-13)

    def test_matches_unrolled_oracle(self):
        rng = np.random.default_rng(11)
        store = ParamStore(11)
        p = make_deform_attn(store, 8, heads=2, points=4)
        randomize(store, rng, scale=0.3)
        vmap = rng.standard_normal((8, 5, 5))
        refs = rng.uniform(0, 1, size=(6, 2))
        queries = rng.standard_normal((6, 8))
        counter = SampleCounter()
        out = deformable_attention(Tensor(queries), Tensor(refs), Tensor(vmap), p, counter).data
        ref = oracles.deformable_attention(
            queries, refs, vmap,
            p.value_proj.weight.data, p.value_proj.bias.data,
            p.offset_head.weight.data, p.offset_head.bias.data,
            p.weight_head.weight.data, p.weight_head.bias.data,
            p.output_proj.weight.data, p.output_proj.bias.data, 2, 4,
        )
        np.testing.assert_allclose(out, ref, atol=1e-10)
        assert counter.count == 6 * 2 * 4

    def test_weights_sum_to_one(self):
        rng = np.random.default_rng(12)
        store = ParamStore(12)
        p = make_deform_attn(store, 8, heads=4, points=3)
        randomize(store, rng, scale=2.0)
        logits = p.weight_head(Tensor(rng.standard_normal((7, 8)))).data.reshape(7, 4, 3)
        w = softmax(Tensor(logits), axis=-1).data
        np.testing.assert_allclose(w.sum(-1), 1.0, atol=1e-12)

    @pytest.mark.parametrize("n,m,k", [(1, 1, 1), (5, 2, 3), (16, 8, 4)])
    def test_sample_counter(self, n, m, k):
        rng = np.random.default_rng(n)
        p = make_deform_attn(ParamStore(0), 8, heads=m, points=k)
        counter = SampleCounter()
        deformable_attention(
            Tensor(rng.standard_normal((n, 8))), Tensor(rng.uniform(0, 1, (n, 2))),
            Tensor(rng.standard_normal((8, 4, 4))), p, counter,
        )
        assert counter.count == n * m * k

    def test_indivisible_heads_rejected(self):
        p = make_deform_attn(ParamStore(0), 6, heads=4, points=2)
        with pytest.raises(ShapeError):
            deformable_attention(Tensor(np.ones((2, 6))), Tensor(np.full((2, 2), 0.5)), Tensor(np.ones((6, 3, 3))), p)


class TestDaAifi:
    def test_zeroed_branches_give_double_layernorm(self):
        p = make_da_aifi(ParamStore(13), 16, heads=4, points=2)
        p.attn.output_proj.weight.data[:] = 0.0
        p.attn.output_proj.bias.data[:] = 0.0
        p.ffn2.weight.data[:] = 0.0
        p.ffn2.bias.data[:] = 0.0
        x = np.random.default_rng(13).standard_normal((16, 4, 4))
        tokens = x.reshape(16, 16).T
        ones, zeros = np.ones(16), np.zeros(16)
        expected = np_layer_norm(np_layer_norm(tokens, ones, zeros), ones, zeros).T.reshape(16, 4, 4)
        np.testing.assert_allclose(da_aifi(Tensor(x), p).data, expected, atol=1e-12)

    def test_shape(self):
        p = make_da_aifi(ParamStore(14), 16)
        assert da_aifi(Tensor(np.ones((16, 4, 4))), p).shape == (16, 4, 4)

    def test_matches_composition(self):
        rng = np.random.default_rng(15)
        store = ParamStore(15)
        p = make_da_aifi(store, 8, heads=2, points=4)
        randomize(store, rng, scale=0.3)
        x = rng.standard_normal((8, 3, 4))
        tokens = x.reshape(8, 12).T
        q = tokens + sincos_position_encoding(3, 4, 8)
        a = p.attn
        attn = oracles.deformable_attention(
            q, grid_reference_points(3, 4), x,
            a.value_proj.weight.data, a.value_proj.bias.data,
            a.offset_head.weight.data, a.offset_head.bias.data,
            a.weight_head.weight.data, a.weight_head.bias.data,
            a.output_proj.weight.data, a.output_proj.bias.data, 2, 4,
        )
        h = np_layer_norm(tokens + attn, p.norm1_gamma.data, p.norm1_beta.data)
        z = h @ p.ffn1.weight.data.T + p.ffn1.bias.data
        z = z / (1 + np.exp(-z))
        h = np_layer_norm(h + z @ p.ffn2.weight.data.T + p.ffn2.bias.data, p.norm2_gamma.data, p.norm2_beta.data)
        np.testing.assert_allclose(da_aifi(Tensor(x), p).data, h.T.reshape(8, 3, 4), atol=1e-9)

    def test_counter_counts_all_tokens(self):
        p = make_da_aifi(ParamStore(16), 8, heads=2, points=3)
        counter = SampleCounter()
        da_aifi(Tensor(np.ones((8, 2, 5))), p, counter)
        assert counter.count == 10 * 2 * 3

    def test_position_encoding_layout(self):
        pe = sincos_position_encoding(2, 3, 8)
        assert pe.shape == (6, 8)
        # token 0 sits at the origin: sin parts 0, cos parts 1
        np.testing.assert_allclose(pe[0], [0, 0, 1, 1, 0, 0, 1, 1])
        with pytest.raises(ShapeError):
            sincos_position_encoding(2, 2, 6)
