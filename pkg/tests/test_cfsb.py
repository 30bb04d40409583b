import numpy as np
import pytest

from fsdetr import oracles
from fsdetr.cfsb import CfsbParams, cfsb_forward, cfsb_spatial_branch, make_cfsb, scharr_grad
from fsdetr.params import ConvParams, ParamStore, count_params
from fsdetr.spectral import FreqFilterParams, cfsb_freq_branch
from fsdetr.tensor import Tensor


def conv(w, b=None, padding=None):
    return ConvParams.from_arrays(w, b, padding=padding)


def random_params(rng, c, scale=0.3):
    u = lambda *s: rng.uniform(-scale, scale, size=s)
    raw = {
        "c1": (u(c, c, 3, 3), u(c)),
        "c2": (u(c, c, 3, 3), u(c)),
        "mw": u(2 * c, 2 * c, 1, 1),
        "mb": u(2 * c),
        "outer": (u(c, c, 1, 1), u(c)),
        "fuse": (u(c, c, 1, 1), u(c)),
    }
    p = CfsbParams(
        conv(*raw["c1"]),
        conv(*raw["c2"]),
        FreqFilterParams(Tensor(raw["mw"]), Tensor(raw["mb"])),
        conv(*raw["outer"]),
        conv(*raw["fuse"]),
    )
    return p, raw


class TestScharr:
    def test_constant_gives_zero(self):
        out = scharr_grad(Tensor(np.full((2, 5, 5), 3.0))).data
        np.testing.assert_array_equal(out[:, 1:-1, 1:-1], 0.0)

    def test_ramp_response(self):
        x = np.tile(np.arange(6.0), (6, 1))[None]
        out = scharr_grad(Tensor(x)).data
        np.testing.assert_array_equal(out[0, 1:-1, 1:-1], 32.0)

    def test_transpose_symmetry(self):
        x = np.random.default_rng(0).standard_normal((1, 6, 6))
        a = scharr_grad(Tensor(x.transpose(0, 2, 1))).data
        b = scharr_grad(Tensor(x)).data.transpose(0, 2, 1)
        np.testing.assert_allclose(a[:, 1:-1, 1:-1], b[:, 1:-1, 1:-1], atol=1e-12)

    def test_flip_antisymmetry_of_gx(self):
        from fsdetr.cfsb import SCHARR_X, _depthwise

        x = np.random.default_rng(1).standard_normal((2, 6, 7))
        gx = lambda a: _depthwise(Tensor(a), SCHARR_X).data
        np.testing.assert_allclose(
            gx(x)[:, 1:-1, ::-1][:, :, 1:-1], -gx(x[:, :, ::-1])[:, 1:-1, 1:-1], atol=1e-12
        )

    def test_matches_loop_oracle(self):
        x = np.random.default_rng(2).standard_normal((3, 5, 6))
        np.testing.assert_allclose(scharr_grad(Tensor(x)).data, oracles.scharr(x), atol=1e-12)


class TestSpatialBranch:
    def test_zero_conv1_is_passthrough(self):
        rng = np.random.default_rng(3)
        p, raw = random_params(rng, 3)
        p.spatial_conv1.weight.data[:] = 0.0
        p.spatial_conv1.bias.data[:] = 0.0
        x = rng.standard_normal((3, 5, 5))
        np.testing.assert_allclose(cfsb_spatial_branch(Tensor(x), p).data, p.spatial_conv2(Tensor(x)).data, atol=0)

    def test_constant_with_identity_conv2(self):
        rng = np.random.default_rng(4)
        p, _ = random_params(rng, 2)
        p.spatial_conv1.bias.data[:] = 0.0
        ident = np.zeros((2, 2, 3, 3))
        ident[[0, 1], [0, 1], 1, 1] = 1.0
        p.spatial_conv2 = conv(ident, np.zeros(2))
        x = np.full((2, 5, 5), 1.7)
        out = cfsb_spatial_branch(Tensor(x), p).data
        np.testing.assert_allclose(out[:, 2:-2, 2:-2], x[:, 2:-2, 2:-2], atol=1e-12)

    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(5)
        p, raw = random_params(rng, 4)
        x = rng.standard_normal((4, 8, 8))
        ref = oracles.spatial_branch(x, raw["c1"], raw["c2"])
        np.testing.assert_allclose(cfsb_spatial_branch(Tensor(x), p).data, ref, atol=1e-12)


class TestCfsbForward:
    def test_all_zero_parameters(self):
        store = ParamStore(0)
        p = make_cfsb(store, 3)
        for t in store.tensors():
            t.data[:] = 0.0
        out = cfsb_forward(Tensor(np.random.default_rng(6).standard_normal((3, 4, 4))), p).data
        np.testing.assert_array_equal(out, 0.0)

    def test_identity_branches_with_half_fuse(self):
        c = 2
        zeros3 = np.zeros((c, c, 3, 3))
        ident3 = zeros3.copy()
        ident3[range(c), range(c), 1, 1] = 1.0
        p = CfsbParams(
            conv(zeros3, np.zeros(c)),
            conv(ident3, np.zeros(c)),
            FreqFilterParams(Tensor(np.eye(2 * c).reshape(2 * c, 2 * c, 1, 1)), Tensor(np.zeros(2 * c))),
            conv(np.eye(c).reshape(c, c, 1, 1), np.zeros(c)),
            conv(0.5 * np.eye(c).reshape(c, c, 1, 1), np.zeros(c)),
        )
        x = np.random.default_rng(7).standard_normal((c, 8, 8))
        np.testing.assert_allclose(cfsb_forward(Tensor(x), p).data, x, atol=1e-10)

    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(8)
        p, raw = random_params(rng, 4)
        x = rng.standard_normal((4, 8, 8))
        ref = oracles.cfsb(x, raw["c1"], raw["c2"], raw["mw"], raw["mb"], raw["outer"], raw["fuse"])
        np.testing.assert_allclose(cfsb_forward(Tensor(x), p).data, ref, atol=1e-9)

    def test_branch_separability(self):
        rng = np.random.default_rng(9)
        p, _ = random_params(rng, 3)
        x = Tensor(rng.standard_normal((3, 4, 4)))
        # frequency path silenced: fuse(spatial)
        for t in p.freq_filter.tensors() + p.freq_conv.tensors():
            t.data[:] = 0.0
        np.testing.assert_allclose(cfsb_forward(x, p).data, p.fuse_conv(cfsb_spatial_branch(x, p)).data, atol=1e-12)
        # conv1 zeroed: the residual x still reaches conv2
        p, _ = random_params(rng, 3)
        for t in p.spatial_conv1.tensors():
            t.data[:] = 0.0
        freq = cfsb_freq_branch(x, p.freq_filter, p.freq_conv)
        expected = p.fuse_conv(p.spatial_conv2(x) + freq).data
        np.testing.assert_allclose(cfsb_forward(x, p).data, expected, atol=1e-12)

    @pytest.mark.parametrize("hw", [(4, 4), (8, 4), (6, 10)])
    def test_shape_preserved(self, hw):
        p = make_cfsb(ParamStore(1), 3)
        assert cfsb_forward(Tensor(np.ones((3, *hw))), p).shape == (3, *hw)

    def test_param_count(self):
        c = 4
        expected = 2 * (c * c * 9 + c) + (2 * c) ** 2 + 2 * c + 2 * (c * c + c)
        assert count_params(make_cfsb(ParamStore(0), c)) == expected
