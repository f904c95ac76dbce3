import numpy as np
import numpy.testing as npt
import pytest

from kanfpn.errors import CheckpointMismatch, InvalidGeometry, ShapeMismatch
from kanfpn.layers import Params, load_checkpoint, save_checkpoint
from kanfpn.stem import (BackboneConfig, FeaturePyramid, StemConfig, StemVariant,
                         backbone_forward, fpn_fuse, init_backbone, init_fpn, init_stem,
                         stem_forward, token_grid)
from kanfpn.tensor import Tensor

ALL_VARIANTS = [StemVariant.from_key(f"s{i}") for i in range(7)]


def build_stem(variant, extent=(64, 64), seed=0, dtype=np.float32, **kw):
    cfg = StemConfig(variant=variant, **kw)
    params = Params()
    init_stem(params, "stem", np.random.default_rng(seed), cfg, extent, dtype)
    return cfg, params


class TestTokenGrid:
    def test_all_variants_agree_on_64x48(self):
        x = Tensor(np.random.default_rng(0).random((2, 3, 64, 48), dtype=np.float32))
        shapes = set()
        for variant in ALL_VARIANTS:
            cfg, params = build_stem(variant, extent=(64, 48))
            tok = stem_forward(x, params.values(), "stem", cfg)
            shapes.add(tuple(tok.shape))
        assert shapes == {(2, 12, 64)}

    def test_constant_image_uniform_tokens_for_patch_embed(self):
        cfg, params = build_stem(StemVariant.S0_PATCH, extent=(32, 32))
        x = Tensor(np.full((1, 3, 32, 32), 0.5, dtype=np.float32))
        tok = stem_forward(x, params.values(), "stem", cfg).data
        npt.assert_allclose(tok - tok[:, :1, :], 0.0, atol=1e-6)

    def test_geometry_rejection(self):
        cfg, params = build_stem(StemVariant.S0_PATCH, extent=(32, 32))
        with pytest.raises(InvalidGeometry):
            stem_forward(Tensor(np.ones((1, 3, 30, 30))), params.values(), "stem", cfg)


class TestBackbone:
    def test_pyramid_strides(self):
        cfg, params = build_stem(StemVariant.S2_FPN, extent=(64, 64))
        x = Tensor(np.random.default_rng(1).random((1, 3, 64, 64), dtype=np.float32))
        pyr = backbone_forward(x, params.values(), "stem.backbone", cfg)
        assert pyr["c2"].shape == (1, 16, 16, 16)
        assert pyr["c3"].shape == (1, 32, 8, 8)
        assert pyr["c4"].shape == (1, 64, 4, 4)
        assert pyr["c5"].shape == (1, 128, 2, 2)

    def test_zeroed_block_is_shortcut(self):
        cfg, params = build_stem(StemVariant.S2_FPN, extent=(64, 64))
        # second block of stage 1 has an identity shortcut; silence its branch
        for leaf in ("conv2.w", "conv2.beta"):
            name = f"stem.backbone.s1.b1.{leaf}"
            params.set_value(name, np.zeros_like(params[name].value.data))
        from kanfpn.stem import _residual_block
        x = Tensor(np.abs(np.random.default_rng(2).random((1, 16, 8, 8), dtype=np.float32)))
        y = _residual_block(x, params.values(), "stem.backbone.s1.b1", 1, False)
        assert np.array_equal(y.data, x.data)

    def test_stage3_registers_block_gates(self):
        _, p2 = build_stem(StemVariant.S2_FPN, extent=(64, 64))
        _, p3 = build_stem(StemVariant.S3_BACKBONE_CBAM, extent=(64, 64))
        extra = set(p3.names()) - set(p2.names())
        assert extra and all(".cbam." in n for n in extra)


class TestFpnFuse:
    def _pyramid(self, widths, base=8, batch=1, seed=0):
        rng = np.random.default_rng(seed)
        levels = {}
        for i, w in enumerate(widths):
            ext = base // (2 ** i)
            levels[f"c{i + 2}"] = Tensor(rng.standard_normal((batch, w, ext, ext)))
        return FeaturePyramid(levels)

    def test_zero_laterals_give_beta_constants(self):
        cfg = StemConfig(variant=StemVariant.S2_FPN,
                         backbone=BackboneConfig(widths=(4, 8, 16, 32)), fpn_width=8)
        params = Params()
        init_fpn(params, "fpn", np.random.default_rng(3), cfg, np.float64)
        for level in (2, 3, 4, 5):
            name = f"fpn.lat{level}.conv.w"
            params.set_value(name, np.zeros_like(params[name].value.data))
        beta = np.linspace(-1, 1, 8)
        params.set_value("fpn.smooth2.norm.beta", beta)
        pyr = self._pyramid((4, 8, 16, 32))
        y = fpn_fuse(pyr, params.values(), "fpn", cfg).data
        for c in range(8):
            npt.assert_allclose(y[0, c], beta[c], atol=1e-12)

    @pytest.mark.parametrize("alpha", [0.5, 2.0, -1.0])
    def test_linear_configuration_is_homogeneous(self, alpha):
        cfg = StemConfig(variant=StemVariant.S2_FPN,
                         backbone=BackboneConfig(widths=(4, 8, 16, 32)), fpn_width=8,
                         smooth_norm=False)
        params = Params()
        init_fpn(params, "fpn", np.random.default_rng(4), cfg, np.float64)
        pyr = self._pyramid((4, 8, 16, 32), seed=4)
        scaled = FeaturePyramid({k: Tensor(alpha * v.data) for k, v in pyr.levels.items()})
        y = fpn_fuse(pyr, params.values(), "fpn", cfg).data
        ys = fpn_fuse(scaled, params.values(), "fpn", cfg).data
        rel = np.abs(ys - alpha * y) / np.maximum(1.0, np.abs(alpha * y))
        assert rel.max() <= 1e-6

    def test_s4_and_s5_differ_only_through_smoothing(self):
        kw = dict(backbone=BackboneConfig(widths=(4, 8, 16, 32)), fpn_width=8,
                  cbam_reduction=2, kagn_bottleneck=2)
        cfg4 = StemConfig(variant=StemVariant.S4_CBAM_KAGN, **kw)
        cfg5 = StemConfig(variant=StemVariant.S5_LATERAL_CBAM, **kw)
        p4, p5 = Params(), Params()
        init_fpn(p4, "fpn", np.random.default_rng(5), cfg4, np.float64)
        init_fpn(p5, "fpn", np.random.default_rng(5), cfg5, np.float64)

        lateral4 = {n: p for n, p in ((p.name, p) for p in p4) if ".lat" in n}
        lateral5 = {n: p for n, p in ((p.name, p) for p in p5) if ".lat" in n}
        assert set(lateral4) == set(lateral5)
        for name, p in lateral4.items():
            assert np.array_equal(p.value.data, lateral5[name].value.data)

        # silencing each smoothing layer flattens both outputs to constants
        for params, zero_names in ((p4, ("fpn.smooth2.kagn.base_w", "fpn.smooth2.kagn.poly_w")),
                                   (p5, ("fpn.smooth2.conv.w",))):
            for name in zero_names:
                params.set_value(name, np.zeros_like(params[name].value.data))
        pyr = self._pyramid((4, 8, 16, 32), seed=5)
        y4 = fpn_fuse(pyr, p4.values(), "fpn", cfg4).data
        y5 = fpn_fuse(pyr, p5.values(), "fpn", cfg5).data
        for y in (y4, y5):
            flat = y.reshape(y.shape[0], y.shape[1], -1)
            npt.assert_allclose(flat - flat[:, :, :1], 0.0, atol=1e-6)

    def test_non_halving_pyramid_rejected(self):
        cfg = StemConfig(variant=StemVariant.S2_FPN,
                         backbone=BackboneConfig(widths=(4, 8, 16, 32)), fpn_width=8)
        params = Params()
        init_fpn(params, "fpn", np.random.default_rng(6), cfg, np.float64)
        rng = np.random.default_rng(6)
        levels = {"c2": Tensor(rng.standard_normal((1, 4, 8, 8))),
                  "c3": Tensor(rng.standard_normal((1, 8, 4, 4))),
                  "c4": Tensor(rng.standard_normal((1, 16, 3, 3))),
                  "c5": Tensor(rng.standard_normal((1, 32, 1, 1)))}
        with pytest.raises(ShapeMismatch):
            fpn_fuse(FeaturePyramid(levels), params.values(), "fpn", cfg)

    def test_s6_registers_per_level_smoothing(self):
        cfg, params = build_stem(StemVariant.S6_KAGN_FUSE, extent=(64, 64))
        smooth_names = [n for n in params.names() if ".smooth" in n]
        levels = {n.split(".")[2] for n in smooth_names}
        assert levels == {"smooth2", "smooth3", "smooth4", "smooth5"}


class TestVariantContracts:
    def test_param_count_ordering(self):
        counts = {}
        for variant in ALL_VARIANTS[:3]:
            _, params = build_stem(variant, extent=(64, 64))
            counts[variant.value] = params.count()
        assert counts["s0"] < counts["s1"] < counts["s2"]

    def test_checkpoint_is_a_variant_marker(self, tmp_path):
        _, p4 = build_stem(StemVariant.S4_CBAM_KAGN, extent=(64, 64))
        _, p5 = build_stem(StemVariant.S5_LATERAL_CBAM, extent=(64, 64))
        path = tmp_path / "s4.ckpt"
        save_checkpoint(p4, path)
        with pytest.raises(CheckpointMismatch):
            load_checkpoint(p5, path)

    def test_token_grid_helper(self):
        assert token_grid(64, 48) == (4, 3)
