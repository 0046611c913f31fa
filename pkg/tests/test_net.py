import numpy as np
import pytest

from fdsr import ops
from fdsr.net import (
    FdsrConfig,
    count_params_and_macs,
    fdsr_forward,
    hfl_forward,
    init_std,
    init_weights,
    msdb_forward,
    param_shapes,
    preprocess_inputs,
)
from fdsr.tensor import Tensor


def inputs(rng, config, M=12, N=8, B=1):
    s = config.scale
    rgb = Tensor(rng.random((B, 3, s * M, s * N), dtype=np.float32))
    lr = Tensor(rng.random((B, 1, M, N), dtype=np.float32) * 0.5 + 0.1)
    return rgb, lr


def zero_out_head(weights):
    for k in ("msrb.out.w", "msrb.out.b"):
        weights[k].data[...] = 0.0


class TestConfig:
    def test_defaults(self):
        c = FdsrConfig()
        assert (c.base_channels, c.guide_channels, c.alpha, c.num_msdb, c.num_hfl) == (32, 32, 0.5, 4, 3)
        assert c.dilations == (1, 2)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(num_hfl=2),
            dict(alpha=0.0),
            dict(alpha=1.0),
            dict(guide_channels=5, alpha=0.5),
            dict(ablation="nope"),
            dict(dilations=(1,)),
            dict(base_channels=0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            FdsrConfig(**kw)

    def test_dict_round_trip(self):
        c = FdsrConfig.tiny(ablation="no_hfl", dilations=(1, 3))
        assert FdsrConfig.from_dict(c.to_dict()) == c

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            FdsrConfig.from_dict({"base_channels": 8, "width": 3})


class TestParameters:
    def test_tiny_param_count_by_hand(self, tiny_config):
        # guidance: entry 8*4*9+8; two full HFLs of 4 kernels (4x4x3x3) + 2 biases(4);
        # last HFL keeps only the two kernels into the high stream + bias
        hfgb = (8 * 4 * 9 + 8) + 2 * (4 * 144 + 8) + (2 * 144 + 4)
        # reconstruction: entry, 4 x (2 dilated 3x3 + 1x1), 3 fusions (12->8), output 8->4
        msrb = (8 * 4 * 9 + 8) + 4 * (2 * (576 + 8) + (64 + 8)) + 3 * (12 * 8 + 8) + (4 * 8 * 9 + 4)
        cost = count_params_and_macs(tiny_config, 480, 640)
        assert cost.by_group["hfgb"][0] == hfgb == 1756
        assert cost.by_group["msrb"][0] == msrb == 5860
        assert cost.params == 7616

    def test_tiny_macs_by_hand(self, tiny_config):
        full, half = 240 * 320, 120 * 160
        msrb = full * (288 + 4 * (2 * 576 + 64) + 3 * 96 + 288)
        hfgb = full * (288 + 3 * 144) + half * (2 * 3 * 144 + 144)
        cost = count_params_and_macs(tiny_config, 480, 640)
        assert cost.by_group["msrb"][1] == msrb
        assert cost.by_group["hfgb"][1] == hfgb
        assert cost.macs == msrb + hfgb

    def test_no_hfgb_has_no_guidance_params(self):
        shapes = param_shapes(FdsrConfig.tiny(ablation="no_hfgb"))
        assert not any(k.startswith("hfgb") for k in shapes)
        assert not any(".fuse" in k for k in shapes)

    def test_names(self, tiny_config):
        shapes = param_shapes(tiny_config)
        assert "hfgb.hfl1.w_h2h" in shapes and "hfgb.hfl1.w_l2l" in shapes
        assert "hfgb.hfl3.w_l2l" not in shapes
        assert shapes["msrb.msdb2.integrate.w"] == (8, 8, 1, 1)
        assert shapes["msrb.out.w"] == (4, 8, 3, 3)

    def test_cost_needs_divisible_size(self, tiny_config):
        with pytest.raises(ValueError):
            count_params_and_macs(tiny_config, 482, 640)


class TestInit:
    def test_deterministic(self, tiny_config):
        a, b = init_weights(tiny_config, 5), init_weights(tiny_config, 5)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        c = init_weights(tiny_config, 6)
        assert not np.array_equal(a["msrb.entry.w"].data, c["msrb.entry.w"].data)

    def test_biases_zero_and_float32(self, tiny_config):
        w = init_weights(tiny_config, 0)
        for k, t in w.items():
            assert t.dtype == np.float32 and t.requires_grad
            if t.data.ndim == 1:
                assert not t.data.any()

    def test_fan_in_scale(self):
        config = FdsrConfig(base_channels=32, guide_channels=32)
        w = init_weights(config, 0)
        t = w["msrb.msdb1.branch1.w"].data
        assert t.std() == pytest.approx(init_std(config, "msrb.msdb1.branch1.w", t.shape), rel=0.05)
        assert init_std(config, "x.w", (1, 32, 3, 3)) == pytest.approx(np.sqrt(2 / 1.04) / np.sqrt(288))


class TestBlocks:
    def test_msdb_zero_weights(self, rng, tiny_config):
        w = {k: Tensor(np.zeros_like(v.data)) for k, v in init_weights(tiny_config, 0).items()}
        out = msdb_forward(Tensor(rng.standard_normal((1, 8, 6, 6))), w, "msrb.msdb1", (1, 2), 0.2)
        assert not out.data.any()

    def test_msdb_equal_dilations_doubles_branch(self, rng, tiny_config):
        w = init_weights(tiny_config, 0)
        p = "msrb.msdb1"
        w[f"{p}.branch2.w"] = Tensor(w[f"{p}.branch1.w"].data.copy())
        w[f"{p}.integrate.w"] = Tensor(np.eye(8, dtype=np.float32).reshape(8, 8, 1, 1))
        f = Tensor(rng.standard_normal((1, 8, 6, 6)), dtype=np.float64)
        # identity integration + zero biases: leaky(2 * y) == 2 * leaky(y)
        two = msdb_forward(f, w, p, (1, 1), 0.2).data
        one = ops.leaky_relu(ops.conv2d(f, w[f"{p}.branch1.w"], padding=1), 0.2).data
        np.testing.assert_allclose(two, 2 * one, rtol=1e-5, atol=1e-6)

    def test_msdb_compositional_oracle(self, rng, tiny_config):
        w = init_weights(tiny_config, 3)
        for k in w:
            if k.endswith(".b"):
                w[k].data[:] = rng.standard_normal(w[k].shape) * 0.1
        f = rng.standard_normal((2, 8, 7, 5)).astype(np.float32)
        p = "msrb.msdb2"

        def conv(x, name, d=1, k=3):
            return ops.conv2d(Tensor(x), w[f"{name}.w"], w[f"{name}.b"], padding=d * (k - 1) // 2, dilation=d).data

        acc = conv(f, f"{p}.branch1", 1) + conv(f, f"{p}.branch2", 2)
        z = conv(acc, f"{p}.integrate", 1, 1)
        expected = np.where(z >= 0, z, 0.2 * z)
        np.testing.assert_allclose(msdb_forward(Tensor(f), w, p, (1, 2), 0.2).data, expected, rtol=1e-5, atol=1e-6)

    def test_hfl_shapes_and_low_stream(self, rng, tiny_config):
        w = init_weights(tiny_config, 0)
        y_h, y_l = Tensor(rng.standard_normal((1, 4, 8, 6))), Tensor(rng.standard_normal((1, 4, 4, 3)))
        h, low = hfl_forward(y_h, y_l, w, "hfgb.hfl1", 0.2)
        assert h.shape == (1, 4, 8, 6) and low.shape == (1, 4, 4, 3)
        h3, low3 = hfl_forward(y_h, y_l, w, "hfgb.hfl3", 0.2)
        assert low3 is None

    def test_hfl_oracle(self, rng, tiny_config):
        w = init_weights(tiny_config, 1)
        y_h = rng.standard_normal((1, 4, 6, 4)).astype(np.float32)
        y_l = rng.standard_normal((1, 4, 3, 2)).astype(np.float32)
        p = "hfgb.hfl2"

        def c(x, k):
            return ops.conv2d(Tensor(x), w[f"{p}.{k}"], padding=1).data

        lrelu = lambda z: np.where(z >= 0, z, 0.2 * z)  # noqa: E731
        up = c(y_l, "w_l2h").repeat(2, axis=2).repeat(2, axis=3)
        pooled = y_h.reshape(1, 4, 3, 2, 2, 2).mean(axis=(3, 5))
        h, low = hfl_forward(Tensor(y_h), Tensor(y_l), w, p, 0.2)
        np.testing.assert_allclose(h.data, lrelu(c(y_h, "w_h2h") + up), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(low.data, lrelu(c(y_l, "w_l2l") + c(pooled, "w_h2l")), rtol=1e-5, atol=1e-6)

    def test_hfl_size_mismatch(self, rng, tiny_config):
        w = init_weights(tiny_config, 0)
        with pytest.raises(ValueError):
            hfl_forward(Tensor(rng.standard_normal((1, 4, 8, 8))), Tensor(rng.standard_normal((1, 4, 3, 4))), w, "hfgb.hfl1", 0.2)


class TestForward:
    def test_output_shape(self, rng, tiny_config):
        rgb, lr = inputs(rng, tiny_config, 48, 36)
        out = fdsr_forward(rgb, lr, init_weights(tiny_config, 0), tiny_config)
        assert out.shape == (1, 1, 192, 144)

    @pytest.mark.parametrize("ablation", ["full", "no_hfgb", "no_hfl"])
    def test_zero_head_gives_bicubic_exactly(self, rng, ablation):
        config = FdsrConfig.tiny(ablation=ablation)
        w = init_weights(config, 0)
        zero_out_head(w)
        rgb, lr = inputs(rng, config, B=2)
        out = fdsr_forward(rgb, lr, w, config).data
        ref = ops.bicubic_resize_array(lr.data, 48, 32)
        assert np.array_equal(out, ref)

    def test_preprocess_packing(self, rng, tiny_config):
        rgb, lr = inputs(rng, tiny_config)
        dp, gp, du = preprocess_inputs(rgb, lr, tiny_config)
        assert dp.shape == (1, 4, 24, 16) and gp.shape == (1, 4, 24, 16)
        np.testing.assert_array_equal(dp.data[0, 1], du.data[0, 0, 0::2, 1::2])

    def test_guidance_matters_only_with_hfgb(self, rng):
        for ablation, expect_change in (("full", True), ("no_hfgb", False)):
            config = FdsrConfig.tiny(ablation=ablation)
            w = init_weights(config, 0)
            rgb, lr = inputs(rng, config)
            a = fdsr_forward(rgb, lr, w, config).data
            b = fdsr_forward(Tensor(1.0 - rgb.data), lr, w, config).data
            assert (not np.array_equal(a, b)) == expect_change

    def test_rgb_guide_input(self, rng):
        config = FdsrConfig.tiny(guide_input="rgb")
        assert param_shapes(config)["hfgb.entry.w"][1] == 12
        rgb, lr = inputs(rng, config)
        assert fdsr_forward(rgb, lr, init_weights(config, 0), config).shape == (1, 1, 48, 32)

    @pytest.mark.parametrize(
        "rgb_shape,lr_shape",
        [((1, 3, 40, 32), (1, 1, 12, 8)), ((1, 1, 48, 32), (1, 1, 12, 8)), ((2, 3, 48, 32), (1, 1, 12, 8))],
    )
    def test_shape_errors(self, tiny_config, rgb_shape, lr_shape):
        with pytest.raises(ValueError):
            fdsr_forward(Tensor(np.zeros(rgb_shape)), Tensor(np.zeros(lr_shape)), init_weights(tiny_config, 0), tiny_config)

    def test_block_factor_must_divide(self):
        config = FdsrConfig.tiny(block_factor=4, scale=2)
        with pytest.raises(ValueError, match="block factor"):
            fdsr_forward(Tensor(np.zeros((1, 3, 10, 10))), Tensor(np.zeros((1, 1, 5, 5))), init_weights(config, 0), config)
