import numpy as np
import pytest
import torch

from tripletsr.errors import ConfigError
from tripletsr.generator import (
    Generator,
    GeneratorConfig,
    init_generator,
    load_checkpoint,
    save_checkpoint,
    subpixel_inverse,
    subpixel_upsample,
    super_resolve,
    transposed_upsample,
)


def toy(scale=2, kind="subpixel"):
    return GeneratorConfig.toy(scale=scale, upsample_kind=kind)


def expected_param_count(cfg: GeneratorConfig) -> int:
    """Closed-form count from the declared layer shapes."""
    nf, gc = cfg.base_channels, cfg.growth_channels
    k2 = 9
    conv = lambda cin, cout: cin * cout * k2 + cout
    total = conv(3, nf)  # first conv
    dense = sum(conv(nf + i * gc, gc) for i in range(4)) + conv(nf + 4 * gc, nf)
    total += cfg.n_rrdb * 3 * dense
    total += conv(nf, nf)  # trunk conv
    n_stages = {2: 1, 4: 2, 8: 3}[cfg.scale]
    if cfg.upsample_kind == "subpixel":
        total += n_stages * conv(nf, 4 * nf)
    else:
        total += n_stages * (nf * nf * 16 + nf)
    total += conv(nf, nf)  # hr conv
    total += conv(nf, 3)  # last conv
    return total


class TestConfig:
    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            GeneratorConfig(scale=3).validate()
        with pytest.raises(ConfigError):
            GeneratorConfig(n_rrdb=0).validate()
        with pytest.raises(ConfigError):
            GeneratorConfig(base_channels=0).validate()
        with pytest.raises(ConfigError):
            GeneratorConfig(upsample_kind="bilinear").validate()

    def test_defaults_match_published_topology(self):
        cfg = GeneratorConfig()
        assert (cfg.n_rrdb, cfg.base_channels, cfg.growth_channels) == (16, 64, 32)


class TestInit:
    def test_deterministic_given_seed(self):
        a = init_generator(toy(), seed=11)
        b = init_generator(toy(), seed=11)
        for (na, pa), (nb, pb) in zip(
            a.state_dict().items(), b.state_dict().items()
        ):
            assert na == nb
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        a = init_generator(toy(), seed=11)
        b = init_generator(toy(), seed=12)
        assert any(
            not torch.equal(pa, pb)
            for pa, pb in zip(a.parameters(), b.parameters())
        )

    @pytest.mark.parametrize("kind", ["subpixel", "transposed"])
    @pytest.mark.parametrize("scale", [2, 4, 8])
    def test_param_count_closed_form(self, scale, kind):
        cfg = toy(scale=scale, kind=kind)
        gen = init_generator(cfg, seed=0)
        assert sum(p.numel() for p in gen.parameters()) == expected_param_count(cfg)


class TestForward:
    @pytest.mark.parametrize("scale,res", [(2, 56), (4, 28), (8, 14)])
    def test_output_shape(self, scale, res):
        gen = init_generator(toy(scale=scale), seed=0)
        out = gen(torch.rand(2, 3, res, res))
        assert out.shape == (2, 3, 112, 112)

    def test_transposed_kind_shape(self):
        gen = init_generator(toy(scale=4, kind="transposed"), seed=0)
        assert gen(torch.rand(1, 3, 28, 28)).shape == (1, 3, 112, 112)

    def test_forward_deterministic(self):
        gen = init_generator(toy(), seed=3)
        x = torch.rand(1, 3, 8, 8)
        assert torch.equal(gen(x), gen(x))

    def test_super_resolve_clamps_and_shapes(self, rng):
        gen = init_generator(toy(scale=8), seed=0)
        out = super_resolve(gen, rng.uniform(size=(14, 14, 3)))
        assert out.shape == (112, 112, 3)
        assert out.min() >= 0.0
        assert out.max() <= 1.0
        raw = super_resolve(gen, rng.uniform(size=(14, 14, 3)), clamp=False)
        assert raw.shape == (112, 112, 3)

    def test_directional_derivative_matches_finite_difference(self):
        gen = init_generator(toy(scale=2), seed=5).double()
        x = torch.rand(1, 3, 6, 6, dtype=torch.float64,
                       generator=torch.Generator().manual_seed(1))
        param = dict(gen.named_parameters())["conv_hr.weight"]
        idx = (2, 1, 0, 1)
        gen.zero_grad()
        gen(x).mean().backward()
        analytic = float(param.grad[idx])
        eps = 1e-4
        with torch.no_grad():
            param[idx] += eps
            up = float(gen(x).mean())
            param[idx] -= 2 * eps
            down = float(gen(x).mean())
            param[idx] += eps
        numeric = (up - down) / (2 * eps)
        assert abs(numeric - analytic) / max(abs(numeric), 1e-12) < 1e-3

    def test_input_gradient_flows(self):
        gen = init_generator(toy(scale=2), seed=5)
        x = torch.rand(1, 3, 6, 6, requires_grad=True)
        gen(x).sum().backward()
        assert x.grad is not None
        assert torch.isfinite(x.grad).all()


class TestSubpixel:
    def test_row_major_subpixel_order(self):
        x = torch.arange(4.0).reshape(1, 4, 1, 1)
        out = subpixel_upsample(x, 2)
        assert out.shape == (1, 1, 2, 2)
        assert torch.equal(out[0, 0], torch.tensor([[0.0, 1.0], [2.0, 3.0]]))

    def test_formula_on_random_tensor(self, rng):
        s = 2
        x = torch.from_numpy(rng.normal(size=(8, 3, 5)).astype(np.float64))
        out = subpixel_upsample(x, s)
        for c in range(2):
            for y in range(6):
                for xx in range(10):
                    src = x[c * s * s + (y % s) * s + (xx % s), y // s, xx // s]
                    assert out[c, y, xx] == src

    def test_bijection(self, rng):
        x = torch.from_numpy(rng.normal(size=(2, 12, 4, 6)))
        assert torch.equal(subpixel_inverse(subpixel_upsample(x, 2), 2), x)

    def test_s1_is_identity(self, rng):
        x = torch.from_numpy(rng.normal(size=(1, 3, 4, 4)))
        assert torch.equal(subpixel_upsample(x, 1), x)

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ValueError, match="divisible"):
            subpixel_upsample(torch.zeros(1, 6, 2, 2), 2)


class TestTransposed:
    def test_zero_input_zero_output(self):
        w = torch.rand(1, 1, 4, 4)
        out = transposed_upsample(torch.zeros(1, 1, 3, 3), w, s=2)
        assert torch.equal(out, torch.zeros(1, 1, 6, 6))

    def test_hand_computed_single_pixel(self):
        # 1x1 input: zero-insertion leaves one value; with stride 2 and
        # padding 1 the 2x2 output reads kernel entries w[:, :, y+1, x+1]
        v = 1.7
        w = torch.arange(16.0).reshape(1, 1, 4, 4)
        out = transposed_upsample(torch.full((1, 1, 1, 1), v), w, s=2)
        assert out.shape == (1, 1, 2, 2)
        want = v * w[0, 0, 1:3, 1:3]
        assert torch.allclose(out[0, 0], want)

    def test_shape_doubles(self, rng):
        x = torch.from_numpy(rng.normal(size=(2, 4, 7, 5)))
        w = torch.from_numpy(rng.normal(size=(4, 4, 4, 4)))
        assert transposed_upsample(x, w, s=2).shape == (2, 4, 14, 10)

    def test_bad_stride_rejected(self):
        with pytest.raises(ValueError, match="stride 2"):
            transposed_upsample(torch.zeros(1, 1, 2, 2), torch.zeros(1, 1, 6, 6), s=3)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        gen = init_generator(toy(scale=4), seed=21)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, gen, seed=21, extra={"epoch": 3})
        loaded, seed = load_checkpoint(path)
        assert seed == 21
        assert loaded.config == gen.config
        for (na, ta), (nb, tb) in zip(
            gen.state_dict().items(), loaded.state_dict().items()
        ):
            assert na == nb
            assert torch.equal(ta, tb)
        x = torch.rand(1, 3, 28, 28)
        assert torch.equal(gen(x), loaded(x))

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "none.npz")
