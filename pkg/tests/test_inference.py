import json

import numpy as np
import pytest
import torch
from PIL import Image

from hyperadapt import AdaptationModule, Generator, SynthesisConfig, TrainingError, invert_image, make_encoder
from hyperadapt.encoders import EncoderSpec
from hyperadapt.inference import AdaptedGenerator, save_grid, style_mix, to_uint8, z_from_seed

CFG3 = SynthesisConfig(z_dim=8, w_dim=8, channels=(8, 8, 4))


@pytest.fixture
def model():
    G = Generator(CFG3, seed=0).requires_grad_(False)
    a = AdaptationModule(3, G.layer_shapes(), latent_dim=8, seed=1)
    with torch.no_grad():
        for p in a.layer_heads.parameters():
            p.add_(torch.randn_like(p) * 0.3)  # move away from the near-identity init
    style = G.mapping_forward(torch.randn(3, 8, generator=torch.Generator().manual_seed(5)))
    return AdaptedGenerator(G, a, style, ["a", "b", "c"])


def test_style_mix_arithmetic():
    out = style_mix(torch.tensor([[0.0]]), torch.tensor([[2.0]]), 0.5, cutoff=1, n_layers=3)
    assert out[0, :, 0].tolist() == [0.0, 1.0, 1.0]


def test_style_mix_endpoints():
    w, w_c = torch.randn(2, 4), torch.randn(4)
    zero = style_mix(w, w_c, 0.0, 2, 5)
    assert torch.equal(zero, w[:, None].expand(-1, 5, -1))
    one = style_mix(w, w_c, 1.0, 2, 5)
    assert torch.equal(one[:, :2], w[:, None].expand(-1, 2, -1))
    assert torch.equal(one[:, 2:], w_c.expand(2, 3, -1))
    for bad in (-0.01, 1.01):
        with pytest.raises(ValueError):
            style_mix(w, w_c, bad, 2, 5)
    with pytest.raises(ValueError):
        style_mix(w, w_c, 0.5, 6, 5)


def test_cutoff_is_inside_generator():
    assert 0 < CFG3.cutoff < len(CFG3.layers)


def test_both_controls_off_is_source(model):
    z = z_from_seed(3, 8, 4)
    for c in (0, 1, "c", [0.2, 0.3, 0.5]):
        assert torch.equal(model.synthesize(z, c, alpha=0.0, kappa=0.0), model.source(z))


def test_kappa_zero_equals_unmixed(model):
    z = z_from_seed(1, 8, 2)
    G = model.generator
    mods_only = model.synthesize(z, [1, 1], alpha=1.0, kappa=0.0)
    from hyperadapt.hypernet import scale_modulation

    mods = scale_modulation(model.adaptation(torch.eye(3)[[1, 1]]), 1.0)
    assert torch.equal(mods_only, G.synthesize(G.broadcast(G.mapping_forward(z)), mods))


def test_full_mode_differs_from_source(model):
    z = z_from_seed(0, 8, 2)
    assert not torch.allclose(model.synthesize(z, 0), model.source(z))


def test_determinism(model):
    z = z_from_seed(7, 8, 3)
    assert torch.equal(model.synthesize(z, 2, 0.7, 0.4), model.synthesize(z, 2, 0.7, 0.4))
    assert torch.equal(z_from_seed(7, 8, 3), z)


def test_unknown_domain(model):
    with pytest.raises(ValueError):
        model.synthesize(z_from_seed(0, 8), "zebra")
    with pytest.raises(ValueError):
        model.synthesize(z_from_seed(0, 8), torch.tensor([0.5, 0.6, 0.0]))


def test_soft_condition_blends_style_latent(model):
    # with alpha = 0 only the blended w_c matters
    c = torch.tensor([0.25, 0.75, 0.0])
    z = z_from_seed(2, 8)
    w_c = 0.25 * model.style_latents[0] + 0.75 * model.style_latents[1]
    G = model.generator
    latents = style_mix(G.mapping_forward(z), w_c, 1.0, CFG3.cutoff, G.num_latents)
    assert torch.allclose(model.synthesize(z, c, alpha=0.0, kappa=1.0), G.synthesize(latents), atol=1e-6)


def test_sweep_endpoints_and_length(model):
    z = z_from_seed(4, 8, 2)
    for space in ("c", "v"):
        frames = model.domain_sweep(z, 0, 2, steps=5, space=space)
        assert len(frames) == 5
        assert torch.equal(frames[0], model.synthesize(z, 0))
        assert torch.equal(frames[-1], model.synthesize(z, 2))
        two = model.domain_sweep(z, "a", "c", steps=2, space=space)
        assert torch.equal(two[0], frames[0]) and torch.equal(two[1], frames[-1])
    again = model.domain_sweep(z, 0, 2, steps=5)
    assert all(torch.equal(a, b) for a, b in zip(again, model.domain_sweep(z, 0, 2, steps=5)))
    with pytest.raises(ValueError):
        model.domain_sweep(z, 0, 1, steps=1)


def test_sweep_is_continuous(model):
    z = z_from_seed(4, 8)
    frames = model.domain_sweep(z, 0, 1, steps=41)
    gaps = [float((a - b).abs().max()) for a, b in zip(frames, frames[1:])]
    total = float((frames[0] - frames[-1]).abs().max())
    assert max(gaps) < max(total, 1e-3) / 4


def test_translate_shape(model):
    w = model.generator.mapping_forward(z_from_seed(0, 8, 2))
    out = model.translate(w)
    assert out.shape == (3, 2, 3, 16, 16)
    assert torch.equal(out[1], model.synthesize(None, 1, w=w))
    assert model.translate(w, [2]).shape == (1, 2, 3, 16, 16)


# ---------------------------------------------------------------------------
# inversion


@pytest.fixture
def encoder():
    return make_encoder(EncoderSpec(seed=0), 8)


def test_zero_iterations_returns_mean_latent(tiny_generator, encoder):
    target = tiny_generator(torch.randn(2, 8))
    res = invert_image(target, tiny_generator, encoder, steps=0)
    assert res.iterations == 0
    assert torch.equal(res.latents, tiny_generator.mean_latent().expand(2, -1))
    fake = tiny_generator.synthesize(tiny_generator.broadcast(res.latents))
    assert torch.allclose(res.pixel_error, (fake - target).abs().flatten(1).mean(1))
    assert (res.pixel_error >= 0).all() and (res.embedding_error >= -1e-6).all()


def test_inversion_improves_and_is_seeded(tiny_generator, encoder):
    target = tiny_generator(torch.randn(2, 8, generator=torch.Generator().manual_seed(1)))
    start = invert_image(target, tiny_generator, encoder, steps=0)
    a = invert_image(target, tiny_generator, encoder, steps=60)
    b = invert_image(target, tiny_generator, encoder, steps=60)
    assert torch.equal(a.latents, b.latents)
    assert (a.pixel_error + a.embedding_error < start.pixel_error + start.embedding_error).all()


def test_w_plus_inversion_shape(tiny_generator, encoder):
    res = invert_image(tiny_generator(torch.randn(1, 8)), tiny_generator, encoder, steps=5, w_plus=True)
    assert res.latents.shape == (1, tiny_generator.num_latents, 8)


def test_inversion_divergence(tiny_config, encoder):
    G = Generator(tiny_config).requires_grad_(False)
    target = G(torch.randn(1, 8))
    with torch.no_grad():
        G.const.fill_(float("nan"))
    with pytest.raises(TrainingError) as err:
        invert_image(target, G, encoder, steps=3)
    assert err.value.diagnostics["iteration"] == 0


# ---------------------------------------------------------------------------
# output


def test_to_uint8():
    x = torch.tensor([-1.0, 0.0, 1.0, 2.0]).reshape(1, 1, 4).expand(3, 1, 4)
    assert to_uint8(x)[0, :, 0].tolist() == [0, 128, 255, 255]


def test_save_grid(tmp_path):
    cells = [[torch.full((3, 4, 4), -1.0), torch.full((3, 4, 4), 1.0)]]
    path = save_grid(cells, tmp_path / "g.png", meta=[[{"seed": 0}, {"seed": 1}]], pad=1)
    arr = np.asarray(Image.open(path))
    assert arr.shape == (6, 11, 3)
    assert (arr[1:5, 1:5] == 0).all() and (arr[1:5, 6:10] == 255).all()
    side = json.loads((tmp_path / "g.json").read_text())
    assert side["rows"] == 1 and side["cols"] == 2 and side["cells"][0][1] == {"seed": 1}
