import sys

import numpy as np
import pytest
import torch

from hyperadapt import AdaptationModule, Generator, SynthesisConfig

torch.set_num_threads(1)

TINY = SynthesisConfig(z_dim=8, w_dim=8, channels=(8, 4), mapping_layers=2)


@pytest.fixture
def tiny_config():
    return TINY


@pytest.fixture
def tiny_generator():
    return Generator(TINY, seed=0).requires_grad_(False)


@pytest.fixture
def tiny_adaptation(tiny_generator):
    return AdaptationModule(3, tiny_generator.layer_shapes(), latent_dim=8, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_tiny_registry(generator, n_domains=3, samples=1):
    """Procedural targets at 8x8 with latents drawn from the mapping network (no inversion)."""
    from hyperadapt import build_registry, default_target_specs

    reg = build_registry(default_target_specs(n_samples=samples)[:n_domains], resolution=generator.resolution)
    g = torch.Generator().manual_seed(99)
    for d in reg:
        with torch.no_grad():
            d.latents = generator.mapping_forward(torch.randn(len(d.images), generator.config.z_dim, generator=g))
    return reg


@pytest.fixture
def tiny_registry(tiny_generator):
    return make_tiny_registry(tiny_generator)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
