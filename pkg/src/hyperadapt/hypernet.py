"""Domain-conditioned hyper-network emitting rank-1 weight residuals.

A one-hot (or soft) domain vector ``c`` is mapped by a small MLP to a domain
latent ``v``; per generator layer, four single fully-connected heads read
``v`` and emit the rank-1 factors ``(gamma, u, psi)`` of the weight residual
and the filter-wise scale ``delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ._validation import ConfigurationError, check_condition, check_unit_interval
from .synthesis import LRELU_SLOPE, LayerConfig

INIT_GAIN = 0.01
DEFAULT_LATENT_DIM = 64
ADAPT_TO_RGB = True
HEAD_BIASES = {"gamma": 1.0, "u": 1.0, "psi": 0.0, "delta": 1.0}


@dataclass
class LayerModulation:
    """Rank-1 residual factors and filter scale for one layer, batched on dim 0."""

    gamma: torch.Tensor  # (B, C_out)
    u: torch.Tensor  # (B, C_in)
    psi: torch.Tensor  # (B, k*k)
    delta: torch.Tensor  # (B, C_out)


class ModulationSet(Sequence):
    """Per-layer :class:`LayerModulation` entries for a batch of conditions."""

    def __init__(self, layers: Sequence[LayerModulation], shapes: Sequence[LayerConfig]):
        if len(layers) != len(shapes):
            raise ConfigurationError("one modulation entry per layer is required")
        self.layers = list(layers)
        self.shapes = list(shapes)

    def __getitem__(self, i) -> LayerModulation:
        return self.layers[i]

    def __len__(self) -> int:
        return len(self.layers)

    def __iter__(self) -> Iterator[LayerModulation]:
        return iter(self.layers)

    def residual(self, i: int):
        """Materialize the weight residual of layer ``i``: ``(B, C_in, C_out, k, k)``.

        ``None`` for layers the hyper-network leaves untouched.
        """
        m, cfg = self.layers[i], self.shapes[i]
        if m is None:
            return None
        return reconstruct_residual(m.gamma, m.u, m.psi, cfg.kernel_size)

    def delta(self, i: int):
        m = self.layers[i]
        return None if m is None else m.delta

    def _map(self, fn) -> "ModulationSet":
        return ModulationSet([None if m is None else fn(m) for m in self.layers], self.shapes)

    def select(self, index) -> "ModulationSet":
        return self._map(lambda m: LayerModulation(m.gamma[index], m.u[index], m.psi[index], m.delta[index]))

    def detach(self) -> "ModulationSet":
        return self._map(lambda m: LayerModulation(m.gamma.detach(), m.u.detach(), m.psi.detach(), m.delta.detach()))


def reconstruct_residual(gamma, u, psi, kernel_size: int) -> torch.Tensor:
    """Outer product ``dphi[i, j, p] = u[i] * gamma[j] * psi[p]``.

    Accepts unbatched vectors or ``(B, d)`` batches; the spatial factor is
    reshaped to ``(k, k)``.
    """
    if psi.shape[-1] != kernel_size * kernel_size:
        raise ConfigurationError(f"spatial factor has {psi.shape[-1]} entries, expected {kernel_size**2}")
    out = torch.einsum("...i,...j,...p->...ijp", u, gamma, psi)
    return out.reshape(*out.shape[:-1], kernel_size, kernel_size)


def scale_modulation(mods: ModulationSet, alpha: float) -> ModulationSet:
    """Adaptation-degree control: ``dphi <- alpha * dphi``, ``delta <- alpha * delta + (1 - alpha)``.

    Only ``psi`` is scaled so the reconstructed residual is exactly linear in
    ``alpha``.
    """
    alpha = float(alpha)
    if not math.isfinite(alpha):
        raise ValueError("alpha must be finite")
    return mods._map(lambda m: LayerModulation(m.gamma, m.u, alpha * m.psi, alpha * m.delta + (1.0 - alpha)))


def interpolate_domains(c_a, c_b, t: float) -> torch.Tensor:
    """Convex blend ``(1 - t) * c_a + t * c_b`` of two condition vectors."""
    t = check_unit_interval(t, "t")
    c_a = torch.as_tensor(c_a, dtype=torch.get_default_dtype()) if not isinstance(c_a, torch.Tensor) else c_a
    c_b = torch.as_tensor(c_b, dtype=c_a.dtype) if not isinstance(c_b, torch.Tensor) else c_b
    if c_a.shape != c_b.shape:
        raise ConfigurationError("condition vectors must have the same shape")
    return (1.0 - t) * c_a + t * c_b


class DomainMapping(nn.Module):
    """MLP from a condition vector to the domain latent (leaky-ReLU, piecewise linear)."""

    def __init__(self, n_domains: int, latent_dim: int, n_layers: int = 2):
        super().__init__()
        dims = [n_domains] + [latent_dim] * n_layers
        self.linears = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        for lin in self.linears:
            nn.init.normal_(lin.weight, std=1.0 / math.sqrt(lin.in_features))
            nn.init.zeros_(lin.bias)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        h = c
        for lin in self.linears:
            h = F.leaky_relu(lin(h), LRELU_SLOPE)
        return h


class LayerHeads(nn.Module):
    """The four affine heads serving one generator layer."""

    def __init__(self, cfg: LayerConfig, latent_dim: int):
        super().__init__()
        self.cfg = cfg
        dims = {"gamma": cfg.c_out, "u": cfg.c_in, "psi": cfg.kernel_size**2, "delta": cfg.c_out}
        self.heads = nn.ModuleDict({name: nn.Linear(latent_dim, d) for name, d in dims.items()})
        with torch.no_grad():
            for name, lin in self.heads.items():
                lin.weight.mul_(INIT_GAIN)  # attenuated default U(-1/sqrt(D), 1/sqrt(D)) init
                lin.bias.fill_(HEAD_BIASES[name])

    def forward(self, v: torch.Tensor) -> LayerModulation:
        return LayerModulation(**{name: lin(v) for name, lin in self.heads.items()})


class AdaptationModule(nn.Module):
    """Hyper-network producing a :class:`ModulationSet` from domain conditions.

    Affine head weights start at ``0.01`` times torch's default linear init with
    head biases ``gamma=1, u=1, psi=0, delta=1``, so the adapted generator
    starts out close to the source generator.
    """

    def __init__(self, n_domains: int, layer_shapes: Sequence[LayerConfig], latent_dim: int = DEFAULT_LATENT_DIM,
                 mapping_layers: int = 2, adapt_to_rgb: bool = ADAPT_TO_RGB, seed: int = 0):
        super().__init__()
        if n_domains < 1:
            raise ConfigurationError("at least one domain is required")
        self.n_domains = n_domains
        self.latent_dim = latent_dim
        self.mapping_layers = mapping_layers
        self.adapt_to_rgb = adapt_to_rgb
        self.layer_shapes = list(layer_shapes)
        self.adapted = [i for i, cfg in enumerate(self.layer_shapes) if is_adapted(cfg, adapt_to_rgb)]
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.mapping = DomainMapping(n_domains, latent_dim, mapping_layers)
            self.layer_heads = nn.ModuleList(LayerHeads(self.layer_shapes[i], latent_dim) for i in self.adapted)

    def map_domain(self, c) -> torch.Tensor:
        c = check_condition(c, self.n_domains).to(self.mapping.linears[0].weight.dtype)
        return self.mapping(c)

    def predict_modulations(self, v: torch.Tensor) -> ModulationSet:
        if v.ndim == 1:
            v = v.unsqueeze(0)
        if v.shape[-1] != self.latent_dim:
            raise ConfigurationError(f"domain latent must have dim {self.latent_dim}")
        entries = [None] * len(self.layer_shapes)
        for i, heads in zip(self.adapted, self.layer_heads):
            entries[i] = heads(v)
        return ModulationSet(entries, self.layer_shapes)

    def forward(self, c) -> ModulationSet:
        return self.predict_modulations(self.map_domain(c))

    def zero_head_weights_(self) -> "AdaptationModule":
        """Force every head weight to zero, leaving the bias-only path."""
        with torch.no_grad():
            for heads in self.layer_heads:
                for lin in heads.heads.values():
                    lin.weight.zero_()
        return self

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def head_params_per_layer(cfg: LayerConfig, latent_dim: int) -> int:
    """Weights plus biases of the four heads of one layer."""
    width = cfg.c_in + 2 * cfg.c_out + cfg.kernel_size**2
    return latent_dim * width + width


def is_adapted(cfg: LayerConfig, adapt_to_rgb: bool = ADAPT_TO_RGB) -> bool:
    return cfg.demodulate or adapt_to_rgb


def expected_adaptation_params(n_domains: int, layer_shapes: Sequence[LayerConfig],
                               latent_dim: int = DEFAULT_LATENT_DIM, mapping_layers: int = 2,
                               adapt_to_rgb: bool = ADAPT_TO_RGB) -> int:
    """Closed-form parameter count of :class:`AdaptationModule`."""
    n = n_domains * latent_dim + latent_dim
    n += (mapping_layers - 1) * (latent_dim * latent_dim + latent_dim)
    return n + sum(head_params_per_layer(cfg, latent_dim) for cfg in layer_shapes if is_adapted(cfg, adapt_to_rgb))


def full_residual_params(cfg: LayerConfig) -> int:
    """Size of a dense weight residual for one layer."""
    return cfg.c_in * cfg.c_out * cfg.kernel_size**2
