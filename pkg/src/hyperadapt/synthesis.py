"""Modulation-aware style generator.

A small StyleGAN2-flavoured generator: an MLP maps ``z`` to ``w``, and a
stack of modulated/demodulated convolutions renders an image from a learned
constant. Every modulated layer optionally accepts a per-sample weight
residual and filter-wise scale, which is how the adaptation hyper-network
steers the frozen weights.

Filter tensors use the layout ``(C_in, C_out, k, k)`` throughout.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from torch import nn

from ._validation import ConfigurationError, check_latents

DEMOD_EPS = 1e-8
LRELU_SLOPE = 0.2


@dataclass(frozen=True)
class LayerConfig:
    c_in: int
    c_out: int
    kernel_size: int
    resolution: int
    upsample: bool = False
    demodulate: bool = True


@dataclass(frozen=True)
class SynthesisConfig:
    """Architecture of the toy generator.

    ``channels[b]`` is the width of resolution block ``b`` (4x4, 8x8, ...).
    The first block holds ``first_block_convs`` convolutions, later blocks
    hold ``block_convs`` with the first of them upsampling. A final 1x1
    to-RGB layer (modulated, not demodulated) closes the stack.
    """

    z_dim: int = 64
    w_dim: int = 64
    channels: tuple = (64, 64, 32, 16)
    kernel_size: int = 3
    mapping_layers: int = 2
    first_block_convs: int = 1
    block_convs: int = 2
    fine_blocks: int = 2
    fine_cutoff: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if not self.channels:
            raise ConfigurationError("channels must contain at least one block")
        if self.kernel_size % 2 != 1:
            raise ConfigurationError("kernel_size must be odd for same padding")
        if self.fine_cutoff is not None and not 0 <= self.fine_cutoff < self.n_layers:
            raise ConfigurationError(f"fine_cutoff must lie in [0, {self.n_layers})")

    @property
    def resolution(self) -> int:
        return 4 * 2 ** (len(self.channels) - 1)

    @property
    def layers(self) -> list[LayerConfig]:
        out = []
        c_prev = self.channels[0]
        for b, c in enumerate(self.channels):
            res = 4 * 2**b
            n = self.first_block_convs if b == 0 else self.block_convs
            for i in range(n):
                out.append(LayerConfig(c_prev, c, self.kernel_size, res, upsample=(b > 0 and i == 0)))
                c_prev = c
        out.append(LayerConfig(c_prev, 3, 1, self.resolution, demodulate=False))
        return out

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def cutoff(self) -> int:
        """Index of the first fine-scale layer (style-mixing boundary)."""
        if self.fine_cutoff is not None:
            return self.fine_cutoff
        first_fine_res = 4 * 2 ** max(len(self.channels) - self.fine_blocks, 0)
        for i, layer in enumerate(self.layers):
            if layer.resolution >= first_fine_res:
                return i
        return self.n_layers - 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# functional primitives


def modulate(phi: torch.Tensor, styles: torch.Tensor) -> torch.Tensor:
    """Scale input channel ``i`` of ``phi`` by ``styles[..., i]``.

    ``phi`` is ``(C_in, C_out, k, k)`` or batched ``(B, C_in, C_out, k, k)``;
    ``styles`` is ``(C_in,)`` or ``(B, C_in)``.
    """
    if styles.shape[-1] != phi.shape[-4]:
        raise ConfigurationError(f"style dim {styles.shape[-1]} != C_in {phi.shape[-4]}")
    return phi * styles[..., :, None, None, None]


def demodulate(phi: torch.Tensor, eps: float = DEMOD_EPS) -> torch.Tensor:
    """Normalize every output filter to unit energy (sum over C_in and space)."""
    norm = torch.rsqrt(phi.square().sum(dim=(-4, -2, -1), keepdim=True) + eps)
    return phi * norm


def effective_filter(phi, styles, delta_phi=None, delta=None, demod=True):
    """``delta * f(phi + delta_phi, styles)`` with ``f = Demod o Mod``.

    Returns a batched filter ``(B, C_in, C_out, k, k)``. Passing ``None`` for
    both modulation terms gives the unadapted filter via the same op order,
    so a zero residual and unit scale reproduce it bit-for-bit.
    """
    if styles.ndim == 1:
        styles = styles.unsqueeze(0)
    weight = phi.unsqueeze(0)
    if delta_phi is not None:
        if delta_phi.ndim == 4:
            delta_phi = delta_phi.unsqueeze(0)
        if delta_phi.shape[-4:] != phi.shape:
            raise ConfigurationError(f"residual shape {tuple(delta_phi.shape)} does not match filter {tuple(phi.shape)}")
        weight = weight + delta_phi
    weight = modulate(weight, styles)
    if demod:
        weight = demodulate(weight)
    if delta is not None:
        if delta.ndim == 1:
            delta = delta.unsqueeze(0)
        if delta.shape[-1] != phi.shape[1]:
            raise ConfigurationError(f"filter scale dim {delta.shape[-1]} != C_out {phi.shape[1]}")
        weight = weight * delta[:, None, :, None, None]
    return weight


def batched_conv(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Same-padded convolution with a separate filter per batch element.

    ``x`` is ``(B, C_in, H, W)``; ``weight`` is ``(B, C_in, C_out, k, k)`` or
    ``(1, ...)`` to broadcast one filter over the batch.
    """
    B, c_in, H, W = x.shape
    if weight.shape[1] != c_in:
        raise ConfigurationError(f"input has {c_in} channels, filter expects {weight.shape[1]}")
    if weight.shape[0] == 1 and B > 1:
        weight = weight.expand(B, -1, -1, -1, -1)
    _, _, c_out, kh, kw = weight.shape
    w = weight.transpose(1, 2).reshape(B * c_out, c_in, kh, kw)
    y = F.conv2d(x.reshape(1, B * c_in, H, W), w, padding=kh // 2, groups=B)
    return y.reshape(B, c_out, H, W)


def conv_forward(x, phi, bias, styles, demod=True):
    """Base modulated convolution: ``x * f(phi, A(w)) + b``."""
    return _apply(x, effective_filter(phi, styles, demod=demod), bias)


def conv_forward_adapted(x, phi, delta_phi, delta, bias, styles, demod=True):
    """Adapted convolution: ``x * (delta . f(phi + delta_phi, A(w))) + b``."""
    return _apply(x, effective_filter(phi, styles, delta_phi, delta, demod=demod), bias)


def _apply(x, weight, bias):
    return batched_conv(x, weight) + bias[None, :, None, None]


# ---------------------------------------------------------------------------
# modules


class MappingNetwork(nn.Module):
    """MLP from ``z`` to ``w``; ``activation=None`` makes it linear."""

    def __init__(self, z_dim: int, w_dim: int, n_layers: int = 2, activation: Optional[str] = "lrelu"):
        super().__init__()
        dims = [z_dim] + [w_dim] * n_layers
        self.linears = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.activation = activation
        self.z_dim = z_dim
        for lin in self.linears:
            nn.init.normal_(lin.weight, std=1.0 / math.sqrt(lin.in_features))
            nn.init.zeros_(lin.bias)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = z
        for lin in self.linears:
            h = lin(h)
            if self.activation == "lrelu":
                h = F.leaky_relu(h, LRELU_SLOPE)
        return h


class ModulatedConv2d(nn.Module):
    def __init__(self, cfg: LayerConfig, w_dim: int):
        super().__init__()
        self.cfg = cfg
        k = cfg.kernel_size
        std = 1.0 if cfg.demodulate else 1.0 / math.sqrt(cfg.c_in)
        self.weight = nn.Parameter(torch.randn(cfg.c_in, cfg.c_out, k, k) * std)
        self.bias = nn.Parameter(torch.zeros(cfg.c_out))
        self.affine = nn.Linear(w_dim, cfg.c_in)
        nn.init.normal_(self.affine.weight, std=1.0 / math.sqrt(w_dim))
        nn.init.ones_(self.affine.bias)

    def forward(self, x, w, delta_phi=None, delta=None):
        if self.cfg.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        styles = self.affine(w)
        weight = effective_filter(self.weight, styles, delta_phi, delta, demod=self.cfg.demodulate)
        return _apply(x, weight, self.bias)


class Generator(nn.Module):
    """Frozen source generator with optional per-layer adaptation inputs."""

    def __init__(self, config: SynthesisConfig = SynthesisConfig(), seed: int = 0):
        super().__init__()
        self.config = config
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.mapping = MappingNetwork(config.z_dim, config.w_dim, config.mapping_layers)
            self.const = nn.Parameter(torch.randn(config.channels[0], 4, 4))
            self.layers = nn.ModuleList(ModulatedConv2d(lc, config.w_dim) for lc in config.layers)

    @property
    def num_latents(self) -> int:
        return len(self.layers)

    @property
    def resolution(self) -> int:
        return self.config.resolution

    def mapping_forward(self, z) -> torch.Tensor:
        z = check_latents(z, self.config.z_dim, "z").to(self.const.dtype)
        return self.mapping(z)

    def broadcast(self, w: torch.Tensor) -> torch.Tensor:
        """Repeat a ``(B, D_w)`` latent for every layer: ``(B, L, D_w)``."""
        return w.unsqueeze(1).expand(-1, self.num_latents, -1)

    def _stack_latents(self, latents) -> torch.Tensor:
        if isinstance(latents, (list, tuple)):
            latents = torch.stack([check_latents(w, self.config.w_dim, "w") for w in latents], dim=1)
        if latents.ndim == 2:
            latents = latents.unsqueeze(0)
        if latents.ndim != 3 or latents.shape[1] != self.num_latents or latents.shape[2] != self.config.w_dim:
            raise ConfigurationError(
                f"expected {self.num_latents} per-layer latents of dim {self.config.w_dim}, got {tuple(latents.shape)}"
            )
        return latents

    def synthesize(self, latents, mods=None) -> torch.Tensor:
        """Render images from per-layer latents ``(B, L, D_w)``.

        ``mods`` is a :class:`~hyperadapt.hypernet.ModulationSet` or ``None``
        for the unadapted source generator.
        """
        latents = self._stack_latents(latents)
        if mods is not None and len(mods) != self.num_latents:
            raise ConfigurationError(f"modulation set has {len(mods)} layers, generator has {self.num_latents}")
        x = self.const.unsqueeze(0).expand(latents.shape[0], -1, -1, -1)
        for i, layer in enumerate(self.layers):
            delta_phi = delta = None
            if mods is not None:
                delta_phi, delta = mods.residual(i), mods.delta(i)
            x = layer(x, latents[:, i], delta_phi, delta)
            if layer.cfg.demodulate:
                x = F.leaky_relu(x, LRELU_SLOPE)
        return torch.tanh(x)

    def forward(self, z, mods=None) -> torch.Tensor:
        return self.synthesize(self.broadcast(self.mapping_forward(z)), mods)

    def mean_latent(self, n: int = 4096, seed: int = 0) -> torch.Tensor:
        g = torch.Generator().manual_seed(seed)
        z = torch.randn(n, self.config.z_dim, generator=g, dtype=self.const.dtype)
        with torch.no_grad():
            return self.mapping_forward(z).mean(dim=0)

    def layer_shapes(self) -> Sequence[LayerConfig]:
        return [layer.cfg for layer in self.layers]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def expected_generator_params(config: SynthesisConfig) -> int:
    """Closed-form parameter count of :class:`Generator`."""
    n = config.z_dim * config.w_dim + config.w_dim
    n += (config.mapping_layers - 1) * (config.w_dim * config.w_dim + config.w_dim)
    n += config.channels[0] * 16
    for lc in config.layers:
        n += lc.c_in * lc.c_out * lc.kernel_size**2 + lc.c_out + config.w_dim * lc.c_in + lc.c_in
    return n
