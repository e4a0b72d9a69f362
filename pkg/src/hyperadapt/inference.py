"""Inference-time controls: style mixing, adaptation degree, domain sweeps, inversion."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ._validation import (
    TrainingError,
    check_condition,
    check_images,
    check_latents,
    check_unit_interval,
)
from .hypernet import AdaptationModule, interpolate_domains, scale_modulation
from .synthesis import Generator


def z_from_seed(seed: int, z_dim: int, n: int = 1) -> torch.Tensor:
    """Standard-normal ``(n, z_dim)`` latents from an integer seed."""
    return torch.from_numpy(np.random.default_rng(int(seed)).standard_normal((n, z_dim)).astype(np.float32))


def style_mix(w: torch.Tensor, w_c: torch.Tensor, kappa: float, cutoff: int, n_layers: int) -> torch.Tensor:
    """Per-layer latents: ``w`` below ``cutoff``, ``(1 - kappa) w + kappa w_c`` from it on."""
    kappa = check_unit_interval(kappa, "kappa")
    if not 0 <= cutoff <= n_layers:
        raise ValueError(f"cutoff {cutoff} outside [0, {n_layers}]")
    if w.ndim == 1:
        w = w.unsqueeze(0)
    if w_c.ndim == 1:
        w_c = w_c.unsqueeze(0).expand_as(w)
    w_hat = (1.0 - kappa) * w + kappa * w_c
    coarse = w.unsqueeze(1).expand(-1, cutoff, -1)
    fine = w_hat.unsqueeze(1).expand(-1, n_layers - cutoff, -1)
    return torch.cat([coarse, fine], dim=1)


class AdaptedGenerator:
    """Frozen generator + trained hyper-network + cached domain latents."""

    def __init__(self, generator: Generator, adaptation: AdaptationModule, style_latents: torch.Tensor,
                 domain_names: Optional[Sequence[str]] = None):
        if style_latents.shape[0] != adaptation.n_domains:
            raise ValueError("need one cached latent per domain")
        self.generator = generator.eval()
        self.adaptation = adaptation.eval()
        self.style_latents = style_latents.to(generator.const.dtype)
        self.domain_names = list(domain_names) if domain_names is not None else None

    @property
    def n_domains(self) -> int:
        return self.adaptation.n_domains

    def condition(self, c) -> torch.Tensor:
        """Accept an index, a domain name, a one-hot/soft vector or a batch of them."""
        if isinstance(c, str):
            if self.domain_names is None or c not in self.domain_names:
                raise ValueError(f"unknown domain {c!r}")
            c = self.domain_names.index(c)
        return check_condition(c, self.n_domains).to(self.generator.const.dtype)

    @torch.no_grad()
    def synthesize(self, z, c, alpha: float = 1.0, kappa: float = 1.0, w=None, v=None) -> torch.Tensor:
        """Full pipeline; ``w`` overrides ``mapping(z)`` (e.g. an inverted latent).

        ``v`` overrides the domain latent of ``c`` (used for interpolation in
        the hyper-network's latent space); ``c`` still selects ``w_c``.
        """
        G = self.generator
        if w is None:
            w = G.mapping_forward(z)
        else:
            w = check_latents(w, G.config.w_dim).to(G.const.dtype)
        c = self.condition(c)
        if c.shape[0] not in (1, w.shape[0]):
            raise ValueError("condition batch does not match latent batch")
        if v is None:
            v = self.adaptation.map_domain(c)
        # a shared condition is mapped once and broadcast, so results do not depend on batch size
        if v.ndim == 1 or v.shape[0] == 1:
            v = v.reshape(1, -1).expand(w.shape[0], -1)
        c = c.expand(w.shape[0], -1)
        mods = scale_modulation(self.adaptation.predict_modulations(v), alpha)
        w_c = c @ self.style_latents
        latents = style_mix(w, w_c, kappa, G.config.cutoff, G.num_latents)
        return G.synthesize(latents, mods)

    @torch.no_grad()
    def source(self, z=None, w=None) -> torch.Tensor:
        G = self.generator
        if w is None:
            w = G.mapping_forward(z)
        return G.synthesize(G.broadcast(check_latents(w, G.config.w_dim).to(G.const.dtype)))

    def domain_sweep(self, z, c_a, c_b, steps: int, alpha: float = 1.0, kappa: float = 1.0,
                     space: str = "c") -> list[torch.Tensor]:
        """Images for ``t = 0, 1/(steps-1), ..., 1``.

        ``space="c"`` blends the condition vector; ``space="v"`` blends the
        mapped domain latents instead. ``w_c`` is blended with ``c`` either way.
        """
        if steps < 2:
            raise ValueError("steps must be >= 2")
        if space not in ("c", "v"):
            raise ValueError("space must be 'c' or 'v'")
        c_a, c_b = self.condition(c_a)[0], self.condition(c_b)[0]
        v_a, v_b = self.adaptation.map_domain(c_a), self.adaptation.map_domain(c_b)
        frames = []
        for i in range(steps):
            t = i / (steps - 1)
            c = interpolate_domains(c_a, c_b, t)
            if space == "c" or t in (0, 1):
                frames.append(self.synthesize(z, c, alpha, kappa))
            else:
                frames.append(self.synthesize(z, c, alpha, kappa, v=(1 - t) * v_a + t * v_b))
        return frames

    def translate(self, latents: torch.Tensor, domains=None, alpha: float = 1.0, kappa: float = 1.0):
        """Render inverted latents in every (or the listed) target domain: ``(D, B, 3, R, R)``."""
        domains = range(self.n_domains) if domains is None else domains
        return torch.stack([self.synthesize(None, int(d), alpha, kappa, w=latents) for d in domains])


@dataclass
class InversionResult:
    latents: torch.Tensor  # (B, D_w) or (B, L, D_w) for w+
    pixel_error: torch.Tensor  # (B,) mean absolute error
    embedding_error: torch.Tensor  # (B,) 1 - cosine similarity
    iterations: int

    @property
    def embedding_similarity(self) -> torch.Tensor:
        return 1.0 - self.embedding_error


def invert_image(images, generator: Generator, encoder, steps: int = 500, lr: float = 0.05, seed: int = 0,
                 w_plus: bool = False) -> InversionResult:
    """Recover latents by Adam on ``L1 + (1 - cos)`` starting from the mean ``w``.

    Batched images are optimized jointly; Adam is elementwise, so each image
    follows the same trajectory it would alone.
    """
    G = generator
    dtype = G.const.dtype
    target = check_images(images, G.resolution).to(dtype)
    B = target.shape[0]
    w0 = G.mean_latent(seed=seed)
    w = w0.expand(B, -1).clone()
    if w_plus:
        w = G.broadcast(w).clone()
    w.requires_grad_(True)
    with torch.no_grad():
        e_target = encoder(target)
    opt = torch.optim.Adam([w], lr=lr)

    def losses():
        fake = G.synthesize(w if w_plus else G.broadcast(w))
        pix = (fake - target).abs().flatten(1).mean(dim=1)
        emb = 1.0 - (encoder(fake) * e_target).sum(dim=-1)
        return pix, emb

    for it in range(steps):
        pix, emb = losses()
        loss = (pix + emb).sum()
        if not torch.isfinite(loss):
            raise TrainingError(f"inversion diverged at iteration {it}", {"iteration": it, "pixel": pix.tolist()})
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    with torch.no_grad():
        pix, emb = losses()
    return InversionResult(w.detach(), pix.detach(), emb.detach(), steps)


def invert_registry(registry, generator: Generator, encoder, steps: int = 500, lr: float = 0.05, seed: int = 0):
    """Fill every domain's per-image latents in place; returns the inversion results."""
    results = []
    for domain in registry:
        res = invert_image(domain.images, generator, encoder, steps, lr, seed)
        domain.latents = res.latents.to(torch.float32)
        results.append(res)
    return results


# ---------------------------------------------------------------------------
# image output


def to_uint8(images: torch.Tensor) -> np.ndarray:
    """``(..., 3, H, W)`` in [-1, 1] -> ``(..., H, W, 3)`` uint8."""
    x = ((images.detach().cpu().float().clamp(-1, 1) + 1.0) * 127.5).round().to(torch.uint8)
    return x.movedim(-3, -1).numpy()


def save_grid(cells: Sequence[Sequence[torch.Tensor]], path, meta: Sequence[Sequence[dict]] = None, pad: int = 2):
    """Write rows x columns of ``(3, H, W)`` images as one PNG with a JSON sidecar."""
    from PIL import Image

    rows, cols = len(cells), max(len(r) for r in cells)
    h, w = cells[0][0].shape[-2:]
    canvas = np.full((rows * (h + pad) + pad, cols * (w + pad) + pad, 3), 255, dtype=np.uint8)
    for r, row in enumerate(cells):
        for c, img in enumerate(row):
            y, x = pad + r * (h + pad), pad + c * (w + pad)
            canvas[y:y + h, x:x + w] = to_uint8(img)
    path = Path(path)
    Image.fromarray(canvas).save(path)
    if meta is not None:
        sidecar = {"rows": rows, "cols": cols, "cell_size": [int(h), int(w)], "cells": [list(r) for r in meta]}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
    return path
