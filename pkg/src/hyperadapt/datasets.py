"""Procedural multi-domain image sources and the domain registry."""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ._validation import check_images

SHAPES = ("circle", "square", "star")
TEXTURES = ("flat", "striped", "noisy")
BACKGROUND = -0.2
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


@dataclass(frozen=True)
class ProceduralDomainSpec:
    """Recipe for one procedural domain.

    ``hue`` is a range in [0, 1) (wrapping allowed, e.g. ``(0.97, 1.03)``);
    ``saturation=0`` gives gray shapes.
    """

    name: str
    shape: str = "circle"
    hue: tuple = (0.0, 0.0)
    saturation: float = 0.85
    value: tuple = (0.8, 0.95)
    texture: str = "flat"
    n_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown shape {self.shape!r}; choose from {SHAPES}")
        if self.texture not in TEXTURES:
            raise ValueError(f"unknown texture {self.texture!r}; choose from {TEXTURES}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


def source_spec(n_samples: int = 256, seed: int = 0) -> ProceduralDomainSpec:
    return ProceduralDomainSpec("gray-circles", "circle", saturation=0.0, value=(0.55, 0.95),
                                n_samples=n_samples, seed=seed)


def default_target_specs(n_samples: int = 1, seed: int = 1) -> list[ProceduralDomainSpec]:
    return [
        ProceduralDomainSpec("red-striped-circles", "circle", hue=(0.98, 1.02), texture="striped",
                             n_samples=n_samples, seed=seed),
        ProceduralDomainSpec("blue-squares", "square", hue=(0.60, 0.65), n_samples=n_samples, seed=seed + 1),
        ProceduralDomainSpec("green-stars", "star", hue=(0.30, 0.36), n_samples=n_samples, seed=seed + 2),
        ProceduralDomainSpec("noisy-orange-circles", "circle", hue=(0.07, 0.10), texture="noisy",
                             n_samples=n_samples, seed=seed + 3),
    ]


def _shape_mask(shape: str, xx, yy, radius: float, angle: float, softness: float = 0.75):
    if shape == "circle":
        sdf = np.sqrt(xx**2 + yy**2) - radius
    elif shape == "square":
        c, s = np.cos(angle), np.sin(angle)
        u, v = c * xx + s * yy, -s * xx + c * yy
        sdf = np.maximum(np.abs(u), np.abs(v)) - 0.85 * radius
    else:
        r = np.sqrt(xx**2 + yy**2)
        theta = np.arctan2(yy, xx) + angle
        sdf = r - radius * (0.6 + 0.4 * np.cos(5 * theta))
    return 1.0 / (1.0 + np.exp(sdf / softness))


def _lerp(lo, hi, t):
    return lo + (hi - lo) * t


N_RENDER_UNIFORMS = 8  # centre x, centre y, radius, angle, hue, value, stripe angle, stripe phase


def render_uniforms(spec: ProceduralDomainSpec, u, resolution: int = 32,
                    noise_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Render one image whose random attributes come from ``u`` in [0, 1]^8.

    Only the noisy texture draws further randomness, from ``noise_rng``.
    """
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (N_RENDER_UNIFORMS,):
        raise ValueError(f"expected {N_RENDER_UNIFORMS} uniforms, got shape {u.shape}")
    scale = resolution / 32.0
    coords = np.arange(resolution) + 0.5
    cx = resolution / 2 + _lerp(-2.5, 2.5, u[0]) * scale
    cy = resolution / 2 + _lerp(-2.5, 2.5, u[1]) * scale
    xx, yy = np.meshgrid(coords - cx, coords - cy)
    radius = _lerp(8.5, 11.0, u[2]) * scale
    mask = _shape_mask(spec.shape, xx, yy, radius, _lerp(0, 2 * np.pi, u[3]))

    hue = _lerp(*spec.hue, u[4]) % 1.0
    value = _lerp(*spec.value, u[5])
    rgb = np.array(colorsys.hsv_to_rgb(hue, spec.saturation, value)) * 2.0 - 1.0
    fg = np.broadcast_to(rgb[:, None, None], (3, resolution, resolution)).copy()

    if spec.texture == "striped":
        theta, phase = _lerp(0, np.pi, u[6]), _lerp(0, 2 * np.pi, u[7])
        period = 5.0 * scale
        stripes = np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period + phase)
        t = 0.5 + 0.5 * np.tanh(3.0 * stripes)
        fg = fg * t + (-0.9) * (1.0 - t)
    elif spec.texture == "noisy":
        noise_rng = noise_rng if noise_rng is not None else np.random.default_rng(0)
        fg = fg + noise_rng.normal(0.0, 0.3, size=(1, resolution, resolution))

    img = mask * fg + (1.0 - mask) * BACKGROUND
    return np.clip(img, -1.0, 1.0).astype(np.float32)


def render_image(spec: ProceduralDomainSpec, rng: np.random.Generator, resolution: int = 32) -> np.ndarray:
    return render_uniforms(spec, rng.random(N_RENDER_UNIFORMS), resolution, rng)


def render_from_latents(spec: ProceduralDomainSpec, z: torch.Tensor, resolution: int = 32,
                        seed: int = 0) -> torch.Tensor:
    """Render ``(B, 3, R, R)`` images whose attributes are the normal CDF of ``z[:, :8]``.

    This gives a smooth, deterministic map from standard-normal latents to
    the domain, used to distill the renderer into the source generator.
    """
    if z.ndim != 2 or z.shape[1] < N_RENDER_UNIFORMS:
        raise ValueError(f"z must be (B, >={N_RENDER_UNIFORMS})")
    u = torch.special.ndtr(z[:, :N_RENDER_UNIFORMS].double()).numpy()
    rng = np.random.default_rng(seed)
    return torch.from_numpy(np.stack([render_uniforms(spec, row, resolution, rng) for row in u]))


def render_domain_samples(spec: ProceduralDomainSpec, resolution: int = 32) -> torch.Tensor:
    """Deterministic ``(n_samples, 3, R, R)`` renders in [-1, 1]."""
    rng = np.random.default_rng(spec.seed)
    return torch.from_numpy(np.stack([render_image(spec, rng, resolution) for _ in range(spec.n_samples)]))


@dataclass
class Domain:
    name: str
    index: int
    images: torch.Tensor  # (n, 3, R, R)
    latents: Optional[torch.Tensor] = None  # (n, D_w) inverted latents, one per image
    contains_faces: bool = False

    @property
    def latent(self) -> Optional[torch.Tensor]:
        """The domain's style-mixing latent ``w_c`` (inversion of its first image)."""
        return None if self.latents is None else self.latents[0]


@dataclass
class DomainRegistry:
    """Ordered target domains with dense indices ``0..N-1``."""

    domains: list = field(default_factory=list)

    def __post_init__(self):
        if not self.domains:
            raise ValueError("a registry needs at least one domain")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate domain ids: {dupes}")
        for i, d in enumerate(self.domains):
            if d.index != i:
                raise ValueError("domain indices must be dense and ordered")
        res = {tuple(d.images.shape[1:]) for d in self.domains}
        if len(res) != 1:
            raise ValueError("all domain images must share one resolution")

    def __len__(self) -> int:
        return len(self.domains)

    def __getitem__(self, i) -> Domain:
        return self.domains[i]

    def __iter__(self):
        return iter(self.domains)

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def resolution(self) -> int:
        return int(self.domains[0].images.shape[-1])

    @property
    def has_latents(self) -> bool:
        return all(d.latents is not None for d in self.domains)

    @property
    def contains_faces(self) -> bool:
        return all(d.contains_faces for d in self.domains)

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValueError(f"unknown domain {name!r}; known: {self.names}") from None

    def first_images(self) -> torch.Tensor:
        return torch.stack([d.images[0] for d in self.domains])

    def style_latents(self) -> torch.Tensor:
        """``(N, D_w)`` stack of per-domain ``w_c``."""
        if not self.has_latents:
            raise ValueError("registry latents have not been computed; run inversion first")
        return torch.stack([d.latent for d in self.domains])

    def sample_pairs(self, rng: np.random.Generator) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        """One image (and its latent when available) per domain, uniform within each domain."""
        picks = [int(rng.integers(len(d.images))) for d in self.domains]
        images = torch.stack([d.images[p] for d, p in zip(self.domains, picks)])
        if not self.has_latents:
            return images, None
        return images, torch.stack([d.latents[p] for d, p in zip(self.domains, picks)])


def build_registry(specs: Sequence[ProceduralDomainSpec], resolution: int = 32) -> DomainRegistry:
    if not specs:
        raise ValueError("at least one domain spec is required")
    return DomainRegistry([Domain(s.name, i, render_domain_samples(s, resolution)) for i, s in enumerate(specs)])


def load_image(path, resolution: int) -> torch.Tensor:
    """Center-crop, resize and scale an image file to ``(3, R, R)`` in [-1, 1]."""
    from PIL import Image

    img = Image.open(path).convert("RGB")
    w, h = img.size
    s = min(w, h)
    img = img.crop(((w - s) // 2, (h - s) // 2, (w + s) // 2, (h + s) // 2))
    img = img.resize((resolution, resolution), Image.LANCZOS)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def load_image_folders(root, resolution: int = 32) -> DomainRegistry:
    """One sub-folder per domain, sorted by name; every image file inside is a sample."""
    root = Path(root)
    folders = sorted(p for p in root.iterdir() if p.is_dir())
    domains = []
    for folder in folders:
        files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            continue
        images = torch.stack([load_image(f, resolution) for f in files])
        domains.append(Domain(folder.name, len(domains), check_images(images, resolution)))
    if not domains:
        raise ValueError(f"no image folders found under {root}")
    return DomainRegistry(domains)
