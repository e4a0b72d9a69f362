"""Image embedding encoders and the training-time augmentation.

The toy encoder is a frozen, fixed-seed random convolutional network used
in place of a large pretrained image encoder. Images are first rotated into
an opponent colour basis (luminance plus two chroma axes) and contrast
normalized, then passed through strided ``tanh`` convolutions whose
globally pooled responses are projected and L2-normalized. Every stage is
odd-symmetric, so embeddings of distinct images spread over the whole
sphere instead of collapsing into one cone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ._validation import check_images

_S2, _S6 = math.sqrt(2.0), math.sqrt(6.0)
OPPONENT = torch.tensor(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [1 / _S2, -1 / _S2, 0.0],
        [1 / _S6, 1 / _S6, -2 / _S6],
    ]
)


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "toy"
    dim: int = 64
    seed: int = 0
    widths: tuple = (32, 64, 128)
    input_gain: float = 3.0
    luminance_weight: float = 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        d = dict(d)
        d["widths"] = tuple(d.get("widths", cls.widths))
        return cls(**d)


class ToyEncoder(nn.Module):
    """Deterministic, differentiable image -> unit-vector map."""

    def __init__(self, spec: EncoderSpec = EncoderSpec(), resolution: int | None = None):
        super().__init__()
        self.spec = spec
        self.resolution = resolution
        g = torch.Generator().manual_seed(spec.seed)
        c_in = 3
        for i, width in enumerate(spec.widths):
            w = torch.randn(width, c_in, 3, 3, generator=g) / math.sqrt(c_in * 9)
            self.register_buffer(f"conv{i}", w)
            c_in = width
        n_feat = sum(spec.widths)
        self.register_buffer("projection", torch.randn(spec.dim, n_feat, generator=g) / math.sqrt(n_feat))
        gain = torch.tensor([spec.luminance_weight, 1.0, 1.0]) * spec.input_gain
        self.register_buffer("color", OPPONENT * gain[:, None])

    @property
    def dim(self) -> int:
        return self.spec.dim

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        images = check_images(images, self.resolution)
        x = torch.einsum("oc,bchw->bohw", self.color.to(images.dtype), images)
        x = x - x.mean(dim=(2, 3), keepdim=True)
        feats = []
        for i in range(len(self.spec.widths)):
            x = torch.tanh(F.conv2d(x, getattr(self, f"conv{i}").to(x.dtype), stride=2, padding=1))
            feats.append(x.mean(dim=(2, 3)))
        e = torch.cat(feats, dim=1) @ self.projection.to(x.dtype).T
        return F.normalize(e, dim=1, eps=1e-12)


class CallableEncoder(nn.Module):
    """Adapter turning any ``images -> embeddings`` callable into an encoder.

    Outputs are re-normalized, so the wrapped function need not return unit
    vectors.
    """

    def __init__(self, fn: Callable[[torch.Tensor], torch.Tensor], dim: int):
        super().__init__()
        self.fn = fn
        self._dim = dim

    @property
    def dim(self) -> int:
        return self._dim

    def forward(self, images):
        return F.normalize(self.fn(check_images(images)), dim=1, eps=1e-12)


class CompositeEncoder(nn.Module):
    """Concatenation of unit embeddings scaled by ``1/sqrt(K)``.

    The dot product of two composite embeddings is the mean of the member
    encoders' cosine similarities, and the result stays unit-norm.
    """

    def __init__(self, encoders: Sequence[nn.Module]):
        super().__init__()
        if not encoders:
            raise ValueError("at least one encoder is required")
        self.members = nn.ModuleList(encoders)

    @property
    def dim(self) -> int:
        return sum(m.dim for m in self.members)

    def forward(self, images):
        scale = 1.0 / math.sqrt(len(self.members))
        return torch.cat([m(images) for m in self.members], dim=1) * scale


def make_encoder(spec: EncoderSpec, resolution: int | None = None) -> nn.Module:
    if spec.kind != "toy":
        raise ValueError(f"encoder kind {spec.kind!r} needs an explicit adapter; wrap it with CallableEncoder")
    return ToyEncoder(spec, resolution).requires_grad_(False)


def identity_spec(spec: EncoderSpec) -> EncoderSpec:
    """Spec of the identity-embedding encoder paired with ``spec`` (independent weights)."""
    return EncoderSpec(**{**asdict(spec), "seed": spec.seed + 7919})


def augment(images: torch.Tensor, rng: np.random.Generator, flip_prob: float = 0.5,
            jitter: float = 1.0) -> torch.Tensor:
    """Random horizontal flip and colour jitter, clamped to [-1, 1].

    At ``jitter=1`` the brightness factor is U(0.8, 1.25), the additive
    shift U(-0.1, 0.1) and the per-channel saturation factor U(0.8, 1.25);
    ``jitter`` scales each range about its identity value.
    """
    single = images.ndim == 3
    x = check_images(images)
    out = []
    for img in x:
        if flip_prob > 0 and rng.random() < flip_prob:
            img = img.flip(-1)
        if jitter > 0:
            bright = rng.uniform(1 - 0.2 * jitter, 1 + 0.25 * jitter)
            shift = rng.uniform(-0.1 * jitter, 0.1 * jitter)
            sat = torch.as_tensor(rng.uniform(1 - 0.2 * jitter, 1 + 0.25 * jitter, size=3), dtype=img.dtype)
            img = img * bright + shift
            mean = img.mean(dim=0, keepdim=True)
            img = (mean + (img - mean) * sat[:, None, None]).clamp(-1.0, 1.0)
        out.append(img)
    out = torch.stack(out)
    return out[0] if single else out
