"""Input validation helpers shared by the public API."""

from __future__ import annotations

import numpy as np
import torch


class ConfigurationError(ValueError):
    """Raised when tensor shapes or model configuration do not line up."""


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class CheckpointError(IOError):
    """Raised when a checkpoint archive cannot be loaded faithfully."""


def as_tensor(x, dtype=None):
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype or torch.get_default_dtype())


def check_finite(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise ConfigurationError(f"{name} contains non-finite entries")
    return x


def check_images(images, resolution: int | None = None, name: str = "images") -> torch.Tensor:
    """Return `images` as a (B, 3, H, W) tensor, promoting a single (3, H, W) image."""
    images = as_tensor(images)
    if images.ndim == 3:
        images = images.unsqueeze(0)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ValueError(f"{name} must have shape (B, 3, H, W) or (3, H, W), got {tuple(images.shape)}")
    if resolution is not None and (images.shape[2] != resolution or images.shape[3] != resolution):
        raise ValueError(
            f"{name} must be {resolution}x{resolution}, got {images.shape[2]}x{images.shape[3]}"
        )
    return images


def check_latents(x, dim: int, name: str = "latent") -> torch.Tensor:
    """Return `x` as a (B, dim) tensor, promoting a single vector."""
    x = as_tensor(x)
    if x.ndim == 1:
        x = x.unsqueeze(0)
    if x.ndim != 2 or x.shape[1] != dim:
        raise ConfigurationError(f"{name} must have trailing dimension {dim}, got shape {tuple(x.shape)}")
    return check_finite(x, name)


def check_condition(c, n_domains: int, atol: float = 1e-6) -> torch.Tensor:
    """Validate a (batch of) domain condition vector(s).

    Integers are expanded to one-hot rows. Soft vectors must be
    non-negative and sum to one.
    """
    if isinstance(c, (int, np.integer)):
        c = [int(c)]
        return one_hot(c, n_domains)
    if isinstance(c, (list, tuple, np.ndarray)) and np.asarray(c).dtype.kind in "iu":
        return one_hot(np.asarray(c).reshape(-1).tolist(), n_domains)
    c = as_tensor(c)
    if not torch.is_floating_point(c):
        return one_hot(c.reshape(-1).tolist(), n_domains)
    if c.ndim == 1:
        c = c.unsqueeze(0)
    if c.ndim != 2 or c.shape[1] != n_domains:
        raise ConfigurationError(f"condition must have length {n_domains}, got shape {tuple(c.shape)}")
    if (c < 0).any() or not torch.allclose(c.sum(dim=1), torch.ones((), dtype=c.dtype), atol=atol):
        raise ValueError("condition vectors must be non-negative and sum to 1")
    return c


def one_hot(indices, n_domains: int, dtype=None) -> torch.Tensor:
    indices = [int(i) for i in indices]
    for i in indices:
        if not 0 <= i < n_domains:
            raise ValueError(f"domain index {i} out of range for {n_domains} domains")
    out = torch.zeros(len(indices), n_domains, dtype=dtype or torch.get_default_dtype())
    out[torch.arange(len(indices)), torch.tensor(indices, dtype=torch.long)] = 1.0
    return out


def check_unit_interval(value: float, name: str) -> float:
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value
