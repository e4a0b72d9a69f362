"""scikit-learn style wrappers around the pipeline.

Images go in and come out as ``(n, 3, R, R)`` float arrays in [-1, 1].
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .datasets import Domain, DomainRegistry, source_spec
from .encoders import EncoderSpec, make_encoder
from .inference import AdaptedGenerator, invert_image, z_from_seed
from .synthesis import Generator, SynthesisConfig
from .training import PretrainConfig, Trainer, TrainingConfig, pretrain_source


def _check_images(X, resolution: Optional[int] = None) -> torch.Tensor:
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1] != 3:
        raise ValueError(f"expected images shaped (n, 3, H, W), got {X.shape}")
    if resolution is not None and X.shape[-2:] != (resolution, resolution):
        raise ValueError(f"expected {resolution}x{resolution} images, got {X.shape[-2]}x{X.shape[-1]}")
    if not np.isfinite(X).all():
        raise ValueError("images contain non-finite values")
    return torch.from_numpy(np.ascontiguousarray(X))


def _numpy(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().numpy()


def _generator(obj) -> Generator:
    if isinstance(obj, Generator):
        return obj
    if isinstance(obj, SourceGenerator):
        check_is_fitted(obj, "generator_")
        return obj.generator_
    raise TypeError("generator must be a Generator or a fitted SourceGenerator")


class SourceGenerator(BaseEstimator):
    """Pretrain a toy source generator on images (or the procedural source domain)."""

    def __init__(self, channels=(64, 64, 32, 16), z_dim: int = 64, w_dim: int = 64, steps: int = 1500,
                 batch_size: int = 16, lr: float = 0.002, seed: int = 0, encoder_seed: int = 0):
        self.channels = channels
        self.z_dim = z_dim
        self.w_dim = w_dim
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.encoder_seed = encoder_seed

    def fit(self, X=None, y=None):
        cfg = SynthesisConfig(z_dim=self.z_dim, w_dim=self.w_dim, channels=tuple(self.channels))
        G = Generator(cfg, seed=self.seed)
        source = source_spec() if X is None else _check_images(X, G.resolution)
        encoder = make_encoder(EncoderSpec(seed=self.encoder_seed), G.resolution)
        self.loss_curve_ = pretrain_source(G, source, PretrainConfig(self.steps, self.batch_size, self.lr, self.seed),
                                           encoder)
        self.generator_ = G
        return self

    def generate(self, n: int = 1, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "generator_")
        with torch.no_grad():
            return _numpy(self.generator_(z_from_seed(seed, self.z_dim, n)))


class LatentInverter(TransformerMixin, BaseEstimator):
    """Images -> latents by optimization through a frozen generator."""

    def __init__(self, generator=None, steps: int = 500, lr: float = 0.05, seed: int = 0, w_plus: bool = False,
                 encoder_seed: int = 0):
        self.generator = generator
        self.steps = steps
        self.lr = lr
        self.seed = seed
        self.w_plus = w_plus
        self.encoder_seed = encoder_seed

    def fit(self, X=None, y=None):
        self.generator_ = _generator(self.generator)
        self.encoder_ = make_encoder(EncoderSpec(seed=self.encoder_seed), self.generator_.resolution)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "generator_")
        res = invert_image(_check_images(X, self.generator_.resolution), self.generator_, self.encoder_,
                           self.steps, self.lr, self.seed, self.w_plus)
        self.pixel_error_ = _numpy(res.pixel_error)
        self.embedding_similarity_ = _numpy(res.embedding_similarity)
        return _numpy(res.latents)

    def inverse_transform(self, latents) -> np.ndarray:
        check_is_fitted(self, "generator_")
        G = self.generator_
        w = torch.as_tensor(np.asarray(latents, dtype=np.float32))
        with torch.no_grad():
            return _numpy(G.synthesize(w if w.ndim == 3 else G.broadcast(w)))


class MultiDomainAdapter(BaseEstimator):
    """Train one hyper-network over every labelled target domain.

    ``fit(X, y)`` groups images by label (sorted), inverts them through the
    source generator and trains the hyper-network. ``predict`` assigns an
    image to the domain whose first training image it is most similar to in
    embedding space.
    """

    def __init__(self, generator=None, steps: int = 1000, lr: float = 0.002, batch_size: int = 4, seed: int = 0,
                 latent_dim: int = 64, tau: float = 1.0, lambda_mtg: float = 1.0, lambda_id: Optional[float] = None,
                 inversion_steps: int = 500, encoder_seed: int = 0):
        self.generator = generator
        self.steps = steps
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.latent_dim = latent_dim
        self.tau = tau
        self.lambda_mtg = lambda_mtg
        self.lambda_id = lambda_id
        self.inversion_steps = inversion_steps
        self.encoder_seed = encoder_seed

    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(lr=self.lr, batch_size=self.batch_size, steps=self.steps, tau=self.tau, seed=self.seed,
                              lambda_mtg=self.lambda_mtg, lambda_id=self.lambda_id, latent_dim=self.latent_dim,
                              encoder=EncoderSpec(seed=self.encoder_seed))

    def fit(self, X, y):
        G = _generator(self.generator)
        X = _check_images(X, G.resolution)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} images but y has {len(y)} labels")
        self.classes_ = np.unique(y)
        encoder = make_encoder(EncoderSpec(seed=self.encoder_seed), G.resolution)
        domains = []
        for i, label in enumerate(self.classes_):
            images = X[y == label]
            inv = invert_image(images, G, encoder, self.inversion_steps, 0.05, self.seed)
            domains.append(Domain(str(label), i, images, inv.latents))
        self.registry_ = DomainRegistry(domains)
        self.trainer_ = Trainer(G, self.registry_, self._training_config(), encoder=encoder)
        self.history_ = self.trainer_.run(self.steps)
        self.model_ = AdaptedGenerator(G, self.trainer_.adaptation, self.registry_.style_latents(),
                                       self.registry_.names)
        self.encoder_ = encoder
        return self

    def _index(self, domain) -> int:
        matches = np.flatnonzero(self.classes_ == domain)
        if len(matches) == 0:
            if isinstance(domain, (int, np.integer)) and 0 <= domain < len(self.classes_) \
                    and not np.issubdtype(self.classes_.dtype, np.integer):
                return int(domain)
            raise ValueError(f"unknown domain {domain!r}; known: {list(self.classes_)}")
        return int(matches[0])

    def generate(self, n: int = 1, domain=None, alpha: float = 1.0, kappa: float = 1.0, seed: int = 0) -> np.ndarray:
        check_is_fitted(self, "model_")
        d = self._index(self.classes_[0] if domain is None else domain)
        z = z_from_seed(seed, self.model_.generator.config.z_dim, n)
        return _numpy(self.model_.synthesize(z, d, alpha, kappa))

    def transform(self, X, domain=None, alpha: float = 1.0, kappa: float = 1.0) -> np.ndarray:
        """Invert ``X`` and render it in ``domain`` (or every domain, stacked first)."""
        check_is_fitted(self, "model_")
        G = self.model_.generator
        inv = invert_image(_check_images(X, G.resolution), G, self.encoder_, self.inversion_steps, 0.05, self.seed)
        domains = None if domain is None else [self._index(domain)]
        out = _numpy(self.model_.translate(inv.latents, domains, alpha, kappa))
        return out if domain is None else out[0]

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = _check_images(X, self.model_.generator.resolution)
        with torch.no_grad():
            sims = self.encoder_(X) @ self.encoder_(self.registry_.first_images()).T
        return self.classes_[_numpy(sims.argmax(dim=1))]

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
