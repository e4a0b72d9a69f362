"""Discriminator-free training of the adaptation hyper-network.

The source generator stays frozen; only the hyper-network's parameters
receive Adam updates. All randomness in a step is drawn from a generator
seeded by ``(seed, step)``, which makes a run resumable from any checkpoint
without saving RNG state.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ._validation import TrainingError, check_images, one_hot
from .datasets import DomainRegistry, ProceduralDomainSpec, render_from_latents
from .encoders import EncoderSpec, augment, identity_spec, make_encoder
from .hypernet import ADAPT_TO_RGB, DEFAULT_LATENT_DIM, AdaptationModule
from .losses import LossReport, LossWeights, contrastive_from_embeddings, identity_loss, mtg_terms, total_loss
from .synthesis import Generator

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "total", "contra", "mtg", "identity", "grad_norm")


@dataclass
class TrainingConfig:
    lr: float = 0.002
    beta1: float = 0.0
    beta2: float = 0.99
    batch_size: int = 4
    steps: int = 1000
    tau: float = 1.0
    seed: int = 0
    lambda_contra: float = 1.0
    lambda_mtg: float = 1.0
    # None: 3 when every domain is flagged as containing faces, else 0
    lambda_id: Optional[float] = None
    latent_dim: int = DEFAULT_LATENT_DIM
    mapping_layers: int = 2
    adapt_to_rgb: bool = ADAPT_TO_RGB
    augment_negatives: bool = True
    augment_positives: bool = False
    domain_weights: Optional[list] = None
    encoder: EncoderSpec = field(default_factory=EncoderSpec)

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderSpec.from_dict(self.encoder)
        if self.lr < 0 or self.batch_size < 1 or self.steps < 0 or self.tau <= 0:
            raise ValueError("invalid training configuration")

    def loss_weights(self, registry: DomainRegistry) -> LossWeights:
        lam_id = self.lambda_id
        if lam_id is None:
            lam_id = LossWeights.for_domains(registry.contains_faces).identity
        return LossWeights(self.lambda_contra, self.lambda_mtg, lam_id)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step)])


def sample_batch(n_domains: int, rng: np.random.Generator, batch_size: int, z_dim: int,
                 weights=None) -> tuple[torch.Tensor, np.ndarray]:
    """Standard-normal ``z`` and domain indices drawn with replacement."""
    if n_domains < 1:
        raise ValueError("registry is empty")
    p = None
    if weights is not None:
        p = np.asarray(weights, dtype=np.float64)
        p = p / p.sum()
    domains = rng.choice(n_domains, size=batch_size, replace=True, p=p)
    z = torch.from_numpy(rng.standard_normal((batch_size, z_dim)).astype(np.float32))
    return z, domains


def weights_checksum(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


class Trainer:
    """Owns the hyper-network, its optimizer and the step counter."""

    def __init__(self, generator: Generator, registry: DomainRegistry, config: TrainingConfig = TrainingConfig(),
                 adaptation: Optional[AdaptationModule] = None, encoder=None, id_encoder=None):
        if not registry.has_latents:
            raise ValueError("registry needs cached inverted latents before training")
        self.generator = generator.requires_grad_(False).eval()
        self.registry = registry
        self.config = config
        res = generator.resolution
        self.encoder = encoder if encoder is not None else make_encoder(config.encoder, res)
        self.id_encoder = id_encoder if id_encoder is not None else make_encoder(identity_spec(config.encoder), res)
        dtype = generator.const.dtype
        if adaptation is None:
            adaptation = AdaptationModule(len(registry), generator.layer_shapes(), config.latent_dim,
                                          config.mapping_layers, config.adapt_to_rgb, seed=config.seed)
        if adaptation.n_domains != len(registry):
            raise ValueError(f"adaptation module expects {adaptation.n_domains} domains, registry has {len(registry)}")
        self.adaptation = adaptation.to(dtype)
        self.weights = config.loss_weights(registry)
        self.optimizer = torch.optim.Adam(self.adaptation.parameters(), lr=config.lr,
                                          betas=(config.beta1, config.beta2), eps=1e-8)
        self.step_count = 0
        self._src_wc_cache = {}

    # -- loss -------------------------------------------------------------

    def compute_loss(self, z: torch.Tensor, domains, rng: np.random.Generator):
        """Total objective for one batch; returns ``(total_tensor, LossReport)``."""
        G, enc = self.generator, self.encoder
        dtype = G.const.dtype
        domains = torch.as_tensor(np.asarray(domains), dtype=torch.long)
        targets_all, latents_all = self.registry.sample_pairs(rng)
        targets_all, latents_all = targets_all.to(dtype), latents_all.to(dtype)

        with torch.no_grad():
            w = G.mapping_forward(z.to(dtype))
            src_w = G.synthesize(G.broadcast(w))
            w_c = latents_all[domains]
            src_wc = G.synthesize(G.broadcast(w_c))
            negatives_img = targets_all
            if self.config.augment_negatives:
                negatives_img = augment(targets_all, rng)
            positives_img = negatives_img if self.config.augment_positives else targets_all

        mods = self.adaptation(one_hot(domains.tolist(), len(self.registry), dtype=dtype))
        fake_w = G.synthesize(G.broadcast(w), mods)
        fake_wc = G.synthesize(G.broadcast(w_c), mods)
        targets = targets_all[domains]

        B = z.shape[0]
        emb = enc(torch.cat([fake_w, src_w, fake_wc, src_wc, targets, positives_img, negatives_img]))
        e_fake_w, e_src_w, e_fake_wc, e_src_wc, e_target = emb[: 5 * B].split(B)
        n = len(self.registry)
        e_pos, e_neg = emb[5 * B:5 * B + n], emb[5 * B + n:]

        contra = contrastive_from_embeddings(e_fake_w, domains, e_pos, e_neg, self.config.tau).mean()
        rec, across, within = mtg_terms(e_fake_w, e_src_w, e_fake_wc, e_src_wc, e_target, fake_wc, targets)
        mtg = (rec + across + within).mean()
        if self.weights.identity > 0:
            ident = identity_loss(fake_w, src_w, self.id_encoder).mean()
        else:
            with torch.no_grad():
                ident = identity_loss(fake_w, src_w, self.id_encoder).mean()
        try:
            return total_loss(contra, mtg, ident, self.weights)
        except TrainingError as err:
            err.diagnostics.update(step=self.step_count, domains=domains.tolist())
            raise

    # -- optimization -----------------------------------------------------

    def train_step(self, z=None, domains=None) -> tuple[LossReport, float]:
        rng = step_rng(self.config.seed, self.step_count)
        if z is None:
            z, domains = sample_batch(len(self.registry), rng, self.config.batch_size,
                                      self.generator.config.z_dim, self.config.domain_weights)
        self.optimizer.zero_grad(set_to_none=True)
        loss, report = self.compute_loss(z, domains, rng)
        loss.backward()
        grads = [p.grad for p in self.adaptation.parameters() if p.grad is not None]
        grad_norm = float(torch.sqrt(sum(g.square().sum() for g in grads))) if grads else 0.0
        if not math.isfinite(grad_norm):
            raise TrainingError(f"non-finite gradient at step {self.step_count}",
                                {"step": self.step_count, "domains": np.asarray(domains).tolist(), "report": report})
        self.optimizer.step()
        self.step_count += 1
        return report, grad_norm

    def run(self, steps: Optional[int] = None, log_path=None, checkpoint_fn: Optional[Callable] = None,
            checkpoint_every: int = 0, sample_fn: Optional[Callable] = None, sample_every: int = 0) -> list[dict]:
        """Train ``steps`` more steps (default: up to ``config.steps``)."""
        if steps is None:
            steps = max(self.config.steps - self.step_count, 0)
        rows = []
        writer = fh = None
        if log_path is not None:
            log_path = Path(log_path)
            new = not log_path.exists() or self.step_count == 0
            fh = open(log_path, "w" if new else "a", newline="")
            writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            if new:
                writer.writeheader()
        try:
            for _ in range(steps):
                report, grad_norm = self.train_step()
                row = {"step": self.step_count, **report.as_row(), "grad_norm": grad_norm}
                rows.append(row)
                if writer is not None:
                    writer.writerow(row)
                if self.step_count % 100 == 0:
                    log.info("step %d total %.4f contra %.4f mtg %.4f", self.step_count, report.total,
                             report.contra, report.mtg)
                if checkpoint_fn is not None and checkpoint_every and self.step_count % checkpoint_every == 0:
                    checkpoint_fn(self)
                if sample_fn is not None and sample_every and self.step_count % sample_every == 0:
                    sample_fn(self)
        finally:
            if fh is not None:
                fh.close()
        return rows

    # -- state ------------------------------------------------------------

    def optimizer_arrays(self) -> dict:
        out = {}
        for i, p in enumerate(self.adaptation.parameters()):
            st = self.optimizer.state.get(p)
            if st:
                out[f"{i}/exp_avg"] = st["exp_avg"].detach().clone()
                out[f"{i}/exp_avg_sq"] = st["exp_avg_sq"].detach().clone()
        return out

    def load_optimizer_arrays(self, arrays: dict, step: int) -> None:
        for i, p in enumerate(self.adaptation.parameters()):
            if f"{i}/exp_avg" not in arrays:
                continue
            self.optimizer.state[p] = {
                "step": torch.tensor(float(step)),
                "exp_avg": arrays[f"{i}/exp_avg"].to(p.dtype).clone(),
                "exp_avg_sq": arrays[f"{i}/exp_avg_sq"].to(p.dtype).clone(),
            }
        self.step_count = int(step)


def run_training(config: TrainingConfig, registry: DomainRegistry, generator: Generator, **run_kwargs) -> Trainer:
    """Initialize the hyper-network and train it for ``config.steps`` steps."""
    trainer = Trainer(generator, registry, config)
    trainer.run(config.steps, **run_kwargs)
    return trainer


# ---------------------------------------------------------------------------
# source generator


@dataclass
class PretrainConfig:
    steps: int = 1500
    batch_size: int = 16
    lr: float = 0.002
    seed: int = 0
    embed_weight: float = 1.0


def pretrain_source(generator: Generator, source, config: PretrainConfig = PretrainConfig(),
                    encoder=None) -> list[float]:
    """Fit the source generator by paired reconstruction (pixel L1 + ``1 - cos``).

    ``source`` is either a :class:`ProceduralDomainSpec`, in which case every
    step draws fresh ``z`` and renders its target with
    :func:`render_from_latents` (the generator distills the renderer, so every
    ``z`` maps to a source-domain image), or an image tensor, in which case
    each image is tied to one fixed standard-normal ``z``. Returns the
    per-step loss.
    """
    rng = np.random.default_rng(config.seed)
    dtype = generator.const.dtype
    res, z_dim = generator.resolution, generator.config.z_dim
    procedural = isinstance(source, ProceduralDomainSpec)
    if not procedural:
        images = check_images(source, res).to(dtype)
        z_all = torch.from_numpy(rng.standard_normal((len(images), z_dim))).to(dtype)
    encoder = encoder if encoder is not None else make_encoder(EncoderSpec(), res)
    generator.requires_grad_(True).train()
    opt = torch.optim.Adam(generator.parameters(), lr=config.lr, betas=(0.0, 0.99))
    losses = []
    try:
        for step in range(config.steps):
            if procedural:
                z = torch.from_numpy(rng.standard_normal((config.batch_size, z_dim))).to(dtype)
                target = render_from_latents(source, z, res, seed=config.seed * 100003 + step).to(dtype)
            else:
                idx = torch.from_numpy(rng.choice(len(images), size=min(config.batch_size, len(images)),
                                                  replace=False))
                z, target = z_all[idx], images[idx]
            fake = generator(z)
            emb = encoder(torch.cat([fake, target])).split(len(z))
            loss = (fake - target).abs().mean() + config.embed_weight * (1.0 - (emb[0] * emb[1]).sum(-1)).mean()
            if not torch.isfinite(loss):
                raise TrainingError(f"pretraining diverged at step {step}", {"step": step})
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            losses.append(float(loss.detach()))
    finally:
        generator.requires_grad_(False).eval()
    return losses
