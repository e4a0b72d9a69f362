"""Training objectives for multi-domain adaptation.

All per-sample functions return a ``(B,)`` tensor; callers reduce.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

from ._validation import TrainingError

DIRECTION_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    contra: float = 1.0
    mtg: float = 1.0
    identity: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0 or not math.isfinite(value):
                raise ValueError(f"loss weight {name} must be a non-negative finite number")

    @classmethod
    def for_domains(cls, contains_faces: bool) -> "LossWeights":
        """Identity term on (weight 3) only when source and targets both contain faces."""
        return cls(identity=3.0 if contains_faces else 0.0)


@dataclass(frozen=True)
class MTGWeights:
    rec: float = 1.0
    across: float = 1.0
    within: float = 1.0


@dataclass
class LossReport:
    total: float
    contra: float
    mtg: float
    identity: float

    def as_row(self) -> dict:
        return asdict(self)


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Row-wise dot product of unit embeddings."""
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise ValueError("cosine similarity is undefined for zero-norm embeddings")
    return (a * b).sum(dim=-1)


def contrastive_from_embeddings(fake: torch.Tensor, domains: torch.Tensor, positives: torch.Tensor,
                                negatives: torch.Tensor, tau: float = 1.0) -> torch.Tensor:
    """InfoNCE over domains.

    ``fake`` is ``(B, D)``; ``positives`` / ``negatives`` are ``(N, D)``
    embeddings of each domain's training image (negatives augmented);
    ``domains`` holds the ``(B,)`` target index of every fake sample.
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    domains = domains.long()
    l_pos = (fake * positives[domains]).sum(dim=-1)
    l_neg = fake @ negatives.T
    own = F.one_hot(domains, negatives.shape[0]).bool()
    l_neg = l_neg.masked_fill(own, float("-inf"))
    logits = torch.cat([l_pos[:, None], l_neg], dim=1) / tau
    return torch.logsumexp(logits, dim=1) - l_pos / tau


def contrastive_adaptation_loss(fake_images, domains, target_images, encoder, tau=1.0, rng=None,
                                augment_fn=None, augment_positives=False):
    """Contrastive-adaptation loss straight from images.

    ``target_images`` is ``(N, 3, R, R)``, one training image per domain.
    Negatives pass through ``augment_fn(images, rng)`` when given.
    """
    fake = encoder(fake_images)
    neg_images = target_images if augment_fn is None else augment_fn(target_images, rng)
    pos_images = neg_images if augment_positives else target_images
    positives = encoder(pos_images)
    negatives = positives if neg_images is pos_images else encoder(neg_images)
    return contrastive_from_embeddings(fake, torch.as_tensor(domains), positives, negatives, tau)


def _direction_loss(d1: torch.Tensor, d2: torch.Tensor) -> torch.Tensor:
    """``1 - cos(d1, d2)`` with zero-length directions contributing 0."""
    n1, n2 = d1.norm(dim=-1), d2.norm(dim=-1)
    valid = (n1 > DIRECTION_EPS) & (n2 > DIRECTION_EPS)
    n1 = torch.where(valid, n1, torch.ones_like(n1))
    n2 = torch.where(valid, n2, torch.ones_like(n2))
    cos = (d1 * d2).sum(dim=-1) / (n1 * n2)
    return torch.where(valid, 1.0 - cos, torch.zeros_like(cos))


def mtg_terms(e_fake_w, e_src_w, e_fake_wc, e_src_wc, e_target, fake_wc_images, target_images):
    """Reconstruction, across-domain and within-domain terms, each ``(B,)``.

    ``e_*`` are embeddings of: the adapted image at ``w``, the source image
    at ``w``, the adapted and source images at the domain latent ``w_c``,
    and the domain's training image.
    """
    pixel = (fake_wc_images - target_images).abs().flatten(1).mean(dim=1)
    rec = pixel + (1.0 - (e_fake_wc * e_target).sum(dim=-1))
    across = _direction_loss(e_fake_w - e_src_w, e_target - e_src_wc)
    within = _direction_loss(e_fake_w - e_fake_wc, e_src_w - e_src_wc)
    return rec, across, within


def mtg_loss(fake_w, src_w, fake_wc, src_wc, targets, encoder, weights: MTGWeights = MTGWeights()):
    """Reconstruction + directional embedding loss (per-sample ``(B,)``).

    Images are batched ``(B, 3, R, R)``: ``fake_w = G_c(w)``, ``src_w =
    G_src(w)``, ``fake_wc = G_c(w_c)``, ``src_wc = G_src(w_c)`` and
    ``targets = I_c`` for each sample's domain ``c``.
    """
    emb = encoder(torch.cat([fake_w, src_w, fake_wc, src_wc, targets]))
    e = emb.split(fake_w.shape[0])
    rec, across, within = mtg_terms(*e, fake_wc, targets)
    return weights.rec * rec + weights.across * across + weights.within * within


def identity_loss(fake, source, id_encoder) -> torch.Tensor:
    """``1 - cos`` between identity embeddings of adapted and source images."""
    e = id_encoder(torch.cat([fake, source])).split(fake.shape[0])
    return 1.0 - (e[0] * e[1]).sum(dim=-1)


def total_loss(contra, mtg, identity, weights: LossWeights = LossWeights()):
    """Weighted sum of the three (already reduced) terms.

    Returns ``(total_tensor, LossReport)``; raises :class:`TrainingError` on
    a non-finite term.
    """
    terms = {"contra": contra, "mtg": mtg, "identity": identity}
    values = {}
    for name, t in terms.items():
        v = float(t.detach()) if isinstance(t, torch.Tensor) else float(t)
        if not math.isfinite(v):
            raise TrainingError(f"non-finite {name} loss: {v}", {"terms": terms})
        values[name] = v
    total = weights.contra * contra + weights.mtg * mtg + weights.identity * identity
    report = LossReport(
        total=weights.contra * values["contra"] + weights.mtg * values["mtg"] + weights.identity * values["identity"],
        **values,
    )
    return total, report
