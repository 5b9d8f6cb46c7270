"""Adversarial, conditioning-augmentation and text-image matching losses."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

LOG_FLOOR = 1e-12


def _log_prob(logits: Tensor) -> Tensor:
    return ad.log(ad.sigmoid(logits), floor=LOG_FLOOR)


def _log_one_minus(logits: Tensor) -> Tensor:
    return ad.log(1.0 - ad.sigmoid(logits), floor=LOG_FLOOR)


def generator_adv_from_logits(uncond: Tensor, cond: Tensor) -> Tensor:
    """-½ [E log D(x) + E log D(x, s)] over a batch of fake-image logits."""
    return (ad.mean(_log_prob(uncond)) + ad.mean(_log_prob(cond))) * -0.5


def discriminator_from_logits(real_uncond: Tensor, fake_uncond: Tensor, real_cond: Tensor,
                              fake_cond: Tensor, wrong_cond: Tensor = None) -> Tensor:
    """-½ [log D(x_r) + log(1−D(x_f)) + log D(x_r, s) + log(1−D(x_f, s))], batch-averaged.

    ``wrong_cond`` (logits for real images paired with mismatched captions)
    is optional; when given, the fake-conditional term becomes the average of
    the fake and mismatched terms.
    """
    fake_term = ad.mean(_log_one_minus(fake_cond))
    if wrong_cond is not None:
        fake_term = (fake_term + ad.mean(_log_one_minus(wrong_cond))) * 0.5
    total = (ad.mean(_log_prob(real_uncond)) + ad.mean(_log_one_minus(fake_uncond))
             + ad.mean(_log_prob(real_cond)) + fake_term)
    return total * -0.5


def generator_adv_loss(disc, x_fake: Tensor, cond) -> Tensor:
    return generator_adv_from_logits(*disc(x_fake, cond))


def discriminator_loss(disc, x_real, x_fake, cond, wrong_cond=None) -> Tensor:
    """Fake images should be detached by the caller when only D is being trained."""
    ru, rc = disc(x_real, cond)
    fu, fc = disc(x_fake, cond)
    wc = disc(x_real, wrong_cond)[1] if wrong_cond is not None else None
    return discriminator_from_logits(ru, fu, rc, fc, wc)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    # eps acts as a norm floor so rescaling a non-degenerate vector is exact to rounding
    return x / ad.sqrt(ad.sum(x * x, axis=-1, keepdims=True) + eps * eps)


def cosine_similarity_matrix(a, b) -> Tensor:
    """B×B matrix of cosines between rows of ``a`` and rows of ``b``."""
    a, b = ad.as_tensor(a), ad.as_tensor(b)
    return ad.matmul(l2_normalize(a), ad.transpose(l2_normalize(b)))


def match_loss_from_similarity(sim: Tensor) -> Tensor:
    """Symmetric cross-entropy with the diagonal as the correct class."""
    sim = ad.as_tensor(sim)
    B = sim.shape[0]
    if B < 2:
        raise ContractError("matching loss needs at least 2 pairs (negatives)")
    idx = (np.arange(B), np.arange(B))
    rows = ad.mean(ad.getitem(ad.log_softmax(sim, axis=1), idx))
    cols = ad.mean(ad.getitem(ad.log_softmax(sim, axis=0), idx))
    return (rows + cols) * -1.0


def match_loss(image_emb, sentence_emb, gamma: float = 10.0) -> Tensor:
    """Sentence-level contrastive image/caption matching loss.

    Fills the text-image matching slot of the generator objective. Only the
    global embeddings are compared; there is no word-region attention.
    """
    return match_loss_from_similarity(cosine_similarity_matrix(image_emb, sentence_emb) * gamma)


def matching_loss(images, tokens, text_encoder, image_encoder, gamma: float = 10.0) -> Tensor:
    _, sentence = text_encoder(tokens)
    return match_loss(image_encoder(images), sentence, gamma)


def total_generator_loss(adv_losses: Sequence, ca_loss, match, lambda_ca: float = 1.0,
                         lambda_match: float = 5.0):
    if lambda_ca < 0 or lambda_match < 0:
        raise ContractError("loss weights must be non-negative")
    total = ad.as_tensor(adv_losses[0])
    for part in adv_losses[1:]:
        total = total + part
    return total + ad.as_tensor(ca_loss) * lambda_ca + ad.as_tensor(match) * lambda_match


@dataclass
class LossReport:
    step: int
    g_adv: List[float] = field(default_factory=list)
    d_loss: List[float] = field(default_factory=list)
    ca_loss: float = 0.0
    match_loss: float = 0.0
    total: float = 0.0
    encoder_match_loss: float = 0.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)
