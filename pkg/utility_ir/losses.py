"""
Training objectives.

Severity supervision comes in four regimes for the loss ablation:
  none   - no severity loss
  mrl    - standard margin ranking loss (ordering only)
  mqrl   - marginal quality ranking loss (ordering and interval)
  direct - squared-error regression of the quality score
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import LossWeights, TrainConfig
from .errors import ConfigError, ShapeError
from .metrics import SIGN_DEAD_ZONE, ssim

logger = logging.getLogger(__name__)

Scalar = Union[float, torch.Tensor]


@dataclass
class RankPair:
    """Predicted and ground-truth quality of two same-kind samples (tensors broadcast over pairs)"""
    pred_a: Scalar
    pred_b: Scalar
    gt_a: Scalar
    gt_b: Scalar

    def differences(self):
        pred_a, pred_b, gt_a, gt_b = (torch.as_tensor(v, dtype=torch.get_default_dtype()) if not torch.is_tensor(v) else v
                                      for v in (self.pred_a, self.pred_b, self.gt_a, self.gt_b))
        return pred_a - pred_b, gt_a - gt_b


def _check_margin(margin: float) -> None:
    if margin < 0:
        raise ConfigError(f"Ranking margin must be non-negative, got {margin}")


def signs_compatible(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Equal signs, with |v| < 1e-6 compatible with anything"""
    dead = (x.abs() < SIGN_DEAD_ZONE) | (y.abs() < SIGN_DEAD_ZONE)
    return dead | (torch.sign(x) == torch.sign(y))


def mqrl(pair: RankPair, margin: float = 0.05) -> torch.Tensor:
    """Marginal quality ranking loss, averaged over pairs.

    diff = |diff_gt - diff_in|; the full diff when the predicted order is wrong,
    otherwise only the part beyond the margin.
    """
    _check_margin(margin)
    diff_in, diff_gt = pair.differences()
    diff = (diff_gt - diff_in).abs()
    loss = torch.where(signs_compatible(diff_gt, diff_in), F.relu(diff - margin), diff)
    return loss.mean()


def mrl_baseline(pair: RankPair, margin: float = 0.05) -> torch.Tensor:
    """Standard margin ranking loss with y = sgn(gt_a - gt_b); tied ground truths contribute 0"""
    _check_margin(margin)
    diff_in, diff_gt = pair.differences()
    target = torch.where(diff_gt.abs() < SIGN_DEAD_ZONE, torch.zeros_like(diff_gt), torch.sign(diff_gt))
    loss = F.relu(-target * diff_in + margin) * (target != 0)
    return loss.mean()


def direct_iqa_baseline(pred: Scalar, gt: Scalar) -> torch.Tensor:
    """Squared-error regression of the quality score"""
    pred = pred if torch.is_tensor(pred) else torch.as_tensor(pred, dtype=torch.get_default_dtype())
    gt = gt if torch.is_tensor(gt) else torch.as_tensor(gt, dtype=pred.dtype)
    return (pred - gt).pow(2).mean()


def _unit(vectors: torch.Tensor, name: str) -> torch.Tensor:
    norms = vectors.norm(dim=-1, keepdim=True)
    if bool((norms == 0).any()):
        raise ShapeError(f"Cosine similarity is undefined for a zero-norm {name} vector")
    return vectors / norms


def contrastive(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float = 0.25,
    negative_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """InfoNCE over cosine similarities: -log(e^{s+/t} / (e^{s+/t} + sum_j e^{s-_j/t})).

    Shapes: anchor/positive (L,) or (B, L); negatives (N, L) or (B, N, L);
    ``negative_mask`` (B, N) marks which negatives count for each anchor.
    """
    if temperature <= 0:
        raise ConfigError(f"Temperature must be positive, got {temperature}")
    if anchor.dim() == 1:
        anchor, positive, negatives = anchor[None], positive[None], negatives[None]
        negative_mask = None if negative_mask is None else negative_mask[None]
    if negatives.dim() != 3 or negatives.shape[1] < 1:
        raise ShapeError(f"Need at least one negative per anchor, got shape {tuple(negatives.shape)}")
    if anchor.shape != positive.shape or negatives.shape[-1] != anchor.shape[-1]:
        raise ShapeError("Anchor, positive and negatives must share the feature length")

    anchor, positive, negatives = _unit(anchor, "anchor"), _unit(positive, "positive"), _unit(negatives, "negative")
    positive_sim = (anchor * positive).sum(dim=-1, keepdim=True)
    negative_sim = torch.einsum("bl,bnl->bn", anchor, negatives)
    if negative_mask is not None:
        negative_sim = negative_sim.masked_fill(~negative_mask, float("-inf"))
    logits = torch.cat([positive_sim, negative_sim], dim=1) / temperature
    return -F.log_softmax(logits, dim=1)[:, 0].mean()


def batch_contrastive(
    type_maps: torch.Tensor, kinds: Sequence[str], partners: Sequence[int], temperature: float = 0.25
) -> Optional[torch.Tensor]:
    """Contrastive loss inside a training batch.

    Every sample is an anchor; its positive is its rank-pair partner and its
    negatives are all batch samples of other kinds. Returns None when no sample
    has a negative.
    """
    features = type_maps.flatten(1)
    kinds = list(kinds)
    anchors = [i for i, kind in enumerate(kinds) if any(other != kind for other in kinds)]
    if not anchors:
        return None
    mask = torch.tensor([[kinds[j] != kinds[i] for j in range(len(kinds))] for i in anchors], device=features.device)
    negatives = features.unsqueeze(0).expand(len(anchors), -1, -1)
    return contrastive(
        features[anchors], features[[partners[i] for i in anchors]], negatives, temperature, negative_mask=mask
    )


def l1(restored: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.l1_loss(restored, target)


def ssim_loss(restored: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return 1.0 - ssim(restored, target)


class RandomConvPyramid(nn.Module):
    """Frozen, seeded 3-stage conv pyramid used as the default perceptual feature extractor"""

    def __init__(self, seed: int = 1234, widths: Sequence[int] = (16, 32, 64)):
        super().__init__()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            channels = (3,) + tuple(widths)
            self.stages = nn.ModuleList(
                nn.Sequential(
                    nn.AvgPool2d(2) if i else nn.Identity(),
                    nn.Conv2d(channels[i], channels[i + 1], 3, padding=1),
                    nn.GELU(),
                )
                for i in range(len(widths))
            )
        self.requires_grad_(False)
        self.eval()

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        features = []
        for stage in self.stages:
            image = stage(image)
            features.append(image)
        return features


class VGG16Features(nn.Module):
    """Pre-trained VGG-16 relu1_2 / relu2_2 / relu3_3 features (weights fetched by torchvision)"""

    SLICES = ((0, 4), (4, 9), (9, 16))

    def __init__(self):
        super().__init__()
        from torchvision.models import VGG16_Weights, vgg16

        layers = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        self.stages = nn.ModuleList(nn.Sequential(*layers[start:end]) for start, end in self.SLICES)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def forward(self, image: torch.Tensor) -> List[torch.Tensor]:
        image = (image - self.mean) / self.std
        features = []
        for stage in self.stages:
            image = stage(image)
            features.append(image)
        return features


def build_perceptual_extractor(config: TrainConfig) -> nn.Module:
    if config.perceptual_extractor == "vgg16":
        logger.info("🔄 Loading pre-trained VGG-16 for the perceptual loss")
        return VGG16Features()
    return RandomConvPyramid(config.perceptual_seed)


def perceptual(restored: torch.Tensor, target: torch.Tensor, extractor: nn.Module) -> torch.Tensor:
    """Sum over stages of the size-normalized squared feature distance"""
    total = restored.new_zeros(())
    for restored_features, target_features in zip(extractor(restored), extractor(target)):
        total = total + F.mse_loss(restored_features, target_features)
    return total


@dataclass
class LossComponents:
    severity: Scalar = 0.0
    contrastive: Scalar = 0.0
    l1: Scalar = 0.0
    ssim: Scalar = 0.0
    perceptual: Scalar = 0.0


def total_loss(components: LossComponents, weights: LossWeights) -> Scalar:
    """L = L_severity + w_cl*L_cl + w_l1*L_l1 + w_ssim*L_ssim + w_per*L_per"""
    return (
        components.severity
        + weights.cl * components.contrastive
        + weights.l1 * components.l1
        + weights.ssim * components.ssim
        + weights.per * components.perceptual
    )


def severity_loss(regime: str, pred: torch.Tensor, gt: torch.Tensor, margin: float) -> torch.Tensor:
    """Severity term for a batch laid out as consecutive (a, b) rank pairs"""
    if regime == "none":
        return pred.new_zeros(())
    if regime == "direct":
        return direct_iqa_baseline(pred, gt)
    pair = RankPair(pred[0::2], pred[1::2], gt[0::2], gt[1::2])
    if regime == "mrl":
        return mrl_baseline(pair, margin)
    if regime == "mqrl":
        return mqrl(pair, margin)
    raise ConfigError(f"Unknown severity regime '{regime}'")


__all__ = [
    "RankPair",
    "mqrl",
    "mrl_baseline",
    "direct_iqa_baseline",
    "contrastive",
    "batch_contrastive",
    "l1",
    "ssim_loss",
    "perceptual",
    "RandomConvPyramid",
    "VGG16Features",
    "build_perceptual_extractor",
    "LossComponents",
    "total_loss",
    "severity_loss",
]
