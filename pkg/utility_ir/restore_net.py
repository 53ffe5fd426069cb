"""
RestoreNet and the full type- and severity-aware restoration model.

Pipeline: stride-2 feature extraction -> K residual blocks normalized by
DI-LGAdaIN -> one degradation-guided cross-attention (DGCA) block ->
reconstruction back to image space.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import torch
import torch.nn as nn
import torch.nn.functional as F
from einops import rearrange

from .config import TrainConfig
from .degradation_encoder import DegradationEncoder, check_divisible
from .errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

NORM_EPS = 1e-5
LOGIT_EPS = 1e-3


@dataclass
class AffineParams:
    """Local (pixel-wise, from the type map) and global (channel-wise, from severity) affines"""
    local_scale: torch.Tensor  # (N, 1, h, w)
    local_shift: torch.Tensor  # (N, 1, h, w)
    global_scale: torch.Tensor  # (N, D)
    global_shift: torch.Tensor  # (N, D)


def di_lg_adain(features: torch.Tensor, params: AffineParams, eps: float = NORM_EPS) -> torch.Tensor:
    """F' = a_g * (a_l * (F - mu) / sigma + b_l) + b_g with per-channel instance statistics.

    sigma uses the population variance: sqrt(var + eps).
    """
    n, channels, height, width = features.shape
    for name in ("local_scale", "local_shift"):
        if tuple(getattr(params, name).shape) != (n, 1, height, width):
            raise ShapeError(f"{name} has shape {tuple(getattr(params, name).shape)}, expected {(n, 1, height, width)}")
    for name in ("global_scale", "global_shift"):
        if tuple(getattr(params, name).shape) != (n, channels):
            raise ShapeError(f"{name} has shape {tuple(getattr(params, name).shape)}, expected {(n, channels)}")

    mean = features.mean(dim=(2, 3), keepdim=True)
    var = features.var(dim=(2, 3), unbiased=False, keepdim=True)
    normalized = (features - mean) / torch.sqrt(var + eps)
    local = params.local_scale * normalized + params.local_shift
    return params.global_scale[:, :, None, None] * local + params.global_shift[:, :, None, None]


class AffineGenerator(nn.Module):
    """make_affines: conv head on the type map, MLP head on the severity vector.

    Both heads start at identity (scale 1, shift 0).
    """

    def __init__(self, dim: int, hidden: int = 32):
        super().__init__()
        self.dim = dim
        self.local_head = nn.Sequential(
            nn.Conv2d(1, hidden, 3, padding=1), nn.GELU(), nn.Conv2d(hidden, 2, 3, padding=1)
        )
        self.global_head = nn.Sequential(nn.Linear(dim, dim), nn.GELU(), nn.Linear(dim, 2 * dim))
        with torch.no_grad():
            nn.init.zeros_(self.local_head[-1].weight)
            self.local_head[-1].bias.copy_(torch.tensor([1.0, 0.0]))
            nn.init.zeros_(self.global_head[-1].weight)
            self.global_head[-1].bias.copy_(torch.cat([torch.ones(dim), torch.zeros(dim)]))

    def forward(self, type_map: torch.Tensor, severity: torch.Tensor) -> AffineParams:
        local = self.local_head(type_map)
        global_ = self.global_head(severity)
        return AffineParams(
            local_scale=local[:, :1],
            local_shift=local[:, 1:],
            global_scale=global_[:, : self.dim],
            global_shift=global_[:, self.dim :],
        )


class ResidualBlock(nn.Module):
    """conv -> DI-LGAdaIN -> activation -> conv, added back onto the input"""

    def __init__(self, dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.affines = AffineGenerator(dim)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, features: torch.Tensor, type_map: torch.Tensor, severity: torch.Tensor) -> torch.Tensor:
        hidden = di_lg_adain(self.conv1(features), self.affines(type_map, severity))
        return features + self.conv2(self.act(hidden))


class DegradationGuidedCrossAttention(nn.Module):
    """Multi-head cross-attention: queries from the lifted type map, keys/values from features"""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.scale = 1.0 / math.sqrt(dim // heads)
        self.lift = nn.Conv2d(1, dim, 1)
        self.norm = nn.GroupNorm(1, dim)
        self.to_q = nn.Conv2d(dim, dim, 1)
        self.to_k = nn.Conv2d(dim, dim, 1)
        self.to_v = nn.Conv2d(dim, dim, 1)
        self.proj = nn.Conv2d(dim, dim, 1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def attention(self, features: torch.Tensor, type_map: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Returns (attended values (N, D, h, w), attention weights (N, heads, hw, hw))"""
        if type_map.shape[-2:] != features.shape[-2:]:
            raise ShapeError(f"Type map {tuple(type_map.shape)} does not match features {tuple(features.shape)}")
        height, width = features.shape[-2:]
        context = self.norm(features)
        q = rearrange(self.to_q(self.lift(type_map)), "b (head c) h w -> b head (h w) c", head=self.heads)
        k = rearrange(self.to_k(context), "b (head c) h w -> b head (h w) c", head=self.heads)
        v = rearrange(self.to_v(context), "b (head c) h w -> b head (h w) c", head=self.heads)
        weights = torch.softmax(torch.einsum("bnqc,bnkc->bnqk", q, k) * self.scale, dim=-1)
        out = torch.einsum("bnqk,bnkc->bnqc", weights, v)
        out = rearrange(out, "b head (h w) c -> b (head c) h w", h=height, w=width)
        return out, weights

    def forward(self, features: torch.Tensor, type_map: torch.Tensor) -> torch.Tensor:
        attended, _ = self.attention(features, type_map)
        return features + self.proj(attended)


def _stages(downsample: int) -> int:
    stages = int(round(math.log2(downsample)))
    if 2**stages != downsample:
        raise ConfigError(f"downsample must be a power of two, got {downsample}")
    return stages


class FeatureExtractor(nn.Module):
    """log2(S) stride-2 convolutions: (N, 3, H, W) -> (N, D, H/S, W/S)"""

    def __init__(self, dim: int, downsample: int):
        super().__init__()
        self.downsample = downsample
        stages = _stages(downsample)
        widths = [3] + [max(dim >> (stages - i), 16) for i in range(1, stages)] + [dim]
        layers = []
        for i in range(stages):
            layers += [nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1), nn.GELU()]
        layers.append(nn.Conv2d(widths[stages], dim, 3, padding=1))
        self.body = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        check_divisible(image, self.downsample)
        return self.body(image)


class Reconstructor(nn.Module):
    """Upsampling convs back to (N, 3, H, W), ending in a sigmoid.

    With a skip image the residual is added in logit space, so an all-zero
    residual reproduces the (clamped) input.
    """

    def __init__(self, dim: int, downsample: int):
        super().__init__()
        stages = _stages(downsample)
        layers = []
        channels = dim
        for _ in range(stages):
            out_channels = max(channels // 2, 16)
            layers += [nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(channels, out_channels, 3, padding=1), nn.GELU()]
            channels = out_channels
        self.body = nn.Sequential(*layers)
        self.to_image = nn.Conv2d(channels, 3, 3, padding=1)
        nn.init.zeros_(self.to_image.weight)
        nn.init.zeros_(self.to_image.bias)

    def forward(self, features: torch.Tensor, skip: Optional[torch.Tensor] = None) -> torch.Tensor:
        residual = self.to_image(self.body(features))
        if skip is not None:
            residual = residual + torch.logit(skip.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS))
        return torch.sigmoid(residual)


class RestoreNet(nn.Module):
    def __init__(self, dim: int = 128, downsample: int = 4, blocks: int = 6, heads: int = 4):
        super().__init__()
        self.downsample = downsample
        self.extractor = FeatureExtractor(dim, downsample)
        self.blocks = nn.ModuleList(ResidualBlock(dim) for _ in range(blocks))
        self.dgca = DegradationGuidedCrossAttention(dim, heads)
        self.reconstructor = Reconstructor(dim, downsample)

    def forward(self, image: torch.Tensor, type_map: torch.Tensor, severity: torch.Tensor) -> torch.Tensor:
        features = self.extractor(image)
        if type_map.shape[-2:] != features.shape[-2:]:
            raise ShapeError(f"Type map {tuple(type_map.shape)} does not match features {tuple(features.shape)}")
        for block in self.blocks:
            features = block(features, type_map, severity)
        features = self.dgca(features, type_map)
        return self.reconstructor(features, skip=image)


class UtilityIR(nn.Module):
    """Degradation encoder + restoration network: restore(I) = R(I, DIE(I))"""

    def __init__(
        self,
        dim: int = 128,
        downsample: int = 4,
        blocks: int = 6,
        heads: int = 4,
        encoder_widths: Tuple[int, int, int] = (32, 64, 128),
    ):
        super().__init__()
        self.downsample = downsample
        self.encoder = DegradationEncoder(encoder_widths, dim, downsample)
        self.restorer = RestoreNet(dim, downsample, blocks, heads)

    @classmethod
    def from_config(cls, config: TrainConfig) -> "UtilityIR":
        return cls(config.dim, config.downsample, config.blocks, config.heads, config.encoder_widths)

    def encode(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.encoder.encode(image)

    def predict_iqa(self, severity: torch.Tensor) -> torch.Tensor:
        return self.encoder.predict_iqa(severity)

    def restore_with(self, image: torch.Tensor, type_map: torch.Tensor, severity: torch.Tensor) -> torch.Tensor:
        return self.restorer(image, type_map, severity)

    def restore(self, image: torch.Tensor) -> torch.Tensor:
        type_map, severity = self.encode(image)
        return self.restore_with(image, type_map, severity)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.restore(image)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def model_summary(model: UtilityIR) -> Dict[str, Union[int, float]]:
    """Parameter counts per component and the encoder's share of the total"""
    die = count_parameters(model.encoder)
    restorer = count_parameters(model.restorer)
    total = die + restorer
    return {"die": die, "restorer": restorer, "total": total, "die_fraction": die / total}
