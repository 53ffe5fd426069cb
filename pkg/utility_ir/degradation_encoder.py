"""
Degradation Information Encoder (DIE).

A shared convolutional trunk feeds two branches: a spatial weather-type map
built from concatenated multi-level features, and a pooled weather-severity
vector that also drives a small quality (IQA) regressor.

The type map is the zero-mean spatial response of the fused features plus a
per-image level read from the pooled features. Scenes differ pixel by pixel,
so the level is what lets maps of one weather kind line up across scenes.
"""
import logging
from typing import Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError

logger = logging.getLogger(__name__)


def check_divisible(image: torch.Tensor, downsample: int) -> None:
    if image.dim() != 4 or image.shape[1] != 3:
        raise ShapeError(f"Expected an (N, 3, H, W) batch, got {tuple(image.shape)}")
    height, width = image.shape[-2:]
    if height % downsample or width % downsample:
        raise ShapeError(f"Image size {height}x{width} is not divisible by {downsample}; pad it first")


class DegradationEncoder(nn.Module):
    """Produces TypeMap (N, 1, H/S, W/S) and SeverityVector (N, D) from an image batch"""

    def __init__(self, widths: Sequence[int] = (32, 64, 128), dim: int = 128, downsample: int = 4):
        super().__init__()
        if len(widths) != 3:
            raise ShapeError(f"Encoder trunk has exactly 3 stages, got widths {tuple(widths)}")
        self.downsample = downsample
        self.dim = dim
        # stage i runs at 1 / min(S, 2**i) of the input resolution; no strided convs
        self.stage_factors = tuple(min(downsample, 2**i) for i in range(3))

        channels = (3,) + tuple(widths)
        self.stages = nn.ModuleList(
            nn.Sequential(nn.Conv2d(channels[i], channels[i + 1], 3, padding=1), nn.GELU()) for i in range(3)
        )
        self.type_fuse = nn.Conv2d(sum(widths), 1, 3, padding=1)
        self.type_level = nn.Linear(sum(widths), 1)
        self.severity_mlp = nn.Sequential(nn.Linear(widths[-1], dim), nn.GELU(), nn.Linear(dim, dim))
        self.iqa_head = nn.Sequential(nn.Linear(dim, dim // 2), nn.GELU(), nn.Linear(dim // 2, 1))
        nn.init.zeros_(self.iqa_head[-1].weight)
        nn.init.zeros_(self.iqa_head[-1].bias)

    def encode(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        check_divisible(image, self.downsample)
        levels = []
        x = image
        previous = 1
        for factor, stage in zip(self.stage_factors, self.stages):
            if factor > previous:
                x = F.avg_pool2d(x, factor // previous)
            previous = factor
            x = stage(x)
            levels.append(x)

        pooled = [
            F.avg_pool2d(level, self.downsample // factor) if factor < self.downsample else level
            for level, factor in zip(levels, self.stage_factors)
        ]
        fused = torch.cat(pooled, dim=1)
        local = self.type_fuse(fused)
        level = self.type_level(fused.mean(dim=(2, 3)))
        type_map = local - local.mean(dim=(2, 3), keepdim=True) + level[:, :, None, None]
        severity = self.severity_mlp(levels[-1].mean(dim=(2, 3)))
        return type_map, severity

    def forward(self, image: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.encode(image)

    def predict_iqa(self, severity: torch.Tensor) -> torch.Tensor:
        """Quality score in [0, 1] per sample (1 = best)"""
        if severity.dim() != 2 or severity.shape[1] != self.dim:
            raise ShapeError(f"Expected severity vectors of shape (N, {self.dim}), got {tuple(severity.shape)}")
        return torch.sigmoid(self.iqa_head(severity)).squeeze(1).clamp(0.0, 1.0)
