"""
Inference utilities on a trained model: plain and progressive restoration,
combined-weather removal, and restoration-level modulation along the latent
severity direction.

Images are (H, W, 3) float32 arrays in [0, 1]. Inputs whose sides are not a
multiple of the down-sampling ratio are reflect-padded and cropped back.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch

from .checkpoint import load_model
from .errors import ConfigError
from .imaging import check_image, contact_sheet, crop_to, pad_to_multiple, to_image, to_tensor
from .metrics import psnr
from .restore_net import UtilityIR

logger = logging.getLogger(__name__)


@dataclass
class Direction:
    """Severity before and after one restoration pass, plus the type map held fixed while modulating"""
    severity: torch.Tensor  # F_s, (1, D)
    restored_severity: torch.Tensor  # F_s', (1, D)
    type_map: torch.Tensor  # F_t, (1, 1, h, w) of the padded input

    @property
    def direction(self) -> torch.Tensor:
        return self.restored_severity - self.severity

    def at(self, alpha: float) -> torch.Tensor:
        """F_s + alpha * (F_s' - F_s); exact at alpha 0 and 1"""
        return torch.lerp(self.severity, self.restored_severity, float(alpha))


class Restorer:
    def __init__(self, model: UtilityIR, device: str = "cpu"):
        self.model = model.to(device).eval()
        self.device = device
        self.downsample = model.downsample

    @classmethod
    def from_checkpoint(cls, path: str, device: str = "cpu") -> "Restorer":
        return cls(load_model(path), device)

    def _prepare(self, image: np.ndarray) -> Tuple[torch.Tensor, Tuple[int, int]]:
        check_image(image)
        return pad_to_multiple(to_tensor(image).unsqueeze(0).to(self.device), self.downsample)

    def _finish(self, output: torch.Tensor, size: Tuple[int, int]) -> np.ndarray:
        return to_image(crop_to(output, size))

    @torch.no_grad()
    def encode(self, image: np.ndarray) -> Tuple[torch.Tensor, torch.Tensor]:
        batch, _ = self._prepare(image)
        return self.model.encode(batch)

    @torch.no_grad()
    def quality(self, image: np.ndarray) -> float:
        """Predicted quality score in [0, 1]"""
        _, severity = self.encode(image)
        return float(self.model.predict_iqa(severity)[0])

    @torch.no_grad()
    def restore(self, image: np.ndarray) -> np.ndarray:
        batch, size = self._prepare(image)
        return self._finish(self.model.restore(batch), size)

    @torch.no_grad()
    def restore_with(self, image: np.ndarray, type_map: torch.Tensor, severity: torch.Tensor) -> np.ndarray:
        batch, size = self._prepare(image)
        return self._finish(self.model.restore_with(batch, type_map, severity), size)

    def iterative_restore(self, image: np.ndarray, n: int) -> List[np.ndarray]:
        """out[0] = restore(image), out[k] = restore(out[k-1]); n passes.

        Combined weather is removed with n equal to the number of stacked degradations.
        """
        if n < 1:
            raise ConfigError(f"Iteration count must be at least 1, got {n}")
        outputs = []
        current = image
        for _ in range(n):
            current = self.restore(current)
            outputs.append(current)
        return outputs

    def find_direction(self, image: np.ndarray) -> Direction:
        type_map, severity = self.encode(image)
        _, restored_severity = self.encode(self.restore(image))
        return Direction(severity=severity, restored_severity=restored_severity, type_map=type_map)

    def modulate(self, image: np.ndarray, alpha: float, direction: Optional[Direction] = None) -> np.ndarray:
        """Restore with F_s'' = F_s + alpha * (F_s' - F_s), keeping F_t fixed.

        alpha in (0, 1) interpolates, alpha > 1 or < 0 extrapolates.
        """
        direction = direction or self.find_direction(image)
        return self.restore_with(image, direction.type_map, direction.at(alpha))

    @torch.no_grad()
    def modulation_grid(
        self, image: np.ndarray, alphas: Sequence[float], reference: Optional[np.ndarray] = None
    ) -> Tuple[np.ndarray, List[Dict[str, float]]]:
        """Contact sheet with one panel per alpha plus per-alpha metrics"""
        if not len(alphas):
            raise ConfigError("Need at least one modulation parameter")
        direction = self.find_direction(image)
        panels, metrics = [], []
        for alpha in alphas:
            severity = direction.at(alpha)
            panel = self.restore_with(image, direction.type_map, severity)
            panels.append(panel)
            entry = {
                "alpha": float(alpha),
                "residual_energy": residual_energy(panel, image),
                "predicted_quality": float(self.model.predict_iqa(severity)[0]),
            }
            if reference is not None:
                entry["psnr"] = float(psnr(panel, reference))
            metrics.append(entry)
        logger.info(f"📊 Modulation over {len(alphas)} levels, |d| = {float(direction.direction.norm()):.4f}")
        return contact_sheet(panels), metrics


def residual_energy(output: np.ndarray, image: np.ndarray) -> float:
    """Root mean square of the change restoration made to the image"""
    difference = output.astype(np.float64) - image.astype(np.float64)
    return float(np.sqrt(np.mean(difference**2)))


__all__ = ["Direction", "Restorer", "residual_energy"]
