"""
Image I/O and layout helpers.

ImageTensor on disk and in the synthetic generator is an (H, W, 3) float32
numpy array in [0, 1]; the networks work on (N, 3, H, W) torch tensors.
"""
import os
from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DataError, ShapeError


def load_image(path: str) -> np.ndarray:
    """Decode an image file into an (H, W, 3) float32 array in [0, 1]"""
    if not os.path.isfile(path):
        raise DataError(f"Image not found: {path}")
    try:
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32)
    except OSError as exc:
        raise DataError(f"Cannot decode image {path}: {exc}") from exc
    return rgb / 255.0


def save_image(path: str, image: np.ndarray) -> None:
    """Write an (H, W, 3) array in [0, 1] as an 8-bit PNG"""
    check_image(image)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized).save(path, format="PNG")


def check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"Expected an (H, W, 3) image, got shape {image.shape}")


def to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) array -> (3, H, W) float32 tensor"""
    check_image(image)
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32))


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """(3, H, W) or (1, 3, H, W) tensor -> (H, W, 3) float32 array"""
    if tensor.dim() == 4:
        if tensor.shape[0] != 1:
            raise ShapeError(f"Expected a single image, got batch of {tensor.shape[0]}")
        tensor = tensor[0]
    return tensor.detach().cpu().float().numpy().transpose(1, 2, 0).copy()


def pad_to_multiple(batch: torch.Tensor, multiple: int) -> Tuple[torch.Tensor, Tuple[int, int]]:
    """Reflect-pad (N, C, H, W) so H and W divide by ``multiple``; returns the original size"""
    height, width = batch.shape[-2:]
    pad_h = (-height) % multiple
    pad_w = (-width) % multiple
    if pad_h or pad_w:
        mode = "reflect" if pad_h < height and pad_w < width else "replicate"
        batch = F.pad(batch, (0, pad_w, 0, pad_h), mode=mode)
    return batch, (height, width)


def crop_to(batch: torch.Tensor, size: Tuple[int, int]) -> torch.Tensor:
    return batch[..., : size[0], : size[1]]


def contact_sheet(panels: Sequence[np.ndarray], gap: int = 4) -> np.ndarray:
    """Lay equally-sized panels out left to right with a white gap"""
    if not panels:
        raise ShapeError("Contact sheet needs at least one panel")
    height, width, _ = panels[0].shape
    sheet = np.ones((height, len(panels) * width + (len(panels) - 1) * gap, 3), dtype=np.float32)
    for i, panel in enumerate(panels):
        if panel.shape != panels[0].shape:
            raise ShapeError("Contact sheet panels must share one shape")
        left = i * (width + gap)
        sheet[:, left : left + width] = panel
    return sheet


def list_images(directory: str) -> List[str]:
    """Sorted image file paths directly inside ``directory``"""
    if not os.path.isdir(directory):
        raise DataError(f"Not a directory: {directory}")
    suffixes = (".png", ".jpg", ".jpeg", ".bmp")
    return sorted(
        os.path.join(directory, name) for name in os.listdir(directory) if name.lower().endswith(suffixes)
    )
