"""
Reference image metrics, the ground-truth quality normalization used by the
ranking losses, and the evaluation / ranker / clustering reports.
"""
import hashlib
import logging
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from pydantic import BaseModel
from pytorch_msssim import ssim as gaussian_ssim

from .errors import DataError, ShapeError
from .imaging import load_image, to_tensor
from .manifest import WEATHER_KINDS, DatasetManifest
from .weather_synth import DegradationSpec, compose

if TYPE_CHECKING:
    from .inference_toolkit import Restorer

logger = logging.getLogger(__name__)

PSNR_CAP = 50.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K = (0.01, 0.03)
SIGN_DEAD_ZONE = 1e-6

ImageLike = Union[torch.Tensor, np.ndarray]


def _as_batch(image: ImageLike) -> torch.Tensor:
    """(H, W, 3) array, (3, H, W) or (N, 3, H, W) tensor -> (N, 3, H, W) tensor"""
    if isinstance(image, np.ndarray):
        image = to_tensor(image)
    if image.dim() == 3:
        image = image.unsqueeze(0)
    if image.dim() != 4:
        raise ShapeError(f"Expected an image or image batch, got shape {tuple(image.shape)}")
    return image


def _pair(a: ImageLike, b: ImageLike):
    a, b = _as_batch(a), _as_batch(b)
    if a.shape != b.shape:
        raise ShapeError(f"Shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dtype != b.dtype:
        b = b.to(a.dtype)
    return a, b


def psnr(a: ImageLike, b: ImageLike, cap: float = PSNR_CAP) -> torch.Tensor:
    """Per-image PSNR in dB on unit dynamic range, capped at ``cap`` (identical -> cap)"""
    a, b = _pair(a, b)
    mse = (a - b).pow(2).flatten(1).mean(dim=1)
    floor = 10.0 ** (-cap / 10.0)
    value = -10.0 * torch.log10(mse.clamp_min(floor))
    return torch.where(mse <= floor, torch.full_like(value, cap), value.clamp(max=cap))


def ssim(a: ImageLike, b: ImageLike, per_image: bool = False) -> torch.Tensor:
    """Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K = (0.01, 0.03), averaged over channels"""
    a, b = _pair(a, b)
    return gaussian_ssim(
        a, b, data_range=1.0, size_average=not per_image, win_size=SSIM_WINDOW, win_sigma=SSIM_SIGMA, K=SSIM_K
    )


def gt_quality(degraded: ImageLike, clean: ImageLike, cap: float = PSNR_CAP) -> torch.Tensor:
    """Ground-truth quality score in [0, 1]: clip(PSNR, 0, cap) / cap"""
    return psnr(degraded, clean, cap).clamp(0.0, cap) / cap


def stability(values: Sequence[float]) -> Dict[str, float]:
    """Worst case, mean and spread of per-image PSNR (higher worst / lower std = more stable)"""
    if not len(values):
        raise DataError("Stability needs at least one value")
    array = np.asarray(values, dtype=np.float64)
    return {"worst": float(array.min()), "mean": float(array.mean()), "std": float(array.std())}


def adjacent_monotonicity(scores: Sequence[float]) -> float:
    """Fraction of adjacent pairs that are non-increasing"""
    scores = list(scores)
    if len(scores) < 2:
        return 1.0
    hits = sum(1 for first, second in zip(scores, scores[1:]) if second <= first)
    return hits / (len(scores) - 1)


def _min_max(array: np.ndarray) -> np.ndarray:
    span = array.max() - array.min()
    if span <= 0:
        return np.zeros_like(array)
    return (array - array.min()) / span


def ranker_statistics(
    predicted: Sequence[float], ground_truth: Sequence[float], groups: Optional[Sequence[str]] = None
) -> Dict[str, float]:
    """Ordering accuracy and min-max-normalized interval error over same-group pairs"""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(ground_truth, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ShapeError("Predicted and ground-truth scores must be equal-length vectors")
    groups = list(groups) if groups is not None else ["all"] * len(pred)
    pred_norm, gt_norm = _min_max(pred), _min_max(gt)

    ordered, ranked_pairs, interval_errors = 0, 0, []
    for i in range(len(pred)):
        for j in range(i + 1, len(pred)):
            if groups[i] != groups[j]:
                continue
            interval_errors.append(abs((gt_norm[i] - gt_norm[j]) - (pred_norm[i] - pred_norm[j])))
            gt_diff = gt[i] - gt[j]
            if abs(gt_diff) < SIGN_DEAD_ZONE:
                continue
            ranked_pairs += 1
            ordered += int(np.sign(pred[i] - pred[j]) == np.sign(gt_diff))
    return {
        "ordering_accuracy": ordered / ranked_pairs if ranked_pairs else 0.0,
        "interval_error": float(np.mean(interval_errors)) if interval_errors else 0.0,
        "pairs": float(len(interval_errors)),
    }


def type_clustering(type_maps: torch.Tensor, kinds: Sequence[str]) -> Dict[str, float]:
    """Mean intra-kind vs inter-kind cosine similarity of flattened type maps"""
    flat = F.normalize(type_maps.detach().flatten(1).double(), dim=1)
    similarity = flat @ flat.T
    kinds = list(kinds)
    same = torch.tensor([[a == b for b in kinds] for a in kinds])
    off_diagonal = ~torch.eye(len(kinds), dtype=torch.bool)
    intra = similarity[same & off_diagonal]
    inter = similarity[~same]
    if not len(intra) or not len(inter):
        raise DataError("Type clustering needs at least two kinds with two samples each")
    return {"intra": float(intra.mean()), "inter": float(inter.mean()), "gap": float(intra.mean() - inter.mean())}


class QualityStats(BaseModel):
    count: int
    psnr_before: float
    ssim_before: float
    psnr_after: float
    ssim_after: float


class EvaluationReport(BaseModel):
    """Per-kind and overall PSNR/SSIM before and after restoration; key order is fixed"""

    per_kind: Dict[str, QualityStats]
    overall: QualityStats
    stability_after: Dict[str, float]

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def _stats(rows: List[List[float]]) -> QualityStats:
    array = np.asarray(rows, dtype=np.float64)
    return QualityStats(
        count=len(rows),
        psnr_before=float(array[:, 0].mean()),
        ssim_before=float(array[:, 1].mean()),
        psnr_after=float(array[:, 2].mean()),
        ssim_after=float(array[:, 3].mean()),
    )


def evaluate(
    manifest: DatasetManifest,
    model: Optional[Union[torch.nn.Module, Callable[[np.ndarray], np.ndarray]]] = None,
    cap: float = PSNR_CAP,
) -> EvaluationReport:
    """Score every manifest row before and after restoration.

    ``model`` is a UtilityIR network (padded automatically), any callable mapping an
    (H, W, 3) image to an image, or None for the identity.
    """
    if not len(manifest):
        raise DataError("Cannot evaluate an empty manifest")
    if isinstance(model, torch.nn.Module):
        from .inference_toolkit import Restorer

        restore = Restorer(model).restore
    else:
        restore = model or (lambda image: image)

    per_kind: Dict[str, List[List[float]]] = {}
    for row in manifest.rows:
        degraded = load_image(manifest.path(row.degraded))
        clean = load_image(manifest.path(row.clean))
        if degraded.shape != clean.shape:
            raise DataError(f"{row.degraded} and {row.clean} differ in shape")
        restored = restore(degraded)
        per_kind.setdefault(row.kind, []).append(
            [
                float(psnr(degraded, clean, cap)),
                float(ssim(degraded, clean)),
                float(psnr(restored, clean, cap)),
                float(ssim(restored, clean)),
            ]
        )
    ordered = {kind: _stats(per_kind[kind]) for kind in WEATHER_KINDS if kind in per_kind}
    everything = [values for kind in ordered for values in per_kind[kind]]
    report = EvaluationReport(
        per_kind=ordered,
        overall=_stats(everything),
        stability_after=stability([values[2] for values in everything]),
    )
    logger.info(
        f"📊 Evaluated {report.overall.count} images: PSNR {report.overall.psnr_before:.2f} -> "
        f"{report.overall.psnr_after:.2f} dB, SSIM {report.overall.ssim_before:.4f} -> {report.overall.ssim_after:.4f}"
    )
    return report



class CombinedSample(BaseModel):
    specs: List[Tuple[str, float, int]]
    psnr_input: float
    psnr_passes: List[float]
    quality_input: float
    quality_restored: float


class CombinedReport(BaseModel):
    """Progressive removal of stacked weather, one pass per degradation"""

    kinds: List[str]
    passes: int
    samples: List[CombinedSample]
    stability: Dict[str, float]
    later_pass_gain: float
    quality_gain: float

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def combined_specs(
    count: int, kinds: Sequence[str], seed: int = 0, severity_range: Tuple[float, float] = (0.3, 0.7)
) -> List[List[DegradationSpec]]:
    """One stack of degradations per image, applied in the order of ``kinds``"""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 7])))
    low, high = severity_range
    return [
        [DegradationSpec(kind, float(rng.uniform(low, high)), int(rng.integers(2**32))) for kind in kinds]
        for _ in range(count)
    ]


def evaluate_combined(
    model: Union[torch.nn.Module, "Restorer"],
    scenes: Sequence[np.ndarray],
    kinds: Sequence[str] = ("haze", "rain_streak"),
    seed: int = 0,
    passes: Optional[int] = None,
    cap: float = PSNR_CAP,
) -> CombinedReport:
    """Degrade each clean scene with every kind in turn and restore it progressively.

    ``passes`` defaults to the number of stacked kinds. ``later_pass_gain`` is the
    fraction of images whose last pass scores at least the first pass in PSNR;
    ``quality_gain`` the fraction whose predicted quality rises after one pass.
    """
    from .inference_toolkit import Restorer

    if not len(scenes):
        raise DataError("Combined evaluation needs at least one scene")
    if not len(kinds):
        raise DataError("Combined evaluation needs at least one weather kind")
    restorer = model if isinstance(model, Restorer) else Restorer(model)
    passes = len(kinds) if passes is None else passes

    samples = []
    for clean, specs in zip(scenes, combined_specs(len(scenes), kinds, seed)):
        degraded = compose(clean, specs)
        outputs = restorer.iterative_restore(degraded, passes)
        samples.append(
            CombinedSample(
                specs=[(spec.kind.value, spec.severity, spec.seed) for spec in specs],
                psnr_input=float(psnr(degraded, clean, cap)),
                psnr_passes=[float(psnr(output, clean, cap)) for output in outputs],
                quality_input=restorer.quality(degraded),
                quality_restored=restorer.quality(outputs[0]),
            )
        )
    report = CombinedReport(
        kinds=list(kinds),
        passes=passes,
        samples=samples,
        stability=stability([sample.psnr_passes[-1] for sample in samples]),
        later_pass_gain=float(np.mean([s.psnr_passes[-1] >= s.psnr_passes[0] for s in samples])),
        quality_gain=float(np.mean([s.quality_restored >= s.quality_input for s in samples])),
    )
    logger.info(
        f"📊 Combined {'+'.join(kinds)} over {len(samples)} images, {passes} passes: worst PSNR "
        f"{report.stability['worst']:.2f} dB, later pass gain {report.later_pass_gain:.2f}"
    )
    return report


__all__ = [
    "psnr",
    "ssim",
    "gt_quality",
    "stability",
    "adjacent_monotonicity",
    "ranker_statistics",
    "type_clustering",
    "QualityStats",
    "EvaluationReport",
    "evaluate",
    "CombinedSample",
    "CombinedReport",
    "combined_specs",
    "evaluate_combined",
]
