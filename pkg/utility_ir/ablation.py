"""
Severity-loss ablation: identical-seed stage-1 models that differ only in how
severity is supervised (none / mrl / mqrl / direct), optionally with the
contrastive type loss switched off.
"""
import hashlib
import logging
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from .checkpoint import load_model
from .config import SEVERITY_REGIMES, TrainConfig, write_effective_config
from .errors import ConfigError
from .imaging import load_image
from .inference_toolkit import Restorer
from .manifest import DatasetManifest
from .metrics import PSNR_CAP, EvaluationReport, evaluate, gt_quality, ranker_statistics
from .trainer import train_stage1
from .weather_synth import severity_ladder

logger = logging.getLogger(__name__)

LADDER_SEVERITIES = tuple(float(s) for s in np.linspace(0.1, 0.9, 9))
REPORT_NAME = "ablation_report.json"


class RankerStats(BaseModel):
    ordering_accuracy: float
    interval_error: float
    pairs: int


class RegimeResult(BaseModel):
    regime: str
    checkpoint: str = Field(description="Checkpoint path relative to the ablation output directory")
    evaluation: EvaluationReport
    ranker: RankerStats


class AblationReport(BaseModel):
    seed: int
    use_contrastive: bool
    manifest_digest: str
    results: Dict[str, RegimeResult]

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def ladder_scores(
    restorer: Restorer,
    manifest: DatasetManifest,
    severities: Sequence[float] = LADDER_SEVERITIES,
    cap: float = PSNR_CAP,
):
    """Predicted and ground-truth quality over a severity ladder of the first scene of every kind"""
    predicted, ground_truth, groups = [], [], []
    for kind, indices in manifest.indices_by_kind().items():
        row = manifest.rows[indices[0]]
        clean = load_image(manifest.path(row.clean))
        for sample in severity_ladder(clean, kind, severities, seed=row.seed):
            predicted.append(restorer.quality(sample.degraded))
            ground_truth.append(float(gt_quality(sample.degraded, sample.clean, cap)))
            groups.append(kind)
    return predicted, ground_truth, groups


def run_ablation(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str,
    regimes: Sequence[str] = ("direct", "mrl", "mqrl"),
    use_contrastive: Optional[bool] = None,
) -> AblationReport:
    """Train one stage-1 model per regime from the same seed and compare them"""
    unknown = [regime for regime in regimes if regime not in SEVERITY_REGIMES]
    if unknown or not regimes:
        raise ConfigError(f"Unknown or missing severity regimes: {unknown or 'none given'}")
    use_contrastive = config.use_contrastive if use_contrastive is None else use_contrastive
    write_effective_config(config, out_dir)

    results: Dict[str, RegimeResult] = {}
    for regime in regimes:
        regime_config = TrainConfig.model_validate(
            {**config.model_dump(), "severity_regime": regime, "use_contrastive": use_contrastive}
        )
        regime_dir = os.path.join(out_dir, regime)
        logger.info(f"🔄 Ablation regime '{regime}' (contrastive={'on' if use_contrastive else 'off'})")
        train_stage1(regime_config, manifest, regime_dir)

        checkpoint_path = os.path.join(regime_dir, "stage1.uir")
        restorer = Restorer(load_model(checkpoint_path), regime_config.device)
        predicted, ground_truth, groups = ladder_scores(restorer, manifest, cap=regime_config.psnr_cap)
        stats = ranker_statistics(predicted, ground_truth, groups)
        results[regime] = RegimeResult(
            regime=regime,
            checkpoint=os.path.relpath(checkpoint_path, out_dir),
            evaluation=evaluate(manifest, restorer.restore, regime_config.psnr_cap),
            ranker=RankerStats(
                ordering_accuracy=stats["ordering_accuracy"],
                interval_error=stats["interval_error"],
                pairs=int(stats["pairs"]),
            ),
        )
        logger.info(
            f"📊 {regime}: ordering accuracy {stats['ordering_accuracy']:.3f}, "
            f"interval error {stats['interval_error']:.4f}"
        )

    report = AblationReport(
        seed=config.seed, use_contrastive=use_contrastive, manifest_digest=manifest.digest(), results=results
    )
    path = os.path.join(out_dir, REPORT_NAME)
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.to_json())
    logger.info(f"✅ Ablation report written to {path}")
    return report


def ranking_order(report: AblationReport, key: str = "ordering_accuracy") -> List[str]:
    """Regimes sorted best-first on a ranker statistic"""
    reverse = key == "ordering_accuracy"
    return sorted(report.results, key=lambda regime: getattr(report.results[regime].ranker, key), reverse=reverse)


__all__ = ["AblationReport", "RegimeResult", "RankerStats", "ladder_scores", "run_ablation", "ranking_order"]
