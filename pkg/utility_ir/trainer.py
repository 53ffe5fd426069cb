#!/usr/bin/env python3
"""
Two-Stage Trainer
=================
Stage 1 optimizes the full objective (severity ranking, contrastive type loss,
L1, SSIM and perceptual terms) jointly through the encoder and the restorer.
Stage 2 fine-tunes with a smaller learning rate on the pixel fidelity terms
(L1 and SSIM) only.

Batches pair every anchor with a random same-kind partner (the ranking pair);
samples of other kinds in the batch act as contrastive negatives.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import torch
from tqdm import tqdm

from .checkpoint import Checkpoint
from .config import LossWeights, TrainConfig, write_effective_config
from .errors import DataError, NumericFailure
from .imaging import load_image, to_tensor
from .losses import (
    LossComponents,
    batch_contrastive,
    build_perceptual_extractor,
    l1,
    perceptual,
    severity_loss,
    ssim_loss,
    total_loss,
)
from .manifest import DatasetManifest
from .metrics import gt_quality
from .restore_net import UtilityIR
from .weather_synth import DegradationSpec, PairedSample

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"
NAN_DUMP_NAME = "nan_batch.npz"


class ImageCache:
    """Decoded images keyed by path; corpora at desk scale fit in memory"""

    def __init__(self):
        self._images: Dict[str, np.ndarray] = {}

    def get(self, path: str) -> np.ndarray:
        if path not in self._images:
            self._images[path] = load_image(path)
        return self._images[path]


@dataclass
class Batch:
    """Training batch laid out as rank pairs: samples 2i and 2i+1 share a kind"""
    degraded: torch.Tensor  # (2B, 3, c, c)
    clean: torch.Tensor  # (2B, 3, c, c)
    kinds: List[str]
    partners: List[int]
    rows: List[int]
    crops: List[Tuple[int, int]]  # top-left corner per sample
    contrastive_enabled: bool

    def to(self, device: str) -> "Batch":
        self.degraded = self.degraded.to(device)
        self.clean = self.clean.to(device)
        return self


def rank_pair_indices(
    manifest: DatasetManifest, kind: str, rng: np.random.Generator, allow_self_pair: bool = False
) -> Tuple[int, int]:
    """Two distinct manifest rows of one kind, uniformly chosen"""
    rows = manifest.indices_by_kind().get(kind, [])
    if not rows:
        raise DataError(f"No manifest rows of kind '{kind}'")
    if len(rows) == 1:
        if not allow_self_pair:
            raise DataError(f"Kind '{kind}' has a single row; a rank pair needs two (or allow_self_pair)")
        return rows[0], rows[0]
    first = int(rng.integers(len(rows)))
    second = (first + 1 + int(rng.integers(len(rows) - 1))) % len(rows)
    return rows[first], rows[second]


def _paired_sample(manifest: DatasetManifest, index: int, cache: ImageCache) -> PairedSample:
    row = manifest.rows[index]
    return PairedSample(
        clean=cache.get(manifest.path(row.clean)),
        degraded=cache.get(manifest.path(row.degraded)),
        spec=DegradationSpec(row.kind, row.severity, row.seed),
    )


def sample_rank_pair(
    manifest: DatasetManifest,
    kind: str,
    rng: np.random.Generator,
    allow_self_pair: bool = False,
    cache: Optional[ImageCache] = None,
) -> Tuple[PairedSample, PairedSample]:
    cache = cache or ImageCache()
    first, second = rank_pair_indices(manifest, kind, rng, allow_self_pair)
    return _paired_sample(manifest, first, cache), _paired_sample(manifest, second, cache)


def pairable_kinds(manifest: DatasetManifest, allow_self_pair: bool = False) -> List[str]:
    minimum = 1 if allow_self_pair else 2
    return [kind for kind, rows in manifest.indices_by_kind().items() if len(rows) >= minimum]


def _crop(sample: PairedSample, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, Tuple[int, int]]:
    height, width, _ = sample.clean.shape
    if height < size or width < size:
        raise DataError(f"Image of {height}x{width} is smaller than the {size}px training crop")
    top = int(rng.integers(0, height - size + 1))
    left = int(rng.integers(0, width - size + 1))
    window = (slice(top, top + size), slice(left, left + size))
    return sample.degraded[window], sample.clean[window], (top, left)


def build_batch(
    manifest: DatasetManifest,
    batch_size: int,
    rng: np.random.Generator,
    crop_size: int,
    cache: Optional[ImageCache] = None,
    allow_self_pair: bool = False,
    warn: bool = True,
) -> Batch:
    """Assemble ``batch_size`` rank pairs with aligned degraded/clean crops.

    When two or more kinds can be paired the batch is forced to hold at least
    two kinds so every sample has a contrastive negative; otherwise the
    contrastive term is disabled for the batch.
    """
    cache = cache or ImageCache()
    kinds = pairable_kinds(manifest, allow_self_pair)
    if not kinds:
        raise DataError("No weather kind has enough rows to form a rank pair")

    anchor_kinds = [kinds[int(rng.integers(len(kinds)))] for _ in range(batch_size)]
    if len(kinds) >= 2 and batch_size >= 2 and len(set(anchor_kinds)) == 1:
        others = [kind for kind in kinds if kind != anchor_kinds[0]]
        anchor_kinds[-1] = others[int(rng.integers(len(others)))]
    contrastive_enabled = len(set(anchor_kinds)) >= 2
    if not contrastive_enabled and warn:
        logger.warning("⚠️  Batch holds a single weather kind; contrastive loss disabled")

    degraded, clean, batch_kinds, partners, rows, crops = [], [], [], [], [], []
    for kind in anchor_kinds:
        pair = rank_pair_indices(manifest, kind, rng, allow_self_pair)
        base = len(rows)
        for offset, index in enumerate(pair):
            crop_degraded, crop_clean, corner = _crop(_paired_sample(manifest, index, cache), crop_size, rng)
            degraded.append(to_tensor(crop_degraded))
            clean.append(to_tensor(crop_clean))
            batch_kinds.append(kind)
            partners.append(base + 1 - offset)
            rows.append(index)
            crops.append(corner)

    return Batch(
        degraded=torch.stack(degraded),
        clean=torch.stack(clean),
        kinds=batch_kinds,
        partners=partners,
        rows=rows,
        crops=crops,
        contrastive_enabled=contrastive_enabled,
    )


def _scalar(value) -> float:
    return value.detach().item() if torch.is_tensor(value) else float(value)


def lr_at(epoch: int, config: TrainConfig, stage: int = 1) -> float:
    """Constant through ``decay_start_epoch``, then linear decay to 0 at the end of the stage"""
    base = config.lr if stage == 1 else config.stage2_lr
    total = config.stage1_epochs if stage == 1 else config.stage2_epochs
    start = min(config.decay_start_epoch, total)
    if epoch <= start or total == start:
        return base
    return base * max(0.0, (total - epoch) / (total - start))


def stage_rng(config: TrainConfig, stage: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, stage])))


class Trainer:
    """Runs the epochs of one stage, logging every step and checkpointing every epoch"""

    def __init__(
        self,
        model: UtilityIR,
        config: TrainConfig,
        manifest: DatasetManifest,
        out_dir: str,
        stage: int = 1,
    ):
        self.model = model.to(config.device)
        self.config = config
        self.manifest = manifest
        self.out_dir = out_dir
        self.stage = stage
        self.epochs = config.stage1_epochs if stage == 1 else config.stage2_epochs
        self.steps_per_epoch = config.steps_per_epoch or max(1, len(manifest) // (2 * config.batch_size))
        self.optimizer = torch.optim.AdamW(
            self.model.parameters(),
            lr=lr_at(0, config, stage),
            betas=config.betas,
            weight_decay=config.weight_decay,
        )
        self.rng = stage_rng(config, stage)
        self.cache = ImageCache()
        self.epoch = 0
        self.step = 0
        self.extractor = build_perceptual_extractor(config).to(config.device) if stage == 1 else None
        self.weights = config.loss_weights if stage == 1 else LossWeights(cl=0.0, l1=config.lambda_l1, ssim=config.lambda_ssim, per=0.0)
        self.use_contrastive = config.use_contrastive and stage == 1
        if self.use_contrastive and len(pairable_kinds(manifest, config.allow_self_pair)) < 2:
            logger.warning("⚠️  Manifest has a single pairable weather kind; contrastive loss disabled")
            self.use_contrastive = False
        os.makedirs(out_dir, exist_ok=True)

    def restore_state(self, checkpoint: Checkpoint) -> None:
        """Continue from the epoch after ``checkpoint``"""
        self.model.load_state_dict(checkpoint.model_state)
        if checkpoint.optimizer_state is not None:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        if checkpoint.rng_state:
            self.rng.bit_generator.state = checkpoint.rng_state
        if checkpoint.torch_rng_state is not None:
            torch.set_rng_state(checkpoint.torch_rng_state)
        self.epoch = checkpoint.epoch + 1
        self.step = checkpoint.step
        logger.info(f"🔄 Resuming stage {self.stage} at epoch {self.epoch}, step {self.step}")

    def snapshot(self, epoch: int) -> Checkpoint:
        return Checkpoint(
            model_state={name: t.detach().cpu().clone() for name, t in self.model.state_dict().items()},
            config=self.config,
            epoch=epoch,
            stage=self.stage,
            step=self.step,
            optimizer_state=self.optimizer.state_dict(),
            rng_state=self.rng.bit_generator.state,
            torch_rng_state=torch.get_rng_state(),
        )

    def components(self, batch: Batch) -> LossComponents:
        if self.stage == 2:
            restored = self.model.restore(batch.degraded)
            return LossComponents(l1=l1(restored, batch.clean), ssim=ssim_loss(restored, batch.clean))

        type_map, severity = self.model.encode(batch.degraded)
        restored = self.model.restore_with(batch.degraded, type_map, severity)
        with torch.no_grad():
            target_quality = gt_quality(batch.degraded, batch.clean, self.config.psnr_cap)
        predicted_quality = self.model.predict_iqa(severity)
        components = LossComponents(
            severity=severity_loss(self.config.severity_regime, predicted_quality, target_quality, self.config.margin),
            l1=l1(restored, batch.clean),
            ssim=ssim_loss(restored, batch.clean),
            perceptual=perceptual(restored, batch.clean, self.extractor),
        )
        if self.use_contrastive and batch.contrastive_enabled:
            contrastive = batch_contrastive(type_map, batch.kinds, batch.partners, self.config.temperature)
            if contrastive is not None:
                components.contrastive = contrastive
        return components

    def _dump_batch(self, batch: Batch) -> str:
        path = os.path.join(self.out_dir, NAN_DUMP_NAME)
        np.savez(
            path,
            degraded=batch.degraded.detach().cpu().numpy(),
            clean=batch.clean.detach().cpu().numpy(),
            kinds=np.asarray(batch.kinds),
            rows=np.asarray(batch.rows),
            crops=np.asarray(batch.crops),
            step=self.step,
        )
        return path

    def train_step(self, batch: Batch) -> Dict[str, float]:
        self.model.train()
        components = self.components(batch)
        loss = total_loss(components, self.weights)
        if not torch.isfinite(loss):
            dump = self._dump_batch(batch)
            logger.error(f"❌ Non-finite loss at step {self.step}; batch written to {dump}")
            raise NumericFailure(f"Loss became {loss.item()} at step {self.step}", dump_path=dump)
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        self.optimizer.step()
        self.step += 1
        return {
            "loss": loss.item(),
            "severity": _scalar(components.severity),
            "contrastive": _scalar(components.contrastive),
            "l1": _scalar(components.l1),
            "ssim": _scalar(components.ssim),
            "perceptual": _scalar(components.perceptual),
        }

    def _rewind_log(self, log_path: str) -> None:
        """Keep earlier stages and this stage up to the current step; a rerun or resume then appends cleanly"""
        if not os.path.isfile(log_path):
            return
        with open(log_path, "r", encoding="utf-8") as f:
            lines = f.readlines()
        kept = []
        for line in lines:
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue  # partial line from an interrupted write
            if record["stage"] < self.stage or (record["stage"] == self.stage and record["step"] <= self.step):
                kept.append(line if line.endswith("\n") else line + "\n")
        if len(kept) != len(lines):
            logger.info(f"🔄 Dropping {len(lines) - len(kept)} stale records from {log_path}")
        with open(log_path, "w", encoding="utf-8") as f:
            f.writelines(kept)

    def run(self, until_epoch: Optional[int] = None) -> Checkpoint:
        """Train up to ``until_epoch`` (exclusive; default all epochs) and return the last state"""
        stop = self.epochs if until_epoch is None else min(until_epoch, self.epochs)
        log_path = os.path.join(self.out_dir, LOG_NAME)
        checkpoint = self.snapshot(self.epoch - 1)
        logger.info(
            f"🔄 Stage {self.stage}: epochs {self.epoch}..{stop - 1}, {self.steps_per_epoch} steps each, "
            f"regime={self.config.severity_regime if self.stage == 1 else 'pixel'}"
        )
        self._rewind_log(log_path)
        with open(log_path, "a", encoding="utf-8") as log:
            for epoch in range(self.epoch, stop):
                lr = lr_at(epoch, self.config, self.stage)
                for group in self.optimizer.param_groups:
                    group["lr"] = lr
                progress = tqdm(range(self.steps_per_epoch), desc=f"stage {self.stage} epoch {epoch}", leave=False, disable=None)
                for _ in progress:
                    batch = build_batch(
                        self.manifest,
                        self.config.batch_size,
                        self.rng,
                        self.config.crop_size,
                        self.cache,
                        self.config.allow_self_pair,
                        warn=False,
                    ).to(self.config.device)
                    terms = self.train_step(batch)
                    record = {"stage": self.stage, "epoch": epoch, "step": self.step, "lr": lr, **terms}
                    log.write(json.dumps(record) + "\n")
                    if self.step % self.config.log_every == 0:
                        progress.set_postfix(loss=f"{terms['loss']:.4f}")
                        logger.debug(f"step {self.step}: {terms}")
                log.flush()
                self.epoch = epoch + 1
                checkpoint = self.snapshot(epoch)
                checkpoint.save(os.path.join(self.out_dir, f"stage{self.stage}_last.uir"))
                logger.info(f"📊 Stage {self.stage} epoch {epoch}: loss {terms['loss']:.4f}, lr {lr:.2e}")

        if self.epoch >= self.epochs:
            path = checkpoint.save(os.path.join(self.out_dir, f"stage{self.stage}.uir"))
            logger.info(f"✅ Stage {self.stage} finished; checkpoint at {path}")
        return checkpoint


def _seed_everything(config: TrainConfig) -> None:
    torch.manual_seed(config.seed)
    torch.use_deterministic_algorithms(True, warn_only=True)


def train_stage1(
    config: TrainConfig,
    manifest: DatasetManifest,
    out_dir: str,
    resume: Optional[Union[str, Checkpoint]] = None,
    until_epoch: Optional[int] = None,
) -> Checkpoint:
    """Full-objective training from scratch (or from a stage-1 checkpoint)"""
    _seed_everything(config)
    write_effective_config(config, out_dir)
    trainer = Trainer(UtilityIR.from_config(config), config, manifest, out_dir, stage=1)
    if resume is not None:
        trainer.restore_state(Checkpoint.load(resume) if isinstance(resume, str) else resume)
    return trainer.run(until_epoch)


def train_stage2(
    checkpoint: Union[str, Checkpoint],
    manifest: DatasetManifest,
    out_dir: str,
    config: Optional[TrainConfig] = None,
    resume: Optional[Union[str, Checkpoint]] = None,
    until_epoch: Optional[int] = None,
) -> Checkpoint:
    """Pixel-fidelity fine-tuning of a stage-1 model with a fresh optimizer at the smaller lr"""
    source = Checkpoint.load(checkpoint) if isinstance(checkpoint, str) else checkpoint
    config = config or source.config
    _seed_everything(config)
    write_effective_config(config, out_dir)
    model = source.build_model()
    trainer = Trainer(model, config, manifest, out_dir, stage=2)
    if resume is not None:
        trainer.restore_state(Checkpoint.load(resume) if isinstance(resume, str) else resume)
    if not trainer.epochs:
        logger.info("Stage 2 has no epochs configured; keeping the stage-1 weights")
    return trainer.run(until_epoch)


__all__ = [
    "ImageCache",
    "Batch",
    "rank_pair_indices",
    "sample_rank_pair",
    "pairable_kinds",
    "build_batch",
    "lr_at",
    "Trainer",
    "train_stage1",
    "train_stage2",
]
