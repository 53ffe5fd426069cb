#!/usr/bin/env python3
"""
UtilityIR command line
======================
Commands:
  synth     generate a synthetic paired corpus and its manifest
  train     stage-1 then stage-2 training
  eval      PSNR/SSIM report before and after restoration
  restore   restore an image or a directory (optionally progressively)
  modulate  restoration-level modulation contact sheet
  ablate    severity-loss regime comparison
  summary   model parameter summary
  ladder    ranker report over a severity ladder of one scene
  ingest    manifest for a real paired dataset (degraded and clean folders)
  combined  progressive removal of stacked weather with a stability report

Exit codes: 0 success, 2 bad arguments or config, 3 data error,
4 numeric failure, 5 checkpoint error.

Usage: python -m utility_ir <command> --help
"""
import functools
import json
import logging
import os
import sys
from typing import Dict, Optional, Sequence, Tuple

import click
import numpy as np
from dotenv import load_dotenv

from .ablation import run_ablation
from .checkpoint import Checkpoint
from .config import SEVERITY_REGIMES, TrainConfig, load_config, write_effective_config
from .errors import UtilityIRError
from .imaging import contact_sheet, list_images, load_image, save_image
from .inference_toolkit import Restorer
from .manifest import WEATHER_KINDS, DatasetManifest, load_manifest, pair_directories
from .metrics import adjacent_monotonicity, evaluate, evaluate_combined, gt_quality, ranker_statistics
from .restore_net import UtilityIR, model_summary
from .trainer import train_stage1, train_stage2
from .weather_synth import generate_corpus, make_clean_scenes, severity_ladder

logger = logging.getLogger(__name__)


def handle_errors(func):
    """Map toolkit errors onto their exit codes"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except UtilityIRError as exc:
            logger.error(f"❌ {type(exc).__name__}: {exc}")
            sys.exit(exc.exit_code)

    return wrapper


def _parse_sets(values: Sequence[str]) -> Dict[str, str]:
    overrides = {}
    for item in values:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise click.BadParameter(f"expected KEY=VALUE, got '{item}'", param_hint="--set")
        overrides[key.strip()] = value.strip()
    return overrides


def _parse_floats(text: str, option: str) -> Tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated numbers, got '{text}'", param_hint=option)


def _parse_kinds(text: str) -> Tuple[str, ...]:
    selected = tuple(kind.strip() for kind in text.split(",") if kind.strip())
    bad = [kind for kind in selected if kind not in WEATHER_KINDS]
    if bad or not selected:
        raise click.BadParameter(f"unknown weather kinds {bad}", param_hint="--kinds")
    return selected


def config_options(func):
    """--config / --seed / --set shared by the commands that train or build models"""
    func = click.option("--set", "sets", multiple=True, metavar="KEY=VALUE", help="Override one config field")(func)
    func = click.option("--seed", type=int, default=None, help="Override the config seed")(func)
    func = click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="key=value config file")(func)
    return func


def resolve_config(config_path: Optional[str], seed: Optional[int], sets: Sequence[str]) -> TrainConfig:
    overrides = _parse_sets(sets)
    if seed is not None:
        overrides["seed"] = seed
    return load_config(config_path, overrides)


def _write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(payload if isinstance(payload, str) else json.dumps(payload, indent=2))


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
def cli(verbose: bool):
    """Degradation type- and severity-aware all-in-one weather restoration"""
    load_dotenv()
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


@cli.command()
@config_options
@click.option("--out", required=True, type=click.Path(file_okay=False), help="Corpus directory")
@click.option("--clean", "clean_dir", type=click.Path(file_okay=False), default=None, help="Clean images; procedural scenes if omitted")
@click.option("--scenes", type=int, default=8, show_default=True, help="Procedural scene count")
@click.option("--size", type=int, default=64, show_default=True, help="Procedural scene side")
@click.option("--kinds", default=",".join(WEATHER_KINDS), show_default=True, help="Comma-separated weather kinds")
@click.option("--per-kind", type=int, default=None, help="Samples per kind (default: one per clean image)")
@click.option("--workers", type=int, default=1, show_default=True)
@handle_errors
def synth(config_path, seed, sets, out, clean_dir, scenes, size, kinds, per_kind, workers):
    """Generate a paired synthetic corpus and manifest"""
    config = resolve_config(config_path, seed, sets)
    write_effective_config(config, out)
    if clean_dir is None:
        clean_dir = os.path.join(out, "clean")
        for index, scene in enumerate(make_clean_scenes(scenes, size, config.seed)):
            save_image(os.path.join(clean_dir, f"scene_{index:04d}.png"), scene)
    selected = _parse_kinds(kinds)
    count = per_kind or len(list_images(clean_dir))
    manifest = generate_corpus(clean_dir, out, {kind: count for kind in selected}, seed=config.seed, workers=workers)
    click.echo(f"{len(manifest)} rows, manifest digest {manifest.digest()}")


@cli.command()
@config_options
@click.option("--manifest", "manifest_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--resume", type=click.Path(dir_okay=False), default=None, help="Continue from a stage-1 or stage-2 checkpoint")
@handle_errors
def train(config_path, seed, sets, manifest_path, out, resume):
    """Stage 1 (full objective) followed by stage 2 (pixel fidelity)"""
    config = resolve_config(config_path, seed, sets)
    manifest = load_manifest(manifest_path)
    write_effective_config(config, out)
    resume_ckpt = Checkpoint.load(resume) if resume else None

    if resume_ckpt is None or resume_ckpt.stage == 1:
        stage1 = train_stage1(config, manifest, out, resume=resume_ckpt)
        stage2 = train_stage2(stage1, manifest, out, config=config)
    else:
        stage1 = Checkpoint.load(os.path.join(out, "stage1.uir"))
        stage2 = train_stage2(stage1, manifest, out, config=config, resume=resume_ckpt)
    click.echo(f"finished at stage {stage2.stage}, step {stage2.step}")


@cli.command(name="eval")
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Accepted for symmetry; evaluation is deterministic")
@handle_errors
def evaluate_command(checkpoint_path, manifest_path, out, seed):
    """PSNR/SSIM per kind and overall, before and after restoration"""
    manifest = load_manifest(manifest_path)
    checkpoint = Checkpoint.load(checkpoint_path)
    write_effective_config(checkpoint.config, out)
    restorer = Restorer(checkpoint.build_model(), checkpoint.config.device)
    report = evaluate(manifest, restorer.restore, checkpoint.config.psnr_cap)
    _write_json(os.path.join(out, "report.json"), report.to_json())
    click.echo(report.to_json())


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.argument("source", type=click.Path(exists=True))
@click.option("--iters", type=click.IntRange(min=1), default=1, show_default=True, help="Progressive restoration passes")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Accepted for symmetry; restoration is deterministic")
@handle_errors
def restore(checkpoint_path, source, iters, out, seed):
    """Restore one image or every image in a directory"""
    checkpoint = Checkpoint.load(checkpoint_path)
    write_effective_config(checkpoint.config, out)
    restorer = Restorer(checkpoint.build_model(), checkpoint.config.device)
    paths = list_images(source) if os.path.isdir(source) else [source]
    for path in paths:
        stem = os.path.splitext(os.path.basename(path))[0]
        outputs = restorer.iterative_restore(load_image(path), iters)
        if iters == 1:
            save_image(os.path.join(out, f"{stem}.png"), outputs[0])
        else:
            for step, image in enumerate(outputs, start=1):
                save_image(os.path.join(out, f"{stem}_pass{step}.png"), image)
    click.echo(f"restored {len(paths)} image(s) with {iters} pass(es) into {out}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--alphas", default="-0.5,0,0.5,1,1.5", show_default=True, help="Comma-separated modulation parameters")
@click.option("--reference", type=click.Path(exists=True, dir_okay=False), default=None, help="Clean image for PSNR")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", type=int, default=None, help="Accepted for symmetry; modulation is deterministic")
@handle_errors
def modulate(checkpoint_path, image, alphas, reference, out, seed):
    """Contact sheet of restorations along the latent severity direction"""
    values = _parse_floats(alphas, "--alphas")
    checkpoint = Checkpoint.load(checkpoint_path)
    write_effective_config(checkpoint.config, out)
    restorer = Restorer(checkpoint.build_model(), checkpoint.config.device)
    sheet, metrics = restorer.modulation_grid(
        load_image(image), values, load_image(reference) if reference else None
    )
    save_image(os.path.join(out, "modulation.png"), sheet)
    _write_json(os.path.join(out, "modulation.json"), metrics)
    click.echo(json.dumps(metrics, indent=2))


@cli.command()
@config_options
@click.option("--manifest", "manifest_path", required=True, type=click.Path(dir_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--regime", "regimes", multiple=True, type=click.Choice(SEVERITY_REGIMES), help="Repeatable; default direct, mrl, mqrl")
@click.option("--no-cl", is_flag=True, help="Switch the contrastive type loss off")
@handle_errors
def ablate(config_path, seed, sets, manifest_path, out, regimes, no_cl):
    """Identical-seed models that differ only in severity supervision"""
    config = resolve_config(config_path, seed, sets)
    manifest = load_manifest(manifest_path)
    report = run_ablation(
        config, manifest, out, regimes or ("direct", "mrl", "mqrl"), use_contrastive=False if no_cl else None
    )
    click.echo(report.to_json())


@cli.command()
@config_options
@handle_errors
def summary(config_path, seed, sets):
    """Parameter counts of the configured model"""
    config = resolve_config(config_path, seed, sets)
    click.echo(json.dumps(model_summary(UtilityIR.from_config(config)), indent=2))


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--kind", type=click.Choice(WEATHER_KINDS), required=True)
@click.option("--steps", type=click.IntRange(min=2), default=9, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True, help="Generator seed of the ladder")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def ladder(checkpoint_path, image, kind, steps, seed, out):
    """Predicted vs ground-truth quality over a severity ladder of one clean scene"""
    checkpoint = Checkpoint.load(checkpoint_path)
    write_effective_config(checkpoint.config, out)
    restorer = Restorer(checkpoint.build_model(), checkpoint.config.device)
    severities = [float(s) for s in np.linspace(0.1, 0.9, steps)]
    samples = severity_ladder(load_image(image), kind, severities, seed=seed)
    rows = [
        {
            "severity": sample.spec.severity,
            "predicted": restorer.quality(sample.degraded),
            "ground_truth": float(gt_quality(sample.degraded, sample.clean, checkpoint.config.psnr_cap)),
        }
        for sample in samples
    ]
    predicted = [row["predicted"] for row in rows]
    report = {
        "kind": kind,
        "steps": rows,
        "monotonic_fraction": adjacent_monotonicity(predicted),
        **ranker_statistics(predicted, [row["ground_truth"] for row in rows]),
    }
    save_image(os.path.join(out, "ladder.png"), contact_sheet([sample.degraded for sample in samples]))
    _write_json(os.path.join(out, "ladder.json"), report)
    click.echo(json.dumps(report, indent=2))


@cli.command()
@click.option("--degraded", "degraded_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--clean", "clean_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--kind", type=click.Choice(WEATHER_KINDS), required=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False), help="Manifest CSV to write")
@click.option("--append", is_flag=True, help="Add the rows to an existing manifest at --out")
@handle_errors
def ingest(degraded_dir, clean_dir, kind, out, append):
    """Pair same-named images of a degraded and a clean folder into a manifest"""
    existing = load_manifest(out) if append and os.path.isfile(out) else None
    manifest = pair_directories(degraded_dir, clean_dir, kind, out)
    if existing is not None:
        manifest = DatasetManifest(root=manifest.root, rows=existing.rows + manifest.rows).validate()
        manifest.save(out)
    click.echo(f"{len(manifest)} rows, manifest digest {manifest.digest()}")


@cli.command()
@click.option("--checkpoint", "checkpoint_path", required=True, type=click.Path(dir_okay=False))
@click.option("--kinds", default="haze,rain_streak", show_default=True, help="Weather stacked in this order")
@click.option("--clean", "clean_dir", type=click.Path(exists=True, file_okay=False), default=None, help="Clean images; procedural scenes if omitted")
@click.option("--scenes", type=int, default=20, show_default=True, help="Procedural scene count")
@click.option("--size", type=int, default=64, show_default=True, help="Procedural scene side")
@click.option("--passes", type=int, default=None, help="Restoration passes (default: one per stacked kind)")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@handle_errors
def combined(checkpoint_path, kinds, clean_dir, scenes, size, passes, seed, out):
    """Stack several weathers on clean images and remove them progressively"""
    selected = _parse_kinds(kinds)
    checkpoint = Checkpoint.load(checkpoint_path)
    write_effective_config(checkpoint.config, out)
    restorer = Restorer(checkpoint.build_model(), checkpoint.config.device)
    if clean_dir is not None:
        images = [load_image(path) for path in list_images(clean_dir)]
    else:
        images = make_clean_scenes(scenes, size, seed)
    report = evaluate_combined(restorer, images, selected, seed=seed, passes=passes, cap=checkpoint.config.psnr_cap)
    _write_json(os.path.join(out, "combined_report.json"), report.to_json())
    headline = {
        "stability": report.stability,
        "later_pass_gain": report.later_pass_gain,
        "quality_gain": report.quality_gain,
    }
    click.echo(json.dumps(headline, indent=2))


def main():
    cli()


__all__ = ["cli", "main"]
