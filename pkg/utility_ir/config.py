"""
Training and model configuration.

The config file format is the flat ``key=value`` layout python-dotenv reads,
one key per TrainConfig field. Values resolve in this order: explicit
overrides (CLI flags) > config file > UTILITYIR_* environment variables >
field defaults.
"""
import logging
import os
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

from dotenv import dotenv_values
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigError

logger = logging.getLogger(__name__)

SeverityRegime = Literal["none", "mrl", "mqrl", "direct"]
SEVERITY_REGIMES: Tuple[str, ...] = ("none", "mrl", "mqrl", "direct")


class LossWeights(BaseModel):
    """Weights of the total objective; the ranking term itself is unweighted"""

    model_config = {"frozen": True}

    cl: float = Field(0.2, ge=0.0, description="Contrastive type loss weight")
    l1: float = Field(1.0, ge=0.0, description="L1 fidelity weight")
    ssim: float = Field(0.5, ge=0.0, description="SSIM fidelity weight")
    per: float = Field(0.04, ge=0.0, description="Perceptual loss weight")


class TrainConfig(BaseSettings):
    """Full hyperparameter record; snapshotted into every checkpoint.

    Epoch counts follow the full-scale protocol. Desk corpora are tiny, so
    ``steps_per_epoch`` turns an epoch into a fixed step count instead of one
    pass over the manifest.
    """

    model_config = SettingsConfigDict(env_prefix="UTILITYIR_", extra="forbid", validate_default=True)

    # data / schedule
    crop_size: int = Field(256, gt=0, description="Square training crop, aligned between degraded and clean")
    batch_size: int = Field(2, gt=0, description="Anchors per batch; each anchor brings a same-kind partner")
    stage1_epochs: int = Field(40, gt=0, description="Epochs trained with the full objective")
    stage2_epochs: int = Field(30, ge=0, description="Fine-tuning epochs with pixel fidelity losses only")
    steps_per_epoch: Optional[int] = Field(None, gt=0, description="Fixed steps per epoch; None = one manifest pass")
    lr: float = Field(1e-4, gt=0.0, description="Stage-1 learning rate")
    stage2_lr_ratio: float = Field(0.1, gt=0.0, lt=1.0, description="Stage-2 lr as a fraction of the stage-1 lr")
    decay_start_epoch: int = Field(18, ge=0, description="Last epoch at full lr before linear decay")
    beta1: float = Field(0.5, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    weight_decay: float = Field(0.01, ge=0.0)
    seed: int = Field(0, ge=0)

    # objective
    lambda_cl: float = Field(0.2, ge=0.0)
    lambda_l1: float = Field(1.0, ge=0.0)
    lambda_ssim: float = Field(0.5, ge=0.0)
    lambda_per: float = Field(0.04, ge=0.0)
    margin: float = Field(0.05, description="Ranking margin on the [0,1] quality scale")
    temperature: float = Field(0.25, description="Contrastive temperature")
    severity_regime: SeverityRegime = Field("mqrl", description="Severity supervision: none, mrl, mqrl or direct")
    use_contrastive: bool = Field(True, description="Impose the contrastive type loss")
    allow_self_pair: bool = Field(False, description="Let a single-row kind pair with itself")
    perceptual_extractor: Literal["random", "vgg16"] = Field("random")
    perceptual_seed: int = Field(1234, ge=0)
    psnr_cap: float = Field(50.0, gt=0.0)

    # model dims
    downsample: int = Field(4, gt=0, description="Down-sampling ratio S")
    dim: int = Field(128, gt=0, description="Feature / severity dimension D")
    blocks: int = Field(6, gt=0, description="Residual blocks K")
    heads: int = Field(4, gt=0, description="Cross-attention heads h")
    encoder_widths: Tuple[int, int, int] = Field((32, 64, 128))

    # runtime
    device: str = Field("cpu")
    log_every: int = Field(10, gt=0)

    @field_validator("steps_per_epoch", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip() in ("", "None", "none"):
            return None
        return value

    @field_validator("encoder_widths", mode="before")
    @classmethod
    def _split_widths(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
        return value

    @model_validator(mode="after")
    def _check_combinations(self) -> "TrainConfig":
        if self.downsample & (self.downsample - 1):
            raise ValueError(f"downsample must be a power of two, got {self.downsample}")
        if self.crop_size % self.downsample:
            raise ValueError(f"crop_size {self.crop_size} is not divisible by downsample {self.downsample}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.margin < 0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if any(width <= 0 for width in self.encoder_widths):
            raise ValueError("encoder widths must be positive")
        return self

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(cl=self.lambda_cl, l1=self.lambda_l1, ssim=self.lambda_ssim, per=self.lambda_per)

    @property
    def betas(self) -> Tuple[float, float]:
        return (self.beta1, self.beta2)

    @property
    def stage2_lr(self) -> float:
        return self.lr * self.stage2_lr_ratio


def build_config(values: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Validate raw values into a TrainConfig, raising ConfigError on failure"""
    clean = {key.strip().lower(): value for key, value in (values or {}).items() if value is not None}
    try:
        return TrainConfig(**clean)
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Read a key=value config file and apply overrides on top of it"""
    values: Dict[str, Any] = {}
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"Config file not found: {path}")
        values.update(dotenv_values(path))
        logger.debug(f"Loaded {len(values)} config keys from {path}")
    values.update({key: value for key, value in (overrides or {}).items() if value is not None})
    return build_config(values)


def dump_config(config: TrainConfig) -> str:
    """Render the config as key=value text that load_config reads back unchanged"""
    lines = []
    for name, value in config.model_dump().items():
        if value is None:
            continue
        if isinstance(value, (tuple, list)):
            value = ",".join(str(item) for item in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    return "\n".join(lines) + "\n"


def parse_config_text(text: str) -> TrainConfig:
    """Inverse of dump_config for config blocks embedded in checkpoints"""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return build_config(values)


def write_effective_config(config: TrainConfig, out_dir: str) -> str:
    """Echo the effective config into an output directory for provenance"""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "effective_config.env")
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(config))
    return path


__all__ = [
    "LossWeights",
    "TrainConfig",
    "SEVERITY_REGIMES",
    "build_config",
    "load_config",
    "dump_config",
    "parse_config_text",
    "write_effective_config",
]
