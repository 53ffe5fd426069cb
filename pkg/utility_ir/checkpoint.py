"""
Single-file checkpoint container.

Layout (all integers little-endian):
  magic        8 bytes   b"UIRCKPT\\0"
  version      uint32
  header_len   uint64
  config_len   uint64
  header       JSON, sorted keys: epoch, stage, step, RNG state, optimizer
               param groups and the blob index (name, dtype, shape, offset, nbytes)
  config       key=value text block (the TrainConfig snapshot)
  blobs        raw tensor bytes; weights are little-endian float32

Saving the same Checkpoint twice gives identical bytes.
"""
import json
import logging
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import torch

from .config import TrainConfig, dump_config, parse_config_text
from .errors import CheckpointError, ConfigError
from .restore_net import UtilityIR

logger = logging.getLogger(__name__)

MAGIC = b"UIRCKPT\x00"
FORMAT_VERSION = 1
PREAMBLE = struct.Struct("<8sIQQ")

_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.uint8: "|u1",
    torch.bool: "|b1",
}
_TORCH_DTYPES = {code: dtype for dtype, code in _DTYPES.items()}


@dataclass
class Checkpoint:
    """Everything needed to resume training bit-exactly or to rebuild the model"""
    model_state: Dict[str, torch.Tensor]
    config: TrainConfig
    epoch: int = 0
    stage: int = 1
    step: int = 0
    optimizer_state: Optional[Dict[str, Any]] = None
    rng_state: Dict[str, Any] = field(default_factory=dict)
    torch_rng_state: Optional[torch.Tensor] = None

    def save(self, path: str) -> str:
        blobs: List[Tuple[str, torch.Tensor]] = [(f"model.{name}", t) for name, t in self.model_state.items()]
        optimizer = None
        if self.optimizer_state is not None:
            optimizer, optimizer_blobs = _split_optimizer_state(self.optimizer_state)
            blobs += optimizer_blobs
        if self.torch_rng_state is not None:
            blobs.append(("rng.torch", self.torch_rng_state))

        index, payload, offset = [], [], 0
        for name, tensor in blobs:
            data = _tensor_bytes(tensor)
            index.append(
                {
                    "name": name,
                    "dtype": _DTYPES[tensor.dtype],
                    "shape": list(tensor.shape),
                    "offset": offset,
                    "nbytes": len(data),
                }
            )
            payload.append(data)
            offset += len(data)

        header = {
            "format_version": FORMAT_VERSION,
            "epoch": self.epoch,
            "stage": self.stage,
            "step": self.step,
            "rng": self.rng_state,
            "optimizer": optimizer,
            "blobs": index,
        }
        header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        config_bytes = dump_config(self.config).encode("utf-8")

        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        tmp_path = f"{path}.tmp"
        with open(tmp_path, "wb") as f:
            f.write(PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes), len(config_bytes)))
            f.write(header_bytes)
            f.write(config_bytes)
            for data in payload:
                f.write(data)
        os.replace(tmp_path, path)
        logger.debug(f"Saved checkpoint ({len(index)} blobs) to {path}")
        return path

    @classmethod
    def load(cls, path: str) -> "Checkpoint":
        if not os.path.isfile(path):
            raise CheckpointError(f"Checkpoint not found: {path}")
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) < PREAMBLE.size:
            raise CheckpointError(f"{path} is truncated")
        magic, version, header_len, config_len = PREAMBLE.unpack_from(raw, 0)
        if magic != MAGIC:
            raise CheckpointError(f"{path} is not a UtilityIR checkpoint")
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path} has format version {version}, this build reads {FORMAT_VERSION}")

        start = PREAMBLE.size
        if len(raw) < start + header_len + config_len:
            raise CheckpointError(f"{path} is truncated")
        try:
            header = json.loads(raw[start : start + header_len].decode("utf-8"))
            config = parse_config_text(raw[start + header_len : start + header_len + config_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as exc:
            raise CheckpointError(f"{path} has a corrupt header: {exc}") from exc

        data_start = start + header_len + config_len
        tensors: Dict[str, torch.Tensor] = OrderedDict()
        for entry in header["blobs"]:
            begin = data_start + entry["offset"]
            end = begin + entry["nbytes"]
            if end > len(raw):
                raise CheckpointError(f"{path} is truncated inside blob {entry['name']}")
            array = np.frombuffer(raw[begin:end], dtype=np.dtype(entry["dtype"])).copy()
            tensor = torch.from_numpy(array.astype(array.dtype.newbyteorder("="), copy=False))
            tensors[entry["name"]] = tensor.to(_TORCH_DTYPES[entry["dtype"]]).reshape(entry["shape"])

        model_state = OrderedDict(
            (name[len("model.") :], tensor) for name, tensor in tensors.items() if name.startswith("model.")
        )
        optimizer_state = None
        if header.get("optimizer") is not None:
            optimizer_state = _join_optimizer_state(header["optimizer"], tensors)
        return cls(
            model_state=model_state,
            config=config,
            epoch=header["epoch"],
            stage=header["stage"],
            step=header["step"],
            optimizer_state=optimizer_state,
            rng_state=header.get("rng") or {},
            torch_rng_state=tensors.get("rng.torch"),
        )

    def build_model(self) -> UtilityIR:
        """Rebuild the UtilityIR network described by the config snapshot and load the weights"""
        model = UtilityIR.from_config(self.config)
        try:
            model.load_state_dict(self.model_state)
        except RuntimeError as exc:
            raise CheckpointError(f"Checkpoint weights do not fit the configured model: {exc}") from exc
        return model


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    if tensor.dtype not in _DTYPES:
        raise CheckpointError(f"Unsupported tensor dtype {tensor.dtype}")
    array = tensor.detach().cpu().contiguous().numpy()
    return array.astype(np.dtype(_DTYPES[tensor.dtype]), copy=False).tobytes()


def _split_optimizer_state(state_dict: Dict[str, Any]) -> Tuple[Dict[str, Any], List[Tuple[str, torch.Tensor]]]:
    """Optimizer state_dict -> (JSON part, tensor blobs)"""
    blobs, scalars = [], {}
    for param_id, values in sorted(state_dict["state"].items()):
        entry = {}
        for key, value in sorted(values.items()):
            if torch.is_tensor(value):
                blobs.append((f"optim.{param_id}.{key}", value))
                entry[key] = None
            else:
                entry[key] = value
        scalars[str(param_id)] = entry
    return {"param_groups": state_dict["param_groups"], "state": scalars}, blobs


def _join_optimizer_state(header: Dict[str, Any], tensors: Dict[str, torch.Tensor]) -> Dict[str, Any]:
    state = {}
    for param_id, entry in header["state"].items():
        state[int(param_id)] = {
            key: tensors[f"optim.{param_id}.{key}"] if value is None else value for key, value in entry.items()
        }
    return {"state": state, "param_groups": header["param_groups"]}


def load_model(path: str) -> UtilityIR:
    """Load a checkpoint and return the model in eval mode"""
    model = Checkpoint.load(path).build_model()
    model.eval()
    return model


__all__ = ["Checkpoint", "FORMAT_VERSION", "MAGIC", "load_model"]
