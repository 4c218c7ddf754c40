"""
Binary checkpoints.

Layout (little-endian)::

    b"MUSCLCKPT"
    u32      format version
    u32      config blob length, then the UTF-8 JSON blob
             {"arch": ..., "mode": ..., "run": ..., "step": ...}
    u32      tensor count
    repeated u32 name length, UTF-8 name, tensor (MUT0 serialization)

Θ_m tensors come first in parameter order, then Θ_c (meta mode only). The
JSON blob is written with sorted keys and no whitespace, so save -> load ->
save is byte-identical.
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

from django.conf import settings

from .config import RunConfig
from .exceptions import CheckpointError, ConfigError
from .nets import ArchConfig, ModelParams, WeightNetParams
from .services.training import TrainMode, TrainState
from .tensor import Tensor, read_tensor, write_tensor

logger = logging.getLogger(__name__)

MAGIC = b"MUSCLCKPT"


@dataclass(frozen=True)
class Checkpoint:
    arch: ArchConfig
    run: RunConfig
    theta_m: ModelParams
    theta_c: WeightNetParams | None
    step: int

    @property
    def mode(self) -> TrainMode:
        return TrainMode.PLAIN if self.theta_c is None else TrainMode.META

    @classmethod
    def from_state(cls, state: TrainState, run: RunConfig) -> Checkpoint:
        theta_c = state.theta_c if TrainMode(run.mode) == TrainMode.META else None
        return cls(
            arch=run.arch_config(),
            run=run,
            theta_m=state.theta_m,
            theta_c=theta_c,
            step=state.step,
        )

    def require_weight_net(self) -> WeightNetParams:
        if self.theta_c is None:
            raise CheckpointError("checkpoint was trained in plain mode and has no weighting net")
        return self.theta_c


def _blob(ckpt: Checkpoint) -> bytes:
    # The output location is not part of the run, so it stays out of the echo.
    run = {k: v for k, v in ckpt.run.to_dict().items() if k != "output_dir"}
    payload = {
        "arch": ckpt.arch.to_dict(),
        "mode": ckpt.mode.value,
        "run": run,
        "step": ckpt.step,
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_checkpoint(stream: BinaryIO, ckpt: Checkpoint) -> None:
    stream.write(MAGIC)
    stream.write(struct.pack("<I", settings.CHECKPOINT_FORMAT_VERSION))
    blob = _blob(ckpt)
    stream.write(struct.pack("<I", len(blob)))
    stream.write(blob)
    named: list[tuple[str, Tensor]] = list(ckpt.theta_m.items())
    if ckpt.theta_c is not None:
        named.extend(ckpt.theta_c.items())
    stream.write(struct.pack("<I", len(named)))
    for name, tensor in named:
        raw_name = name.encode("utf-8")
        stream.write(struct.pack("<I", len(raw_name)))
        stream.write(raw_name)
        write_tensor(stream, tensor)


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    buf = io.BytesIO()
    write_checkpoint(buf, ckpt)
    return buf.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(checkpoint_to_bytes(ckpt))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {target}: {e}") from e
    logger.info(f"Saved {ckpt.mode.value} checkpoint at step {ckpt.step} to {target}")
    return target


def _unpack(stream: BinaryIO, fmt: str) -> int:
    size = struct.calcsize(fmt)
    raw = stream.read(size)
    if len(raw) != size:
        raise CheckpointError("truncated checkpoint")
    (value,) = struct.unpack(fmt, raw)
    return int(value)


def _read_bytes(stream: BinaryIO, what: str) -> bytes:
    """A u32 length, then exactly that many bytes."""
    length = _unpack(stream, "<I")
    raw = stream.read(length)
    if len(raw) != length:
        raise CheckpointError(f"truncated checkpoint: {what} wants {length} bytes, got {len(raw)}")
    return raw


def read_checkpoint(stream: BinaryIO) -> Checkpoint:
    if stream.read(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    version = _unpack(stream, "<I")
    if version != settings.CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported "
            f"(expected {settings.CHECKPOINT_FORMAT_VERSION})"
        )
    blob = _read_bytes(stream, "config blob")
    try:
        payload = json.loads(blob.decode("utf-8"))
        arch = ArchConfig.from_dict(payload["arch"])
        run = RunConfig.from_dict(payload["run"])
        mode = TrainMode(payload["mode"])
        step = int(payload["step"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, ValueError, ConfigError) as e:
        raise CheckpointError(f"bad checkpoint config blob: {e}") from e

    model: dict[str, Tensor] = {}
    weight_net: dict[str, Tensor] = {}
    for _ in range(_unpack(stream, "<I")):
        try:
            name = _read_bytes(stream, "tensor name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"bad tensor name: {e}") from e
        try:
            tensor = read_tensor(stream)
        except ValueError as e:
            raise CheckpointError(f"bad tensor {name!r}: {e}") from e
        (weight_net if name.startswith("cmw.") else model)[name] = tensor

    if mode == TrainMode.META and not weight_net:
        raise CheckpointError("meta checkpoint is missing the weighting net")
    return Checkpoint(
        arch=arch,
        run=run,
        theta_m=ModelParams(model),
        theta_c=WeightNetParams(weight_net) if weight_net else None,
        step=step,
    )


def load_checkpoint(path: str | Path) -> Checkpoint:
    source = Path(path)
    if not source.is_file():
        raise CheckpointError(f"checkpoint not found: {source}")
    with source.open("rb") as fh:
        return read_checkpoint(fh)
