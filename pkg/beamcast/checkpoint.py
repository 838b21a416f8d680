"""
Versioned binary checkpoint

Layout (little-endian):
    b"BEAMCAST" | u32 version | u32 header length | JSON header | f32 payload | u32 CRC32

The header is canonical JSON (sorted keys, no whitespace) holding the model
and train configs, scaler, epoch, Adam hyperparameters and a tensor table of
(name, kind, shape, offset). The CRC covers every byte before the trailer.
"""

import json
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from beamcast.beamnet import ModelConfig, ModelParams, init_params
from beamcast.errors import CheckpointError
from beamcast.harness import ResumeState, TrainConfig
from beamcast.numcore import AdamState
from beamcast.path_utils import atomic_write_bytes
from beamcast.pipeline import StructScaler

logger = logging.getLogger(__name__)

MAGIC = b"BEAMCAST"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
_U32 = struct.Struct("<I")
_PREAMBLE = len(MAGIC) + 2 * _U32.size


@dataclass
class Checkpoint:
    params: ModelParams
    scaler: StructScaler
    epoch: int
    train_config: Optional[TrainConfig] = None
    adam_state: Optional[AdamState] = None

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config

    def resume_state(self) -> ResumeState:
        if self.adam_state is None:
            raise CheckpointError("Checkpoint has no optimizer state; cannot resume")
        return ResumeState(self.params, self.adam_state, self.scaler, self.epoch)


def _tensor_table(ckpt: Checkpoint) -> list[tuple[str, str, np.ndarray]]:
    entries = [(name, "param", t.data) for name, t in ckpt.params.tensors.items()]
    entries += [(name, "buffer", arr) for name, arr in sorted(ckpt.params.buffer_arrays().items())]
    if ckpt.adam_state is not None:
        for name in ckpt.params.tensors:
            if name in ckpt.adam_state.first_moment:
                entries.append((name, "adam_m", ckpt.adam_state.first_moment[name]))
                entries.append((name, "adam_v", ckpt.adam_state.second_moment[name]))
    return entries


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    """Serialize to the canonical byte layout"""
    table = []
    chunks = []
    offset = 0
    for name, kind, array in _tensor_table(ckpt):
        data = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE).tobytes()
        table.append({"name": name, "kind": kind, "shape": list(np.shape(array)), "offset": offset})
        chunks.append(data)
        offset += len(data)

    adam = None
    if ckpt.adam_state is not None:
        s = ckpt.adam_state
        adam = {"step": s.step, "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps}

    header = {
        "model": ckpt.model_config.to_dict(),
        "train": ckpt.train_config.to_dict() if ckpt.train_config else None,
        "scaler": ckpt.scaler.to_dict(),
        "epoch": int(ckpt.epoch),
        "adam": adam,
        "payload_bytes": offset,
        "tensors": table,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + _U32.pack(FORMAT_VERSION) + _U32.pack(len(header_bytes)) + header_bytes + b"".join(chunks)
    return body + _U32.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    """
    Parse and validate checkpoint bytes.

    Raises:
        CheckpointError: bad magic, unsupported version, truncation, checksum
            mismatch or an inconsistent tensor table
    """
    if len(blob) < _PREAMBLE + _U32.size:
        raise CheckpointError(f"Checkpoint truncated ({len(blob)} bytes)")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError("Not a beamcast checkpoint (bad magic)")
    (version,) = _U32.unpack_from(blob, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    (header_len,) = _U32.unpack_from(blob, len(MAGIC) + _U32.size)
    if _PREAMBLE + header_len + _U32.size > len(blob):
        raise CheckpointError("Checkpoint truncated inside header")

    body, trailer = blob[:-_U32.size], blob[-_U32.size :]
    if zlib.crc32(body) & 0xFFFFFFFF != _U32.unpack(trailer)[0]:
        raise CheckpointError("Checkpoint checksum mismatch (truncated or corrupted)")

    try:
        header = json.loads(body[_PREAMBLE : _PREAMBLE + header_len].decode("utf-8"))
        model_cfg = ModelConfig.from_dict(header["model"])
        train_cfg = TrainConfig.from_dict(header["train"]) if header["train"] else None
        scaler = StructScaler.from_dict(header["scaler"])
        table = header["tensors"]
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"Unreadable checkpoint header: {e}")

    payload = body[_PREAMBLE + header_len :]
    if len(payload) != header.get("payload_bytes"):
        raise CheckpointError(f"Payload has {len(payload)} bytes, header declares {header.get('payload_bytes')}")

    params = init_params(model_cfg, seed=0, dtype=np.float32)
    arrays: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "adam_m": {}, "adam_v": {}}
    for entry in table:
        try:
            name, kind, start = entry["name"], entry["kind"], int(entry["offset"])
            shape = tuple(int(n) for n in entry["shape"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"Malformed tensor table entry {entry!r}: {e}")
        if kind not in arrays:
            raise CheckpointError(f"Tensor {name} has unknown kind {kind!r}")
        count = int(np.prod(shape, dtype=np.int64))
        end = start + count * PAYLOAD_DTYPE.itemsize
        if start < 0 or end > len(payload):
            raise CheckpointError(f"Tensor {name} runs past the payload")
        array = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=count, offset=start).reshape(shape)
        arrays[kind][name] = array.astype(np.float32)

    for name, tensor in params.tensors.items():
        stored = arrays["param"].get(name)
        if stored is None or stored.shape != tensor.shape:
            raise CheckpointError(f"Parameter {name} missing or mis-shaped in checkpoint")
        tensor.data = stored.copy()
    try:
        params.load_buffer_arrays(arrays["buffer"])
    except KeyError as e:
        raise CheckpointError(f"Batchnorm statistics missing: {e}")

    adam_state = None
    if header.get("adam"):
        a = header["adam"]
        adam_state = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], step=a["step"])
        adam_state.first_moment = {k: v.copy() for k, v in arrays["adam_m"].items()}
        adam_state.second_moment = {k: v.copy() for k, v in arrays["adam_v"].items()}

    return Checkpoint(params, scaler, int(header["epoch"]), train_cfg, adam_state)


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename)"""
    path = atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info("Saved checkpoint %s (epoch %d)", path, ckpt.epoch)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes())


def describe(ckpt: Checkpoint) -> dict[str, Any]:
    """Short JSON-able description for status output"""
    return {
        "epoch": ckpt.epoch,
        "parameters": ckpt.params.num_parameters(),
        "num_beams": ckpt.model_config.num_beams,
        "image_size": ckpt.model_config.image_size,
        "has_optimizer_state": ckpt.adam_state is not None,
    }
