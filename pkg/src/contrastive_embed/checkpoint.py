"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"TSCN" | u32 format version | u32 header length | header JSON | float32 payload

The payload holds, for every parameterised layer in declaration order, the weight array
followed by the bias array, each flattened in C order.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import numpy.typing as npt
import pydantic
from pydantic import Field

from .encoder import EncoderParams, layer_shapes, param_shapes
from .exceptions import CheckpointFormatError, ContrastiveEmbedError
from .models import ConfigModel, KernelSpec, LayerSpec

logger = logging.getLogger(__name__)

MAGIC = b"TSCN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_FLOAT = np.dtype("<f4")


class CheckpointHeader(ConfigModel):
    layers: list[LayerSpec]
    backbone_len: int = Field(ge=0)
    input_shape: tuple[int, int, int]
    frozen: list[bool]
    stage: str
    kernel: KernelSpec
    seed: int = Field(ge=0)
    param_count: int = Field(ge=0)


@dataclass(frozen=True)
class Checkpoint:
    params: EncoderParams
    stage: str
    kernel: KernelSpec
    seed: int


def encode_checkpoint(
    params: EncoderParams,
    *,
    stage: str = "final",
    kernel: Optional[KernelSpec] = None,
    seed: int = 0,
) -> bytes:
    header = CheckpointHeader(
        layers=params.layers,
        backbone_len=params.backbone_len,
        input_shape=params.input_shape,
        frozen=params.frozen,
        stage=stage,
        kernel=kernel or KernelSpec.cauchy(),
        seed=seed,
        param_count=params.param_count,
    )
    blob = header.model_dump_json().encode("utf-8")
    arrays = [a.ravel() for pair in params.arrays() for a in pair]
    payload = np.concatenate(arrays).astype(_FLOAT).tobytes() if arrays else b""
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + payload


def _parse_header(blob: bytes) -> CheckpointHeader:
    try:
        return CheckpointHeader.model_validate_json(blob)
    except pydantic.ValidationError as exc:
        raise CheckpointFormatError(f"invalid checkpoint header: {exc}") from exc


def decode_checkpoint(raw: bytes, dtype: npt.DTypeLike = np.float64) -> Checkpoint:
    if len(raw) < _PREFIX.size:
        raise CheckpointFormatError(f"checkpoint truncated: {len(raw)} bytes")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint format version {version}")
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise CheckpointFormatError("declared header length runs past the end of the file")
    header = _parse_header(raw[start : start + header_len])
    payload = raw[start + header_len :]
    if len(payload) != header.param_count * _FLOAT.itemsize:
        raise CheckpointFormatError(
            f"payload has {len(payload)} bytes, expected {header.param_count * _FLOAT.itemsize}"
        )
    try:
        layer_shapes(header.input_shape, header.layers)
    except ContrastiveEmbedError as exc:
        raise CheckpointFormatError(f"inconsistent layer specs: {exc}") from exc

    values = np.frombuffer(payload, dtype=_FLOAT)
    weights: list[Optional[npt.NDArray[Any]]] = []
    biases: list[Optional[npt.NDArray[Any]]] = []
    offset = 0
    for spec in header.layers:
        shapes = param_shapes(spec)
        if shapes is None:
            weights.append(None)
            biases.append(None)
            continue
        w_shape, n_bias = shapes
        n_weight = int(np.prod(w_shape))
        if offset + n_weight + n_bias > len(values):
            raise CheckpointFormatError("payload is shorter than the declared layers require")
        weights.append(values[offset : offset + n_weight].reshape(w_shape).astype(dtype))
        offset += n_weight
        biases.append(values[offset : offset + n_bias].astype(dtype))
        offset += n_bias
    if offset != len(values):
        raise CheckpointFormatError(
            f"header declares {header.param_count} parameters but layers hold {offset}"
        )
    try:
        params = EncoderParams(
            layers=header.layers,
            backbone_len=header.backbone_len,
            input_shape=header.input_shape,
            weights=weights,
            biases=biases,
            frozen=header.frozen,
        )
    except ContrastiveEmbedError as exc:
        raise CheckpointFormatError(str(exc)) from exc
    return Checkpoint(params=params, stage=header.stage, kernel=header.kernel, seed=header.seed)


def save_checkpoint(
    path: Path,
    params: EncoderParams,
    *,
    stage: str = "final",
    kernel: Optional[KernelSpec] = None,
    seed: int = 0,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, stage=stage, kernel=kernel, seed=seed))
    logger.info("wrote checkpoint %s (stage %s, %d parameters)", path, stage, params.param_count)
    return path


def load_checkpoint(path: Path, dtype: npt.DTypeLike = np.float64) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes(), dtype)
