"""
💾 Model Checkpoints
FLKM binary format for ModelParams.

Layout (little-endian):
    magic        4 bytes  b"FLKM"
    version      u32      1
    architecture u32      1 = A, 2 = B
    num_classes  u32
    T H W C      4 x u32
    v_min v_max  2 x f64
    records      one per tensor, in PARAM_ORDER:
                   name length u16, name utf-8, ndim u32, shape ndim x u32,
                   payload float64
"""

import hashlib
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from modules.diffnet import Architecture, ModelParams, PARAM_ORDER
from modules.exceptions import ArchitectureMismatchError, FormatError
from modules.video_data import Dims

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"FLKM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sIII4I2d")
_NAME_LEN = struct.Struct("<H")
_U32 = struct.Struct("<I")

PathLike = Union[str, Path]


def encode_checkpoint(params: ModelParams) -> bytes:
    dims = params.dims
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, params.variant.code, int(params.num_classes),
                          dims.T, dims.H, dims.W, dims.C, float(dims.v_min), float(dims.v_max))]
    for name in PARAM_ORDER:
        array = params.tensors[name]
        encoded = name.encode('utf-8')
        parts.append(_NAME_LEN.pack(len(encoded)) + encoded)
        parts.append(_U32.pack(array.ndim) + b"".join(_U32.pack(n) for n in array.shape))
        parts.append(np.ascontiguousarray(array, dtype='<f8').tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.offset = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.blob):
            raise FormatError(f"File truncated inside {what}", offset=len(self.blob))
        chunk = self.blob[self.offset:self.offset + size]
        self.offset += size
        return chunk


def decode_checkpoint(blob: bytes, expected: Optional[Union[str, Architecture]] = None) -> ModelParams:
    """
    Parse FLKM bytes

    Args:
        blob: File contents
        expected: Architecture the caller requires (any when None)

    Returns:
        ModelParams
    """
    reader = _Reader(blob)
    if len(blob) >= 4 and blob[:4] != MODEL_MAGIC:
        raise FormatError(f"Bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}", offset=0)
    (_, version, arch_code, num_classes, T, H, W, C,
     v_min, v_max) = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    if version != MODEL_VERSION:
        raise FormatError(f"Unsupported version {version}", offset=4)
    try:
        variant = Architecture.from_code(arch_code)
    except ValueError as e:
        raise FormatError(str(e), offset=8) from e
    if expected is not None and Architecture(expected) != variant:
        raise ArchitectureMismatchError(
            f"Checkpoint holds variant {variant.value}, expected {Architecture(expected).value}")
    dims = Dims(T=T, H=H, W=W, C=C, v_min=v_min, v_max=v_max)

    tensors = {}
    for name in PARAM_ORDER:
        start = reader.offset
        (length,) = _NAME_LEN.unpack(reader.take(_NAME_LEN.size, "record name length"))
        found = reader.take(length, "record name").decode('utf-8', errors='replace')
        if found != name:
            raise FormatError(f"Expected record {name!r}, found {found!r}", offset=start)
        (ndim,) = _U32.unpack(reader.take(_U32.size, "record rank"))
        shape = tuple(_U32.unpack(reader.take(_U32.size, "record shape"))[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        payload = reader.take(8 * count, f"record {name}")
        tensors[name] = np.frombuffer(payload, dtype='<f8').astype(np.float64).reshape(shape)
    if reader.offset != len(blob):
        raise FormatError("Unexpected trailing bytes", offset=reader.offset)
    # ModelParams re-checks every shape against the variant
    return ModelParams(variant, dims, num_classes, tensors)


def save_checkpoint(path: PathLike, params: ModelParams) -> Path:
    """Write params as an FLKM file"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params))
    logger.info(f"Saved variant {params.variant.value} checkpoint to {path}")
    return path


def load_checkpoint(path: PathLike, expected: Optional[Union[str, Architecture]] = None) -> ModelParams:
    """Read an FLKM file, optionally insisting on an architecture"""
    return decode_checkpoint(Path(path).read_bytes(), expected)


def checkpoint_fingerprint(params: ModelParams) -> str:
    """SHA-256 of the FLKM encoding"""
    return hashlib.sha256(encode_checkpoint(params)).hexdigest()
