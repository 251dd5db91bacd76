"""
💾 Video & Perturbation Files
FLKV / FLKP binary formats, the perturbation sidecar and dataset directories.

Layout (all integers little-endian):
    magic    4 bytes   b"FLKV" or b"FLKP"
    version  u32       1
    T H W C  4 x u32
    v_min    f64
    v_max    f64
    payload  float32 little-endian, t-major then h, w, c (FLKV: T·H·W·C, FLKP: T·C)
"""

import logging
import struct
from pathlib import Path
from typing import Any, Dict, List, Tuple, Union

import numpy as np
import pandas as pd

from modules.exceptions import FormatError
from modules.utils import write_json, read_json
from modules.video_data import Dims, LabeledVideo, Perturbation, VideoTensor

logger = logging.getLogger(__name__)

VIDEO_MAGIC = b"FLKV"
PERTURBATION_MAGIC = b"FLKP"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sI4I2d")
HEADER_SIZE = _HEADER.size

PathLike = Union[str, Path]


def _pack_header(magic: bytes, dims: Dims) -> bytes:
    return _HEADER.pack(magic, FORMAT_VERSION, dims.T, dims.H, dims.W, dims.C,
                        float(dims.v_min), float(dims.v_max))


def _unpack_header(blob: bytes, magic: bytes) -> Dims:
    if len(blob) < 4:
        raise FormatError("File truncated inside magic", offset=len(blob))
    if blob[:4] != magic:
        raise FormatError(f"Bad magic {blob[:4]!r}, expected {magic!r}", offset=0)
    if len(blob) < HEADER_SIZE:
        raise FormatError("File truncated inside header", offset=len(blob))
    _, version, T, H, W, C, v_min, v_max = _HEADER.unpack_from(blob, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"Unsupported version {version}", offset=4)
    # Dims enforces T >= 2, C == 3, v_min < v_max and raises ValidationError
    return Dims(T=T, H=H, W=W, C=C, v_min=v_min, v_max=v_max)


def _read_payload(blob: bytes, count: int) -> np.ndarray:
    expected = HEADER_SIZE + 4 * count
    if len(blob) < expected:
        raise FormatError(f"Payload truncated: expected {4 * count} bytes", offset=len(blob))
    if len(blob) > expected:
        raise FormatError("Unexpected trailing bytes", offset=expected)
    return np.frombuffer(blob, dtype='<f4', count=count, offset=HEADER_SIZE).astype(np.float64)


def save_video(path: PathLike, video: VideoTensor) -> Path:
    """
    Write a clip in FLKV format

    Args:
        path: Destination file
        video: Clip to store (values are stored as float32)

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(video.data, dtype='<f4').tobytes()
    path.write_bytes(_pack_header(VIDEO_MAGIC, video.dims) + payload)
    return path


def load_video(path: PathLike) -> VideoTensor:
    """
    Read an FLKV clip

    Args:
        path: Source file

    Returns:
        VideoTensor (float64 view of the stored float32 values)
    """
    blob = Path(path).read_bytes()
    dims = _unpack_header(blob, VIDEO_MAGIC)
    data = _read_payload(blob, dims.T * dims.H * dims.W * dims.C)
    return VideoTensor(dims, data.reshape(dims.shape))


def sidecar_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".txt")


def save_perturbation(path: PathLike, delta: Perturbation) -> Path:
    """
    Write a flicker trace in FLKP format plus its text sidecar

    The sidecar holds one "r g b" line per frame.

    Args:
        path: Destination file
        delta: Perturbation to store

    Returns:
        Path of the binary file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    stored = np.ascontiguousarray(delta.trace, dtype='<f4')
    path.write_bytes(_pack_header(PERTURBATION_MAGIC, delta.dims) + stored.tobytes())

    # + 0.0 folds negative zero so a zero trace reads "0 0 0"
    lines = [" ".join(format(float(v) + 0.0, '.9g') for v in row) for row in stored]
    sidecar_path(path).write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path


def load_perturbation(path: PathLike) -> Perturbation:
    """Read an FLKP flicker trace"""
    blob = Path(path).read_bytes()
    dims = _unpack_header(blob, PERTURBATION_MAGIC)
    trace = _read_payload(blob, dims.T * dims.C)
    return Perturbation(dims, trace.reshape(dims.T, dims.C))


# ==================== DATASET DIRECTORIES ====================

def save_dataset(directory: PathLike, clips: List[LabeledVideo],
                 meta: Dict[str, Any] = None) -> Path:
    """
    Store clips as FLKV files plus labels.csv and dataset.json

    Args:
        directory: Output directory
        clips: Clips to store
        meta: Extra provenance (e.g. the dataset spec)

    Returns:
        Directory path
    """
    directory = Path(directory)
    (directory / "clips").mkdir(parents=True, exist_ok=True)
    rows = []
    for index, clip in enumerate(clips):
        name = f"{index:05d}.flkv"
        save_video(directory / "clips" / name, clip.video)
        rows.append({'clip_id': clip.clip_id or f"clip{index:05d}",
                     'label': int(clip.label), 'file': f"clips/{name}"})
    pd.DataFrame(rows, columns=['clip_id', 'label', 'file']).to_csv(directory / "labels.csv", index=False)
    write_json(directory / "dataset.json", {'schema_version': 1, 'count': len(clips),
                                            'meta': meta or {}})
    logger.info(f"Saved {len(clips)} clips to {directory}")
    return directory


def load_dataset(directory: PathLike) -> Tuple[List[LabeledVideo], Dict[str, Any]]:
    """
    Load a dataset directory written by save_dataset

    Returns:
        (clips, meta)
    """
    directory = Path(directory)
    labels = pd.read_csv(directory / "labels.csv")
    clips = [LabeledVideo(load_video(directory / row.file), int(row.label), str(row.clip_id))
             for row in labels.itertuples(index=False)]
    meta_path = directory / "dataset.json"
    meta = read_json(meta_path).get('meta', {}) if meta_path.exists() else {}
    return clips, meta
