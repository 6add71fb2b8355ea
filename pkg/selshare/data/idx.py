"""
IDX reader/writer.

    offset  type     value
    0       int32    magic (0x00000803 images, 0x00000801 labels), big-endian
    4       int32    number of items
    8       int32    rows            (images only)
    12      int32    cols            (images only)
    ...     uint8    pixels / labels
"""
import gzip
import struct
from pathlib import Path
from typing import Tuple

import numpy as np

from selshare.core.exceptions import IngestionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_bytes(path: Path) -> bytes:
    if not path.is_file():
        raise IngestionError(path, "file not found")
    opener = gzip.open if path.suffix == ".gz" else open
    try:
        with opener(path, "rb") as handle:
            return handle.read()
    except OSError as exc:
        raise IngestionError(path, f"cannot read ({exc})")


def read_idx_images(path) -> np.ndarray:
    """uint8 array [n, rows, cols]"""
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 16:
        raise IngestionError(path, "truncated header")
    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGES_MAGIC:
        raise IngestionError(path, f"wrong magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    expected = count * rows * cols
    if len(raw) - 16 < expected:
        raise IngestionError(path, f"truncated file: {len(raw) - 16} pixel bytes, header promises {expected}")
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    raw = _read_bytes(path)
    if len(raw) < 8:
        raise IngestionError(path, "truncated header")
    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABELS_MAGIC:
        raise IngestionError(path, f"wrong magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(raw) - 8 < count:
        raise IngestionError(path, f"truncated file: {len(raw) - 8} labels, header promises {count}")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).copy()


def load_idx(images_path, labels_path) -> Tuple[np.ndarray, np.ndarray]:
    """Pixels scaled to [0, 1] as [n, rows*cols] float64, labels as int64"""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IngestionError(labels_path, f"{len(labels)} labels for {len(images)} images in {images_path}")
    inputs = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return inputs, labels.astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> Path:
    path = Path(path)
    images = np.asarray(images, dtype=np.uint8)
    count, rows, cols = images.shape
    path.write_bytes(struct.pack(">IIII", IMAGES_MAGIC, count, rows, cols) + images.tobytes())
    return path


def write_idx_labels(path, labels: np.ndarray) -> Path:
    path = Path(path)
    labels = np.asarray(labels, dtype=np.uint8)
    path.write_bytes(struct.pack(">II", LABELS_MAGIC, len(labels)) + labels.tobytes())
    return path
