"""PNG in/out for float images in [0, 1], shape (H, W, 3)."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def load_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def decode_png_bytes(payload: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(payload)) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def save_png(image: np.ndarray, path: str | Path) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def encode_png_bytes(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(image)).save(buf, format="PNG")
    return buf.getvalue()


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)
