"""Attention-map rendering: jet colormap over the 16x16 grid, blended
onto the windowed slice, written as binary PPM (P6).

Attention weights are max-normalized before coloring; raw softmax
weights hover near 1/256 and would render a uniformly cold map.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctio import GraySlice
from .errors import ValidationError
from .patching import BAG_SIZE, GRID, PATCH_SIZE

ALPHA = 0.4


@dataclass
class RgbImage:
    width: int
    height: int
    data: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.height, self.width, 3):
            raise ValidationError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}x3"
            )


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def jet(v) -> np.ndarray:
    """Piecewise-linear jet colormap on [0, 1] -> 8-bit RGB.

    Channels are clamp(1.5 - |4v - c|, 0, 1) * 255 for c = 3, 2, 1,
    rounded half away from zero; endpoints are (0, 0, 128) and
    (128, 0, 0).
    """
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    channels = [np.clip(1.5 - np.abs(4.0 * v - c), 0.0, 1.0) for c in (3, 2, 1)]
    rgb = np.stack(channels, axis=-1) * 255.0
    return _round_half_up(rgb).astype(np.uint8)


def render_attention(slc: GraySlice, attention: np.ndarray) -> RgbImage:
    """Overlay the attention grid on a slice: each weight colors its
    32x32 block, alpha-blended at 0.4 over the grayscale."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.shape != (BAG_SIZE,):
        raise ValidationError(f"attention must have {BAG_SIZE} weights")
    if abs(attention.sum() - 1.0) > 1e-6:
        raise ValidationError("attention weights must sum to 1")
    if slc.height != GRID * PATCH_SIZE or slc.width != GRID * PATCH_SIZE:
        raise ValidationError("slice must be 512x512")
    norm = attention / attention.max()
    colors = jet(norm.reshape(GRID, GRID)).astype(np.float64)
    overlay = np.kron(colors, np.ones((PATCH_SIZE, PATCH_SIZE, 1)))
    gray = slc.data.astype(np.float64)[:, :, None]
    blended = (1.0 - ALPHA) * gray + ALPHA * overlay
    return RgbImage(width=slc.width, height=slc.height,
                    data=_round_half_up(blended).astype(np.uint8))


def write_ppm(image: RgbImage, path: str | Path) -> None:
    """Binary PPM: header "P6\\n<w> <h>\\n255\\n" then raw RGB bytes."""
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.data.tobytes())


def write_attention_grid(attention: np.ndarray, path: str | Path) -> None:
    """Raw 16x16 attention grid as CSV, one grid row per line."""
    grid = np.asarray(attention, dtype=np.float64).reshape(GRID, GRID)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in grid:
            writer.writerow([f"{v:.8e}" for v in row])
