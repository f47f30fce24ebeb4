"""Grid decomposition of windowed slices into 256-instance bags.

A 512x512 slice splits into a fixed 16x16 grid of 32x32 tiles, ordered
row-major. Instance k covers pixel rows [32*(k // 16), 32*(k // 16 + 1))
and columns [32*(k % 16), 32*(k % 16 + 1)). The order is canonical so
attention maps and checkpoints are reproducible; the MIL stage itself
is order-invariant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctio import GraySlice, ManifestEntry
from .errors import ValidationError

SLICE_SIZE = 512
PATCH_SIZE = 32
GRID = SLICE_SIZE // PATCH_SIZE  # 16
BAG_SIZE = GRID * GRID  # 256


@dataclass
class PatchInstance:
    """One 32x32x3 instance, grayscale replicated across channels."""

    data: np.ndarray  # (32, 32, 3) float32 in [0, 1]
    grid_row: int
    grid_col: int


@dataclass
class Bag:
    """An ordered collection of 256 instances sharing one label.

    ``instances`` is (256, 32, 32, 3) float32 in row-major grid order.
    ``oracle_instance_labels`` is carried for evaluation and
    visualization only; the training loops never read it.
    """

    instances: np.ndarray
    label: int
    oracle_instance_labels: np.ndarray | None = None

    def instance(self, k: int) -> PatchInstance:
        return PatchInstance(self.instances[k], k // GRID, k % GRID)


def split_into_patches(slc: GraySlice) -> np.ndarray:
    """Split a 512x512 slice into 256 non-overlapping 32x32 tiles.

    Returns a (256, 32, 32) uint8 array in row-major grid order;
    concatenating the tiles back reconstructs the slice.
    """
    if slc.height != SLICE_SIZE or slc.width != SLICE_SIZE:
        raise ValidationError(
            f"patching expects {SLICE_SIZE}x{SLICE_SIZE} slices, got "
            f"{slc.height}x{slc.width}"
        )
    tiles = slc.data.reshape(GRID, PATCH_SIZE, GRID, PATCH_SIZE)
    return tiles.transpose(0, 2, 1, 3).reshape(BAG_SIZE, PATCH_SIZE, PATCH_SIZE)


def tiles_to_arrays(tiles: np.ndarray) -> np.ndarray:
    """Normalize uint8 tiles to [0, 1] and replicate to three channels.

    (K, 32, 32) uint8 -> (K, 32, 32, 3) float32.
    """
    norm = tiles.astype(np.float32) / 255.0
    return np.repeat(norm[..., None], 3, axis=-1)


def to_instance(tile: np.ndarray, grid_row: int = 0, grid_col: int = 0) -> PatchInstance:
    """Build an instance from one 8-bit tile: value/255 on all channels."""
    tile = np.asarray(tile)
    if tile.shape != (PATCH_SIZE, PATCH_SIZE):
        raise ValidationError(f"tile must be 32x32, got {tile.shape}")
    data = tiles_to_arrays(tile[None])[0]
    return PatchInstance(data=data, grid_row=grid_row, grid_col=grid_col)


def make_bag(slc: GraySlice, entry: ManifestEntry) -> Bag:
    """Patch a slice into the bag described by its manifest entry."""
    tiles = split_into_patches(slc)
    oracle = None
    if entry.instance_labels is not None:
        oracle = np.asarray(entry.instance_labels, dtype=np.int8)
    return Bag(
        instances=tiles_to_arrays(tiles),
        label=entry.bag_label,
        oracle_instance_labels=oracle,
    )


def bag_label_from_instances(instance_labels) -> int:
    """A bag is positive iff at least one instance is positive."""
    labels = np.asarray(instance_labels)
    if labels.size and not np.isin(labels, (0, 1)).all():
        raise ValidationError("instance labels must be 0 or 1")
    return int(labels.any())
