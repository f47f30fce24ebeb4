"""Dataset access: manifest + slice files resolved into tiles and bags.

Slices are windowed once into 8-bit tiles on first access and cached;
HU values are never revisited downstream.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import ctio, patching
from .errors import ValidationError


class SliceDataset:
    """A manifest plus lazily-loaded, tile-cached slice data."""

    def __init__(self, root: str | Path, entries: list[ctio.ManifestEntry]):
        self.root = Path(root)
        self.entries = entries
        self._tile_cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_manifest(cls, manifest_path: str | Path) -> "SliceDataset":
        manifest_path = Path(manifest_path)
        entries = ctio.load_manifest(manifest_path)
        return cls(manifest_path.parent, entries)

    def split(self, split: str) -> list[ctio.ManifestEntry]:
        return ctio.split_entries(self.entries, split)

    def require_split(self, split: str) -> list[ctio.ManifestEntry]:
        entries = self.split(split)
        if not entries:
            raise ValidationError(f"split {split!r} has no entries")
        return entries

    def gray(self, entry: ctio.ManifestEntry) -> ctio.GraySlice:
        return ctio.apply_window(ctio.read_slice(self.root / entry.slice_path))

    def tiles(self, entry: ctio.ManifestEntry) -> np.ndarray:
        """(256, 32, 32) uint8 tiles of the windowed slice, cached."""
        cached = self._tile_cache.get(entry.slice_path)
        if cached is None:
            cached = patching.split_into_patches(self.gray(entry))
            self._tile_cache[entry.slice_path] = cached
        return cached

    def bag(self, entry: ctio.ManifestEntry) -> patching.Bag:
        oracle = None
        if entry.instance_labels is not None:
            oracle = np.asarray(entry.instance_labels, dtype=np.int8)
        return patching.Bag(
            instances=patching.tiles_to_arrays(self.tiles(entry)),
            label=entry.bag_label,
            oracle_instance_labels=oracle,
        )

    def tile_stack(self, split: str) -> np.ndarray:
        """All tiles of a split stacked to (n_slices, 256, 32, 32) uint8."""
        entries = self.require_split(split)
        return np.stack([self.tiles(e) for e in entries])
