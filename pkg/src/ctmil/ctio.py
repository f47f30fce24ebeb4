"""Slice file I/O, HU windowing, and dataset manifests.

The on-disk slice format (CTSL) is a small fixed binary layout:

    magic "CTSL" | version u32 LE (=1) | width u32 LE | height u32 LE
    | window_low i32 LE | window_high i32 LE
    | payload: width*height int16 LE, row-major

Manifests are JSON Lines, one entry per slice, with fields
``slice_path``, ``bag_label``, optional ``instance_labels`` (256 values
in {0,1}) and ``split`` ("train" | "valid" | "test").
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

CTSL_MAGIC = b"CTSL"
CTSL_VERSION = 1
_HEADER = struct.Struct("<4sIIIii")

SPLITS = ("train", "valid", "test")

#: Fallback brain window (HU) used by converters when source metadata
#: carries no window bounds.
DEFAULT_WINDOW = (0, 80)


@dataclass
class HUSlice:
    """A raw CT slice: signed Hounsfield values plus its display window."""

    width: int
    height: int
    window_low: int
    window_high: int
    data: np.ndarray  # (height, width) int16

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.int16)
        if self.window_low >= self.window_high:
            raise FormatError(
                f"window_low must be < window_high, got "
                f"[{self.window_low}, {self.window_high}]"
            )
        if self.data.shape != (self.height, self.width):
            raise FormatError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}"
            )


@dataclass
class GraySlice:
    """A windowed slice: 8-bit display intensities."""

    width: int
    height: int
    data: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.uint8)
        if self.data.shape != (self.height, self.width):
            raise FormatError(
                f"data shape {self.data.shape} does not match "
                f"{self.height}x{self.width}"
            )


@dataclass
class ManifestEntry:
    """One dataset row: a slice path, its bag label, and its split."""

    slice_path: str
    bag_label: int
    split: str
    instance_labels: list[int] | None = field(default=None)

    def validate(self) -> None:
        if self.bag_label not in (0, 1):
            raise ValidationError(f"bag_label must be 0 or 1, got {self.bag_label}")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.instance_labels is not None:
            if len(self.instance_labels) != 256:
                raise ValidationError(
                    f"instance_labels must have 256 entries, got "
                    f"{len(self.instance_labels)}"
                )
            if any(y not in (0, 1) for y in self.instance_labels):
                raise ValidationError("instance_labels must contain only 0 or 1")
            implied = 1 if any(self.instance_labels) else 0
            if implied != self.bag_label:
                raise ValidationError(
                    f"bag_label {self.bag_label} inconsistent with instance "
                    f"labels (any positive: {bool(implied)}) for {self.slice_path!r}"
                )


def write_slice(slc: HUSlice, path: str | Path) -> None:
    """Write a slice in the CTSL layout (bit-exact, little-endian)."""
    payload = slc.data.astype("<i2", copy=False).tobytes()
    header = _HEADER.pack(
        CTSL_MAGIC, CTSL_VERSION, slc.width, slc.height,
        slc.window_low, slc.window_high,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_slice(path: str | Path) -> HUSlice:
    """Read a CTSL file, validating magic, version, window and payload size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, width, height, low, high = _HEADER.unpack_from(raw)
    if magic != CTSL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CTSL_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if low >= high:
        raise FormatError(f"{path}: window_low {low} >= window_high {high}")
    expected = width * height * 2
    body = raw[_HEADER.size:]
    if len(body) != expected:
        raise FormatError(
            f"{path}: payload is {len(body)} bytes, expected {expected}"
        )
    data = np.frombuffer(body, dtype="<i2").reshape(height, width)
    return HUSlice(width=width, height=height, window_low=low,
                   window_high=high, data=data.astype(np.int16))


def apply_window(slc: HUSlice) -> GraySlice:
    """Window HU values into 8-bit intensities.

    Values below the lower bound map to 0, above the upper bound to 255;
    in-range values are scaled linearly and rounded half away from zero.
    """
    a, b = slc.window_low, slc.window_high
    hu = slc.data
    scaled = (hu - a) / (b - a) * 255.0
    out = np.floor(scaled + 0.5)  # scaled >= 0 in range, so this rounds half up
    out = np.where(hu < a, 0.0, out)
    out = np.where(hu > b, 255.0, out)
    return GraySlice(width=slc.width, height=slc.height,
                     data=out.astype(np.uint8))


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse and validate a JSON-Lines manifest.

    Raises ValidationError with the 1-based line number for malformed
    lines, and for entries whose bag label contradicts their instance
    labels (a bag is positive iff it contains a positive instance).
    """
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                entry = ManifestEntry(
                    slice_path=obj["slice_path"],
                    bag_label=int(obj["bag_label"]),
                    split=obj["split"],
                    instance_labels=obj.get("instance_labels"),
                )
                entry.validate()
            except (KeyError, TypeError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from exc
            entries.append(entry)
    return entries


def save_manifest(entries: list[ManifestEntry], path: str | Path) -> None:
    """Write entries as JSON Lines (inverse of load_manifest)."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            obj: dict = {
                "slice_path": entry.slice_path,
                "bag_label": entry.bag_label,
            }
            if entry.instance_labels is not None:
                obj["instance_labels"] = list(entry.instance_labels)
            obj["split"] = entry.split
            fh.write(json.dumps(obj) + "\n")


def split_entries(entries: list[ManifestEntry], split: str) -> list[ManifestEntry]:
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    return [e for e in entries if e.split == split]


def class_counts(entries: list[ManifestEntry], split: str) -> tuple[int, int, int]:
    """Count (total, positive, negative) bags in a split.

    An empty split is an error: downstream loss weighting divides by
    the class counts.
    """
    chosen = split_entries(entries, split)
    if not chosen:
        raise ValidationError(f"split {split!r} has no entries")
    n_p = sum(e.bag_label for e in chosen)
    n_n = len(chosen) - n_p
    return len(chosen), n_p, n_n
