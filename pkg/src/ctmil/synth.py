"""Synthetic slice generator with oracle instance labels.

Two tasks at desk scale:

* ``blob``: positive slices contain one bright elliptical blob inside
  the brain field; negatives contain none. The blob is the
  label-defining region.
* ``core``: every slice contains a blob; positives additionally carry a
  darker elliptical core inside it. The core defines the label, so blob
  presence is identical across classes and carries zero label
  information -- the spurious-correlation setting.

Slices are 512x512 int16 HU rasters: air background, a bright skull
annulus, a noisy brain field, and the task structures, all drawn inside
the 0..80 HU display window so windowing is non-degenerate. An instance
is labeled positive when at least 5% of its pixels belong to the
label-defining region.

Generation is deterministic: the seed fixes every byte of every slice
and of the manifest.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import ctio
from .errors import ConfigError
from .patching import BAG_SIZE, GRID, PATCH_SIZE, SLICE_SIZE

TASKS = ("blob", "core")
WINDOW = (0, 80)
AIR_HU = -1000
OVERLAP_THRESHOLD = 0.05

_SPLIT_FIELDS = ("train_pos", "train_neg", "valid_pos", "valid_neg",
                 "test_pos", "test_neg")


@dataclass
class GenConfig:
    task: str = "core"
    seed: int = 0
    train_pos: int = 64
    train_neg: int = 736
    valid_pos: int = 8
    valid_neg: int = 92
    test_pos: int = 8
    test_neg: int = 92
    blob_hu: tuple[int, int] = (50, 70)
    core_hu: tuple[int, int] = (5, 20)
    blob_radius: tuple[int, int] = (24, 72)
    noise_hu: tuple[int, int] = (20, 40)

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        for name in _SPLIT_FIELDS:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        for name in ("blob_hu", "core_hu", "noise_hu"):
            lo, hi = getattr(self, name)
            if not (WINDOW[0] <= lo <= hi <= WINDOW[1]):
                raise ConfigError(
                    f"{name} range ({lo}, {hi}) must lie inside the "
                    f"{WINDOW} HU window"
                )
        lo, hi = self.blob_radius
        if not (20 <= lo <= hi <= 80):
            raise ConfigError(
                f"blob_radius range ({lo}, {hi}) must lie inside [20, 80]"
            )


def default_config(task: str, seed: int = 0) -> GenConfig:
    """Per-task defaults: 1000 slices, 17% positives for blob task
    (hematoma-detection ratio), 8% for the core task."""
    if task == "blob":
        return GenConfig(task="blob", seed=seed, train_pos=136, train_neg=664,
                         valid_pos=17, valid_neg=83, test_pos=17, test_neg=83)
    if task == "core":
        return GenConfig(task="core", seed=seed)
    raise ConfigError(f"task must be one of {TASKS}, got {task!r}")


_COORDS = None


def _coords():
    global _COORDS
    if _COORDS is None:
        ys, xs = np.meshgrid(np.arange(SLICE_SIZE, dtype=np.float64),
                             np.arange(SLICE_SIZE, dtype=np.float64),
                             indexing="ij")
        _COORDS = (ys, xs)
    return _COORDS


def _ellipse_mask(cy, cx, ax_r, ax_c, angle) -> np.ndarray:
    ys, xs = _coords()
    dy = ys - cy
    dx = xs - cx
    cos, sin = np.cos(angle), np.sin(angle)
    r = cos * dy + sin * dx
    c = -sin * dy + cos * dx
    return (r / ax_r) ** 2 + (c / ax_c) ** 2 <= 1.0


def instance_labels_from_mask(mask: np.ndarray) -> np.ndarray:
    """y_k = 1 iff >= 5% of patch k's pixels are inside the mask."""
    counts = mask.reshape(GRID, PATCH_SIZE, GRID, PATCH_SIZE).sum(axis=(1, 3))
    frac = counts / (PATCH_SIZE * PATCH_SIZE)
    return (frac >= OVERLAP_THRESHOLD).astype(np.int8).reshape(BAG_SIZE)


def _draw_blob_geometry(cfg: GenConfig, rng: np.random.Generator,
                        brain_r: float):
    lo, hi = cfg.blob_radius
    ax_r = rng.uniform(lo, hi)
    ax_c = rng.uniform(lo, hi)
    angle = rng.uniform(0.0, np.pi)
    margin = max(ax_r, ax_c) + 10.0
    rad = rng.uniform(0.0, max(brain_r - margin, 1.0))
    phi = rng.uniform(0.0, 2.0 * np.pi)
    cy = SLICE_SIZE / 2 + rad * np.sin(phi)
    cx = SLICE_SIZE / 2 + rad * np.cos(phi)
    return cy, cx, ax_r, ax_c, angle


def _draw_core_geometry(rng: np.random.Generator, blob):
    cy, cx, ax_r, ax_c, angle = blob
    core_r = max(10.0, rng.uniform(0.30, 0.45) * ax_r)
    core_c = max(10.0, rng.uniform(0.30, 0.45) * ax_c)
    # normalized offset keeps the core strictly inside the blob
    delta = rng.uniform(0.0, 0.35)
    psi = rng.uniform(0.0, 2.0 * np.pi)
    off_r = delta * np.sin(psi) * (ax_r - core_r)
    off_c = delta * np.cos(psi) * (ax_c - core_c)
    cos, sin = np.cos(angle), np.sin(angle)
    return (cy + cos * off_r - sin * off_c,
            cx + sin * off_r + cos * off_c,
            core_r, core_c, angle)


def gen_slice(cfg: GenConfig, rng: np.random.Generator,
              positive: bool) -> tuple[ctio.HUSlice, np.ndarray]:
    """One synthetic slice plus its 256 oracle instance labels."""
    hu = np.full((SLICE_SIZE, SLICE_SIZE), AIR_HU, dtype=np.int16)
    brain_r = rng.uniform(190.0, 215.0)
    center = SLICE_SIZE / 2
    ys, xs = _coords()
    dist = np.sqrt((ys - center) ** 2 + (xs - center) ** 2)
    skull = (dist >= brain_r) & (dist < brain_r + 14.0)
    brain = dist < brain_r
    hu[skull] = rng.integers(650, 800, size=int(skull.sum()), dtype=np.int16)
    hu[brain] = rng.integers(cfg.noise_hu[0], cfg.noise_hu[1] + 1,
                             size=int(brain.sum()), dtype=np.int16)

    has_blob = positive or cfg.task == "core"
    labels = np.zeros(BAG_SIZE, dtype=np.int8)
    blob_mask = core_mask = None
    for _ in range(32):
        if has_blob:
            blob_mask = _ellipse_mask(*(blob := _draw_blob_geometry(cfg, rng, brain_r)))
        if cfg.task == "core" and positive:
            core_mask = _ellipse_mask(*_draw_core_geometry(rng, blob))
        if not positive:
            break
        label_mask = core_mask if cfg.task == "core" else blob_mask
        labels = instance_labels_from_mask(label_mask)
        if labels.any():
            break
    else:  # pragma: no cover - geometry bounds make this unreachable
        raise ConfigError("could not place a label-defining region")

    if blob_mask is not None:
        hu[blob_mask] = rng.integers(cfg.blob_hu[0], cfg.blob_hu[1] + 1,
                                     size=int(blob_mask.sum()), dtype=np.int16)
    if core_mask is not None:
        hu[core_mask] = rng.integers(cfg.core_hu[0], cfg.core_hu[1] + 1,
                                     size=int(core_mask.sum()), dtype=np.int16)

    slc = ctio.HUSlice(width=SLICE_SIZE, height=SLICE_SIZE,
                       window_low=WINDOW[0], window_high=WINDOW[1], data=hu)
    return slc, labels


def gen_dataset(cfg: GenConfig, out_dir: str | Path) -> Path:
    """Write CTSL slices and the manifest; returns the manifest path."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = []
    for split in ctio.SPLITS:
        plan.extend((split, True) for _ in range(getattr(cfg, f"{split}_pos")))
        plan.extend((split, False) for _ in range(getattr(cfg, f"{split}_neg")))
    seeds = np.random.SeedSequence(cfg.seed).spawn(len(plan))
    entries = []
    counters: dict[str, int] = {}
    for (split, positive), seed in zip(plan, seeds):
        idx = counters.get(split, 0)
        counters[split] = idx + 1
        rng = np.random.default_rng(seed)
        slc, labels = gen_slice(cfg, rng, positive)
        name = f"{split}_{idx:05d}.ctsl"
        ctio.write_slice(slc, out_dir / name)
        entries.append(ctio.ManifestEntry(
            slice_path=name,
            bag_label=int(labels.any()),
            split=split,
            instance_labels=[int(v) for v in labels],
        ))
    manifest_path = out_dir / "manifest.jsonl"
    ctio.save_manifest(entries, manifest_path)
    return manifest_path
