"""Texture-preserving augmentations and paired-view generation.

Four transforms are used: zero-padded random crop, small rotation,
horizontal flip, and cutout. Contrastive views apply all four in the
fixed order crop -> rotate -> flip -> cutout; reconstruction targets
apply only the rotation and flip of their paired view to the original
patch, so a decoder must undo the crop and cutout.

All operations accept (H, W) or (H, W, C) arrays and preserve shape and
the [0, 1] value range. Randomness comes exclusively from the caller's
``numpy.random.Generator``; a fixed seed reproduces outputs bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PAD = 4
PATCH = 32
CROP_MAX_OFFSET = 2 * PAD  # offsets are uniform on [0, 8]
ROTATION_RANGE_DEG = 10.0
CUTOUT_BOXES = 3
CUTOUT_SIZE = 4
CUTOUT_MAX_POS = PATCH - CUTOUT_SIZE  # top/left uniform on [0, 28]


@dataclass
class AugRecord:
    """The sampled parameters of one augmentation draw."""

    crop_offset: tuple[int, int]  # (dy, dx), each in [0, 8]
    rotation_deg: float  # in [-10, +10]
    flipped: bool
    cutout_boxes: tuple[tuple[int, int], ...]  # 3 x (top, left), each in [0, 28]


@dataclass
class TransformVector:
    """Fixed-length encoding of an AugRecord, components in [-1, 1]."""

    encoding: np.ndarray  # (6,) float32


def _spatial(patch: np.ndarray) -> np.ndarray:
    """View (H, W) or (H, W, C) input as (C, H, W) for uniform handling."""
    if patch.ndim == 2:
        return patch[None]
    return np.moveaxis(patch, -1, 0)


def _unspatial(chans: np.ndarray, like: np.ndarray) -> np.ndarray:
    if like.ndim == 2:
        return chans[0]
    return np.moveaxis(chans, 0, -1)


def crop_at(patch: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Zero-pad by 4 on each side and extract the 32x32 window at (dy, dx)."""
    chans = _spatial(np.asarray(patch))
    padded = np.pad(chans, ((0, 0), (PAD, PAD), (PAD, PAD)))
    out = padded[:, dy:dy + PATCH, dx:dx + PATCH]
    return _unspatial(out, np.asarray(patch))


def random_crop(patch: np.ndarray, rng: np.random.Generator):
    """Random zero-padded crop; the window itself is 32x32, so no resampling."""
    dy, dx = rng.integers(0, CROP_MAX_OFFSET + 1, size=2)
    return crop_at(patch, int(dy), int(dx)), (int(dy), int(dx))


def cutout_at(patch: np.ndarray, boxes) -> np.ndarray:
    """Zero the three 4x4 boxes (they may overlap)."""
    out = np.array(patch, copy=True)
    chans = _spatial(out)
    for top, left in boxes:
        chans[:, top:top + CUTOUT_SIZE, left:left + CUTOUT_SIZE] = 0.0
    return out


def cutout(patch: np.ndarray, rng: np.random.Generator):
    boxes = tuple(
        (int(t), int(l))
        for t, l in rng.integers(0, CUTOUT_MAX_POS + 1, size=(CUTOUT_BOXES, 2))
    )
    return cutout_at(patch, boxes), boxes


def rotate_batch(patches: np.ndarray, angles_deg: np.ndarray) -> np.ndarray:
    """Rotate each (B, H, W) patch about its center, bilinear, zero fill.

    Positive angles rotate counter-clockwise in (row, col) image
    coordinates. Source positions outside the patch contribute zero.
    """
    b, h, w = patches.shape
    dtype = patches.dtype
    theta = np.deg2rad(np.asarray(angles_deg, dtype=dtype)).reshape(b, 1, 1)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.meshgrid(
        np.arange(h, dtype=dtype), np.arange(w, dtype=dtype), indexing="ij",
    )
    # inverse map: sample the source at the -theta rotation of each output pixel
    cos, sin = np.cos(theta), np.sin(theta)
    src_r = cos * (rows - cy) - sin * (cols - cx) + cy
    src_c = sin * (rows - cy) + cos * (cols - cx) + cx

    r0 = np.floor(src_r)
    c0 = np.floor(src_c)
    fr = src_r - r0
    fc = src_c - c0
    flat = patches.reshape(b, h * w)
    out = np.zeros((b, h * w), dtype=dtype)
    for dr, dc, wgt in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr = r0 + dr
        cc = c0 + dc
        wgt = wgt * ((rr >= 0) & (rr < h) & (cc >= 0) & (cc < w))
        idx = (np.clip(rr, 0, h - 1) * w + np.clip(cc, 0, w - 1))
        idx = idx.astype(np.intp).reshape(b, h * w)
        out += np.take_along_axis(flat, idx, axis=1) * wgt.reshape(b, h * w)
    return out.reshape(b, h, w)


def rotate_by(patch: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate a single patch by a fixed angle (test hook; training draws
    angles uniformly from [-10, +10])."""
    patch = np.asarray(patch)
    chans = _spatial(patch)
    angles = np.full(chans.shape[0], angle_deg)
    return _unspatial(rotate_batch(chans, angles), patch)


def rotate(patch: np.ndarray, rng: np.random.Generator):
    angle = float(rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG))
    return rotate_by(patch, angle), angle


def hflip_apply(patch: np.ndarray, flipped: bool) -> np.ndarray:
    if not flipped:
        return np.array(patch, copy=True)
    patch = np.asarray(patch)
    axis = 1 if patch.ndim >= 2 else 0
    return np.flip(patch, axis=axis).copy()


def hflip(patch: np.ndarray, rng: np.random.Generator):
    flipped = bool(rng.random() < 0.5)
    return hflip_apply(patch, flipped), flipped


def draw_record(rng: np.random.Generator) -> AugRecord:
    """Sample one augmentation draw. The draw order is fixed so a seed
    reproduces records exactly: crop offset, angle, flip, cutout boxes."""
    dy, dx = (int(v) for v in rng.integers(0, CROP_MAX_OFFSET + 1, size=2))
    angle = float(rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG))
    flipped = bool(rng.random() < 0.5)
    boxes = tuple(
        (int(t), int(l))
        for t, l in rng.integers(0, CUTOUT_MAX_POS + 1, size=(CUTOUT_BOXES, 2))
    )
    return AugRecord((dy, dx), angle, flipped, boxes)


def apply_view(patch: np.ndarray, rec: AugRecord) -> np.ndarray:
    """Contrastive view: crop -> rotate -> flip -> cutout."""
    out = crop_at(patch, *rec.crop_offset)
    out = rotate_by(out, rec.rotation_deg)
    out = hflip_apply(out, rec.flipped)
    return cutout_at(out, rec.cutout_boxes)


def apply_target(patch: np.ndarray, rec: AugRecord) -> np.ndarray:
    """Reconstruction target: rotation and flip only, on the original."""
    out = rotate_by(patch, rec.rotation_deg)
    return hflip_apply(out, rec.flipped)


def make_views(patch: np.ndarray, rng: np.random.Generator):
    """Two independent contrastive views plus their reconstruction targets.

    Returns (view1, view2, target1, target2, record1, record2); each
    target shares the rotation and flip of its view, applied to the
    unaugmented patch.
    """
    rec1 = draw_record(rng)
    rec2 = draw_record(rng)
    view1 = apply_view(patch, rec1)
    view2 = apply_view(patch, rec2)
    target1 = apply_target(patch, rec1)
    target2 = apply_target(patch, rec2)
    return view1, view2, target1, target2, rec1, rec2


def encode_transform(rec: AugRecord) -> TransformVector:
    """Deterministic 6-vector: [dy/8, dx/8, angle/10, flipped, n_boxes/3, 1]."""
    dy, dx = rec.crop_offset
    vec = np.array(
        [
            dy / CROP_MAX_OFFSET,
            dx / CROP_MAX_OFFSET,
            rec.rotation_deg / ROTATION_RANGE_DEG,
            1.0 if rec.flipped else 0.0,
            len(rec.cutout_boxes) / CUTOUT_BOXES,
            1.0,
        ],
        dtype=np.float32,
    )
    return TransformVector(encoding=vec)


# --- batched path used by the pretraining loop -------------------------------
#
# Records are drawn sequentially from the one generator (same order as
# repeated make_views calls); the pixel work is vectorized across the
# batch. Outputs are single-channel (B, 32, 32): every augmentation acts
# spatially, so replicated channels stay identical and are reattached at
# the encoder boundary.


def _apply_views_batch(patches: np.ndarray, recs: list[AugRecord]) -> np.ndarray:
    b = patches.shape[0]
    padded = np.pad(patches, ((0, 0), (PAD, PAD), (PAD, PAD)))
    offs = np.array([r.crop_offset for r in recs])
    rows = offs[:, 0][:, None] + np.arange(PATCH)
    cols = offs[:, 1][:, None] + np.arange(PATCH)
    out = padded[np.arange(b)[:, None, None], rows[:, :, None], cols[:, None, :]]

    out = rotate_batch(out, np.array([r.rotation_deg for r in recs]))
    flips = np.array([r.flipped for r in recs])
    out[flips] = out[flips, :, ::-1]
    for i, rec in enumerate(recs):
        for top, left in rec.cutout_boxes:
            out[i, top:top + CUTOUT_SIZE, left:left + CUTOUT_SIZE] = 0.0
    return out


def _apply_targets_batch(patches: np.ndarray, recs: list[AugRecord]) -> np.ndarray:
    out = rotate_batch(patches, np.array([r.rotation_deg for r in recs]))
    flips = np.array([r.flipped for r in recs])
    out[flips] = out[flips, :, ::-1]
    return out


def draw_records_batch(n: int, rng: np.random.Generator) -> list[AugRecord]:
    """n draws with the same field order as draw_record, but sampled as
    arrays (one generator call per field instead of four per record)."""
    offs = rng.integers(0, CROP_MAX_OFFSET + 1, size=(n, 2))
    angles = rng.uniform(-ROTATION_RANGE_DEG, ROTATION_RANGE_DEG, size=n)
    flips = rng.random(n) < 0.5
    boxes = rng.integers(0, CUTOUT_MAX_POS + 1, size=(n, CUTOUT_BOXES, 2))
    return [
        AugRecord(
            (int(offs[i, 0]), int(offs[i, 1])),
            float(angles[i]),
            bool(flips[i]),
            tuple((int(t), int(l)) for t, l in boxes[i]),
        )
        for i in range(n)
    ]


def make_views_batch(patches: np.ndarray, rng: np.random.Generator):
    """Vectorized make_views over a (B, 32, 32) batch.

    Returns (views1, views2, targets1, targets2, tvecs1, tvecs2) where
    the tvec arrays are (B, 6) transform encodings.
    """
    b = patches.shape[0]
    recs1 = draw_records_batch(b, rng)
    recs2 = draw_records_batch(b, rng)
    views1 = _apply_views_batch(patches, recs1)
    views2 = _apply_views_batch(patches, recs2)
    targets1 = _apply_targets_batch(patches, recs1)
    targets2 = _apply_targets_batch(patches, recs2)
    tvecs1 = np.stack([encode_transform(r).encoding for r in recs1])
    tvecs2 = np.stack([encode_transform(r).encoding for r in recs2])
    return views1, views2, targets1, targets2, tvecs1, tvecs2
