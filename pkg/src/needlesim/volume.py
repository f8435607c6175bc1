"""Voxel patient volumes: storage, file I/O, sampling and body-mask extraction.

A volume is a regular 3D grid of signed 16-bit intensities (HU) plus an
8-bit tissue label grid, both indexed (x, y, z) with per-axis spacing in
mm. Voxel (i, j, k) is centered at ``origin + (i, j, k) * spacing``.

On disk a volume is a JSON header referencing raw little-endian arrays:

    {"dims": [nx, ny, nz], "spacing": [sx, sy, sz], "origin": [ox, oy, oz],
     "intensity_file": "case.hu.raw", "label_file": "case.lbl.raw"}

Raw files are C-order for shape (nx, ny, nz), i.e. z varies fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BadHeader, EmptyMask, MissingFile, OutOfBounds, SizeMismatch

HU_MIN = -1024
HU_MAX = 4095

_SPACING_MAX_MM = 10.0


class TissueLabel(IntEnum):
    """Tissue codes stored in the label grid."""

    AIR = 0
    SKIN = 1
    FAT_SOFT = 2
    BONE = 3
    FASCIA = 4
    LIVER = 5
    HEP_BLOOD = 6
    HEP_BILE = 7
    UNLABELED = 255


@dataclass(frozen=True)
class VoxelVolume:
    """Immutable voxel volume with intensity and label grids."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    intensities: np.ndarray  # int16, shape dims
    labels: np.ndarray  # uint8, shape dims

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if any(not (0.0 < s <= _SPACING_MAX_MM) for s in self.spacing):
            raise ValueError(f"spacing must be in (0, {_SPACING_MAX_MM}] mm, got {self.spacing}")
        if self.intensities.shape != tuple(self.dims):
            raise ValueError(f"intensity grid shape {self.intensities.shape} != dims {self.dims}")
        if self.labels.shape != tuple(self.dims):
            raise ValueError(f"label grid shape {self.labels.shape} != dims {self.dims}")
        if self.intensities.dtype != np.int16:
            raise ValueError("intensities must be int16 HU")
        if self.labels.dtype != np.uint8:
            raise ValueError("labels must be uint8 codes")
        lo, hi = int(self.intensities.min()), int(self.intensities.max())
        if lo < HU_MIN or hi > HU_MAX:
            raise ValueError(f"HU values [{lo}, {hi}] outside [{HU_MIN}, {HU_MAX}]")
        self.intensities.setflags(write=False)
        self.labels.setflags(write=False)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical extent covered by voxels, half a voxel beyond the outer centers."""
        o = np.asarray(self.origin, dtype=float)
        sp = np.asarray(self.spacing, dtype=float)
        d = np.asarray(self.dims, dtype=float)
        return o - 0.5 * sp, o + (d - 0.5) * sp

    def with_labels(self, labels: np.ndarray) -> "VoxelVolume":
        """Same grid and intensities under a different label field."""
        return VoxelVolume(self.dims, self.spacing, self.origin,
                           self.intensities, np.ascontiguousarray(labels, dtype=np.uint8))


def world_to_index(v: VoxelVolume, pos) -> np.ndarray:
    """Nearest voxel index for world position(s) in mm, shape (..., 3).

    Half-way positions round toward the lower index. Raises OutOfBounds if
    any position maps outside the grid.
    """
    p = np.asarray(pos, dtype=float)
    t = (p - np.asarray(v.origin)) / np.asarray(v.spacing)
    idx = np.ceil(t - 0.5).astype(np.intp)
    if np.any(idx < 0) or np.any(idx >= np.asarray(v.dims)):
        raise OutOfBounds(f"position outside volume bounds")
    return idx


def sample_label(v: VoxelVolume, pos) -> TissueLabel:
    """Label of the nearest voxel center. Labels are never interpolated."""
    i, j, k = world_to_index(v, pos)
    return TissueLabel(int(v.labels[i, j, k]))


def sample_intensity(v: VoxelVolume, pos) -> float:
    """HU of the nearest voxel center (nearest-neighbor, bit-reproducible)."""
    i, j, k = world_to_index(v, pos)
    return float(v.intensities[i, j, k])


def save_volume(v: VoxelVolume, header_path) -> None:
    """Write the JSON header plus raw intensity and label files alongside it."""
    header_path = Path(header_path)
    stem = header_path.stem
    intensity_file = f"{stem}.hu.raw"
    label_file = f"{stem}.lbl.raw"
    header = {
        "dims": [int(d) for d in v.dims],
        "spacing": [float(s) for s in v.spacing],
        "origin": [float(o) for o in v.origin],
        "intensity_file": intensity_file,
        "label_file": label_file,
    }
    header_path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(v.intensities, dtype="<i2").tofile(header_path.parent / intensity_file)
    np.ascontiguousarray(v.labels, dtype="u1").tofile(header_path.parent / label_file)
    header_path.write_text(json.dumps(header, indent=2) + "\n")


def load_volume(header_path) -> VoxelVolume:
    """Load a volume from its JSON header; a missing label file yields all-Unlabeled."""
    header_path = Path(header_path)
    if not header_path.is_file():
        raise MissingFile(f"header not found: {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise BadHeader(f"{header_path}: {e}") from e
    try:
        dims = tuple(int(d) for d in header["dims"])
        spacing = tuple(float(s) for s in header["spacing"])
        origin = tuple(float(o) for o in header["origin"])
        intensity_file = header["intensity_file"]
    except (KeyError, TypeError, ValueError) as e:
        raise BadHeader(f"{header_path}: missing or malformed field ({e})") from e
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise BadHeader(f"{header_path}: dims/spacing/origin must have 3 entries")

    n = dims[0] * dims[1] * dims[2]
    intensity_path = header_path.parent / intensity_file
    if not intensity_path.is_file():
        raise MissingFile(f"intensity raw not found: {intensity_path}")
    raw = np.fromfile(intensity_path, dtype="<i2")
    if raw.size != n:
        raise SizeMismatch(
            f"{intensity_path}: {raw.size * 2} bytes, expected {n * 2} for dims {dims}")
    intensities = raw.reshape(dims).astype(np.int16)

    label_file = header.get("label_file")
    label_path = header_path.parent / label_file if label_file else None
    if label_path is not None and label_path.is_file():
        lraw = np.fromfile(label_path, dtype="u1")
        if lraw.size != n:
            raise SizeMismatch(
                f"{label_path}: {lraw.size} bytes, expected {n} for dims {dims}")
        labels = lraw.reshape(dims).astype(np.uint8)
    else:
        labels = np.full(dims, int(TissueLabel.UNLABELED), dtype=np.uint8)

    try:
        return VoxelVolume(dims, spacing, origin, intensities, labels)
    except ValueError as e:
        raise BadHeader(f"{header_path}: {e}") from e


@dataclass(frozen=True)
class BodyMask:
    """Patient body-box mask: one 26-connected component with filled holes."""

    mask: np.ndarray  # bool, shape dims
    voxel_count: int

    def __post_init__(self):
        self.mask.setflags(write=False)


_STRUCT_6 = ndimage.generate_binary_structure(3, 1)
_STRUCT_26 = ndimage.generate_binary_structure(3, 3)


def extract_body_mask(v: VoxelVolume, air_threshold: float) -> BodyMask:
    """Threshold, open (erode+dilate, 6-neighborhood), keep the largest
    26-connected component and fill enclosed holes.

    Removes disjoint non-body objects (table, cables) and closes internal
    air pockets into the body box.
    """
    fg = v.intensities > air_threshold
    if not fg.any():
        raise EmptyMask("no voxel above air threshold")
    opened = ndimage.binary_dilation(
        ndimage.binary_erosion(fg, structure=_STRUCT_6), structure=_STRUCT_6)
    if not opened.any():
        raise EmptyMask("morphological opening removed all foreground")
    comps, n_comps = ndimage.label(opened, structure=_STRUCT_26)
    if n_comps > 1:
        sizes = ndimage.sum_labels(opened, comps, index=np.arange(1, n_comps + 1))
        keep = int(np.argmax(sizes)) + 1
        biggest = comps == keep
    else:
        biggest = opened
    filled = ndimage.binary_fill_holes(biggest)
    return BodyMask(mask=filled, voxel_count=int(filled.sum()))
