"""Window-leveled 8-bit slice extraction with label overlay runs."""

from __future__ import annotations

import base64

import numpy as np

from ..errors import OutOfBounds
from ..volume import TissueLabel, VoxelVolume

_AXIS_NAMES = {"x": 0, "y": 1, "z": 2, "0": 0, "1": 1, "2": 2}

# labels hidden from the overlay: outside air and unclassified voxels
_OVERLAY_SKIP = (int(TissueLabel.AIR), int(TissueLabel.UNLABELED))


def resolve_axis(axis) -> int:
    key = str(axis).lower()
    if key not in _AXIS_NAMES:
        raise ValueError(f"axis must be one of x, y, z (got {axis!r})")
    return _AXIS_NAMES[key]


def overlay_runs(label_plane: np.ndarray) -> list[list[int]]:
    """Row-wise run-length encoding [row, start, length, label] of the
    structures in a label plane."""
    runs: list[list[int]] = []
    n_rows, n_cols = label_plane.shape
    for r in range(n_rows):
        row = label_plane[r]
        changes = np.nonzero(np.diff(row) != 0)[0] + 1
        starts = np.concatenate(([0], changes))
        ends = np.concatenate((changes, [n_cols]))
        for s, e in zip(starts, ends):
            code = int(row[s])
            if code not in _OVERLAY_SKIP:
                runs.append([r, int(s), int(e - s), code])
    return runs


def render_slice(v: VoxelVolume, axis, index: int, center: float = 40.0,
                 width: float = 400.0, overlay: bool = False,
                 label_grid: np.ndarray | None = None) -> dict:
    """8-bit slice payload; rows follow the first remaining axis."""
    ax = resolve_axis(axis)
    if not 0 <= index < v.dims[ax]:
        raise OutOfBounds(f"slice index {index} outside axis {ax} of {v.dims}")
    if width <= 0:
        raise ValueError("window width must be positive")
    plane = np.take(v.intensities, index, axis=ax)
    lo = center - width / 2.0
    img = np.clip((plane.astype(np.float64) - lo) / width, 0.0, 1.0)
    img8 = np.ascontiguousarray((img * 255.0).round().astype(np.uint8))

    rem_axes = [a for a in range(3) if a != ax]
    payload = {
        "axis": ax,
        "index": index,
        "shape": list(img8.shape),  # [rows, cols]
        "row_axis": rem_axes[0],
        "col_axis": rem_axes[1],
        "spacing": [v.spacing[rem_axes[0]], v.spacing[rem_axes[1]]],
        "origin": [v.origin[rem_axes[0]], v.origin[rem_axes[1]]],
        "plane_coord": v.origin[ax] + index * v.spacing[ax],
        "window": [center, width],
        "data_b64": base64.b64encode(img8.tobytes()).decode("ascii"),
    }
    if overlay:
        grid = v.labels if label_grid is None else label_grid
        payload["overlay_runs"] = overlay_runs(np.take(grid, index, axis=ax))
        payload["label_names"] = {int(l): l.name for l in TissueLabel}
    return payload
