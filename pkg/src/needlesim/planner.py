"""Straight skin-to-bile-duct trajectory enumeration and scoring.

Candidate segments run from every outer skin-surface voxel center to every
target voxel (a discrete centerline of the bile ducts). Hard constraints
dismiss candidates that cross a risk structure (bone, hepatic vessels,
air cavities inside the body) or exceed the maximum insertion length.
Soft criteria score clearance from risk structures and the number of duct
voxels the shaft visits; the per-path quality is half their normalized
sum, so survivors score in [0, 1] with higher being better.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyTarget
from .volume import TissueLabel, VoxelVolume

RISK_LABELS = (TissueLabel.BONE, TissueLabel.HEP_BLOOD)


@dataclass(frozen=True)
class PlannerConfig:
    max_length_mm: float = 90.0
    risk_clearance_cap_mm: float = 10.0  # normalizes the clearance criterion
    target_hit_cap: int = 15  # normalizes the duct-voxel count criterion
    min_quality: float = 0.4  # candidates below are dismissed
    march_step_factor: float = 0.5  # of the smallest spacing component

    def __post_init__(self):
        if not 0.0 <= self.min_quality <= 1.0:
            raise ValueError("min_quality must lie in [0, 1]")
        if self.march_step_factor <= 0 or self.march_step_factor > 1:
            raise ValueError("march step factor must lie in (0, 1]")


@dataclass(frozen=True)
class CandidatePath:
    skin_voxel: tuple[int, int, int]
    target_index: int
    origin: tuple[float, float, float]  # mm
    direction: tuple[float, float, float]  # unit
    length_mm: float
    c1: float  # 0 or inf
    c2: float  # 0 or inf
    c3_norm: float
    c4_norm: float
    q: float

    def to_record(self) -> dict:
        return {
            "skin_voxel": list(self.skin_voxel),
            "target_index": self.target_index,
            "origin": list(self.origin),
            "direction": list(self.direction),
            "length_mm": self.length_mm,
            "c1": self.c1, "c2": self.c2,
            "c3_norm": self.c3_norm, "c4_norm": self.c4_norm,
            "q": self.q,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CandidatePath":
        return cls(tuple(rec["skin_voxel"]), int(rec["target_index"]),
                   tuple(rec["origin"]), tuple(rec["direction"]),
                   float(rec["length_mm"]), float(rec["c1"]), float(rec["c2"]),
                   float(rec["c3_norm"]), float(rec["c4_norm"]), float(rec["q"]))


@dataclass(frozen=True)
class TargetSet:
    """Bile-duct centerline voxels, ordered by grid index."""

    indices: np.ndarray  # (n, 3) intp
    points_mm: np.ndarray  # (n, 3) float

    def __len__(self):
        return len(self.indices)


def save_paths(paths: list[CandidatePath], path) -> None:
    with open(path, "w") as fh:
        for p in paths:
            fh.write(json.dumps(p.to_record()) + "\n")


def load_paths(path) -> list[CandidatePath]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(CandidatePath.from_record(json.loads(line)))
    return out


def extract_targets(v: VoxelVolume) -> TargetSet:
    """Centerline surrogate: interior-distance local maxima along any axis."""
    mask = v.labels == int(TissueLabel.HEP_BILE)
    if not mask.any():
        raise EmptyTarget("no bile-duct voxels in the label grid")
    dt = ndimage.distance_transform_edt(mask, sampling=v.spacing)
    ridge = np.zeros_like(mask)
    for axis in range(3):
        lo = np.roll(dt, 1, axis=axis)
        hi = np.roll(dt, -1, axis=axis)
        # grid border wraps around; zero it out explicitly
        sl = [slice(None)] * 3
        sl[axis] = 0
        lo[tuple(sl)] = 0.0
        sl[axis] = -1
        hi[tuple(sl)] = 0.0
        ridge |= (dt > lo) & (dt > hi)
    ridge &= mask
    idx = np.argwhere(ridge)
    order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
    idx = idx[order]
    pts = np.asarray(v.origin) + idx * np.asarray(v.spacing)
    return TargetSet(indices=idx, points_mm=pts)


class Planner:
    """Precomputed planning context over one ground-truth volume."""

    def __init__(self, v: VoxelVolume, config: PlannerConfig | None = None):
        self.volume = v
        self.config = config or PlannerConfig()
        self.labels = v.labels
        self._origin = np.asarray(v.origin, dtype=float)
        self._spacing = np.asarray(v.spacing, dtype=float)
        self._dims = np.asarray(v.dims)
        self.step_mm = self.config.march_step_factor * float(self._spacing.min())

        body = ndimage.binary_fill_holes(v.labels != int(TissueLabel.AIR))
        self.body = body
        risk = np.zeros(v.dims, dtype=bool)
        for label in RISK_LABELS:
            risk |= v.labels == int(label)
        risk |= (v.labels == int(TissueLabel.AIR)) & body  # enclosed cavities
        self.risk = risk
        if risk.any():
            self.risk_distance = ndimage.distance_transform_edt(
                ~risk, sampling=v.spacing)
        else:
            self.risk_distance = np.full(v.dims, np.inf)
        self.target_set = extract_targets(v)
        self._bile_code = int(TissueLabel.HEP_BILE)

    # -- segment evaluation -------------------------------------------------

    def _to_index(self, pos):
        t = (pos - self._origin) / self._spacing
        idx = np.ceil(t - 0.5).astype(np.intp)
        np.clip(idx, 0, self._dims - 1, out=idx)
        return idx

    def evaluate(self, origin_mm, targets_mm):
        """Criteria for the segments origin -> each target.

        Returns arrays (c1, c2, c3_norm, c4_norm, q) over targets. Marches
        every segment at the sub-voxel step; samples beyond a segment's
        length clamp to its endpoint.
        """
        o = np.asarray(origin_mm, dtype=float)
        tpts = np.atleast_2d(np.asarray(targets_mm, dtype=float))
        d = tpts - o[None, :]
        lengths = np.linalg.norm(d, axis=1)
        n_t = len(tpts)
        c1 = np.zeros(n_t)
        c2 = np.where(lengths > self.config.max_length_mm, np.inf, 0.0)
        c3_norm = np.zeros(n_t)
        c4_norm = np.zeros(n_t)
        degenerate = lengths == 0.0
        c1[degenerate] = np.inf

        # too-long and degenerate segments are dismissed without marching
        rows = np.nonzero(np.isfinite(c2) & ~degenerate)[0]
        if len(rows) == 0:
            q = np.where(np.isinf(c1) | np.isinf(c2), np.inf, 0.0)
            return c1, c2, c3_norm, c4_norm, q
        rl = lengths[rows]
        u = d[rows] / rl[:, None]

        n_max = max(int(math.ceil(float(rl.max()) / self.step_mm)), 1)
        s = np.minimum(np.arange(1, n_max + 1)[None, :] * self.step_mm, rl[:, None])
        pos = o[None, None, :] + s[:, :, None] * u[:, None, :]
        idx = self._to_index(pos)

        tgt_idx = self._to_index(tpts[rows])
        hits = np.all(idx == tgt_idx[:, None, :], axis=2)
        # the clamped endpoint sample is the target center, so a hit exists
        reached = np.argmax(hits, axis=1)
        before = np.arange(n_max)[None, :] <= reached[:, None]

        ix, iy, iz = idx[..., 0], idx[..., 1], idx[..., 2]
        risk_hit = (self.risk[ix, iy, iz] & before).any(axis=1)
        c1[rows[risk_hit]] = np.inf

        # soft scores are only consulted for candidates that pass the hard
        # constraints; skip the gathers for the rest
        live = ~risk_hit
        if live.any():
            lx, ly, lz = ix[live], iy[live], iz[live]
            rd = np.where(before[live], self.risk_distance[lx, ly, lz], np.inf)
            c3 = rd.min(axis=1)
            c3_norm[rows[live]] = np.clip(
                c3 / self.config.risk_clearance_cap_mm, 0.0, 1.0)
            in_bile = self.labels[lx, ly, lz] == self._bile_code
            flat = (lx * self._dims[1] + ly) * self._dims[2] + lz
            c4 = np.zeros(in_bile.shape[0])
            for row in np.nonzero(in_bile.any(axis=1))[0]:
                c4[row] = len(np.unique(flat[row][in_bile[row]]))
            c4_norm[rows[live]] = np.clip(c4 / self.config.target_hit_cap, 0.0, 1.0)

        q = np.where(np.isinf(c1) | np.isinf(c2), np.inf,
                     0.5 * (c1 + c2 + c3_norm + c4_norm))
        return c1, c2, c3_norm, c4_norm, q

    def check_hard(self, origin_mm, target_mm) -> tuple[float, float]:
        """(c1, c2): risk blockage and insertion-length constraints."""
        c1, c2, _, _, _ = self.evaluate(origin_mm, [target_mm])
        return float(c1[0]), float(c2[0])

    def score_soft(self, origin_mm, target_mm) -> tuple[float, float]:
        """(c3_norm, c4_norm): normalized risk clearance and duct-voxel count."""
        _, _, c3n, c4n, _ = self.evaluate(origin_mm, [target_mm])
        return float(c3n[0]), float(c4n[0])

    def quality(self, c1, c2, c3_norm, c4_norm) -> float:
        if math.isinf(c1) or math.isinf(c2):
            return math.inf
        return 0.5 * (c1 + c2 + c3_norm + c4_norm)

    # -- enumeration ----------------------------------------------------------

    def skin_surface_voxels(self) -> np.ndarray:
        """Skin voxels with at least one 6-neighbor outside the body mask."""
        outside = ~self.body
        touching = ndimage.binary_dilation(
            outside, structure=ndimage.generate_binary_structure(3, 1))
        surf = (self.labels == int(TissueLabel.SKIN)) & touching
        idx = np.argwhere(surf)
        order = np.lexsort((idx[:, 2], idx[:, 1], idx[:, 0]))
        return idx[order]

    def plan(self) -> list[CandidatePath]:
        """Best surviving path per skin-surface voxel, sorted by quality."""
        targets = self.target_set
        if len(targets) == 0:
            raise EmptyTarget("target set is empty")
        tpts = targets.points_mm
        paths: list[CandidatePath] = []
        for skin_idx in self.skin_surface_voxels():
            origin = self._origin + skin_idx * self._spacing
            c1, c2, c3n, c4n, q = self.evaluate(origin, tpts)
            finite = np.isfinite(q)
            if not finite.any():
                continue
            q_masked = np.where(finite, q, -np.inf)
            ti = int(np.argmax(q_masked))  # first max: lowest target index
            if q_masked[ti] < self.config.min_quality:
                continue
            target = tpts[ti]
            length = float(np.linalg.norm(target - origin))
            u = (target - origin) / length
            paths.append(CandidatePath(
                skin_voxel=tuple(int(i) for i in skin_idx),
                target_index=ti,
                origin=tuple(float(x) for x in origin),
                direction=tuple(float(x) for x in u),
                length_mm=length,
                c1=float(c1[ti]), c2=float(c2[ti]),
                c3_norm=float(c3n[ti]), c4_norm=float(c4n[ti]),
                q=float(q_masked[ti])))
        paths.sort(key=lambda p: (-p.q, p.skin_voxel))
        return paths


def plan(v: VoxelVolume, config: PlannerConfig | None = None) -> list[CandidatePath]:
    return Planner(v, config).plan()
