"""Haptic tissue parameters, intensity thresholds and tip classification.

Each tissue carries a (cut threshold T_N [N], sustain force R [N],
stiffness k [N/mm]) tuple. Voxels without an explicit segmentation label
are classified through intensity intervals whose bounds come from the
Bayes-optimal intersections of per-class Gaussian fits: air below t0,
skin in [t0, t1), fat/soft in [t1, t2), bone above t2. The bone bound t2
is location dependent: the sensitive t2- applies until the needle has
passed the fascia layer, the specific t2+ afterwards.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DegenerateClass, OutOfBounds, UnknownLabel
from .volume import BodyMask, TissueLabel, VoxelVolume

INFINITE = math.inf


@dataclass(frozen=True)
class TissueParams:
    """Haptic parameter tuple for one tissue."""

    cut_threshold: float  # T_N [N], inf = impenetrable
    sustain: float  # R [N]
    stiffness: float  # k [N/mm]

    def __post_init__(self):
        # note: sustain may exceed the cut threshold (liver does); such
        # tissues are entered by an immediate cut rather than a ramp
        if self.cut_threshold < 0 or self.sustain < 0 or self.stiffness < 0:
            raise ValueError("haptic parameters must be >= 0")


class TissueRole(Enum):
    PASS = "pass"
    RISK = "risk"
    TARGET = "target"


_DEFAULT_ROWS: dict[TissueLabel, tuple[TissueParams, TissueRole]] = {
    TissueLabel.AIR: (TissueParams(0.0, 0.0, 0.0), TissueRole.PASS),
    TissueLabel.SKIN: (TissueParams(0.7, 0.7, 0.8), TissueRole.PASS),
    TissueLabel.FAT_SOFT: (TissueParams(0.7, 0.7, 1.0), TissueRole.PASS),
    TissueLabel.BONE: (TissueParams(INFINITE, 3.0, 2.0), TissueRole.RISK),
    TissueLabel.FASCIA: (TissueParams(2.5, 1.0, 1.0), TissueRole.PASS),
    TissueLabel.LIVER: (TissueParams(0.3, 0.9, 1.2), TissueRole.PASS),
    TissueLabel.HEP_BLOOD: (TissueParams(1.05, 0.75, 1.1), TissueRole.RISK),
    TissueLabel.HEP_BILE: (TissueParams(1.2, 0.5, 1.0), TissueRole.TARGET),
}


@dataclass(frozen=True)
class HapticTable:
    """Label -> haptic parameters map. Every label except Unlabeled has a row."""

    rows: dict[TissueLabel, tuple[TissueParams, TissueRole]] = field(
        default_factory=lambda: dict(_DEFAULT_ROWS))

    def __post_init__(self):
        for label in TissueLabel:
            if label is TissueLabel.UNLABELED:
                continue
            if label not in self.rows:
                raise ValueError(f"haptic table missing entry for {label.name}")

    def params_of(self, label: TissueLabel) -> TissueParams:
        if label is TissueLabel.UNLABELED or label not in self.rows:
            raise UnknownLabel(f"no haptic parameters for {label!r}")
        return self.rows[label][0]

    def role_of(self, label: TissueLabel, internal_air: bool = False) -> TissueRole:
        """Role tag; air counts as a risk structure only inside the body."""
        if label is TissueLabel.AIR:
            return TissueRole.RISK if internal_air else TissueRole.PASS
        if label is TissueLabel.UNLABELED or label not in self.rows:
            raise UnknownLabel(f"no role for {label!r}")
        return self.rows[label][1]

    def to_json(self) -> str:
        obj = {}
        for label, (p, role) in self.rows.items():
            obj[label.name] = {
                "cut_threshold": None if math.isinf(p.cut_threshold) else p.cut_threshold,
                "sustain": p.sustain,
                "stiffness": p.stiffness,
                "role": role.value,
            }
        return json.dumps(obj, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HapticTable":
        raw = json.loads(text)
        rows = {}
        for name, row in raw.items():
            label = TissueLabel[name]
            tn = row["cut_threshold"]
            params = TissueParams(INFINITE if tn is None else float(tn),
                                  float(row["sustain"]), float(row["stiffness"]))
            rows[label] = (params, TissueRole(row["role"]))
        return cls(rows=rows)


def params_of(label: TissueLabel, table: HapticTable) -> TissueParams:
    """Table lookup; Unlabeled has no parameters."""
    return table.params_of(label)


@dataclass(frozen=True)
class ThresholdSet:
    """HU interval bounds for the bulk-tissue transfer function."""

    t0: float
    t1: float
    t2_minus: float
    t2_plus: float
    fallbacks: tuple[str, ...] = ()

    def __post_init__(self):
        if not (self.t0 < self.t1 < self.t2_minus):
            raise ValueError(f"thresholds must increase: {self.t0}, {self.t1}, {self.t2_minus}")
        if self.t2_plus < self.t2_minus:
            raise ValueError("specific bone threshold below sensitive one")

    def bone_threshold(self, fascia_passed: bool) -> float:
        return self.t2_plus if fascia_passed else self.t2_minus

    def to_json(self) -> str:
        return json.dumps({"t0": self.t0, "t1": self.t1, "t2_minus": self.t2_minus,
                           "t2_plus": self.t2_plus, "fallbacks": list(self.fallbacks)},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ThresholdSet":
        raw = json.loads(text)
        return cls(float(raw["t0"]), float(raw["t1"]), float(raw["t2_minus"]),
                   float(raw["t2_plus"]), tuple(raw.get("fallbacks", ())))


@dataclass(frozen=True)
class ClassStats:
    mean: float
    std: float
    weight: float

    def __post_init__(self):
        if self.std <= 0 or self.weight <= 0:
            raise ValueError("std and weight must be positive")


@dataclass(frozen=True)
class GaussianClassModel:
    """Weighted Gaussian intensity model of the four bulk classes."""

    air: ClassStats
    skin: ClassStats
    fat_soft: ClassStats
    bone: ClassStats


def _weighted_log_density(c: ClassStats, x: float) -> float:
    z = (x - c.mean) / c.std
    return math.log(c.weight) - math.log(c.std) - 0.5 * z * z


def _intersection(lo: ClassStats, hi: ClassStats) -> tuple[float, bool]:
    """Smallest crossing of the two weighted densities between the means.

    Returns (threshold, used_fallback). Falls back to the midpoint of the
    means when the densities never cross there.
    """
    m1, s1, w1 = lo.mean, lo.std, lo.weight
    m2, s2, w2 = hi.mean, hi.std, hi.weight
    a = 1.0 / (2.0 * s2 * s2) - 1.0 / (2.0 * s1 * s1)
    b = m1 / (s1 * s1) - m2 / (s2 * s2)
    c = (m2 * m2) / (2.0 * s2 * s2) - (m1 * m1) / (2.0 * s1 * s1) \
        + math.log((w1 * s2) / (w2 * s1))
    roots = []
    if abs(a) < 1e-15:
        if b != 0.0:
            roots = [-c / b]
    else:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            roots = [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)]
    inside = sorted(r for r in roots if m1 < r < m2)
    if inside:
        return inside[0], False
    return 0.5 * (m1 + m2), True


_FIT_CLASSES = (
    ("air", TissueLabel.AIR),
    ("skin", TissueLabel.SKIN),
    ("fat_soft", TissueLabel.FAT_SOFT),
    ("bone", TissueLabel.BONE),
)


def fit_thresholds(v: VoxelVolume, delta_hu: float = 100.0
                   ) -> tuple[GaussianClassModel, ThresholdSet]:
    """Fit per-class Gaussians from fully labeled voxels and derive thresholds.

    Prior weights are class voxel fractions. t2+ = t2- + delta_hu; the
    offset trades bone sensitivity for specificity once fascia is passed.
    """
    stats = {}
    counts = {}
    for name, label in _FIT_CLASSES:
        values = v.intensities[v.labels == int(label)]
        if values.size < 2:
            raise DegenerateClass(f"class {name}: needs >= 2 labeled voxels")
        mean = float(values.mean())
        std = float(values.std())
        if std <= 0.0:
            raise DegenerateClass(f"class {name}: zero intensity spread")
        stats[name] = (mean, std)
        counts[name] = values.size
    total = sum(counts.values())
    model = GaussianClassModel(**{
        name: ClassStats(stats[name][0], stats[name][1], counts[name] / total)
        for name, _ in _FIT_CLASSES})

    order = [model.air, model.skin, model.fat_soft, model.bone]
    names = ["air/skin", "skin/fat_soft", "fat_soft/bone"]
    if any(order[i].mean >= order[i + 1].mean for i in range(3)):
        raise DegenerateClass("class means are not strictly increasing")
    ts, fallbacks = [], []
    for pair_name, lo, hi in zip(names, order[:-1], order[1:]):
        t, fell_back = _intersection(lo, hi)
        ts.append(t)
        if fell_back:
            fallbacks.append(pair_name)
    thresholds = ThresholdSet(ts[0], ts[1], ts[2], ts[2] + delta_hu,
                              fallbacks=tuple(fallbacks))
    return model, thresholds


class LabelProvider:
    """Maps a tip position to (label, haptic params, risk flag).

    The risk flag signals an air cavity encountered inside the body; it is
    rendered with zero force but reported as a risk structure.
    """

    table: HapticTable

    def lookup(self, pos, fascia_passed: bool) -> tuple[TissueLabel, TissueParams, bool]:
        raise NotImplementedError

    def _prepare(self, v: VoxelVolume, table: HapticTable):
        self.table = table
        self._labels = v.labels
        self._dims = tuple(int(d) for d in v.dims)
        self._origin = tuple(float(o) for o in v.origin)
        self._spacing = tuple(float(s) for s in v.spacing)
        # dense code -> params lookup keeps the per-step path allocation free
        self._by_code: list[TissueParams | None] = [None] * 256
        for label, (p, _) in table.rows.items():
            self._by_code[int(label)] = p

    def _index(self, pos) -> tuple[int, int, int]:
        out = []
        for axis in range(3):
            t = (pos[axis] - self._origin[axis]) / self._spacing[axis]
            i = math.ceil(t - 0.5)
            if i < 0 or i >= self._dims[axis]:
                raise OutOfBounds(f"position {tuple(pos)} outside volume")
            out.append(i)
        return out[0], out[1], out[2]


class FullSegmentation(LabelProvider):
    """Ground-truth provider: every voxel carries an explicit label."""

    def __init__(self, v: VoxelVolume, table: HapticTable | None = None,
                 body: BodyMask | None = None):
        self._prepare(v, table or HapticTable())
        self._body = body.mask if body is not None else None

    def lookup(self, pos, fascia_passed: bool) -> tuple[TissueLabel, TissueParams, bool]:
        i, j, k = self._index(pos)
        code = int(self._labels[i, j, k])
        params = self._by_code[code]
        if params is None:
            raise UnknownLabel(f"unsegmented voxel at {tuple(pos)} in full provider")
        risk = (code == int(TissueLabel.AIR) and self._body is not None
                and bool(self._body[i, j, k]))
        return TissueLabel(code), params, risk


class PartialPlusTransferFunction(LabelProvider):
    """Partial masks with intensity-interval classification for the rest.

    Step 1: a segmented voxel wins outright. Step 2: unsegmented voxels go
    through the threshold transfer function; outside the body everything
    is air with zero force, air inside the body raises the risk flag, and
    the bone bound follows the fascia state.
    """

    def __init__(self, v: VoxelVolume, thresholds: ThresholdSet,
                 body: BodyMask, table: HapticTable | None = None):
        self._prepare(v, table or HapticTable())
        self._hu = v.intensities
        self._body = body.mask
        self._thresholds = thresholds

    def lookup(self, pos, fascia_passed: bool) -> tuple[TissueLabel, TissueParams, bool]:
        i, j, k = self._index(pos)
        code = int(self._labels[i, j, k])
        if code != int(TissueLabel.UNLABELED):
            return TissueLabel(code), self._by_code[code], False
        if not self._body[i, j, k]:
            return TissueLabel.AIR, self._by_code[0], False
        hu = float(self._hu[i, j, k])
        th = self._thresholds
        if hu < th.t0:
            return TissueLabel.AIR, self._by_code[0], True
        if hu < th.t1:
            label = TissueLabel.SKIN
        elif hu < (th.t2_plus if fascia_passed else th.t2_minus):
            label = TissueLabel.FAT_SOFT
        else:
            label = TissueLabel.BONE
        return label, self._by_code[int(label)], False


def classify(pos, provider: LabelProvider, fascia_passed: bool
             ) -> tuple[TissueLabel, TissueParams, bool]:
    """Resolve the tissue at a tip position through the given provider."""
    return provider.lookup(pos, fascia_passed)
