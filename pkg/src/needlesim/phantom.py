"""Deterministic synthetic patient volumes with full ground-truth labels.

Geometry is rasterized into the label grid (nested ellipsoid shells for
body/skin/fascia, swept-circle arcs for ribs, capsule polylines for the
hepatic vessels and bile ducts), then every voxel draws its HU from the
Gaussian of its tissue with one seeded generator. A separate degradation
operator keeps only the key-structure masks and perturbs their boundaries
with a smooth seeded displacement field, emulating segmentation error;
bulk tissues become unlabeled and are left to the transfer function.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import BadGeometry
from .volume import HU_MAX, HU_MIN, TissueLabel, VoxelVolume

DEFAULT_HU_MODELS: dict[TissueLabel, tuple[float, float]] = {
    TissueLabel.AIR: (-1000.0, 40.0),
    TissueLabel.SKIN: (-60.0, 30.0),
    TissueLabel.FAT_SOFT: (20.0, 40.0),
    TissueLabel.BONE: (700.0, 150.0),
    TissueLabel.FASCIA: (80.0, 30.0),
    TissueLabel.LIVER: (60.0, 20.0),
    TissueLabel.HEP_BLOOD: (120.0, 25.0),
    TissueLabel.HEP_BILE: (10.0, 15.0),
}

KEY_STRUCTURES = (TissueLabel.FASCIA, TissueLabel.LIVER,
                  TissueLabel.HEP_BLOOD, TissueLabel.HEP_BILE)


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple[float, float, float]  # mm
    semi_axes: tuple[float, float, float]  # mm

    def shrunk(self, margin: float) -> "Ellipsoid":
        return Ellipsoid(self.center, tuple(max(a - margin, 1e-6) for a in self.semi_axes))

    def contains(self, p, margin: float = 0.0) -> bool:
        return sum(((p[i] - self.center[i]) / max(self.semi_axes[i] - margin, 1e-9)) ** 2
                   for i in range(3)) <= 1.0


@dataclass(frozen=True)
class Tube:
    """Capsule swept along a polyline."""

    points: tuple[tuple[float, float, float], ...]  # mm
    radius: float  # mm


@dataclass(frozen=True)
class RibCage:
    """Swept-circle arcs in evenly pitched z planes around the front."""

    count: int = 4
    z_first: float = 20.0  # mm
    pitch: float = 16.0  # mm between rib planes
    tube_radius: float = 2.2  # mm
    ellipse_semi: tuple[float, float] = (35.0, 27.0)  # arc path semi-axes [mm]
    center_xy: tuple[float, float] = (47.5, 50.0)
    theta_deg: tuple[float, float] = (200.0, 340.0)  # front-facing span

    @property
    def gap(self) -> float:
        return self.pitch - 2.0 * self.tube_radius


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (96, 96, 96)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 7
    hu_models: dict[TissueLabel, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_HU_MODELS))
    body: Ellipsoid = Ellipsoid((47.5, 50.0, 47.5), (42.0, 34.0, 42.0))
    skin_thickness: float = 2.0
    fascia_outer: Ellipsoid = Ellipsoid((47.5, 50.0, 47.5), (32.0, 24.0, 36.0))
    fascia_thickness: float = 2.5
    ribs: RibCage | None = field(default_factory=RibCage)
    liver: Ellipsoid = Ellipsoid((47.5, 46.0, 46.0), (20.0, 15.0, 17.0))
    vessels: tuple[Tube, ...] = (
        Tube(((34.0, 52.0, 44.0), (62.0, 52.0, 44.0)), 2.0),
        Tube(((36.0, 50.0, 52.0), (60.0, 50.0, 52.0)), 1.6),
    )
    biles: tuple[Tube, ...] = (
        Tube(((35.0, 42.0, 44.0), (60.0, 42.0, 44.0)), 2.5),
    )
    air_pocket: Ellipsoid | None = Ellipsoid((47.5, 64.0, 28.0), (4.0, 4.0, 4.0))

    def to_json(self) -> str:
        def enc(o):
            if isinstance(o, Ellipsoid):
                return {"center": list(o.center), "semi_axes": list(o.semi_axes)}
            if isinstance(o, Tube):
                return {"points": [list(p) for p in o.points], "radius": o.radius}
            if isinstance(o, RibCage):
                return {"count": o.count, "z_first": o.z_first, "pitch": o.pitch,
                        "tube_radius": o.tube_radius, "ellipse_semi": list(o.ellipse_semi),
                        "center_xy": list(o.center_xy), "theta_deg": list(o.theta_deg)}
            raise TypeError(o)

        return json.dumps({
            "dims": list(self.dims), "spacing": list(self.spacing),
            "origin": list(self.origin), "seed": self.seed,
            "hu_models": {l.name: list(m) for l, m in self.hu_models.items()},
            "body": enc(self.body), "skin_thickness": self.skin_thickness,
            "fascia_outer": enc(self.fascia_outer), "fascia_thickness": self.fascia_thickness,
            "ribs": enc(self.ribs) if self.ribs else None,
            "liver": enc(self.liver),
            "vessels": [enc(t) for t in self.vessels],
            "biles": [enc(t) for t in self.biles],
            "air_pocket": enc(self.air_pocket) if self.air_pocket else None,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "PhantomSpec":
        raw = json.loads(text)

        def ell(o):
            return Ellipsoid(tuple(o["center"]), tuple(o["semi_axes"]))

        def tube(o):
            return Tube(tuple(tuple(p) for p in o["points"]), float(o["radius"]))

        ribs = raw.get("ribs")
        return cls(
            dims=tuple(raw["dims"]), spacing=tuple(raw["spacing"]),
            origin=tuple(raw["origin"]), seed=int(raw["seed"]),
            hu_models={TissueLabel[k]: tuple(v) for k, v in raw["hu_models"].items()},
            body=ell(raw["body"]), skin_thickness=float(raw["skin_thickness"]),
            fascia_outer=ell(raw["fascia_outer"]),
            fascia_thickness=float(raw["fascia_thickness"]),
            ribs=RibCage(count=int(ribs["count"]), z_first=float(ribs["z_first"]),
                         pitch=float(ribs["pitch"]), tube_radius=float(ribs["tube_radius"]),
                         ellipse_semi=tuple(ribs["ellipse_semi"]),
                         center_xy=tuple(ribs["center_xy"]),
                         theta_deg=tuple(ribs["theta_deg"])) if ribs else None,
            liver=ell(raw["liver"]),
            vessels=tuple(tube(t) for t in raw["vessels"]),
            biles=tuple(tube(t) for t in raw["biles"]),
            air_pocket=ell(raw["air_pocket"]) if raw.get("air_pocket") else None,
        )


@dataclass(frozen=True)
class DegradeSpec:
    """Boundary perturbation for the kept key-structure masks."""

    sigma_mm: float = 1.0
    seed: int = 11
    structures: tuple[TissueLabel, ...] = KEY_STRUCTURES
    smooth_mm: float = 8.0  # noise correlation length; keeps the bias smooth

    def __post_init__(self):
        if self.sigma_mm < 0:
            raise ValueError("sigma must be >= 0")


# -- rasterization ----------------------------------------------------------

def _grid_axes(spec: PhantomSpec):
    return tuple(np.asarray(spec.origin[a]) + np.arange(spec.dims[a]) * spec.spacing[a]
                 for a in range(3))


def _ellipsoid_mask(spec: PhantomSpec, e: Ellipsoid) -> np.ndarray:
    xs, ys, zs = _grid_axes(spec)
    fx = ((xs - e.center[0]) / e.semi_axes[0]) ** 2
    fy = ((ys - e.center[1]) / e.semi_axes[1]) ** 2
    fz = ((zs - e.center[2]) / e.semi_axes[2]) ** 2
    return (fx[:, None, None] + fy[None, :, None] + fz[None, None, :]) <= 1.0


def _paint_tube(spec: PhantomSpec, labels: np.ndarray, tube: Tube, code: int) -> None:
    xs, ys, zs = _grid_axes(spec)
    sp = np.asarray(spec.spacing)
    pad = tube.radius + float(sp.max())
    pts = [np.asarray(p, dtype=float) for p in tube.points]
    for p, q in zip(pts[:-1], pts[1:]):
        lo = np.minimum(p, q) - pad
        hi = np.maximum(p, q) + pad
        i0 = np.maximum(np.searchsorted(xs, lo[0]) - 1, 0)
        i1 = np.minimum(np.searchsorted(xs, hi[0]) + 1, spec.dims[0])
        j0 = np.maximum(np.searchsorted(ys, lo[1]) - 1, 0)
        j1 = np.minimum(np.searchsorted(ys, hi[1]) + 1, spec.dims[1])
        k0 = np.maximum(np.searchsorted(zs, lo[2]) - 1, 0)
        k1 = np.minimum(np.searchsorted(zs, hi[2]) + 1, spec.dims[2])
        if i0 >= i1 or j0 >= j1 or k0 >= k1:
            continue
        gx, gy, gz = np.meshgrid(xs[i0:i1], ys[j0:j1], zs[k0:k1], indexing="ij")
        d = q - p
        seg_len2 = float(d @ d)
        if seg_len2 == 0.0:
            dist2 = (gx - p[0]) ** 2 + (gy - p[1]) ** 2 + (gz - p[2]) ** 2
        else:
            t = ((gx - p[0]) * d[0] + (gy - p[1]) * d[1] + (gz - p[2]) * d[2]) / seg_len2
            t = np.clip(t, 0.0, 1.0)
            dist2 = ((gx - (p[0] + t * d[0])) ** 2 + (gy - (p[1] + t * d[1])) ** 2
                     + (gz - (p[2] + t * d[2])) ** 2)
        sub = labels[i0:i1, j0:j1, k0:k1]
        sub[dist2 <= tube.radius ** 2] = code


def _rib_polylines(ribs: RibCage) -> list[Tube]:
    t0, t1 = (math.radians(a) for a in ribs.theta_deg)
    thetas = np.linspace(t0, t1, 96)
    tubes = []
    for r in range(ribs.count):
        z = ribs.z_first + r * ribs.pitch
        pts = tuple((ribs.center_xy[0] + ribs.ellipse_semi[0] * math.cos(th),
                     ribs.center_xy[1] + ribs.ellipse_semi[1] * math.sin(th),
                     z) for th in thetas)
        tubes.append(Tube(pts, ribs.tube_radius))
    return tubes


def _validate(spec: PhantomSpec) -> None:
    liver_inner = spec.fascia_outer.shrunk(spec.fascia_thickness)
    for a in range(3):
        if spec.liver.center[a] + spec.liver.semi_axes[a] > \
                liver_inner.center[a] + liver_inner.semi_axes[a] or \
                spec.liver.center[a] - spec.liver.semi_axes[a] < \
                liver_inner.center[a] - liver_inner.semi_axes[a]:
            raise BadGeometry("liver not inside the fascia-bounded region")
    for tube in spec.biles:
        for p in tube.points:
            if not spec.liver.contains(p, margin=tube.radius):
                raise BadGeometry(f"bile tube point {p} not strictly inside the liver")
    for tube in spec.vessels:
        for p in tube.points:
            if not spec.liver.contains(p, margin=tube.radius):
                raise BadGeometry(f"vessel point {p} not strictly inside the liver")
    if spec.ribs is not None and spec.ribs.count > 1 and spec.ribs.gap <= 0:
        raise BadGeometry("rib pitch leaves no intercostal gap")
    if spec.air_pocket is not None and not spec.body.contains(spec.air_pocket.center):
        raise BadGeometry("air pocket outside the body")
    for label in spec.hu_models:
        if label is TissueLabel.UNLABELED:
            raise BadGeometry("unlabeled tissue cannot carry an intensity model")


def rasterize_labels(spec: PhantomSpec) -> np.ndarray:
    """Ground-truth label grid; later structures overwrite earlier ones."""
    _validate(spec)
    labels = np.full(spec.dims, int(TissueLabel.AIR), dtype=np.uint8)
    body = _ellipsoid_mask(spec, spec.body)
    labels[body] = int(TissueLabel.FAT_SOFT)
    inner = _ellipsoid_mask(spec, spec.body.shrunk(spec.skin_thickness))
    labels[body & ~inner] = int(TissueLabel.SKIN)
    f_out = _ellipsoid_mask(spec, spec.fascia_outer)
    f_in = _ellipsoid_mask(spec, spec.fascia_outer.shrunk(spec.fascia_thickness))
    labels[f_out & ~f_in] = int(TissueLabel.FASCIA)
    if spec.ribs is not None:
        for tube in _rib_polylines(spec.ribs):
            _paint_tube(spec, labels, tube, int(TissueLabel.BONE))
    labels[_ellipsoid_mask(spec, spec.liver)] = int(TissueLabel.LIVER)
    for tube in spec.vessels:
        _paint_tube(spec, labels, tube, int(TissueLabel.HEP_BLOOD))
    for tube in spec.biles:
        _paint_tube(spec, labels, tube, int(TissueLabel.HEP_BILE))
    if spec.air_pocket is not None:
        labels[_ellipsoid_mask(spec, spec.air_pocket)] = int(TissueLabel.AIR)
    return labels


def generate(spec: PhantomSpec) -> VoxelVolume:
    """Rasterize the geometry and draw per-voxel HU; pure in (spec)."""
    labels = rasterize_labels(spec)
    rng = np.random.default_rng(spec.seed)
    z = rng.standard_normal(spec.dims)
    hu = np.empty(spec.dims, dtype=np.float64)
    for label in TissueLabel:
        if label is TissueLabel.UNLABELED:
            continue
        mean, std = spec.hu_models[label]
        sel = labels == int(label)
        hu[sel] = mean + std * z[sel]
    hu = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)
    return VoxelVolume(spec.dims, spec.spacing, spec.origin, hu, labels)


def generate_slab(layers: list[tuple[TissueLabel, float]],
                  xy_dims: tuple[int, int] = (24, 24),
                  spacing: tuple[float, float, float] = (0.5, 0.5, 0.5),
                  hu_models: dict[TissueLabel, tuple[float, float]] | None = None,
                  seed: int = 3) -> VoxelVolume:
    """Stack of homogeneous layers along z; layer thicknesses in mm.

    Layer boundaries land exactly on voxel boundaries when thicknesses are
    multiples of the z spacing, which keeps slab experiments analytically
    tractable.
    """
    hu_models = dict(DEFAULT_HU_MODELS) if hu_models is None else hu_models
    sz = spacing[2]
    nz = int(round(sum(t for _, t in layers) / sz))
    dims = (xy_dims[0], xy_dims[1], nz)
    labels = np.full(dims, int(TissueLabel.AIR), dtype=np.uint8)
    z_edges = 0.0
    for label, thickness in layers:
        k0 = int(round(z_edges / sz))
        k1 = int(round((z_edges + thickness) / sz))
        labels[:, :, k0:min(k1, nz)] = int(label)
        z_edges += thickness
    rng = np.random.default_rng(seed)
    z = rng.standard_normal(dims)
    hu = np.empty(dims, dtype=np.float64)
    for label in TissueLabel:
        if label is TissueLabel.UNLABELED:
            continue
        mean, std = hu_models.get(label, (0.0, 1.0))
        sel = labels == int(label)
        hu[sel] = mean + std * z[sel]
    hu = np.clip(np.rint(hu), HU_MIN, HU_MAX).astype(np.int16)
    return VoxelVolume(dims, spacing, (0.0, 0.0, 0.0), hu, labels)


def degrade(v: VoxelVolume, d: DegradeSpec) -> np.ndarray:
    """Partial label grid: key structures survive with perturbed boundaries,
    everything else becomes Unlabeled.

    The boundary moves by a smooth signed displacement field of amplitude
    sigma (its low frequency mimics systematic segmentation bias rather
    than voxel noise). Ground-truth bone voxels are never claimed by a
    penetrable structure.
    """
    partial = np.full(v.dims, int(TissueLabel.UNLABELED), dtype=np.uint8)
    bone = v.labels == int(TissueLabel.BONE)
    sp = np.asarray(v.spacing, dtype=float)
    for label in KEY_STRUCTURES:
        if label not in d.structures:
            continue
        mask = v.labels == int(label)
        if not mask.any():
            continue
        if d.sigma_mm > 0.0:
            rng = np.random.default_rng([d.seed, int(label)])
            noise = ndimage.gaussian_filter(rng.standard_normal(v.dims),
                                            sigma=d.smooth_mm / sp)
            s = noise.std()
            if s > 0:
                noise = noise * (d.sigma_mm / s)
            sd = (ndimage.distance_transform_edt(~mask, sampling=sp)
                  - ndimage.distance_transform_edt(mask, sampling=sp))
            mask = sd <= noise
            mask &= ~bone
        partial[mask] = int(label)
    return partial


def default_spec(**overrides) -> PhantomSpec:
    return replace(PhantomSpec(), **overrides) if overrides else PhantomSpec()
