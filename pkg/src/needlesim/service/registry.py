"""Shared read-only volume registry for the service.

Volumes load once and are shared by all sessions and pipeline endpoints;
derived artifacts (body mask, thresholds, partial providers, reference
paths) are cached per volume.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import UnknownVolume
from ..phantom import DegradeSpec, degrade
from ..planner import CandidatePath, Planner, PlannerConfig
from ..tissue import (FullSegmentation, HapticTable, LabelProvider,
                      PartialPlusTransferFunction, ThresholdSet, fit_thresholds)
from ..volume import BodyMask, VoxelVolume, extract_body_mask, load_volume

DEFAULT_AIR_THRESHOLD_HU = -500.0


@dataclass
class VolumeEntry:
    volume_id: str
    volume: VoxelVolume
    header_path: str | None = None
    table: HapticTable = field(default_factory=HapticTable)
    air_threshold_hu: float = DEFAULT_AIR_THRESHOLD_HU
    _body: BodyMask | None = None
    _thresholds: ThresholdSet | None = None
    _full: FullSegmentation | None = None
    _partials: dict[tuple[float, int], PartialPlusTransferFunction] = field(
        default_factory=dict)
    _partial_labels: dict[tuple[float, int], np.ndarray] = field(default_factory=dict)
    _planner: Planner | None = None
    _paths: list[CandidatePath] | None = None

    def body(self) -> BodyMask:
        if self._body is None:
            self._body = extract_body_mask(self.volume, self.air_threshold_hu)
        return self._body

    def thresholds(self) -> ThresholdSet:
        if self._thresholds is None:
            _, self._thresholds = fit_thresholds(self.volume)
        return self._thresholds

    def full_provider(self) -> FullSegmentation:
        if self._full is None:
            self._full = FullSegmentation(self.volume, self.table, self.body())
        return self._full

    def partial_provider(self, sigma_mm: float = 1.0, seed: int = 11
                         ) -> PartialPlusTransferFunction:
        key = (float(sigma_mm), int(seed))
        if key not in self._partials:
            labels = degrade(self.volume, DegradeSpec(sigma_mm=sigma_mm, seed=seed))
            self._partial_labels[key] = labels
            self._partials[key] = PartialPlusTransferFunction(
                self.volume.with_labels(labels), self.thresholds(), self.body(),
                self.table)
        return self._partials[key]

    def partial_labels(self, sigma_mm: float = 1.0, seed: int = 11) -> np.ndarray:
        self.partial_provider(sigma_mm, seed)
        return self._partial_labels[(float(sigma_mm), int(seed))]

    def provider(self, kind: str, sigma_mm: float = 1.0, seed: int = 11
                 ) -> LabelProvider:
        if kind == "full":
            return self.full_provider()
        if kind == "partial":
            return self.partial_provider(sigma_mm, seed)
        raise ValueError(f"unknown provider kind {kind!r}")

    def label_grid(self, kind: str, sigma_mm: float = 1.0, seed: int = 11) -> np.ndarray:
        if kind == "partial":
            return self.partial_labels(sigma_mm, seed)
        return self.volume.labels

    def planner(self, config: PlannerConfig | None = None) -> Planner:
        if self._planner is None or (config is not None
                                     and config != self._planner.config):
            self._planner = Planner(self.volume, config)
        return self._planner

    def reference_paths(self) -> list[CandidatePath]:
        if self._paths is None:
            self._paths = self.planner().plan()
        return self._paths

    def set_reference_paths(self, paths: list[CandidatePath]) -> None:
        self._paths = list(paths)

    def info(self) -> dict:
        return {"id": self.volume_id,
                "dims": list(self.volume.dims),
                "spacing": list(self.volume.spacing),
                "origin": list(self.volume.origin),
                "header_path": self.header_path}


class VolumeRegistry:
    """Id -> volume map; loading is serialized, lookups are lock free."""

    def __init__(self):
        self._entries: dict[str, VolumeEntry] = {}
        self._lock = threading.Lock()

    def add(self, volume: VoxelVolume, volume_id: str | None = None,
            header_path: str | None = None) -> VolumeEntry:
        with self._lock:
            vid = volume_id or f"vol{len(self._entries)}"
            entry = VolumeEntry(vid, volume, header_path)
            self._entries[vid] = entry
            return entry

    def load(self, header_path: str, volume_id: str | None = None) -> VolumeEntry:
        for entry in self._entries.values():
            if entry.header_path == str(header_path):
                return entry
        return self.add(load_volume(header_path), volume_id, str(header_path))

    def get(self, ref: str) -> VolumeEntry:
        """Resolve a registered id; falls back to loading a header path."""
        if ref in self._entries:
            return self._entries[ref]
        try:
            return self.load(ref)
        except Exception as e:
            raise UnknownVolume(f"volume {ref!r}: {e}") from e

    def list_info(self) -> list[dict]:
        return [e.info() for e in self._entries.values()]
