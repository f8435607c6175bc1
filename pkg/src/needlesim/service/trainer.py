"""Interactive trainer session: one live needle per client connection.

Messages are JSON objects with a schema version field v=1 and a type.
Commands apply strictly in arrival order; every command yields exactly
one reply. Advance/retract replies push the live state the UI renders:
depth, force, phase, tissue and the risk/target/bone/exited flags.
"""

from __future__ import annotations

import math
import uuid

import numpy as np

from ..engine import NeedleSession
from ..errors import BadState, OutOfBounds, SimError, UnknownVolume
from ..tissue import TissueRole
from ..volume import TissueLabel
from .registry import VolumeEntry, VolumeRegistry
from .slices import render_slice

PROTOCOL_VERSION = 1
SUB_STEP_MM = 0.09  # server-side quantum; matches the evaluation sampling


class TrainerSession:
    def __init__(self, registry: VolumeRegistry):
        self.registry = registry
        self.session_id = uuid.uuid4().hex[:12]
        self.entry_point: tuple[float, float, float] | None = None
        self.entry_direction: tuple[float, float, float] | None = None
        self.volume_entry: VolumeEntry | None = None
        self.provider_kind: str | None = None
        self.degrade_sigma = 1.0
        self.degrade_seed = 11
        self.needle: NeedleSession | None = None
        self.design_slope = 0.0
        self._last_magnitude = 0.0

    # -- dispatch -----------------------------------------------------------

    def handle(self, msg: dict) -> dict:
        """Process one client message and produce the reply."""
        try:
            if not isinstance(msg, dict):
                raise BadState("message must be a JSON object")
            if msg.get("v") != PROTOCOL_VERSION:
                raise BadState(f"unsupported protocol version {msg.get('v')!r}")
            kind = msg.get("type")
            handler = {
                "session.start": self._start,
                "slice.get": self._slice,
                "entry.set": self._entry_set,
                "needle.advance": self._advance,
                "needle.retract": self._retract,
                "attempt.finish": self._finish,
                "paths.reference": self._reference_paths,
            }.get(kind)
            if handler is None:
                raise BadState(f"unknown message type {kind!r}")
            return handler(msg)
        except SimError as e:
            return {"v": PROTOCOL_VERSION, "type": "error",
                    "error": type(e).__name__, "message": str(e)}
        except (KeyError, TypeError, ValueError) as e:
            return {"v": PROTOCOL_VERSION, "type": "error",
                    "error": "BadMessage", "message": str(e)}

    # -- handlers -----------------------------------------------------------

    def _require_volume(self) -> VolumeEntry:
        if self.volume_entry is None:
            raise BadState("no session started")
        return self.volume_entry

    def _start(self, msg: dict) -> dict:
        ref = msg["volume"]
        provider = msg.get("provider", "full")
        if provider not in ("full", "partial"):
            raise BadState(f"provider must be full or partial (got {provider!r})")
        self.volume_entry = self.registry.get(str(ref))
        self.provider_kind = provider
        self.degrade_sigma = float(msg.get("degrade_sigma", 1.0))
        self.degrade_seed = int(msg.get("degrade_seed", 11))
        self.design_slope = float(msg.get("design_slope", 0.0))
        self.needle = None
        self.entry_point = None
        self.entry_direction = None
        return {"v": PROTOCOL_VERSION, "type": "session.started",
                "session_id": self.session_id,
                "provider": provider,
                "volume": self.volume_entry.info()}

    def _slice(self, msg: dict) -> dict:
        entry = self._require_volume()
        grid = entry.label_grid(self.provider_kind, self.degrade_sigma,
                                self.degrade_seed)
        window = msg.get("window") or [40.0, 400.0]
        payload = render_slice(entry.volume, msg.get("axis", "z"),
                               int(msg["index"]), float(window[0]),
                               float(window[1]), bool(msg.get("overlay", False)),
                               label_grid=grid)
        payload.update({"v": PROTOCOL_VERSION, "type": "slice"})
        return payload

    def _entry_set(self, msg: dict) -> dict:
        entry = self._require_volume()
        point = tuple(float(x) for x in msg["point"])
        direction = tuple(float(x) for x in msg["direction"])
        lo, hi = entry.volume.bounds()
        if any(point[a] < lo[a] or point[a] > hi[a] for a in range(3)):
            raise OutOfBounds(f"entry point {point} outside the volume")
        provider = entry.provider(self.provider_kind, self.degrade_sigma,
                                  self.degrade_seed)
        self.needle = NeedleSession(point, direction, provider,
                                    design_slope=self.design_slope)
        self.entry_point = point
        self.entry_direction = self.needle.direction
        return {"v": PROTOCOL_VERSION, "type": "entry.ack",
                "point": list(point), "direction": list(self.needle.direction)}

    def _require_needle(self) -> NeedleSession:
        if self.needle is None:
            raise BadState("set an entry point before steering")
        return self.needle

    def _state_push(self, events) -> dict:
        needle = self.needle
        entry = self.volume_entry
        label = needle.tip_label
        role = entry.table.role_of(label, internal_air=needle.tip_cavity_risk)
        return {
            "v": PROTOCOL_VERSION, "type": "state",
            "depth_mm": needle.tip_depth,
            "force_n": self._last_magnitude,
            "phase": needle.phase.value,
            "tissue": label.name,
            "flags": {
                "risk": bool(role is TissueRole.RISK or needle.bone_blocked),
                "target": bool(label is TissueLabel.HEP_BILE),
                "bone_blocked": bool(needle.bone_blocked),
                "exited": bool(needle.exited_body),
            },
            "events": [{"kind": e.kind.value, "depth_mm": e.depth,
                        "tissue": None if e.tissue is None else e.tissue.name}
                       for e in events],
        }

    def _advance(self, msg: dict) -> dict:
        needle = self._require_needle()
        total = float(msg["mm"])
        if total <= 0:
            raise BadState("advance mm must be > 0")
        n_sub = max(int(math.ceil(total / SUB_STEP_MM)), 1)
        sub = total / n_sub
        events = []
        magnitude = 0.0
        for _ in range(n_sub):
            res = needle.advance(sub)
            magnitude = res.magnitude
            events.extend(res.events)
        self._last_magnitude = magnitude
        return self._state_push(events)

    def _retract(self, msg: dict) -> dict:
        needle = self._require_needle()
        total = float(msg["mm"])
        if total <= 0:
            raise BadState("retract mm must be > 0")
        total = min(total, needle.tip_depth)
        if total == 0.0:
            self._last_magnitude = 0.0
            return self._state_push([])
        n_sub = max(int(math.ceil(total / SUB_STEP_MM)), 1)
        sub = total / n_sub
        events = []
        magnitude = 0.0
        for _ in range(n_sub):
            res = needle.retract(sub)
            magnitude = res.magnitude
            events.extend(res.events)
        self._last_magnitude = magnitude
        return self._state_push(events)

    def _finish(self, msg: dict) -> dict:
        needle = self._require_needle()
        entry = self._require_volume()
        planner = entry.planner()
        deepest = needle.tip_position(needle.max_depth_reached)
        tpts = planner.target_set.points_mm
        d2 = np.sum((tpts - np.asarray(deepest)) ** 2, axis=1)
        ti = int(np.argmin(d2))
        c1, c2, c3n, c4n, q = planner.evaluate(self.entry_point, tpts[ti])
        qv = float(q[0])
        score = None if math.isinf(qv) else qv
        nearest = self._nearest_reference()
        return {"v": PROTOCOL_VERSION, "type": "score",
                "q": score,
                "target_index": ti,
                "criteria": {"c1": float(c1[0]), "c2": float(c2[0]),
                             "c3_norm": float(c3n[0]), "c4_norm": float(c4n[0])},
                "target_reached": bool(TissueLabel.HEP_BILE.name in
                                       {e.tissue.name for e in needle.event_log
                                        if e.tissue is not None}),
                "nearest_reference": nearest}

    def _nearest_reference(self) -> dict | None:
        entry = self._require_volume()
        paths = entry.reference_paths()
        if not paths or self.entry_point is None:
            return None
        o = np.asarray(self.entry_point)
        u = np.asarray(self.entry_direction)
        best = None
        for p in paths:
            dist = float(np.linalg.norm(np.asarray(p.origin) - o))
            angle = 1.0 - float(np.dot(np.asarray(p.direction), u))
            key = (dist, angle)
            if best is None or key < best[0]:
                best = (key, p)
        p = best[1]
        return {"q": p.q, "origin": list(p.origin), "direction": list(p.direction),
                "length_mm": p.length_mm, "skin_voxel": list(p.skin_voxel)}

    def _reference_paths(self, msg: dict) -> dict:
        entry = self._require_volume()
        paths = entry.reference_paths()
        limit = msg.get("limit")
        if limit is not None:
            paths = paths[:int(limit)]
        return {"v": PROTOCOL_VERSION, "type": "paths",
                "paths": [p.to_record() for p in paths]}
