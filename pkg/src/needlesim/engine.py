"""Four-phase proxy force state machine for axial needle insertion.

The needle tip x moves along a fixed straight trajectory through the
undeformed volume; a proxy point p trails it. A non-linear spring between
p and x renders the axial force:

  pre-puncture   p pinned at the encountered surface, f = a2*d^2 + a1*d + a0
                 with d the tip displacement past the surface; cutting
                 happens when f exceeds the tissue threshold T_N
  post-puncture  transient within the cutting step: p jumps to R/k behind
                 the tip and the force drops to the sustain level R
  pass           linear spring f = k*|p - x| with the proxy clamped to at
                 most l_max = R/k behind (or before) the tip
  transition     a new tissue with T_N <= previous R is cut immediately;
                 a harder one starts a new pre-puncture ramp from a0 = R

Bone is impenetrable: contact freezes tip and proxy and the force clamps
to the device maximum. Retraction runs pass mechanics only; membranes
already cut (shallower than the deepest point reached) never ramp again.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .errors import BadDesignSlope, NonPositiveStep, ZeroStiffness
from .tissue import LabelProvider, TissueParams, TissueRole
from .volume import TissueLabel

DEVICE_MAX_FORCE_N = 22.0


@dataclass(frozen=True)
class SpringModel:
    """Second-degree polynomial spring f(d) = a2*d^2 + a1*d + a0."""

    a0: float  # start force level [N]
    a1: float  # design slope [N/mm]
    a2: float  # quadratic coefficient [N/mm^2]

    def eval(self, d: float) -> float:
        return self.a2 * d * d + self.a1 * d + self.a0


def make_spring(cut_threshold: float, start_level: float, stiffness: float,
                design_slope: float) -> SpringModel:
    """Build the ramp spring that cuts at the same displacement as the
    linear spring, d* = (T_N - a0) / k.

    A degenerate T_N == a0 yields the pure linear spring, which exceeds
    the threshold at any positive displacement (immediate cut).
    """
    if not 0.0 <= design_slope <= stiffness:
        raise BadDesignSlope(f"design slope {design_slope} outside [0, {stiffness}]")
    if not math.isfinite(cut_threshold):
        raise ValueError("impenetrable tissue has no ramp spring")
    if cut_threshold < start_level:
        raise ValueError("cut threshold below start level: surface cuts immediately")
    if cut_threshold == start_level:
        return SpringModel(start_level, stiffness, 0.0)
    a2 = stiffness * (stiffness - design_slope) / abs(cut_threshold - start_level)
    return SpringModel(start_level, design_slope, a2)


def eval_spring(s: SpringModel, d: float) -> float:
    if d < 0:
        raise ValueError("spring displacement must be >= 0")
    return s.eval(d)


def l_max_of(params: TissueParams) -> float:
    """Maximum proxy-tip spring length R/k in the pass phase."""
    if params.stiffness > 0.0:
        return params.sustain / params.stiffness
    if params.sustain == 0.0:
        return 0.0
    raise ZeroStiffness(f"sustain {params.sustain} N with zero stiffness")


class Phase(Enum):
    PRE_PUNCTURE = "pre_puncture"
    PASS = "pass"


class EventKind(Enum):
    SURFACE_CONTACT = "surface_contact"
    PUNCTURE = "puncture"
    TISSUE_TRANSITION = "tissue_transition"
    RISK_CONTACT = "risk_contact"
    TARGET_REACHED = "target_reached"
    BODY_EXIT = "body_exit"
    BONE_BLOCKED = "bone_blocked"


@dataclass(frozen=True, slots=True)
class Event:
    kind: EventKind
    depth: float  # tip depth when emitted [mm]
    tissue: TissueLabel | None = None
    from_tissue: TissueLabel | None = None

    def as_tuple(self):
        return (self.kind.value, self.depth,
                None if self.tissue is None else self.tissue.name,
                None if self.from_tissue is None else self.from_tissue.name)


@dataclass(frozen=True, slots=True)
class StepResult:
    force: tuple[float, float, float]  # [N]
    magnitude: float  # [N], <= device maximum
    phase: Phase
    events: tuple[Event, ...]


_NO_EVENTS: tuple[Event, ...] = ()


class NeedleSession:
    """Serial insertion state machine along one straight trajectory.

    The session starts logically outside the body in air; the first
    advance that samples a non-air label anchors the first surface.
    Exactly one caller may mutate a session; distinct sessions over the
    same immutable volume run in parallel safely.
    """

    def __init__(self, origin, direction, provider: LabelProvider,
                 design_slope: float = 0.0,
                 max_force: float = DEVICE_MAX_FORCE_N):
        norm = math.sqrt(direction[0] ** 2 + direction[1] ** 2 + direction[2] ** 2)
        if norm == 0.0:
            raise ValueError("direction must be non-zero")
        self.origin = (float(origin[0]), float(origin[1]), float(origin[2]))
        self.direction = (direction[0] / norm, direction[1] / norm, direction[2] / norm)
        self.provider = provider
        self.design_slope = float(design_slope)
        self.max_force = float(max_force)

        air = provider.table.params_of(TissueLabel.AIR)
        self.tip_depth = 0.0
        self.proxy_depth = 0.0
        self.phase = Phase.PASS
        self.current_label = TissueLabel.AIR
        self.current_params = air
        self.current_l_max = l_max_of(air)
        self.tip_label = TissueLabel.AIR
        self.tip_cavity_risk = False
        self.fascia_passed = False
        self.exited_body = False
        self.bone_blocked = False
        self.entered_body = False
        self.max_depth_reached = 0.0
        self.spring: SpringModel | None = None
        self.anchor_depth: float | None = None
        self._pending_from: TissueLabel | None = None
        self.event_log: list[Event] = []

    # -- geometry ---------------------------------------------------------

    def tip_position(self, depth: float | None = None):
        d = self.tip_depth if depth is None else depth
        o, u = self.origin, self.direction
        return (o[0] + d * u[0], o[1] + d * u[1], o[2] + d * u[2])

    def proxy_position(self):
        return self.tip_position(self.proxy_depth)

    # -- stepping ---------------------------------------------------------

    def advance(self, step_mm: float) -> StepResult:
        if step_mm <= 0.0:
            raise NonPositiveStep(f"advance step {step_mm} must be > 0")
        if self.bone_blocked:
            # impenetrable: commanded depth is absorbed, clamp persists
            return self._result(self.max_force, _NO_EVENTS)

        new_depth = self.tip_depth + step_mm
        label, params, cavity_risk = self.provider.lookup(
            self.tip_position(new_depth), self.fascia_passed)
        self.tip_label = label
        self.tip_cavity_risk = cavity_risk

        if self.phase is Phase.PRE_PUNCTURE:
            if not math.isfinite(params.cut_threshold):
                return self._block_on_bone(label)
            # the pending membrane holds the proxy even if the tip overruns
            # into the next label; it releases on cut or retraction
            self.tip_depth = new_depth
            self.max_depth_reached = max(self.max_depth_reached, new_depth)
            d = self.tip_depth - self.anchor_depth
            f = self.spring.eval(d)
            events: list[Event] = []
            if f > self.current_params.cut_threshold:
                f = self._complete_puncture(events)
            return self._result(f, tuple(events))

        if label is not self.current_label:
            return self._transition(new_depth, label, params, cavity_risk)

        self.tip_depth = new_depth
        self.max_depth_reached = max(self.max_depth_reached, new_depth)
        return self._result(self._pass_force(), _NO_EVENTS)

    def retract(self, step_mm: float) -> StepResult:
        if step_mm <= 0.0:
            raise NonPositiveStep(f"retract step {step_mm} must be > 0")
        if step_mm > self.tip_depth:
            raise ValueError("cannot retract past the entry point")
        events: list[Event] = []
        if self.bone_blocked:
            self.bone_blocked = False  # pulling back releases the block
        if self.phase is Phase.PRE_PUNCTURE:
            # membrane never cut; fall back to pass mechanics at the tip
            self.phase = Phase.PASS
            self.spring = None
            self.anchor_depth = None
            self._pending_from = None

        self.tip_depth -= step_mm
        label, params, cavity_risk = self.provider.lookup(
            self.tip_position(), self.fascia_passed)
        self.tip_label = label
        self.tip_cavity_risk = cavity_risk
        if label is not self.current_label:
            if label is TissueLabel.AIR and not cavity_risk and self.entered_body:
                self._emit(events, EventKind.BODY_EXIT, tissue=TissueLabel.AIR)
                self.exited_body = True
            self.current_label = label
            self.current_params = params
            self.current_l_max = l_max_of(params)
        return self._result(self._pass_force(), tuple(events))

    # -- internals --------------------------------------------------------

    def _transition(self, new_depth, label, params, cavity_risk) -> StepResult:
        prev_label = self.current_label
        prev_sustain = self.current_params.sustain
        events: list[Event] = []

        if not math.isfinite(params.cut_threshold):
            return self._block_on_bone(label)

        self.tip_depth = new_depth
        already_cut = new_depth <= self.max_depth_reached
        self.max_depth_reached = max(self.max_depth_reached, new_depth)

        if label is TissueLabel.FASCIA:
            self.fascia_passed = True
        if label is not TissueLabel.AIR:
            self.entered_body = True

        if label is TissueLabel.AIR:
            # no membrane on the way into a cavity or out of the body
            self.current_label = label
            self.current_params = params
            self.current_l_max = 0.0
            self.proxy_depth = self.tip_depth
            self.phase = Phase.PASS
            self._emit(events, EventKind.TISSUE_TRANSITION, tissue=label,
                       from_tissue=prev_label)
            if cavity_risk:
                self._emit(events, EventKind.RISK_CONTACT, tissue=label)
            elif self.entered_body:
                self._emit(events, EventKind.BODY_EXIT, tissue=label)
                self.exited_body = True
            return self._result(0.0, tuple(events))

        self._emit(events, EventKind.SURFACE_CONTACT, tissue=label)
        role = self.provider.table.role_of(label)
        if role is TissueRole.RISK:
            self._emit(events, EventKind.RISK_CONTACT, tissue=label)
        elif role is TissueRole.TARGET:
            self._emit(events, EventKind.TARGET_REACHED, tissue=label)

        if params.cut_threshold <= prev_sustain or already_cut:
            # surface cut immediately: skip the ramp, drop to the new
            # tissue's sustain level
            self.current_label = label
            self.current_params = params
            self.current_l_max = l_max_of(params)
            self._emit(events, EventKind.TISSUE_TRANSITION, tissue=label,
                       from_tissue=prev_label)
            return self._result(self._drop_to_pass(), tuple(events))

        self.current_label = label
        self.current_params = params
        self.current_l_max = l_max_of(params)
        self.spring = make_spring(params.cut_threshold, prev_sustain,
                                  params.stiffness, self.design_slope)
        self.anchor_depth = self.tip_depth
        self.proxy_depth = self.tip_depth  # pinned at the surface
        self.phase = Phase.PRE_PUNCTURE
        self._pending_from = prev_label
        return self._result(self.spring.a0, tuple(events))

    def _complete_puncture(self, events: list[Event]) -> float:
        # post-puncture: transient within the cutting step
        self._emit(events, EventKind.PUNCTURE, tissue=self.current_label)
        self._emit(events, EventKind.TISSUE_TRANSITION, tissue=self.current_label,
                   from_tissue=self._pending_from)
        self.spring = None
        self.anchor_depth = None
        self._pending_from = None
        return self._drop_to_pass()

    def _drop_to_pass(self) -> float:
        """Proxy jumps to l_max behind the tip; force settles at the pass
        level k*l_max, computed from l_max itself so the value is
        independent of the tip's absolute depth."""
        self.proxy_depth = self.tip_depth - self.current_l_max
        self.phase = Phase.PASS
        return self.current_params.stiffness * self.current_l_max

    def _block_on_bone(self, label) -> StepResult:
        events: list[Event] = []
        self._emit(events, EventKind.SURFACE_CONTACT, tissue=label)
        self._emit(events, EventKind.RISK_CONTACT, tissue=label)
        self._emit(events, EventKind.BONE_BLOCKED, tissue=label)
        # tip halts before the impenetrable voxel; proxy freezes with it
        self.bone_blocked = True
        self.proxy_depth = self.tip_depth
        self.phase = Phase.PASS
        self.spring = None
        self.anchor_depth = None
        self._pending_from = None
        return self._result(self.max_force, tuple(events))

    def _pass_force(self) -> float:
        g = self.tip_depth - self.proxy_depth
        lm = self.current_l_max
        if g > lm:
            g = lm
            self.proxy_depth = self.tip_depth - lm
        elif g < -lm:
            g = -lm
            self.proxy_depth = self.tip_depth + lm
        return self.current_params.stiffness * abs(g)

    def _emit(self, events: list[Event], kind: EventKind, tissue=None,
              from_tissue=None) -> None:
        e = Event(kind, self.tip_depth, tissue, from_tissue)
        events.append(e)
        self.event_log.append(e)

    def _result(self, magnitude: float, events: tuple[Event, ...]) -> StepResult:
        if magnitude > self.max_force:
            magnitude = self.max_force
        if magnitude == 0.0 or self.proxy_depth == self.tip_depth:
            vec = (0.0, 0.0, 0.0)
        else:
            sign = -1.0 if self.proxy_depth < self.tip_depth else 1.0
            u = self.direction
            vec = (sign * magnitude * u[0], sign * magnitude * u[1],
                   sign * magnitude * u[2])
        return StepResult(vec, magnitude, self.phase, events)
