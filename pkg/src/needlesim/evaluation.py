"""Robotic steering along planned paths and force-signal error metrics.

Two providers steer the same paths with the same engine; the resulting
1D force signals are compared sample-by-sample (RMSE, maximum absolute
error, percentage of bit-identical samples) and structure-by-structure
(first-entry depth differences, reported as per-path mean and maximum
surface distances). Aggregates carry mean +/- sigma, the fraction of
per-path outliers beyond 2.7 sigma, and just-noticeable-difference flags.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyInput, LengthMismatch, ZeroReference
from .engine import NeedleSession, Phase
from .phantom import DegradeSpec, degrade
from .planner import CandidatePath
from .tissue import (FullSegmentation, HapticTable, LabelProvider,
                     PartialPlusTransferFunction, fit_thresholds)
from .volume import TissueLabel, VoxelVolume, extract_body_mask

MAX_STEP_MM = 0.09

_PHASE_CODE = {Phase.PASS: 0, Phase.PRE_PUNCTURE: 1}


@dataclass(frozen=True)
class ForceTrace:
    """Uniformly sampled (depth, force, label, phase) signal for one path."""

    path_id: str
    step_mm: float
    depths: np.ndarray  # commanded tip depth [mm], strictly increasing
    forces: np.ndarray  # axial magnitude [N]
    labels: np.ndarray  # uint8 tissue codes at the tip
    phases: np.ndarray  # 0 = pass, 1 = pre-puncture
    events: tuple[tuple[int, str, str | None], ...]  # (sample, kind, tissue)

    def __len__(self):
        return len(self.depths)


def steer(path: CandidatePath, provider: LabelProvider,
          step_mm: float = MAX_STEP_MM, design_slope: float = 0.0,
          path_id: str | None = None) -> ForceTrace:
    """Advance a fresh session in uniform steps from the skin to path end."""
    if step_mm <= 0 or step_mm > MAX_STEP_MM:
        raise ValueError(f"step {step_mm} outside (0, {MAX_STEP_MM}] mm")
    n = max(int(math.ceil(path.length_mm / step_mm)), 1)
    session = NeedleSession(path.origin, path.direction, provider,
                            design_slope=design_slope)
    depths = np.empty(n)
    forces = np.empty(n)
    labels = np.empty(n, dtype=np.uint8)
    phases = np.empty(n, dtype=np.uint8)
    events = []
    for i in range(n):
        res = session.advance(step_mm)
        depths[i] = (i + 1) * step_mm
        forces[i] = res.magnitude
        labels[i] = int(session.tip_label)
        phases[i] = _PHASE_CODE[res.phase]
        for e in res.events:
            events.append((i, e.kind.value,
                           None if e.tissue is None else e.tissue.name))
    pid = path_id if path_id is not None else "-".join(str(i) for i in path.skin_voxel)
    return ForceTrace(pid, step_mm, depths, forces, labels, phases, tuple(events))


def save_trace_npz(trace: ForceTrace, path) -> None:
    np.savez_compressed(
        path, step_mm=trace.step_mm, depths=trace.depths, forces=trace.forces,
        labels=trace.labels, phases=trace.phases,
        events=json.dumps(list(trace.events)), path_id=trace.path_id)


def load_trace_npz(path) -> ForceTrace:
    with np.load(path, allow_pickle=False) as z:
        events = tuple(tuple(e) for e in json.loads(str(z["events"])))
        return ForceTrace(str(z["path_id"]), float(z["step_mm"]), z["depths"],
                          z["forces"], z["labels"], z["phases"], events)


def save_trace_csv(trace: ForceTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["depth_mm", "force_n", "label", "phase"])
        for i in range(len(trace)):
            w.writerow([repr(float(trace.depths[i])), repr(float(trace.forces[i])),
                        TissueLabel(int(trace.labels[i])).name, int(trace.phases[i])])


# structures paired between traces; air carries no membrane of its own
_CROSSING_EXCLUDED = {int(TissueLabel.AIR), int(TissueLabel.UNLABELED)}


def first_entry_depths(trace: ForceTrace) -> dict[str, float]:
    """Depth at which each structure label first appears at the tip."""
    out: dict[str, float] = {}
    codes = trace.labels
    for i in range(len(codes)):
        c = int(codes[i])
        if c in _CROSSING_EXCLUDED:
            continue
        name = TissueLabel(c).name
        if name not in out:
            out[name] = float(trace.depths[i])
    return out


@dataclass(frozen=True)
class PathMetrics:
    path_id: str
    rmse: float  # [N]
    mae: float  # max absolute force error [N]
    pct_identical: float  # % of bit-identical samples
    crossings: dict[str, tuple[float, float]]  # structure -> (ref, test) depth
    msd: float  # mean matched crossing-depth difference [mm]
    hsd: float  # max matched crossing-depth difference [mm]
    unmatched: tuple[str, ...] = ()  # structures seen in only one trace
    patient_id: str = "phantom"

    def row(self) -> dict:
        return {"path_id": self.path_id, "patient_id": self.patient_id,
                "rmse_n": self.rmse, "mae_n": self.mae,
                "pct_identical": self.pct_identical,
                "msd_mm": self.msd, "hsd_mm": self.hsd,
                "unmatched": ";".join(self.unmatched)}


def compare(ref: ForceTrace, test: ForceTrace) -> PathMetrics:
    """Signal and crossing-depth error metrics between two traces of one path."""
    if len(ref) != len(test) or ref.step_mm != test.step_mm:
        raise LengthMismatch(
            f"{len(ref)}@{ref.step_mm} vs {len(test)}@{test.step_mm}")
    diff = ref.forces - test.forces
    rmse = float(np.sqrt(np.mean(diff * diff)))
    mae = float(np.max(np.abs(diff))) if len(diff) else 0.0
    pct = float(np.mean(diff == 0.0) * 100.0)

    ref_entries = first_entry_depths(ref)
    test_entries = first_entry_depths(test)
    crossings = {}
    deltas = []
    for name, d_ref in ref_entries.items():
        if name in test_entries:
            crossings[name] = (d_ref, test_entries[name])
            deltas.append(abs(d_ref - test_entries[name]))
    unmatched = tuple(sorted(set(ref_entries) ^ set(test_entries)))
    msd = float(np.mean(deltas)) if deltas else 0.0
    hsd = float(np.max(deltas)) if deltas else 0.0
    return PathMetrics(ref.path_id, rmse, mae, pct, crossings, msd, hsd, unmatched)


def jnd_percent(stimulus: float, change: float) -> float:
    """Weber fraction of a stimulus change, in percent."""
    if stimulus <= 0:
        raise ZeroReference("reference stimulus must be positive")
    return change / stimulus * 100.0


@dataclass(frozen=True)
class JndConfig:
    force_threshold_n: float = 0.145
    distance_band_mm: tuple[float, float] = (2.0, 3.0)
    reference_force_n: float = 0.8
    reference_length_mm: float = 28.0

    def __post_init__(self):
        if min(self.force_threshold_n, self.reference_force_n,
               self.reference_length_mm, *self.distance_band_mm) <= 0:
            raise ValueError("JND parameters must be positive")
        if self.distance_band_mm[0] >= self.distance_band_mm[1]:
            raise ValueError("distance band must be (low, high)")


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    std: float
    outlier_fraction: float  # paths beyond mean + 2.7 sigma


@dataclass(frozen=True)
class StudySummary:
    n_paths: int
    rmse: MetricSummary
    mae: MetricSummary
    pct_identical_mean: float
    sub_jnd_fraction: float  # paths within both JND bounds
    per_patient: dict[str, dict[str, float]]
    jnd: JndConfig = field(default_factory=JndConfig)

    def to_json(self) -> str:
        return json.dumps({
            "n_paths": self.n_paths,
            "rmse_n": {"mean": self.rmse.mean, "std": self.rmse.std,
                       "outlier_fraction": self.rmse.outlier_fraction},
            "mae_n": {"mean": self.mae.mean, "std": self.mae.std,
                      "outlier_fraction": self.mae.outlier_fraction},
            "pct_identical_mean": self.pct_identical_mean,
            "sub_jnd_fraction": self.sub_jnd_fraction,
            "per_patient": self.per_patient,
            "jnd": {"force_threshold_n": self.jnd.force_threshold_n,
                    "distance_band_mm": list(self.jnd.distance_band_mm),
                    "reference_force_n": self.jnd.reference_force_n,
                    "reference_length_mm": self.jnd.reference_length_mm},
        }, indent=2)


def _metric_summary(values: np.ndarray) -> MetricSummary:
    mean = float(values.mean())
    std = float(values.std())
    outliers = float(np.mean(values > mean + 2.7 * std)) if std > 0 else 0.0
    return MetricSummary(mean, std, outliers)


def aggregate(metrics: list[PathMetrics], jnd: JndConfig | None = None) -> StudySummary:
    """Pooled and per-patient mean/sigma, 2.7-sigma outliers, JND flags."""
    if not metrics:
        raise EmptyInput("no path metrics to aggregate")
    jnd = jnd or JndConfig()
    rmse = np.array([m.rmse for m in metrics])
    mae = np.array([m.mae for m in metrics])
    pct = np.array([m.pct_identical for m in metrics])
    sub_jnd = np.array([m.rmse <= jnd.force_threshold_n
                        and m.msd <= jnd.distance_band_mm[0] for m in metrics])
    per_patient: dict[str, dict[str, float]] = {}
    for pid in sorted({m.patient_id for m in metrics}):
        sel = [m for m in metrics if m.patient_id == pid]
        r = np.array([m.rmse for m in sel])
        a = np.array([m.mae for m in sel])
        p = np.array([m.pct_identical for m in sel])
        per_patient[pid] = {
            "n_paths": len(sel),
            "rmse_mean": float(r.mean()), "rmse_std": float(r.std()),
            "mae_mean": float(a.mean()), "mae_std": float(a.std()),
            "pct_identical_mean": float(p.mean()),
        }
    return StudySummary(
        n_paths=len(metrics),
        rmse=_metric_summary(rmse),
        mae=_metric_summary(mae),
        pct_identical_mean=float(pct.mean()),
        sub_jnd_fraction=float(sub_jnd.mean()),
        per_patient=per_patient,
        jnd=jnd)


def write_metrics_csv(metrics: list[PathMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["path_id", "patient_id", "rmse_n",
                                           "mae_n", "pct_identical", "msd_mm",
                                           "hsd_mm", "unmatched"])
        w.writeheader()
        for m in metrics:
            w.writerow(m.row())


def read_metrics_csv(path) -> list[PathMetrics]:
    """Per-path rows back from CSV; crossing pairs are not persisted."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            unmatched = tuple(s for s in row["unmatched"].split(";") if s)
            out.append(PathMetrics(
                row["path_id"], float(row["rmse_n"]), float(row["mae_n"]),
                float(row["pct_identical"]), {}, float(row["msd_mm"]),
                float(row["hsd_mm"]), unmatched, row["patient_id"]))
    return out


# -- study orchestration ------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    """Reference-vs-test steering study over a set of planned paths."""

    degrade: DegradeSpec = field(default_factory=DegradeSpec)
    test_provider: str = "partial"  # or "full" for the degenerate oracle run
    step_mm: float = MAX_STEP_MM
    design_slope: float = 0.0
    delta_hu: float = 100.0
    air_threshold_hu: float = -500.0
    max_paths: int | None = None
    patient_id: str = "phantom"
    jnd: JndConfig = field(default_factory=JndConfig)


@dataclass(frozen=True)
class StudyResult:
    metrics: list[PathMetrics]
    summary: StudySummary
    thresholds_json: str


def build_providers(volume: VoxelVolume, cfg: StudyConfig,
                    table: HapticTable | None = None):
    """(reference, test) providers per the study configuration."""
    table = table or HapticTable()
    body = extract_body_mask(volume, cfg.air_threshold_hu)
    ref = FullSegmentation(volume, table, body)
    if cfg.test_provider == "full":
        return ref, FullSegmentation(volume, table, body), None
    partial_labels = degrade(volume, cfg.degrade)
    _, thresholds = fit_thresholds(volume, cfg.delta_hu)
    test_volume = volume.with_labels(partial_labels)
    test = PartialPlusTransferFunction(test_volume, thresholds, body, table)
    return ref, test, thresholds


def run_study(volume: VoxelVolume, paths: list[CandidatePath],
              cfg: StudyConfig | None = None,
              table: HapticTable | None = None) -> StudyResult:
    cfg = cfg or StudyConfig()
    if not paths:
        raise EmptyInput("study needs at least one planned path")
    if cfg.max_paths is not None:
        paths = paths[:cfg.max_paths]
    ref_provider, test_provider, thresholds = build_providers(volume, cfg, table)
    metrics = []
    for i, path in enumerate(paths):
        pid = f"p{i:05d}"
        ref = steer(path, ref_provider, cfg.step_mm, cfg.design_slope, path_id=pid)
        test = steer(path, test_provider, cfg.step_mm, cfg.design_slope, path_id=pid)
        metrics.append(replace(compare(ref, test), patient_id=cfg.patient_id))
    summary = aggregate(metrics, cfg.jnd)
    return StudyResult(metrics, summary,
                       thresholds.to_json() if thresholds is not None else "null")
