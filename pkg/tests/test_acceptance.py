"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line (run pytest with -rA to see the lines for passing tests too)."""

import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from fastapi.testclient import TestClient

from needlesim.engine import (DEVICE_MAX_FORCE_N, EventKind, NeedleSession,
                              Phase)
from needlesim.evaluation import (StudyConfig, compare, jnd_percent, run_study,
                                  steer)
from needlesim.phantom import DegradeSpec, generate_slab
from needlesim.planner import CandidatePath, Planner
from needlesim.report import write_report
from needlesim.service.app import create_app
from needlesim.service.registry import VolumeRegistry
from needlesim.tissue import FullSegmentation, HapticTable
from needlesim.volume import TissueLabel, VoxelVolume

from .oracles import slab_force_profile
from .test_planner import brute_force_walk

STEP = 0.09


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


class TestSpringPunctureEquivalence:
    def test_criterion(self):
        with criterion("spring puncture equivalence (10k tuples, <1s)"):
            rng = np.random.default_rng(42)
            n = 10_000
            t0 = time.perf_counter()
            tn = rng.uniform(0.01, 30.0, n)
            a0 = tn * rng.uniform(0.0, 0.999, n)
            k = rng.uniform(1e-6, 5.0, n)
            a1 = k * rng.uniform(0.0, 1.0, n)
            a2 = k * (k - a1) / np.abs(tn - a0)
            d_star = (tn - a0) / k
            f = a2 * d_star ** 2 + a1 * d_star + a0
            elapsed = time.perf_counter() - t0
            assert np.max(np.abs(f - tn)) <= 1e-9
            assert elapsed < 1.0


class TestOracleEquivalence:
    def test_criterion(self, default_volume, default_paths):
        with criterion("oracle equivalence: full-vs-full, >=500 paths (<2min)"):
            assert len(default_paths) >= 500
            t0 = time.perf_counter()
            res = run_study(default_volume, default_paths,
                            StudyConfig(test_provider="full", max_paths=500))
            elapsed = time.perf_counter() - t0
            assert len(res.metrics) >= 500
            for m in res.metrics:
                assert m.rmse == 0.0
                assert m.mae == 0.0
                assert m.pct_identical == 100.0
            assert elapsed < 120.0, f"took {elapsed:.1f}s"


SHIFT_MM = 1.5
REF_LAYERS = [(TissueLabel.AIR, 6.0), (TissueLabel.SKIN, 2.0),
              (TissueLabel.FAT_SOFT, 18.0), (TissueLabel.FASCIA, 3.0),
              (TissueLabel.FAT_SOFT, 12.0), (TissueLabel.LIVER, 20.0)]
TEST_LAYERS = [(TissueLabel.AIR, 6.0), (TissueLabel.SKIN, 2.0),
               (TissueLabel.FAT_SOFT, 19.5), (TissueLabel.FASCIA, 3.0),
               (TissueLabel.FAT_SOFT, 10.5), (TissueLabel.LIVER, 20.0)]


class TestBoundaryShiftFidelity:
    def test_criterion(self):
        with criterion(f"boundary shift fidelity: fascia +{SHIFT_MM} mm"):
            ref_vol = generate_slab(REF_LAYERS, xy_dims=(10, 10), seed=33)
            test_vol = generate_slab(TEST_LAYERS, xy_dims=(10, 10), seed=33)
            # identical HU everywhere: only the fascia band moved
            test_vol = ref_vol.with_labels(test_vol.labels)
            ref_provider = FullSegmentation(ref_vol)
            test_provider = FullSegmentation(test_vol)

            length = 55.0
            n = int(math.ceil(length / STEP))
            pred_ref = np.asarray(slab_force_profile(REF_LAYERS, n, STEP, 0.5))
            pred_test = np.asarray(slab_force_profile(TEST_LAYERS, n, STEP, 0.5))
            predicted_mae = float(np.max(np.abs(pred_ref - pred_test)))
            assert predicted_mae <= 2.5 + 1e-9  # bounded by the fascia threshold

            for ix in range(2, 8):
                for iy in range(2, 8):
                    path = CandidatePath(
                        skin_voxel=(ix, iy, 12), target_index=0,
                        origin=(ix * 0.5, iy * 0.5, 0.0),
                        direction=(0.0, 0.0, 1.0), length_mm=length,
                        c1=0.0, c2=0.0, c3_norm=1.0, c4_norm=1.0, q=1.0)
                    ref = steer(path, ref_provider, STEP)
                    test = steer(path, test_provider, STEP)
                    m = compare(ref, test)
                    d_ref, d_test = m.crossings["FASCIA"]
                    assert abs(abs(d_test - d_ref) - SHIFT_MM) <= STEP + 1e-9
                    assert m.mae <= 2.5 + 1e-9
                    assert abs(m.mae - predicted_mae) <= 1e-6


class TestDeskScaleStudy:
    def test_criterion(self, default_volume, default_paths, tmp_path):
        with criterion("desk-scale study: sigma=1mm, >=500 paths (<5min)"):
            t0 = time.perf_counter()
            res = run_study(default_volume, default_paths,
                            StudyConfig(degrade=DegradeSpec(sigma_mm=1.0, seed=11),
                                        max_paths=500))
            elapsed = time.perf_counter() - t0
            s = res.summary
            assert len(res.metrics) >= 500
            assert s.rmse.mean <= 0.3, f"pooled rmse {s.rmse.mean}"
            assert s.pct_identical_mean >= 70.0, f"pct {s.pct_identical_mean}"
            max_mae = max(m.mae for m in res.metrics)
            assert max_mae < DEVICE_MAX_FORCE_N - 0.5, \
                f"false bone puncture: mae {max_mae}"
            written = write_report(res.metrics, tmp_path)
            qlines = (tmp_path / "quantiles.csv").read_text().splitlines()
            for metric in ("rmse_n", "mae_n", "pct_identical", "msd_mm", "hsd_mm"):
                assert any(metric in line for line in qlines[1:])
            assert len(written) == 6
            assert elapsed < 300.0, f"took {elapsed:.1f}s"


class TestPlannerHardConstraints:
    def test_criterion(self, default_volume, planner_run):
        with criterion("planner hard constraints + bone shell (<1min)"):
            t0 = time.perf_counter()
            planner = planner_run["planner"]
            paths = planner_run["paths"]
            for p in paths:
                assert p.length_mm <= 90.0 + 1e-9
                assert p.q >= 0.4
                assert brute_force_walk(default_volume, p, planner.step_mm), \
                    f"risk hit on accepted path {p.skin_voxel}"
            # continuous bone shell leaves no survivor
            import scipy.ndimage as ndi
            labels = np.zeros((30, 30, 30), dtype=np.uint8)
            body = np.zeros((30, 30, 30), dtype=bool)
            body[2:28, 2:28, 2:28] = True
            inner1 = ndi.binary_erosion(body)
            inner3 = ndi.binary_erosion(ndi.binary_erosion(inner1))
            labels[body] = int(TissueLabel.FAT_SOFT)
            labels[body & ~inner1] = int(TissueLabel.SKIN)
            labels[inner1 & ~inner3] = int(TissueLabel.BONE)
            labels[12:18, 12:18, 12:18] = int(TissueLabel.LIVER)
            labels[14:15, 14:16, 13:17] = int(TissueLabel.HEP_BILE)
            hu = np.where(labels == 0, -1000, 50).astype(np.int16)
            shell = VoxelVolume((30, 30, 30), (1, 1, 1), (0, 0, 0), hu, labels)
            assert Planner(shell).plan() == []
            elapsed = time.perf_counter() - t0 + planner_run["elapsed_s"]
            assert elapsed < 60.0, f"planning+verification took {elapsed:.1f}s"


class TestEngineSemanticsSuite:
    def test_criterion(self):
        with criterion("engine semantics: skin/fascia-liver/bone/retraction/pass"):
            table = HapticTable()

            # skin holds 0.7 N after puncture with no drop
            vol = generate_slab([(TissueLabel.AIR, 6.0), (TissueLabel.SKIN, 3.0),
                                 (TissueLabel.FAT_SOFT, 20.0)], xy_dims=(8, 8))
            s = NeedleSession((2.0, 2.0, 0.0), (0, 0, 1), FullSegmentation(vol))
            forces, punctured = [], False
            for _ in range(200):
                r = s.advance(STEP)
                if any(e.kind is EventKind.PUNCTURE for e in r.events):
                    punctured = True
                if punctured:
                    forces.append(r.magnitude)
            assert punctured
            assert all(abs(f - 0.7) < 1e-9 for f in forces)

            # fascia -> liver: immediate cut (R 1.0 > T_N 0.3), no ramp
            vol = generate_slab([(TissueLabel.AIR, 4.0), (TissueLabel.SKIN, 3.0),
                                 (TissueLabel.FAT_SOFT, 10.0),
                                 (TissueLabel.FASCIA, 4.0),
                                 (TissueLabel.LIVER, 20.0)], xy_dims=(8, 8))
            s = NeedleSession((2.0, 2.0, 0.0), (0, 0, 1), FullSegmentation(vol))
            liver_punctures = 0
            liver_phase_pre = False
            for _ in range(440):
                r = s.advance(STEP)
                if s.current_label is TissueLabel.LIVER:
                    liver_phase_pre |= r.phase is Phase.PRE_PUNCTURE
                    liver_punctures += sum(e.kind is EventKind.PUNCTURE
                                           and e.tissue is TissueLabel.LIVER
                                           for e in r.events)
            assert liver_punctures == 0 and not liver_phase_pre

            # bone clamps at 22 N with a frozen proxy
            vol = generate_slab([(TissueLabel.AIR, 4.0), (TissueLabel.SKIN, 3.0),
                                 (TissueLabel.FAT_SOFT, 8.0),
                                 (TissueLabel.BONE, 10.0)], xy_dims=(8, 8))
            s = NeedleSession((2.0, 2.0, 0.0), (0, 0, 1), FullSegmentation(vol))
            blocked_forces = []
            for _ in range(260):
                r = s.advance(STEP)
                if s.bone_blocked:
                    blocked_forces.append(r.magnitude)
            assert blocked_forces and all(f == DEVICE_MAX_FORCE_N
                                          for f in blocked_forces)
            assert s.proxy_depth == s.tip_depth

            # retraction never exceeds the local sustain force
            vol = generate_slab([(TissueLabel.AIR, 6.0), (TissueLabel.SKIN, 2.0),
                                 (TissueLabel.FAT_SOFT, 18.0),
                                 (TissueLabel.FASCIA, 3.0),
                                 (TissueLabel.FAT_SOFT, 11.0),
                                 (TissueLabel.LIVER, 20.0)], xy_dims=(8, 8))
            s = NeedleSession((2.0, 2.0, 0.0), (0, 0, 1), FullSegmentation(vol))
            for _ in range(600):
                r = s.advance(STEP)
                if r.phase is Phase.PASS and not s.bone_blocked:
                    assert r.magnitude <= \
                        table.params_of(s.current_label).sustain + 1e-9
            while s.tip_depth > STEP:
                r = s.retract(STEP)
                assert r.magnitude <= \
                    table.params_of(s.tip_label).sustain + 1e-9


class TestRealTimeContract:
    def test_criterion(self, default_volume):
        with criterion("real-time contract: mean step < 1 ms over 90 mm"):
            provider = FullSegmentation(default_volume)
            session = NeedleSession((5.0, 50.0, 47.5), (1.0, 0.0, 0.0), provider)
            n = 1000  # 90 mm at the 0.09 mm evaluation step
            t0 = time.perf_counter()
            for _ in range(n):
                session.advance(STEP)
            mean_step = (time.perf_counter() - t0) / n
            assert mean_step < 1e-3, f"mean step {mean_step * 1e3:.3f} ms"


class TestJndArithmetic:
    def test_criterion(self):
        with criterion("JND arithmetic: 18.125% force, 10.71% distance"):
            force_pct = jnd_percent(0.8, 0.145)
            dist_pct = jnd_percent(28.0, 3.0)
            assert force_pct == pytest.approx(18.125, abs=1e-12)
            assert dist_pct == pytest.approx(10.714285714285714, abs=1e-12)
            # the published roundings
            assert round(force_pct, 1) == 18.1
            assert round(dist_pct) == 11


class TestTrainerRoundTrip:
    def test_criterion(self, default_volume, default_paths):
        with criterion("trainer round-trip: ws forces == steer, score == q"):
            registry = VolumeRegistry()
            entry = registry.add(default_volume, volume_id="patient")
            entry.set_reference_paths(default_paths)
            app = create_app(registry)
            path = default_paths[0]
            provider = entry.full_provider()
            trace = steer(path, provider, STEP)

            with TestClient(app) as client:
                with client.websocket_connect("/session") as ws:
                    def send(payload):
                        ws.send_text(json.dumps(payload))
                        return json.loads(ws.receive_text())

                    r = send({"v": 1, "type": "session.start",
                              "volume": "patient", "provider": "full"})
                    assert r["type"] == "session.started"
                    r = send({"v": 1, "type": "entry.set",
                              "point": list(path.origin),
                              "direction": list(path.direction)})
                    assert r["type"] == "entry.ack"

                    forces = []
                    target_seen = False
                    for _ in range(len(trace)):
                        r = send({"v": 1, "type": "needle.advance", "mm": STEP})
                        forces.append(r["force_n"])
                        target_seen |= r["flags"]["target"]
                    assert forces == [float(f) for f in trace.forces], \
                        "socket forces must equal the steer trace bit-for-bit"
                    assert target_seen, "bile target must be reached"

                    r = send({"v": 1, "type": "attempt.finish"})
                    assert r["type"] == "score"
                    assert r["q"] == path.q, (r["q"], path.q)

                # a fresh session steered into a vessel raises the risk flag
                with client.websocket_connect("/session") as ws:
                    def send2(payload):
                        ws.send_text(json.dumps(payload))
                        return json.loads(ws.receive_text())

                    send2({"v": 1, "type": "session.start", "volume": "patient",
                           "provider": "full"})
                    vessel = np.argwhere(
                        default_volume.labels == int(TissueLabel.HEP_BLOOD))
                    target = vessel[len(vessel) // 2] * \
                        np.asarray(default_volume.spacing) + \
                        np.asarray(default_volume.origin)
                    start = target - np.asarray([0.0, 30.0, 0.0])
                    send2({"v": 1, "type": "entry.set", "point": list(start),
                           "direction": [0.0, 1.0, 0.0]})
                    risk_seen = False
                    for _ in range(70):
                        r = send2({"v": 1, "type": "needle.advance", "mm": 0.5})
                        if r["type"] == "state" and r["flags"]["risk"]:
                            risk_seen = True
                            break
                    assert risk_seen, "steering into a vessel must flag risk"
