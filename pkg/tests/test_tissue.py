import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from needlesim.errors import DegenerateClass, UnknownLabel
from needlesim.phantom import DEFAULT_HU_MODELS, default_spec, generate
from needlesim.tissue import (ClassStats, FullSegmentation, HapticTable,
                              PartialPlusTransferFunction, ThresholdSet,
                              TissueParams, TissueRole, _intersection, classify,
                              fit_thresholds, params_of)
from needlesim.volume import (TissueLabel, VoxelVolume, extract_body_mask,
                              sample_label)


class TestHapticTable:
    def test_default_rows_match_reference_values(self):
        t = HapticTable()
        assert params_of(TissueLabel.AIR, t) == TissueParams(0.0, 0.0, 0.0)
        assert params_of(TissueLabel.SKIN, t) == TissueParams(0.7, 0.7, 0.8)
        assert params_of(TissueLabel.FAT_SOFT, t) == TissueParams(0.7, 0.7, 1.0)
        bone = params_of(TissueLabel.BONE, t)
        assert math.isinf(bone.cut_threshold) and bone.sustain == 3.0 \
               and bone.stiffness == 2.0
        assert params_of(TissueLabel.FASCIA, t) == TissueParams(2.5, 1.0, 1.0)
        assert params_of(TissueLabel.LIVER, t) == TissueParams(0.3, 0.9, 1.2)
        assert params_of(TissueLabel.HEP_BLOOD, t) == TissueParams(1.05, 0.75, 1.1)
        assert params_of(TissueLabel.HEP_BILE, t) == TissueParams(1.2, 0.5, 1.0)

    def test_sustain_below_cut_threshold_except_liver(self):
        # liver is the one table row where R > T_N; it is always entered
        # through an immediate cut
        t = HapticTable()
        for label, (p, _) in t.rows.items():
            if label is TissueLabel.LIVER:
                assert p.sustain > p.cut_threshold
            elif math.isfinite(p.cut_threshold):
                assert p.sustain <= p.cut_threshold, label

    def test_roles(self):
        t = HapticTable()
        assert t.role_of(TissueLabel.BONE) is TissueRole.RISK
        assert t.role_of(TissueLabel.HEP_BLOOD) is TissueRole.RISK
        assert t.role_of(TissueLabel.HEP_BILE) is TissueRole.TARGET
        assert t.role_of(TissueLabel.SKIN) is TissueRole.PASS
        assert t.role_of(TissueLabel.AIR) is TissueRole.PASS
        assert t.role_of(TissueLabel.AIR, internal_air=True) is TissueRole.RISK

    def test_unknown_label(self):
        with pytest.raises(UnknownLabel):
            params_of(TissueLabel.UNLABELED, HapticTable())

    def test_json_round_trip(self):
        t = HapticTable()
        back = HapticTable.from_json(t.to_json())
        assert back == t

    def test_missing_row_rejected(self):
        rows = dict(HapticTable().rows)
        del rows[TissueLabel.LIVER]
        with pytest.raises(ValueError):
            HapticTable(rows=rows)


class TestThresholdSet:
    def test_ordering_enforced(self):
        with pytest.raises(ValueError):
            ThresholdSet(0.0, -1.0, 10.0, 20.0)
        with pytest.raises(ValueError):
            ThresholdSet(0.0, 1.0, 10.0, 5.0)

    def test_bone_threshold_switches_with_fascia(self):
        th = ThresholdSet(-500.0, -50.0, 200.0, 300.0)
        assert th.bone_threshold(False) == 200.0
        assert th.bone_threshold(True) == 300.0

    def test_json_round_trip(self):
        th = ThresholdSet(-500.0, -50.0, 200.0, 300.0, fallbacks=("air/skin",))
        assert ThresholdSet.from_json(th.to_json()) == th


def scan_intersection(lo: ClassStats, hi: ClassStats, resolution=0.1) -> float:
    """Brute-force oracle: first sign change of the weighted density gap.

    Compares log densities; the densities themselves underflow to zero
    between well-separated narrow classes.
    """
    xs = np.arange(lo.mean, hi.mean + resolution, resolution)
    lo_d = np.log(lo.weight / lo.std) - 0.5 * ((xs - lo.mean) / lo.std) ** 2
    hi_d = np.log(hi.weight / hi.std) - 0.5 * ((xs - hi.mean) / hi.std) ** 2
    gap = lo_d - hi_d
    sign_change = np.nonzero(np.diff(np.sign(gap)) != 0)[0]
    assert len(sign_change) > 0, "densities never cross in the scanned range"
    return float(xs[sign_change[0]])


class TestIntersection:
    def test_symmetric_classes_meet_at_midpoint(self):
        lo = ClassStats(-100.0, 25.0, 0.5)
        hi = ClassStats(60.0, 25.0, 0.5)
        t, fallback = _intersection(lo, hi)
        assert not fallback
        assert t == pytest.approx((-100.0 + 60.0) / 2, abs=1e-12)

    def test_air_skin_example_against_scan(self):
        lo = ClassStats(-1000.0, 50.0, 0.5)
        hi = ClassStats(-50.0, 40.0, 0.5)
        t, fallback = _intersection(lo, hi)
        assert not fallback
        assert abs(t - scan_intersection(lo, hi)) <= 0.1

    @given(m1=st.floats(-1000, -200), m2=st.floats(0, 500),
           s1=st.floats(10, 80), s2=st.floats(10, 80),
           w1=st.floats(0.05, 0.95))
    @settings(max_examples=40, deadline=None)
    def test_matches_scan_oracle(self, m1, m2, s1, s2, w1):
        lo = ClassStats(m1, s1, w1)
        hi = ClassStats(m2, s2, 1.0 - w1)
        t, fallback = _intersection(lo, hi)
        assert m1 < t < m2
        if not fallback:
            assert abs(t - scan_intersection(lo, hi)) <= 0.1


class TestFitThresholds:
    def test_fit_on_default_phantom_is_bayes_optimal(self, default_volume):
        model, th = fit_thresholds(default_volume)
        assert th.t0 < th.t1 < th.t2_minus <= th.t2_plus
        assert th.t2_plus == pytest.approx(th.t2_minus + 100.0)
        pairs = [(model.air, model.skin, th.t0), (model.skin, model.fat_soft, th.t1),
                 (model.fat_soft, model.bone, th.t2_minus)]
        for lo, hi, t in pairs:
            def wd(c, x):
                return c.weight / c.std * math.exp(-0.5 * ((x - c.mean) / c.std) ** 2)
            assert wd(lo, t - 0.1) >= wd(hi, t - 0.1)
            assert wd(lo, t + 0.1) <= wd(hi, t + 0.1)

    def test_degenerate_single_value_class(self):
        dims = (4, 4, 4)
        labels = np.zeros(dims, dtype=np.uint8)
        labels[0] = int(TissueLabel.SKIN)
        labels[1] = int(TissueLabel.FAT_SOFT)
        labels[2] = int(TissueLabel.BONE)
        hu = np.full(dims, -1000, dtype=np.int16)  # zero spread everywhere
        vol = VoxelVolume(dims, (1, 1, 1), (0, 0, 0), hu, labels)
        with pytest.raises(DegenerateClass):
            fit_thresholds(vol)

    def test_missing_class(self):
        dims = (4, 4, 4)
        labels = np.zeros(dims, dtype=np.uint8)  # air only
        rng = np.random.default_rng(0)
        hu = rng.normal(-1000, 30, dims).clip(-1024, 0).astype(np.int16)
        vol = VoxelVolume(dims, (1, 1, 1), (0, 0, 0), hu, labels)
        with pytest.raises(DegenerateClass):
            fit_thresholds(vol)


def _tf_fixture():
    """Small volume: left half unlabeled body, right half open air, one
    segmented liver voxel."""
    dims = (6, 6, 6)
    labels = np.full(dims, int(TissueLabel.UNLABELED), dtype=np.uint8)
    labels[4:, :, :] = int(TissueLabel.AIR)
    labels[1, 1, 1] = int(TissueLabel.LIVER)
    hu = np.full(dims, 20, dtype=np.int16)
    hu[4:, :, :] = -1000
    vol = VoxelVolume(dims, (1, 1, 1), (0, 0, 0), hu, labels)
    body = extract_body_mask(vol, -500)
    th = ThresholdSet(-500.0, -50.0, 200.0, 300.0)
    provider = PartialPlusTransferFunction(vol, th, body, HapticTable())
    return vol, provider, th


class TestClassify:
    def test_segmented_voxel_wins(self):
        _, provider, _ = _tf_fixture()
        label, params, risk = classify((1.0, 1.0, 1.0), provider, False)
        assert label is TissueLabel.LIVER
        assert params == TissueParams(0.3, 0.9, 1.2)
        assert not risk

    def test_outside_body_air_no_risk(self):
        _, provider, _ = _tf_fixture()
        label, params, risk = classify((5.0, 3.0, 3.0), provider, False)
        assert label is TissueLabel.AIR
        assert params == TissueParams(0.0, 0.0, 0.0)
        assert not risk

    def test_air_cavity_inside_body_raises_risk(self):
        vol, provider, th = _tf_fixture()
        hu = vol.intensities.copy()
        hu[2, 2, 2] = -900  # air pocket reading inside the body
        vol2 = VoxelVolume(vol.dims, vol.spacing, vol.origin, hu, vol.labels)
        body = extract_body_mask(vol, -500)  # original mask: pocket enclosed
        provider = PartialPlusTransferFunction(vol2, th, body, HapticTable())
        label, params, risk = classify((2.0, 2.0, 2.0), provider, False)
        assert label is TissueLabel.AIR
        assert params == TissueParams(0.0, 0.0, 0.0)
        assert risk

    def test_bone_interval_depends_on_fascia_state(self):
        vol, _, th = _tf_fixture()
        hu = vol.intensities.copy()
        hu[2, 2, 2] = 250  # between t2- and t2+
        vol2 = VoxelVolume(vol.dims, vol.spacing, vol.origin, hu, vol.labels)
        provider = PartialPlusTransferFunction(
            vol2, th, extract_body_mask(vol, -500), HapticTable())
        before, _, _ = classify((2.0, 2.0, 2.0), provider, False)
        after, _, _ = classify((2.0, 2.0, 2.0), provider, True)
        assert before is TissueLabel.BONE
        assert after is TissueLabel.FAT_SOFT

    def test_full_provider_equals_label_grid(self):
        spec = default_spec(dims=(24, 24, 24))
        vol = generate(spec)
        provider = FullSegmentation(vol)
        for idx in [(0, 0, 0), (5, 7, 9), (12, 12, 12), (23, 23, 23), (3, 20, 11)]:
            pos = tuple(float(i) for i in idx)
            label, params, _ = provider.lookup(pos, False)
            assert label == sample_label(vol, pos)
            assert params == HapticTable().params_of(label)

    @given(hu1=st.integers(-1024, 4000), hu2=st.integers(-1024, 4000),
           fascia=st.booleans())
    @settings(max_examples=60, deadline=None)
    def test_tf_monotone_in_hu(self, hu1, hu2, fascia):
        # increasing HU never moves the classification to a lower interval
        vol, _, th = _tf_fixture()
        order = [TissueLabel.AIR, TissueLabel.SKIN, TissueLabel.FAT_SOFT,
                 TissueLabel.BONE]
        lo, hi = sorted((hu1, hu2))
        body = extract_body_mask(vol, -500)

        def tf_label(hu):
            hu_grid = vol.intensities.copy()
            hu_grid[2, 2, 2] = hu
            v2 = VoxelVolume(vol.dims, vol.spacing, vol.origin, hu_grid, vol.labels)
            p = PartialPlusTransferFunction(v2, th, body, HapticTable())
            label, _, _ = p.lookup((2.0, 2.0, 2.0), fascia)
            return order.index(label)

        assert tf_label(lo) <= tf_label(hi)
