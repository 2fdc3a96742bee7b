from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ltescan.analysis import (CaptureDecode, Detection, HistogramBins, build_drive_samples,
                              cdf_at, classify_environment, disconnected_durations,
                              empirical_cdf, joint_histogram, strongest_cell, write_tables)
from ltescan.capture import GpsFix
from ltescan.geodb import CellDatabase, CellSiteRecord, GeoPoint, haversine_m
from ltescan.sibparse import Ecgi

T0 = datetime(2023, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


def test_strongest_cell():
    dets = (Detection(132, -25.0), Detection(493, -10.0))
    assert strongest_cell(dets).pci == 493
    assert strongest_cell(()) is None


def _db():
    e = Ecgi("310", "410", 0xABCDE)
    return CellDatabase({e.canonical_text: CellSiteRecord(e, 35.80, -78.60, "test")})


def test_build_drive_samples_distance_and_fix():
    fixes = [GpsFix(T0 + timedelta(seconds=i), 35.78, -78.64, 20.0) for i in range(5)]
    decodes = [
        CaptureDecode(T0 + timedelta(seconds=1), 0.08, 739e6,
                      (Detection(493, -10.0, True, "310-410-00ABCDE"), Detection(132, -25.0))),
        CaptureDecode(T0 + timedelta(seconds=2), 0.08, 739e6, ()),
        CaptureDecode(T0 + timedelta(seconds=30), 0.08, 739e6, (Detection(7, -3.0),)),
    ]
    s = build_drive_samples(decodes, fixes, _db())
    assert s[0].strongest.pci == 493
    assert s[0].bs_distance_m == pytest.approx(haversine_m(GeoPoint(35.78, -78.64), GeoPoint(35.80, -78.60)))
    assert s[0].velocity_mps == pytest.approx(20 * 0.514444)
    assert s[1].strongest is None and s[1].bs_distance_m is None
    assert s[2].fix is None and s[2].bs_distance_m is None
    assert build_drive_samples(decodes, fixes, None)[0].bs_distance_m is None


def test_empirical_cdf_small():
    assert [tuple(p) for p in empirical_cdf([5])] == [(5, 1.0)]
    assert cdf_at(empirical_cdf([1, 2, 3, 4]), 2) == 0.5
    assert cdf_at(empirical_cdf([1, 2, 3, 4]), 0) == 0.0


def test_empirical_cdf_uniform(rng):
    u = rng.random(10_000)
    cdf = empirical_cdf(u)
    vals = np.array([p[0] for p in cdf])
    fr = np.array([p[1] for p in cdf])
    assert np.max(np.abs(fr - vals)) < 0.02


def test_joint_histogram_mass():
    h = joint_histogram([0.5], [0.5], [0, 1, 2], [0, 1, 2])
    assert h.mass[0, 0] == 1.0 and h.mass.sum() == 1.0


def test_joint_histogram_uniform(rng):
    x, y = rng.random(100_000), rng.random(100_000)
    e = np.linspace(0, 1, 6)
    h = joint_histogram(x, y, e, e)
    assert h.mass.sum() == pytest.approx(1.0)
    assert h.mass.max() / h.mass.min() < 1.5
    h2 = joint_histogram(np.append(x, 7), np.append(y, 0.5), e, e)
    assert h2.n_out == 1 and h2.mass.sum() == pytest.approx(1.0)


def test_disconnected_toy():
    trace = [(float(i), r) for i, r in enumerate([-10, -30, -30, -10])]
    runs = disconnected_durations(trace, [-20.0])[-20.0]
    assert len(runs) == 1
    assert runs[0].duration_s == 2.0 and runs[0].start_time == 1.0
    assert disconnected_durations(trace, [-31.0])[-31.0] == []


def test_disconnected_no_cell_counts():
    trace = [(0.0, -5.0), (1.0, None), (2.0, None), (3.0, -5.0)]
    assert disconnected_durations(trace, [-20.0])[-20.0][0].duration_s == 2.0


def test_disconnected_large_gap_splits():
    trace = [(0.0, -30.0), (1.0, -30.0), (100.0, -30.0), (101.0, -30.0)]
    runs = disconnected_durations(trace, [-20.0], max_gap_s=30)[-20.0]
    assert [r.duration_s for r in runs] == [2.0, 2.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(-60, 0)), min_size=1, max_size=40),
       st.floats(-60, 0), st.floats(0, 30))
def test_disconnected_monotone(rsrp, th, delta):
    trace = [(float(i), r) for i, r in enumerate(rsrp)]
    res = disconnected_durations(trace, [th, th + delta])
    lo = sum(r.duration_s for r in res[th])
    hi = sum(r.duration_s for r in res[th + delta])
    assert lo <= hi + 1e-9


def test_classify_environment():
    assert classify_environment("Wake", 10_000).label == "rural"
    assert classify_environment("X", 50_000).label == "semi-urban"
    assert classify_environment("X", 199_999).label == "semi-urban"
    assert classify_environment("X", 200_000).label == "urban"
    assert classify_environment("X", 1000, cutoffs=(500, 900)).label == "urban"
    with pytest.raises(ValueError):
        classify_environment("X", -1)


def test_histogram_bins_parse():
    b = HistogramBins.parse("rsrp=-60:0:10,velocity=0:40:2")
    assert b.rsrp == (-60.0, 0.0, 10.0)
    assert len(HistogramBins.edges(b.velocity)) == 21
    with pytest.raises(ValueError):
        HistogramBins.parse("speed=0:1:1")


def test_write_tables_degraded(tmp_path):
    fixes = [GpsFix(T0 + timedelta(seconds=i), 35.78, -78.64, 5.0) for i in range(3)]
    decodes = [CaptureDecode(T0 + timedelta(seconds=i), 0.08, 739e6, (Detection(1, -10.0 - i),))
               for i in range(3)]
    written = write_tables(build_drive_samples(decodes, fixes, None), tmp_path, [-11.0])
    assert "cdf_rsrp.csv" in written and not any("distance" in w for w in written)
    text = (tmp_path / "disconnected_durations.csv").read_text().splitlines()
    assert text[0] == "threshold_db,start_time,duration_s" and len(text) == 2
