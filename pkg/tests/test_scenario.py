import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from softsim.scenario import (DepthMap, RegionBox, chamfer_distance, indentation_map, metric_fill, metric_pinch,
                              metric_write_iou, read_depth_map, render_heightmap, write_depth_map, write_pgm)

REGION = RegionBox((0, 0, 0), (1, 1, 1))


def brute_chamfer(a, b):
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return d.min(axis=1).mean() + d.min(axis=0).mean()


def test_chamfer_matches_brute_force(rng):
    for n, m in [(1, 1), (5, 40), (200, 150)]:
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
        assert abs(chamfer_distance(a, b) - brute_chamfer(a, b)) < 1e-12


points = arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=st.floats(-1, 1))


@given(points, points)
@settings(max_examples=60, deadline=None)
def test_chamfer_properties(a, b):
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, b) == pytest.approx(chamfer_distance(b, a), abs=1e-12)
    assert chamfer_distance(a, b) >= 0


def test_chamfer_empty_raises():
    with pytest.raises(ValueError):
        chamfer_distance(np.zeros((0, 3)), np.zeros((1, 3)))


def test_pinch_ratio():
    target = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    init = target + [0, 1.0, 0]
    cur = target + [0, 0.2, 0]
    ratio, ok = metric_pinch(cur, init, target)
    assert ratio == pytest.approx(0.2) and ok
    ratio, ok = metric_pinch(target + [0, 0.3, 0], init, target)
    assert ratio == pytest.approx(0.3) and not ok  # strict inequality


def test_iou_counting_oracle(rng):
    for _ in range(10):
        a = rng.uniform(size=(8, 8))
        b = rng.uniform(size=(8, 8))
        A, B = a > 0.5, b > 0.5
        expect = (A & B).sum() / (A | B).sum()
        iou, ok = metric_write_iou(DepthMap(a, 0.01, threshold=0.5), DepthMap(b, 0.01, threshold=0.5))
        assert iou == pytest.approx(expect, abs=1e-15) and ok == (expect > 0.8)
    empty = DepthMap(np.zeros((4, 4)), 0.01)
    assert metric_write_iou(empty, empty) == (1.0, True)
    with pytest.raises(ValueError):
        metric_write_iou(empty, DepthMap(np.zeros((4, 5)), 0.01))


def test_iou_symmetric_and_identity(rng):
    a = DepthMap(rng.uniform(size=(6, 6)), 0.01, threshold=0.3)
    b = DepthMap(rng.uniform(size=(6, 6)), 0.01, threshold=0.3)
    assert metric_write_iou(a, b)[0] == metric_write_iou(b, a)[0]
    assert metric_write_iou(a, a)[0] == 1.0


def test_heightmap_binning_oracle(rng):
    x = rng.uniform(0, 1, size=(500, 3))
    dm = render_heightmap(x, REGION, (4, 4))
    expect = np.zeros((4, 4))
    for p in x:
        i, j = min(int(p[0] * 4), 3), min(int(p[1] * 4), 3)
        expect[i, j] = max(expect[i, j], p[2])
    assert np.allclose(dm.samples, expect)
    assert dm.cell == 0.25 and dm.origin == (0.0, 0.0)
    outside = render_heightmap(x + 5, REGION, (4, 4))
    assert not outside.samples.any()
    with pytest.raises(ValueError):
        render_heightmap(x, REGION, (1, 4))


def test_indentation_map():
    a = DepthMap(np.full((2, 2), 0.05), 0.1)
    b = DepthMap(np.array([[0.05, 0.04], [0.06, 0.02]]), 0.1)
    ind = indentation_map(a, b, 0.005)
    assert np.allclose(ind.samples, [[0, 0.01], [0, 0.03]])
    assert ind.occupancy().tolist() == [[False, True], [False, True]]


def test_fill_boundary():
    region = RegionBox((0, 0, 0), (1, 1, 1))
    n = 100
    x = np.full((n, 3), 0.5)
    x[91:] = 5.0  # 91% inside
    frac, speed, ok = metric_fill(x, np.zeros((n, 3)), region)
    assert frac == 0.91 and ok
    x[90] = 5.0  # exactly 90%: not strictly above
    assert not metric_fill(x, np.zeros((n, 3)), region)[2]
    x[90] = 0.5
    v = np.zeros((n, 3))
    v[0] = [0.05, 0, 0]
    assert not metric_fill(x, v, region)[2]  # speed bound is strict
    active = np.ones(n, bool)
    active[91:] = False
    assert metric_fill(x, np.zeros((n, 3)), region, active)[0] == 1.0
    with pytest.raises(ValueError):
        metric_fill(x, v, region, np.zeros(n, bool))


def test_depth_map_file_round_trip(tmp_path, rng):
    dm = DepthMap(rng.uniform(size=(5, 7)), 0.004, (0.1, 0.2), 0.0025)
    p = tmp_path / "m.dep"
    write_depth_map(dm, p)
    back = read_depth_map(p)
    assert back.resolution == (5, 7) and back.cell == 0.004 and back.origin == (0.1, 0.2) and back.threshold == 0.0025
    assert np.array_equal(back.samples, dm.samples.astype(np.float32))
    data = p.read_bytes()
    p.write_bytes(data[:-4])
    with pytest.raises(ValueError):
        read_depth_map(p)
    p.write_bytes(b"XXXXXX" + data[6:])
    with pytest.raises(ValueError):
        read_depth_map(p)


def test_pgm_layout(tmp_path):
    s = np.zeros((3, 2))
    s[2, 1] = 0.01  # max x, max y: top-right pixel
    s[0, 0] = 0.005
    p = tmp_path / "m.pgm"
    write_pgm(DepthMap(s, 0.01), p)
    lines = p.read_text().split("\n")
    assert lines[:3] == ["P2", "3 2", "255"]
    assert lines[3].split() == ["0", "0", "255"]
    assert lines[4].split() == ["128", "0", "0"]


def test_depth_map_validation():
    with pytest.raises(ValueError):
        DepthMap(np.zeros(3), 0.1)
    with pytest.raises(ValueError):
        DepthMap(np.full((2, 2), np.nan), 0.1)
    with pytest.raises(ValueError):
        RegionBox((0, 0, 0), (1, 0, 1))
