import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pampc.geometry import CameraIntrinsics, Pose, PowerLine3D, UnitQuaternion, cartesian_to_polar
from pampc.perception import (
    AssociationConfig,
    BackprojectionError,
    Detection,
    HoughGrid,
    OracleConfig,
    SceneLine,
    SceneModel,
    TrackSet,
    associate,
    backproject,
    canny,
    chamfer_prf,
    clip_segment,
    hough_lines,
    hungarian,
    oracle_detect,
    p_hough_lines,
    project_segment,
    rasterize_segment,
    render,
    render_depth_windows,
)
from pampc.perception.hough import sample_fraction
from pampc.perception.io import read_depth, read_jsonl, read_pgm, write_depth, write_jsonl, write_pgm

from oracles import brute_force_assignment

K = CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240)
FORWARD = Pose(np.zeros(3), UnitQuaternion.from_matrix(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])))
ORIGIN = Pose()


def vertical_line(x=5.0, y=0.0):
    return PowerLine3D([x, y, -10.0], [x, y, 10.0])


def point_line_distance(p, line):
    d = line.p_WL2 - line.p_WL1
    d = d / np.linalg.norm(d)
    w = np.asarray(p) - line.p_WL1
    return float(np.linalg.norm(w - (w @ d) * d))


def draw(edges, p, q):
    for u, v in rasterize_segment([p, q]):
        if 0 <= v < edges.shape[0] and 0 <= u < edges.shape[1]:
            edges[v, u] = 1
    return edges


def within_bin(found, truth, grid):
    dt = abs(found.theta - truth.theta)
    return dt <= grid.d_theta and abs(found.r - truth.r) <= grid.d_r


class TestRender:
    def test_centred_vertical_line(self):
        scene = SceneModel([SceneLine(vertical_line())])
        img = render(scene, ORIGIN, FORWARD, K)
        row = img.intensity[120]
        assert abs(int(np.argmax(row)) - 160) <= 1
        assert row.max() > 0.9
        assert np.all(row[:150] == 0.2) and np.all(row[171:] == 0.2)
        # every line pixel sees the cylinder surface within half a thickness of 5 m
        on_line = img.intensity > 0.2
        assert on_line.any()
        assert np.all(np.abs(img.depth[on_line] - 5.0) <= 0.025 + 1e-9)

    def test_empty_scene(self):
        img = render(SceneModel(), ORIGIN, FORWARD, K)
        assert np.all(img.intensity == 0.2)
        assert np.all(np.isnan(img.depth))

    def test_noise_is_seeded(self):
        scene = SceneModel(noise_sigma=0.05)
        a = render(scene, ORIGIN, FORWARD, K, rng=3).intensity
        b = render(scene, ORIGIN, FORWARD, K, rng=3).intensity
        assert np.array_equal(a, b)
        assert a.std() == pytest.approx(0.05, rel=0.05)

    def test_depth_windows_match_full_render(self):
        scene = SceneModel([SceneLine(vertical_line())])
        full = render(scene, ORIGIN, FORWARD, K).depth
        win = render_depth_windows(scene, ORIGIN, FORWARD, K, [(160, 120), (5, 5)])
        inside = np.zeros(win.shape, bool)
        inside[118:123, 158:163] = True
        inside[3:8, 3:8] = True
        np.testing.assert_array_equal(win[inside], full[inside])
        assert np.all(np.isnan(win[~inside]))
        assert np.isfinite(win[inside]).sum() > 0

    def test_project_and_clip(self):
        seg = project_segment(vertical_line(), ORIGIN, FORWARD, K)
        np.testing.assert_allclose(seg[:, 0], 160.0)
        assert sorted(seg[:, 1]) == [0.0, 239.0]
        assert project_segment(vertical_line(x=-5.0), ORIGIN, FORWARD, K) is None
        assert clip_segment(np.array([[-10.0, -10.0], [-1.0, -5.0]]), 320, 240) is None


class TestCanny:
    def test_uniform(self):
        assert canny(np.full((60, 80), 0.4), 0.5, 1.0).sum() == 0

    def test_step_edge(self):
        I = np.zeros((60, 80))
        I[:, 40:] = 1.0
        E = canny(I, 0.5, 1.0)
        cols = np.nonzero(E.any(axis=0))[0]
        assert set(cols) <= {39, 40}
        assert np.all(E.sum(axis=1) == 1)

    def test_square_perimeter(self):
        I = np.zeros((100, 100))
        I[30:70, 30:70] = 1.0
        n = int(canny(I, 0.5, 1.0).sum())
        assert abs(n - 160) <= 0.15 * 160

    def test_threshold_order(self):
        with pytest.raises(ValueError):
            canny(np.zeros((5, 5)), 1.0, 0.5)


class TestHough:
    grid = HoughGrid.for_image(320, 240)

    def truth(self, p, q):
        o = self.grid.origin
        return cartesian_to_polar(p[0] - o[0], p[1] - o[1], q[0] - o[0], q[1] - o[1])

    def test_single_line(self):
        p, q = (20, 30), (300, 200)
        lines = hough_lines(draw(np.zeros((240, 320), np.uint8), p, q))
        assert len(lines) == 1
        assert within_bin(lines[0].line, self.truth(p, q), self.grid)

    def test_crossing_lines(self):
        segs = [((10, 20), (310, 220)), ((10, 220), (310, 30))]
        E = np.zeros((240, 320), np.uint8)
        for p, q in segs:
            draw(E, p, q)
        lines = hough_lines(E)
        assert len(lines) == 2
        for p, q in segs:
            assert any(within_bin(h.line, self.truth(p, q), self.grid) for h in lines)

    def test_empty(self):
        assert hough_lines(np.zeros((240, 320), np.uint8)) == []
        assert p_hough_lines(np.zeros((240, 320), np.uint8)) == []

    def test_full_sampling_is_identical(self):
        E = draw(np.zeros((240, 320), np.uint8), (20, 30), (300, 200))
        a = hough_lines(E)
        b = p_hough_lines(E, schedule=[(0, 1.0)])
        assert [(h.line.theta, h.line.r, h.votes) for h in a] == [(h.line.theta, h.line.r, h.votes) for h in b]

    def test_quarter_sampling(self):
        p, q = (20, 30), (300, 200)
        E = draw(np.zeros((240, 320), np.uint8), p, q)
        lines = p_hough_lines(E, schedule=[(0, 0.25)], seed=1)
        assert within_bin(lines[0].line, self.truth(p, q), self.grid)
        again = p_hough_lines(E, schedule=[(0, 0.25)], seed=1)
        assert [(h.line.theta, h.line.r, h.votes) for h in again] == [(h.line.theta, h.line.r, h.votes) for h in lines]

    def test_sampling_is_faster_on_dense_maps(self):
        import time

        rng = np.random.default_rng(0)
        E = (rng.uniform(size=(240, 320)) < 0.4).astype(np.uint8)  # about 30k edge pixels
        for k in range(6):
            draw(E, (0, 40 * k), (319, 40 * k + 20))

        def best_of(f, n=3):
            out = []
            for _ in range(n):
                t0 = time.perf_counter()
                f()
                out.append(time.perf_counter() - t0)
            return min(out)

        full = best_of(lambda: hough_lines(E, threshold=200))
        sampled = best_of(lambda: p_hough_lines(E, threshold=200))
        assert sampled < full

    def test_sample_fraction(self):
        sched = [(0, 1.0), (1000, 0.5), (5000, 0.25)]
        assert sample_fraction(10, sched) == 1.0
        assert sample_fraction(1000, sched) == 0.5
        assert sample_fraction(10**6, sched) == 0.25
        with pytest.raises(ValueError):
            sample_fraction(10, [(0, 0.0)])


class TestDetection:
    def test_corner_rule(self):
        d = Detection.from_endpoints((10, 10), (50, 30), 0.9)
        assert d.inclination == 1
        np.testing.assert_array_equal(d.endpoints, [[10, 10], [50, 30]])
        d = Detection.from_endpoints((50, 10), (10, 30), 0.9)
        assert d.inclination == -1
        np.testing.assert_array_equal(d.endpoints, [[50, 10], [10, 30]])
        assert d.area == 800.0

    def test_validation(self):
        with pytest.raises(ValueError):
            Detection((0, 0), 1, 1, 0, 0.9)
        with pytest.raises(ValueError):
            Detection((0, 0), 1, 1, 1, 1.5)

    def test_oracle_noiseless_corners(self):
        line = PowerLine3D([5.0, 2.0, 1.0], [5.0, -2.0, -1.0])
        dets = oracle_detect(SceneModel([SceneLine(line)]), ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0))
        seg = project_segment(line, ORIGIN, FORWARD, K)
        assert len(dets) == 1
        np.testing.assert_allclose(dets[0].endpoints, seg, atol=1e-9)

    def test_oracle_behind_camera(self):
        dets = oracle_detect(SceneModel([SceneLine(vertical_line(x=-5.0))]), ORIGIN, FORWARD, K, rng=0)
        assert dets == []

    def test_oracle_noise_statistics(self):
        # segment from (60, 40) to (260, 200), well inside the image
        p = np.array([[60.0, 40.0], [260.0, 200.0]])
        z = 5.0
        pts = [[z, -(u - K.cx) * z / K.fx, -(v - K.cy) * z / K.fy] for u, v in p]
        scene = SceneModel([SceneLine(PowerLine3D(*pts))])
        rng = np.random.default_rng(0)
        n = 10_000
        errs = np.array([oracle_detect(scene, ORIGIN, FORWARD, K, OracleConfig(reference_length=100.0), rng)[0].endpoints - p for _ in range(n)])
        errs = errs.reshape(n, 4)
        assert np.all(np.abs(errs.mean(axis=0)) < 4 * 2.0 / math.sqrt(n))
        np.testing.assert_allclose(errs.std(axis=0), 2.0, rtol=0.03)

    def test_confidence_gate(self):
        short = PowerLine3D([5.0, 0.0, 0.0], [5.0, -0.5, 0.0])
        scene = SceneModel([SceneLine(short)])
        assert oracle_detect(scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0)) == []
        (d,) = oracle_detect(scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0, reference_length=10.0))
        assert d.confidence == pytest.approx(0.95)
        (d,) = oracle_detect(scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0, reference_length=20.0, gate=0.0))
        assert d.confidence == pytest.approx(0.95 * 20.0 / 20.0)


class TestTracking:
    dets = [
        Detection((50.0, 60.0), 80.0, 10.0, 1, 0.9),
        Detection((200.0, 120.0), 30.0, 100.0, -1, 0.9),
        Detection((280.0, 40.0), 40.0, 40.0, 1, 0.9),
    ]

    def test_identity(self):
        t1 = associate(TrackSet(), self.dets, 320, 240)
        t2 = associate(t1, self.dets, 320, 240)
        assert t2.ids == [0, 1, 2]
        assert [t.detection for t in t2.tracks] == self.dets
        assert t2.next_id == 3

    def test_permutation_invariant(self):
        t1 = associate(TrackSet(), self.dets, 320, 240)
        rng = np.random.default_rng(0)
        for _ in range(10):
            perm = [self.dets[i] for i in rng.permutation(3)]
            t2 = associate(t1, perm, 320, 240)
            assert {t.id: t.detection for t in t2.tracks} == dict(enumerate(self.dets))

    def test_misses_and_new_ids(self):
        cfg = AssociationConfig(max_misses=2)
        t = associate(TrackSet(), self.dets[:1], 320, 240, cfg)
        for k in range(2):
            t = associate(t, [], 320, 240, cfg)
            assert t.ids == [0] and t.tracks[0].misses == k + 1
        t = associate(t, [], 320, 240, cfg)
        assert t.ids == []
        t = associate(t, self.dets[:1], 320, 240, cfg)
        assert t.ids == [1]

    def test_low_confidence_ignored(self):
        weak = Detection((10.0, 10.0), 5.0, 5.0, 1, 0.5)
        assert associate(TrackSet(), [weak], 320, 240).ids == []

    def test_id_stability_under_noise(self):
        lines = [PowerLine3D([8.0, -20.0, z], [8.0, 20.0, z + dz]) for z, dz in ((-1.5, 0.5), (0.0, -0.5), (1.5, 1.0))]
        scene = SceneModel([SceneLine(l) for l in lines])
        rng = np.random.default_rng(0)
        tracks = TrackSet()
        for k in range(100):
            body = Pose([0.02 * k, 0.0, 0.0])
            tracks = associate(tracks, oracle_detect(scene, body, FORWARD, K, OracleConfig(sigma_px=1.0), rng), 320, 240)
            assert tracks.ids == [0, 1, 2]
            assert [t.detection.label for t in tracks.tracks] == [0, 1, 2]

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(0, 100)))
    def test_hungarian_matches_brute_force(self, C):
        rows, cols, total = hungarian(C)
        assert total == pytest.approx(brute_force_assignment(C), abs=1e-9)
        assert len(set(rows)) == len(rows) == min(C.shape) == len(set(cols))

    def test_hungarian_empty(self):
        assert hungarian(np.zeros((0, 3)))[2] == 0.0


class TestBackproject:
    line = PowerLine3D([5.0, 6.0, 1.0], [5.0, -6.0, -1.0])
    scene = SceneModel([SceneLine(line, thickness=0.05)])

    def test_recovers_line(self):
        img = render(self.scene, ORIGIN, FORWARD, K)
        (d,) = oracle_detect(self.scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0))
        est = backproject(d, img, ORIGIN, FORWARD, K)
        for p in (est.p_WL1, est.p_WL2):
            assert point_line_distance(p, self.line) < 0.05
            assert abs(p[0] - 5.0) < 0.05

    def test_border_window(self):
        # line endpoints are clipped onto the image border
        img = render(self.scene, ORIGIN, FORWARD, K)
        (d,) = oracle_detect(self.scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0))
        assert d.endpoints[:, 0].min() == 0.0 and d.endpoints[:, 0].max() == 319.0
        est = backproject(d, img.depth, ORIGIN, FORWARD, K, window=3)
        assert point_line_distance(est.p_WL1, self.line) < 0.05

    def test_no_depth(self):
        (d,) = oracle_detect(self.scene, ORIGIN, FORWARD, K, OracleConfig(sigma_px=0.0))
        with pytest.raises(BackprojectionError):
            backproject(d, np.full((240, 320), np.nan), ORIGIN, FORWARD, K)


class TestChamfer:
    a = [[10, 10], [100, 10]]
    b = [[10, 100], [200, 150]]

    def test_perfect(self):
        assert chamfer_prf([self.a, self.b], [self.a, self.b]) == (1.0, 1.0, 1.0)

    def test_empty(self):
        assert chamfer_prf([], [self.a]) == (0.0, 0.0, 0.0)
        assert chamfer_prf([self.a], []) == (0.0, 0.0, 0.0)

    def test_half_recall(self):
        P, R, F = chamfer_prf([self.a], [self.a, self.b])
        assert (P, R) == (1.0, 0.5)
        assert F == pytest.approx(2 / 3)

    def test_shifted_prediction(self):
        shifted = [[10, 13], [100, 13]]
        assert chamfer_prf([shifted], [self.a], tau=5.0)[2] == 1.0
        assert chamfer_prf([shifted], [self.a], tau=2.0)[2] == 0.0

    def test_rasterize(self):
        pix = rasterize_segment([[0, 0], [10, 5]])
        assert len(pix) == 11
        assert pix[0].tolist() == [0, 0] and pix[-1].tolist() == [10, 5]


class TestIo:
    def test_pgm(self, tmp_path):
        I = np.random.default_rng(0).uniform(size=(24, 32))
        write_pgm(tmp_path / "a.pgm", I)
        back = read_pgm(tmp_path / "a.pgm")
        assert back.shape == (24, 32)
        assert np.abs(back - I).max() <= 0.5 / 255 + 1e-12

    def test_depth(self, tmp_path):
        D = np.random.default_rng(1).uniform(1, 20, size=(24, 32)).astype(np.float32).astype(float)
        D[3, 4] = np.nan
        write_depth(tmp_path / "d.bin", D)
        back = read_depth(tmp_path / "d.bin")
        np.testing.assert_array_equal(back, D)

    def test_jsonl(self, tmp_path):
        recs = [d.to_record() for d in TestTracking.dets]
        write_jsonl(tmp_path / "t.jsonl", recs)
        assert read_jsonl(tmp_path / "t.jsonl") == recs
