"""Avoidance Monte Carlo, visibility comparison, timing table and detector bench."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ..geometry import CameraIntrinsics, Pose, PowerLine3D, UnitQuaternion, angular_distance, cartesian_to_polar
from ..obstacles import EllipsoidObstacle, omega_sqrt
from ..perception.detection import OracleConfig, oracle_detect
from ..perception.edges import canny
from ..perception.hough import HoughGrid, hough_lines, p_hough_lines
from ..perception.metrics import chamfer_prf
from ..perception.scene import SceneLine, SceneModel, project_segment, render
from .scenario import Scenario
from .simulate import RolloutLog, closed_loop_steps, run_closed_loop

# ---------------------------------------------------------------------------
# avoidance Monte Carlo

# x range, y range of the start region: 8 x 3 m, bottom edge centred on mast A
START_REGION = (-4.0, 4.0, 0.0, 3.0)


def sample_starts(
    n: int,
    seed: int,
    masts: Sequence[EllipsoidObstacle] = (),
    region=START_REGION,
    z: float = 2.0,
    min_distance: float = 1.0,
) -> np.ndarray:
    """Uniform starts in ``region``; draws within ``min_distance`` (horizontal) of a mast are redrawn."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = region
    out = []
    while len(out) < n:
        p = np.array([rng.uniform(x0, x1), rng.uniform(y0, y1), z])
        if all(np.hypot(*(p[:2] - m.center[:2])) > min_distance for m in masts):
            out.append(p)
    return np.array(out)


def _run(args) -> RolloutLog:
    scenario, controller = args
    return run_closed_loop(scenario, controller)


def run_many(jobs: list[tuple[Scenario, str]], workers: int = 1) -> list[RolloutLog]:
    """Independent rollouts, optionally in worker processes; order is preserved."""
    if workers <= 1 or len(jobs) <= 1:
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, jobs, chunksize=1))


@dataclass
class MonteCarloResult:
    starts: np.ndarray
    logs: dict[str, list[RolloutLog]]

    def success_rate(self, controller: str) -> float:
        logs = self.logs[controller]
        return sum(not lg.collided for lg in logs) / len(logs)

    def min_clearance(self, controller: str) -> np.ndarray:
        return np.array([lg.column("clearance").min() for lg in self.logs[controller]])

    def summary(self) -> dict:
        out = {"n": int(len(self.starts))}
        for c in self.logs:
            cl = self.min_clearance(c)
            out[c] = {
                "success_rate": self.success_rate(c),
                "collisions": int(sum(lg.collided for lg in self.logs[c])),
                "min_clearance": float(cl.min()),
                "mean_min_clearance": float(cl.mean()),
            }
        return out


def avoidance_monte_carlo(
    base: Scenario,
    n: int = 100,
    seed: int = 0,
    controllers: Iterable[str] = ("pampc", "classical"),
    workers: int = 1,
) -> MonteCarloResult:
    """Closed-loop rollouts from ``n`` sampled starts for every controller."""
    starts = sample_starts(n, seed, base.masts, z=float(base.start[2]))
    controllers = tuple(controllers)
    jobs = [(base.with_(start=p, seed=seed + i), c) for c in controllers for i, p in enumerate(starts)]
    logs = run_many(jobs, workers)
    return MonteCarloResult(starts, {c: logs[k * n : (k + 1) * n] for k, c in enumerate(controllers)})


# ---------------------------------------------------------------------------
# alpha behaviour around obstructing masts


def segment_hits_ellipsoid(a, b, obs: EllipsoidObstacle, r: float) -> bool:
    """Whether the segment ``a -> b`` enters the ellipsoid inflated by ``r``."""
    S = omega_sqrt(obs, r)
    p = S @ (np.asarray(a, dtype=float) - obs.center)
    d = S @ (np.asarray(b, dtype=float) - np.asarray(a, dtype=float))
    dd = d @ d
    t = 0.0 if dd == 0 else float(np.clip(-(p @ d) / dd, 0.0, 1.0))
    return float(np.linalg.norm(p + t * d)) <= 1.0


@dataclass(frozen=True)
class AlphaBehavior:
    mast: int
    closest_step: int
    peak: float
    median: float
    clear_step: int | None
    return_steps: int | None  # steps from clearing until alpha0 < threshold

    @property
    def ratio(self) -> float:
        return self.peak / self.median if self.median > 0 else math.inf


def alpha_behavior(
    log: RolloutLog,
    scenario: Scenario,
    inflation: float = 0.2,
    clear_distance: float = 1.0,
    return_threshold: float | None = None,
) -> list[AlphaBehavior]:
    """Peak/median arbitration around every mast that blocks the reference.

    The peak is the horizon maximum of alpha at the step of closest
    horizontal approach; the median is taken over the whole rollout.  The
    mast counts as cleared at the first later step whose horizontal distance
    exceeds the closest one by ``clear_distance``; from there the applied
    alpha must drop below ``return_threshold`` (default 0.1 alpha_max).
    """
    thr = 0.1 * scenario.weights.alpha_max if return_threshold is None else return_threshold
    amax = log.column("alpha_max")
    a0 = log.column("alpha0")
    med = float(np.median(amax))
    P = log.positions
    out = []
    for j, m in enumerate(scenario.masts):
        if not segment_hits_ellipsoid(scenario.start, scenario.end, m, inflation):
            continue
        dist = np.hypot(P[:, 0] - m.center[0], P[:, 1] - m.center[1])
        k = int(np.argmin(dist))
        later = np.nonzero(dist[k:] > dist[k] + clear_distance)[0]
        clear = int(k + later[0]) if later.size else None
        ret = None
        if clear is not None:
            below = np.nonzero(a0[clear:] < thr)[0]
            ret = int(below[0]) if below.size else None
        out.append(AlphaBehavior(j, k, float(amax[k]), med, clear, ret))
    return out


# ---------------------------------------------------------------------------
# visibility


@dataclass
class VisibilityResult:
    scenarios: list[str]
    controllers: list[str]
    similarity: np.ndarray  # (n_scenarios, n_controllers)
    logs: dict = field(default_factory=dict)

    def mean(self, controller: str) -> float:
        return float(self.similarity[:, self.controllers.index(controller)].mean())

    def improvement(self, better: str = "pampc", baseline: str = "classical") -> float:
        b = self.mean(baseline)
        return (self.mean(better) - b) / b

    def summary(self) -> dict:
        rows = {
            s: {c: float(self.similarity[i, j]) for j, c in enumerate(self.controllers)}
            for i, s in enumerate(self.scenarios)
        }
        out = {"per_scenario": rows, "mean": {c: self.mean(c) for c in self.controllers}}
        if "pampc" in self.controllers and "classical" in self.controllers:
            out["relative_improvement"] = self.improvement()
        return out


def visibility_experiment(
    scenarios: Sequence[Scenario],
    controllers: Sequence[str] = ("pampc", "classical"),
    workers: int = 1,
) -> VisibilityResult:
    """Mean per-frame similarity of the tracked line for each scenario and controller."""
    if not scenarios:
        raise ValueError("scenario set is empty")
    jobs = [(s, c) for s in scenarios for c in controllers]
    logs = run_many(jobs, workers)
    sim = np.array([lg.mean_similarity for lg in logs]).reshape(len(scenarios), len(controllers))
    return VisibilityResult(
        [s.name for s in scenarios], list(controllers), sim, {(lg.scenario, lg.controller): lg for lg in logs}
    )


# ---------------------------------------------------------------------------
# timing


@dataclass
class TimingResult:
    controllers: list[str]
    update_us: dict[str, np.ndarray]
    solver_us: dict[str, np.ndarray]

    def mean(self, controller: str, kind: str = "update") -> float:
        return float(getattr(self, f"{kind}_us")[controller].mean())

    def summary(self) -> dict:
        return {
            c: {
                "update_mean_ms": self.mean(c) / 1e3,
                "update_std_ms": float(self.update_us[c].std()) / 1e3,
                "solver_mean_ms": self.mean(c, "solver") / 1e3,
                "solver_std_ms": float(self.solver_us[c].std()) / 1e3,
                "samples": int(self.update_us[c].size),
            }
            for c in self.controllers
        }


def timing_experiment(
    scenario: Scenario,
    controllers: Sequence[str] = ("classical", "tracking", "avoidance", "pampc"),
    repetitions: int = 500,
) -> TimingResult:
    """Per-step update and solver wall time over ``repetitions`` control steps.

    The closed loops of all controllers advance in lockstep, one step each
    in turn, so drifting machine load affects every controller alike.
    Rollouts restart when they end; collisions do not stop them here.
    """
    if repetitions < 100:
        raise ValueError("timing needs at least 100 repetitions")
    s = scenario.with_(sim=replace(scenario.sim, stop_on_collision=False))
    controllers = list(controllers)
    upd = {c: [] for c in controllers}
    sol = {c: [] for c in controllers}
    loops = {c: closed_loop_steps(s, c) for c in controllers}
    while any(len(upd[c]) < repetitions for c in controllers):
        for c in controllers:
            if len(upd[c]) >= repetitions:
                continue
            try:
                u_us, s_us = next(loops[c])
            except StopIteration:
                loops[c] = closed_loop_steps(s, c)
                u_us, s_us = next(loops[c])
            upd[c].append(u_us)
            sol[c].append(s_us)
    for g in loops.values():
        g.close()
    return TimingResult(controllers, {c: np.array(v) for c, v in upd.items()}, {c: np.array(v) for c, v in sol.items()})


# ---------------------------------------------------------------------------
# detector bench

BENCH_INTRINSICS = CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240)


@dataclass(frozen=True)
class BenchScene:
    scene: SceneModel
    truth: list[np.ndarray]  # clipped raster segments


def _polar(seg: np.ndarray, K: CameraIntrinsics):
    return cartesian_to_polar(*(seg[0] - (K.cx, K.cy)), *(seg[1] - (K.cx, K.cy)))


def _ray_line_depth(ray: np.ndarray, line: PowerLine3D) -> float:
    """Camera depth of the point of ``line`` closest to the ray through the origin."""
    e = line.direction
    a = line.p_WL1
    # minimize |s ray - (a + t e)| over (s, t)
    M = np.array([[ray @ ray, -(ray @ e)], [ray @ e, -(e @ e)]])
    s, _ = np.linalg.solve(M, np.array([ray @ a, e @ a]))
    return float(s)


def random_line_scene(
    rng: np.random.Generator,
    K: CameraIntrinsics = BENCH_INTRINSICS,
    max_lines: int = 3,
    jitter_px: float = 0.0,
    noise_sigma: float = 0.0,
    min_length: float = 120.0,
) -> BenchScene:
    """1 to ``max_lines`` long lines at 3-8 m in front of an identity camera.

    Lines are kept apart by more than 10 degrees or 20 px so that each is a
    separate accumulator peak, and drawn 1.5 to 4 px thick.  ``jitter_px``
    perturbs the rendered geometry (not the ground truth) by moving the
    visible endpoints of every line in the image.
    """
    body = Pose.identity()
    n = int(rng.integers(1, max_lines + 1))
    lines, truth, polars = [], [], []
    while len(lines) < n:
        Z = rng.uniform(3.0, 8.0)
        ang = rng.uniform(0.0, math.pi)
        c = np.array([rng.uniform(-0.3, 0.3) * Z, rng.uniform(-0.25, 0.25) * Z, Z])
        d = np.array([math.cos(ang), math.sin(ang), rng.uniform(-0.2, 0.2)])
        L = PowerLine3D(c - 20.0 * d, c + 20.0 * d)
        seg = project_segment(L, body, body, K)
        thick = Z * rng.uniform(1.5, 4.0) / K.fx
        jit = rng.normal(0.0, jitter_px, size=(2, 2)) if jitter_px > 0 else np.zeros((2, 2))
        if seg is None or np.hypot(*(seg[1] - seg[0])) < min_length:
            continue
        pl = _polar(seg, K)
        if any(angular_distance(pl.theta, t.theta) <= math.radians(10) and abs(abs(pl.r) - abs(t.r)) <= 20 for t in polars):
            continue
        if jitter_px > 0:
            # move the visible endpoints in the image and re-lift them onto their rays
            lifted = []
            for (u, v), dj in zip(seg, jit):
                ray = np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
                z = _ray_line_depth(ray, L)
                lifted.append(z * np.array([(u + dj[0] - K.cx) / K.fx, (v + dj[1] - K.cy) / K.fy, 1.0]))
            e = lifted[1] - lifted[0]
            L = PowerLine3D(lifted[0] - 0.05 * e, lifted[1] + 0.05 * e)
        lines.append(SceneLine(L, thickness=thick))
        truth.append(seg)
        polars.append(pl)
    return BenchScene(SceneModel(tuple(lines), noise_sigma=noise_sigma), truth)


def within_one_bin(found, truth, d_theta: float, d_r: float) -> bool:
    """Polar lines equal up to one accumulator bin, handling the theta wrap."""
    th, r = found.theta, found.r
    if th - truth.theta > math.pi / 2:
        th, r = th - math.pi, -r
    elif th - truth.theta < -math.pi / 2:
        th, r = th + math.pi, -r
    return abs(th - truth.theta) <= d_theta + 1e-9 and abs(r - truth.r) <= d_r + 1e-9


@dataclass
class BenchResult:
    detector: str
    records: list[dict]

    @property
    def failures(self) -> int:
        return int(sum(r["missed"] for r in self.records))

    @property
    def mean_f1(self) -> float:
        return float(np.mean([r["f1"] for r in self.records]))

    def summary(self) -> dict:
        return {
            "detector": self.detector,
            "scenes": len(self.records),
            "lines": int(sum(r["lines"] for r in self.records)),
            "noiseless_failures": self.failures,
            "mean_precision": float(np.mean([r["precision"] for r in self.records])),
            "mean_recall": float(np.mean([r["recall"] for r in self.records])),
            "mean_f1": self.mean_f1,
        }


DETECTORS = ("hough", "phough", "oracle")


def _detect_segments(detector: str, bs: BenchScene, K: CameraIntrinsics, seed: int, sigma_px: float):
    body = Pose.identity()
    if detector == "oracle":
        cfg = OracleConfig(sigma_px=sigma_px, gate=0.0)
        dets = oracle_detect(bs.scene, body, body, K, cfg, seed)
        return [d.endpoints for d in dets], None
    img = render(bs.scene, body, body, K, seed)
    edges = canny(img, 0.3, 0.6)
    n = len(bs.scene.lines)
    if detector == "hough":
        found = hough_lines(edges, max_lines=n + 2)
    else:
        found = p_hough_lines(edges, seed=seed, max_lines=n + 2)
    return [h.segment for h in found if h.segment is not None], found


def detect_bench(
    detector: str = "hough",
    n: int = 100,
    seed: int = 0,
    sigma_px: float = 2.0,
    tau: float = 5.0,
    K: CameraIntrinsics = BENCH_INTRINSICS,
) -> BenchResult:
    """Noiseless recovery and noisy Chamfer P/R/F1 over ``n`` seeded scenes.

    Each scene is drawn twice from the same seed: once clean, where every
    line must be found within one accumulator bin (Hough variants), and once
    with ``sigma_px`` of geometric jitter and ``sigma_px / 255`` intensity
    noise, scored by Chamfer F1 at ``tau`` against the clean ground truth.
    """
    if detector not in DETECTORS:
        raise ValueError(f"unknown detector {detector!r}")
    grid = HoughGrid.for_image(K.width, K.height)
    records = []
    for i in range(n):
        clean = random_line_scene(np.random.default_rng([seed, i]), K)
        missed = 0
        if detector != "oracle":
            _, found = _detect_segments(detector, clean, K, seed + i, 0.0)
            shown = found[: len(clean.truth) + 2]
            for seg in clean.truth:
                t = _polar(seg, K)
                if not any(within_one_bin(h.line, t, grid.d_theta, grid.d_r) for h in shown):
                    missed += 1
        noisy = random_line_scene(np.random.default_rng([seed, i]), K, jitter_px=sigma_px, noise_sigma=sigma_px / 255.0)
        segs, _ = _detect_segments(detector, noisy, K, seed + i, sigma_px)
        P, R, F = chamfer_prf(segs, noisy.truth, tau)
        records.append(
            {"scene": i, "lines": len(clean.truth), "missed": missed, "detections": len(segs),
             "precision": P, "recall": R, "f1": F}
        )  # fmt: skip
    return BenchResult(detector, records)
