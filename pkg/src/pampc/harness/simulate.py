"""Closed-loop simulation: perception, MPC and the rotor-level plant."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Generator

import numpy as np

from ..disparity import ExtractionConfig, build_uv_maps, disparity_from_depth, extract_obstacles
from ..dynamics import FullModel, ReducedModel, hover_state, rk4_step
from ..geometry import GeometryError, PolarImageLine, Pose, PowerLine3D, UnitQuaternion, perception_residual_batch, similarity_score
from ..obstacles import EllipsoidObstacle, in_collision, omega_sqrt
from ..perception.detection import BackprojectionError, Detection, backproject, oracle_detect
from ..perception.edges import canny
from ..perception.hough import hough_lines
from ..perception.scene import project_segment, render, render_depth_windows
from ..perception.tracking import AssociationConfig, TrackSet, associate
from ..solver.problem import build_classical, build_pampc, straight_line_reference
from ..solver.sqp import RtiSolver
from .scenario import Scenario

QP_STATUS_CODES = {"optimal": 0, "softened": 1, "failed": 2, "none": 3}

# per-step numeric columns; the CSV writes them in this order
LOG_COLUMNS = (
    "step", "t",
    "px", "py", "pz", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz",
    "u_c", "u_wx", "u_wy", "u_wz",
    "alpha0", "alpha_max",
    "z_theta", "z_r", "z_d",
    "n_constraints", "qp_status", "kkt",
    "clearance", "similarity", "line_detected", "lost_track", "collision",
)  # fmt: skip


@dataclass
class RolloutLog:
    """One record per control step; timing kept apart from the numeric log."""

    scenario: str
    controller: str
    seed: int
    data: np.ndarray  # (n, len(LOG_COLUMNS))
    update_us: np.ndarray
    solver_us: np.ndarray
    reference_end: np.ndarray = field(default_factory=lambda: np.full(3, np.nan))
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(LOG_COLUMNS))

    def __len__(self) -> int:
        return self.data.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.data[:, LOG_COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def positions(self) -> np.ndarray:
        i = LOG_COLUMNS.index("px")
        return self.data[:, i : i + 3]

    @property
    def collided(self) -> bool:
        return bool(np.any(self.column("collision") > 0))

    @property
    def mean_similarity(self) -> float:
        return float(self.column("similarity").mean()) if len(self) else float("nan")


# ---------------------------------------------------------------------------
# plant


class RatePlant:
    """FullModel driven through a body-rate loop and the inverse rotor mixer."""

    def __init__(self, model: FullModel, rate_gain: float, substeps: int):
        self.model = model
        self.gain = float(rate_gain)
        self.substeps = int(substeps)
        p = model.params
        self._J = p.inertia
        self._mix_inv = np.linalg.inv(p.mixer())
        self._rotor_max = p.rotor_max

    def rotor_thrusts(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        om = x[10:13]
        J = self._J
        tau = J * self.gain * (u[1:] - om) + np.cross(om, J * om)
        return np.clip(self._mix_inv @ np.r_[u[0], tau], 0.0, self._rotor_max)

    def step(self, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
        h = dt / self.substeps
        for _ in range(self.substeps):
            x = rk4_step(self.model, x, self.rotor_thrusts(x, u), h)
        return x


def clearance(p, masts, r: float) -> float:
    """Smallest normalized ellipsoid distance minus one (negative inside)."""
    if not masts:
        return float("inf")
    return min(float(np.linalg.norm(omega_sqrt(m, r) @ (np.asarray(p) - m.center))) - 1.0 for m in masts)


# ---------------------------------------------------------------------------
# perception front ends


@dataclass
class LineObservation:
    line: PowerLine3D | None  # world line handed to the controller
    detection: Detection | None  # image evidence for the tracked line this frame
    lost: bool = False


class GroundTruthLine:
    def __init__(self, s: Scenario):
        self.s = s

    def observe(self, body: Pose, step: int) -> LineObservation:
        s = self.s
        seg = project_segment(s.line, body, s.extrinsics, s.intrinsics)
        det = None if seg is None or np.allclose(seg[0], seg[1]) else Detection.from_endpoints(seg[0], seg[1], 1.0)
        return LineObservation(s.line, det)


class OracleLine:
    """Oracle detections, Hungarian tracking and windowed depth back-projection.

    The tracked line is pinned on the first track created from the target
    line; afterwards only the track ID is followed.  A lost track is re-pinned
    on the next detection of the target, and the last world estimate is held
    in between.
    """

    def __init__(self, s: Scenario, rng: np.random.Generator):
        self.s = s
        self.rng = rng
        self.tracks = TrackSet()
        self.track_id: int | None = None
        self.estimate: PowerLine3D | None = None
        self.assoc = AssociationConfig(confidence_gate=s.detector.gate)

    def _detections(self, body: Pose, step: int):
        s = self.s
        return oracle_detect(s.scene, body, s.extrinsics, s.intrinsics, s.detector, self.rng)

    def observe(self, body: Pose, step: int) -> LineObservation:
        s = self.s
        K = s.intrinsics
        dets = self._detections(body, step)
        self.tracks = associate(self.tracks, dets, K.width, K.height, self.assoc)
        track = self.tracks.get(self.track_id) if self.track_id is not None else None
        if track is None:
            self.track_id = None
            for t in self.tracks.tracks:
                if t.detection.label == s.target_line and t.misses == 0:
                    self.track_id, track = t.id, t
                    break
        if track is None or track.misses > 0:
            return LineObservation(self.estimate, None, lost=True)
        det = track.detection
        depth = render_depth_windows(s.scene, body, s.extrinsics, K, det.endpoints)
        try:
            self.estimate = backproject(det, depth, body, s.extrinsics, K)
        except BackprojectionError:
            pass
        return LineObservation(self.estimate, det)


class HoughLineSource(OracleLine):
    """Rendered image, Canny and Hough in place of the oracle detector."""

    def __init__(self, s: Scenario, rng: np.random.Generator, low: float = 0.3, high: float = 0.6):
        super().__init__(s, rng)
        self.low, self.high = low, high

    def _detections(self, body: Pose, step: int):
        s = self.s
        K = s.intrinsics
        img = render(s.scene, body, s.extrinsics, K, self.rng)
        edges = canny(img, self.low, self.high)
        out = []
        for h in hough_lines(edges, max_lines=len(s.scene.lines) + 2):
            if h.segment is None:
                continue
            a, b = h.segment
            length = float(np.hypot(*(b - a)))
            if length <= 1.0:
                continue
            conf = min(1.0, length / (0.5 * K.diagonal))
            # label by the nearest projected scene line; used only to pin the track
            label = _nearest_scene_line(s, body, h.segment)
            out.append(Detection.from_endpoints(a, b, conf, label=label))
        return out


def _nearest_scene_line(s: Scenario, body: Pose, seg: np.ndarray) -> int:
    best, best_d = -1, math.inf
    mid = seg.mean(axis=0)
    for k, sl in enumerate(s.scene.lines):
        gt = project_segment(sl.line, body, s.extrinsics, s.intrinsics)
        if gt is None:
            continue
        d = gt[1] - gt[0]
        n = np.array([-d[1], d[0]]) / max(np.hypot(*d), 1e-12)
        dist = abs((mid - gt[0]) @ n)
        if dist < best_d:
            best, best_d = k, dist
    return best


def make_line_source(s: Scenario, rng: np.random.Generator):
    if s.perception == "ground-truth":
        return GroundTruthLine(s)
    if s.perception == "oracle":
        return OracleLine(s, rng)
    return HoughLineSource(s, rng)


class DisparityObstacles:
    """Obstacles extracted from the forward depth camera, kept for ``memory`` steps."""

    def __init__(self, s: Scenario, memory: int = 40, config: ExtractionConfig = ExtractionConfig()):
        self.s = s
        self.memory = memory
        self.config = config
        self._seen: list[tuple[int, EllipsoidObstacle]] = []

    def observe(self, body: Pose, step: int) -> tuple[EllipsoidObstacle, ...]:
        s = self.s
        K = s.depth_intrinsics
        depth = render(s.scene, body, s.depth_extrinsics, K).depth
        disp = disparity_from_depth(depth, s.depth_baseline, K.fx)
        maps = build_uv_maps(disp)
        fresh = extract_obstacles(maps, disp, body, s.depth_extrinsics, K, self.config)
        kept = [
            (k, o)
            for k, o in self._seen
            if step - k <= self.memory
            and all(np.linalg.norm((o.center - f.center)[:2]) > self.config.merge_gap + f.semi_axes[:2].max() for f in fresh)
        ]
        self._seen = kept + [(step, o) for o in fresh]
        return tuple(o for _, o in self._seen)


# ---------------------------------------------------------------------------


def _reference_similarity(det: Detection | None, s: Scenario) -> float:
    """Similarity to the vertical line through the image centre."""
    if det is None:
        return 0.0
    K = s.intrinsics
    try:
        polar = det.polar(K)
    except GeometryError:
        return 0.0
    return similarity_score((polar, det.center), (PolarImageLine(0.0, 0.0), (K.cx, K.cy)), K.width, K.height)


def build_problem(s: Scenario, controller: str, reference, x_init, line, obstacles, model: ReducedModel):
    if controller == "classical":
        return build_classical(s.weights, reference, x_init, model)
    use_line = line if controller in ("tracking", "pampc") else None
    use_obs = tuple(obstacles) if controller in ("avoidance", "pampc") else ()
    return build_pampc(
        s.weights,
        reference,
        x_init,
        use_line,
        use_obs,
        s.cc_params,
        s.cost_params,
        s.d_s,
        s.extrinsics,
        s.intrinsics,
        model=model,
        use_alpha=controller == "pampc",
        k_nearest=s.k_nearest,
        normalization=s.normalization,
        distance_from=s.distance_from,
    )


def initial_state(s: Scenario) -> np.ndarray:
    return hover_state(FullModel(s.quad), s.start, s.yaw)


def run_closed_loop(
    scenario: Scenario,
    controller: str | None = None,
    seed: int | None = None,
    max_steps: int | None = None,
) -> RolloutLog:
    """Simulate ``scenario`` until the reference has ended and settled, or a collision.

    ``controller`` and ``seed`` override the scenario's values.  Collisions
    are checked on the plant state against the true masts.
    """
    steps = closed_loop_steps(scenario, controller, seed, max_steps)
    while True:
        try:
            next(steps)
        except StopIteration as done:
            return done.value


def closed_loop_steps(
    scenario: Scenario,
    controller: str | None = None,
    seed: int | None = None,
    max_steps: int | None = None,
) -> Generator[tuple[float, float], None, RolloutLog]:
    """Step-wise form of :func:`run_closed_loop`.

    Yields ``(update_us, solver_us)`` after every control step and returns
    the finished log, so several loops can be advanced in lockstep.
    """
    s = scenario
    controller = controller or s.controller
    seed = s.seed if seed is None else int(seed)
    if controller not in ("classical", "tracking", "avoidance", "pampc"):
        raise ValueError(f"unknown controller {controller!r}")
    rng = np.random.default_rng(seed)
    reduced = ReducedModel(s.quad)
    plant = RatePlant(FullModel(s.quad), s.sim.rate_gain, s.sim.substeps)
    solver = RtiSolver()
    lines = make_line_source(s, rng)
    obs_source = DisparityObstacles(s) if s.obstacle_source == "disparity" else None
    length = float(np.linalg.norm(s.end - s.start))
    t_end = min(length / s.speed + s.sim.settle_time, s.sim.max_time)
    n_steps = int(math.ceil(t_end / s.dt - 1e-9))
    if max_steps is not None:
        n_steps = min(n_steps, int(max_steps))

    x = initial_state(s)
    rows, upd, sol_us, events = [], [], [], []
    last_u = reduced.hover_input()
    for k in range(n_steps):
        t = k * s.dt
        t0 = time.perf_counter_ns()
        body = Pose(x[:3], UnitQuaternion.from_array(x[3:7]))
        # perception runs for every controller so similarity is always logged
        obs_line = lines.observe(body, k)
        masts = obs_source.observe(body, k) if obs_source is not None else s.masts
        ref = straight_line_reference(reduced, s.start, s.end, s.speed, t, s.horizon, s.dt, s.yaw)
        problem = build_problem(s, controller, ref, x[:10], obs_line.line, masts, reduced)
        sol = solver.step(problem)
        u = sol.u[0]
        if not np.all(np.isfinite(u)):
            events.append({"step": k, "event": "solver-failure"})
            u = last_u
            solver.reset()
        elif sol.stats.qp_status != "optimal":
            events.append({"step": k, "event": f"qp-{sol.stats.qp_status}"})
        last_u = u
        upd.append((time.perf_counter_ns() - t0) / 1e3)
        sol_us.append(sol.stats.time_total_us)

        if obs_line.line is not None:
            zb, _, vis = perception_residual_batch(
                x[None, :3], x[None, 3:7], s.extrinsics, s.intrinsics, obs_line.line, s.d_s, s.distance_from
            )
            z = zb[0] if vis[0] else np.full(3, np.nan)
        else:
            z = np.full(3, np.nan)
        sim = _reference_similarity(obs_line.detection, s)
        if obs_line.lost:
            events.append({"step": k, "event": "lost-track"})

        x = plant.step(x, u, s.dt)
        collided = any(in_collision(x[:3], m, s.sim.collision_radius) for m in s.masts)
        if collided:
            events.append({"step": k, "event": "collision"})
        alpha = sol.alpha if problem.use_alpha else np.zeros(1)
        rows.append(
            [k, t + s.dt, *x, *u, alpha[0], alpha.max(), *z,
             sol.stats.n_constraints, QP_STATUS_CODES.get(sol.stats.qp_status, 3), sol.stats.kkt,
             clearance(x[:3], s.masts, s.sim.collision_radius), sim,
             float(obs_line.detection is not None), float(obs_line.lost), float(collided)]
        )  # fmt: skip
        yield upd[-1], sol_us[-1]
        if collided and s.sim.stop_on_collision:
            break
    return RolloutLog(s.name, controller, seed, np.array(rows), np.array(upd), np.array(sol_us), s.end.copy(), events)
