"""Scenario description and its INI file format.

A scenario file is plain ``key = value`` text grouped in sections::

    [scenario]      name, controller, perception, obstacles, seed, max_time,
                    masts (count; 0 means an obstacle-free scene)
    [reference]     start, end, speed, yaw
    [line.<k>]      p1, p2, thickness, intensity   (one section per line)
    [track]         line (index of the tracked line), d_s
    [mast.<name>]   center, semi_axes, rotation (quaternion w x y z),
                    covariance (diagonal), render_height
    [camera]        fx, fy, cx, cy, width, height, rotation (quaternion),
                    translation
    [depth_camera]  same keys as [camera] plus baseline
    [render]        background, mast_intensity, noise_sigma
    [detector]      sigma_px, c_max, gate
    [weights]       q_x, q_xn, r, q_p, q_alpha, alpha_max, c_coupling
    [solver]        horizon, dt, k_nearest, normalization, distance_from
    [chance]        delta, r, sigma_b (diagonal)
    [cost]          q_o, lambda_o, r_o
    [sim]           substeps, rate_gain, collision_radius,
                    stop_on_collision, settle_time
    [quad]          QuadParams fields

Vectors are comma separated.  Every key has a default, so a file only
needs to state what differs from :func:`default_scenario`.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..dynamics import QuadParams
from ..geometry import CameraIntrinsics, Pose, PowerLine3D, UnitQuaternion
from ..obstacles import ChanceConstraintParams, CollisionCostParams, EllipsoidObstacle
from ..perception.detection import OracleConfig
from ..perception.scene import SceneLine, SceneModel
from ..solver.problem import MpcWeights

CONTROLLERS = ("classical", "tracking", "avoidance", "pampc")
PERCEPTION_SOURCES = ("ground-truth", "oracle", "hough")
OBSTACLE_SOURCES = ("ground-truth", "disparity")

# line camera looks along body -y; image rows run along body x
LINE_CAMERA_ROTATION = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]])
# depth camera looks along body +x
DEPTH_CAMERA_ROTATION = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])


class ScenarioError(ValueError):
    """Unresolvable or inconsistent scenario data."""


@dataclass(frozen=True)
class SimConfig:
    substeps: int = 5
    rate_gain: float = 30.0
    collision_radius: float = 0.2
    stop_on_collision: bool = True
    settle_time: float = 2.0
    max_time: float = 30.0


@dataclass(frozen=True)
class Scenario:
    name: str
    scene: SceneModel
    target_line: int
    d_s: float
    start: np.ndarray
    end: np.ndarray
    speed: float = 1.5
    yaw: float = 0.0
    controller: str = "pampc"
    perception: str = "ground-truth"
    obstacle_source: str = "ground-truth"
    seed: int = 0
    weights: MpcWeights = field(default_factory=MpcWeights.default)
    horizon: int = 20
    dt: float = 0.05
    k_nearest: int = 3
    normalization: str = "transformed"
    distance_from: str = "body"
    cc_params: ChanceConstraintParams = field(
        default_factory=lambda: ChanceConstraintParams(0.05, 0.3, np.full(3, 0.01))
    )
    cost_params: CollisionCostParams = field(default_factory=CollisionCostParams)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240))
    extrinsics: Pose = field(
        default_factory=lambda: Pose(np.zeros(3), UnitQuaternion.from_matrix(LINE_CAMERA_ROTATION))
    )
    depth_intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(200.0, 200.0, 160.0, 120.0, 320, 240)
    )
    depth_extrinsics: Pose = field(
        default_factory=lambda: Pose(np.zeros(3), UnitQuaternion.from_matrix(DEPTH_CAMERA_ROTATION))
    )
    depth_baseline: float = 0.2
    detector: OracleConfig = field(default_factory=OracleConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    quad: QuadParams = field(default_factory=QuadParams)

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(3))
        object.__setattr__(self, "end", np.asarray(self.end, dtype=float).reshape(3))
        if self.controller not in CONTROLLERS:
            raise ScenarioError(f"unknown controller {self.controller!r}")
        if self.perception not in PERCEPTION_SOURCES:
            raise ScenarioError(f"unknown perception source {self.perception!r}")
        if self.obstacle_source not in OBSTACLE_SOURCES:
            raise ScenarioError(f"unknown obstacle source {self.obstacle_source!r}")
        if not 0 <= self.target_line < len(self.scene.lines):
            raise ScenarioError("tracked line index does not refer to a scene line")
        if not self.speed > 0 or not self.dt > 0 or self.horizon < 1:
            raise ScenarioError("speed, dt and horizon must be positive")

    @property
    def masts(self) -> tuple[EllipsoidObstacle, ...]:
        return self.scene.masts

    @property
    def line(self) -> PowerLine3D:
        return self.scene.lines[self.target_line].line

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


# ---------------------------------------------------------------------------
# defaults


def mast_row(x_positions=(0.0, 7.5, 15.0), y: float = 0.0, z: float = 2.0, semi_axes=(0.3, 0.3, 2.0)):
    return tuple(EllipsoidObstacle([x, y, z], semi_axes, render_height=2.0 * z) for x in x_positions)


def default_scenario(**changes) -> Scenario:
    """Three masts A/B/C 7.5 m apart, the line 2 m beside them, end 1 m before C."""
    line = SceneLine(PowerLine3D(np.array([-10.0, -2.0, 2.0]), np.array([25.0, -2.0, 2.0])), 0.04)
    masts = mast_row()
    base = Scenario(
        name="masts",
        scene=SceneModel((line,), masts),
        target_line=0,
        d_s=2.0,
        start=np.array([-2.0, 1.0, 2.0]),
        end=np.array([15.0 - 0.3 - 1.0, 0.0, 2.0]),
    )
    return replace(base, **changes)


# ---------------------------------------------------------------------------
# INI reading / writing


def _vec(text: str) -> np.ndarray:
    return np.array([float(x) for x in text.replace(",", " ").split()])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return v
    return ", ".join(repr(float(x)) for x in np.asarray(v, dtype=float).ravel())


def _camera_items(K: CameraIntrinsics, ext: Pose) -> dict:
    return {
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy, "width": K.width, "height": K.height,
        "rotation": ext.rotation.as_array(), "translation": ext.translation,
    }  # fmt: skip


def scenario_to_config(s: Scenario) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    sections = {
        "scenario": {
            "name": s.name, "controller": s.controller, "perception": s.perception,
            "obstacles": s.obstacle_source, "seed": s.seed, "max_time": s.sim.max_time,
            "masts": len(s.scene.masts),
        },
        "reference": {"start": s.start, "end": s.end, "speed": s.speed, "yaw": s.yaw},
        "track": {"line": s.target_line, "d_s": s.d_s},
        "camera": _camera_items(s.intrinsics, s.extrinsics),
        "depth_camera": {**_camera_items(s.depth_intrinsics, s.depth_extrinsics), "baseline": s.depth_baseline},
        "render": {
            "background": s.scene.background, "mast_intensity": s.scene.mast_intensity,
            "noise_sigma": s.scene.noise_sigma,
        },
        "detector": {"sigma_px": s.detector.sigma_px, "c_max": s.detector.c_max, "gate": s.detector.gate},
        "weights": {
            "q_x": s.weights.Q_x, "q_xn": s.weights.Q_xN, "r": s.weights.R, "q_p": s.weights.Q_p,
            "q_alpha": s.weights.Q_alpha, "alpha_max": s.weights.alpha_max, "c_coupling": s.weights.c_coupling,
        },
        "solver": {
            "horizon": s.horizon, "dt": s.dt, "k_nearest": s.k_nearest,
            "normalization": s.normalization, "distance_from": s.distance_from,
        },
        "chance": {"delta": s.cc_params.delta, "r": s.cc_params.r, "sigma_b": np.diag(s.cc_params.Sigma_B)},
        "cost": {"q_o": s.cost_params.Q_o, "lambda_o": s.cost_params.lambda_o, "r_o": s.cost_params.r_o},
        "sim": {
            "substeps": s.sim.substeps, "rate_gain": s.sim.rate_gain, "collision_radius": s.sim.collision_radius,
            "stop_on_collision": s.sim.stop_on_collision, "settle_time": s.sim.settle_time,
        },
        "quad": s.quad.to_mapping(),
    }  # fmt: skip
    for k, sl in enumerate(s.scene.lines):
        sections[f"line.{k}"] = {
            "p1": sl.line.p_WL1, "p2": sl.line.p_WL2, "thickness": sl.thickness, "intensity": sl.intensity,
        }  # fmt: skip
    for k, m in enumerate(s.scene.masts):
        sections[f"mast.{chr(ord('A') + k) if k < 26 else k}"] = {
            "center": m.center, "semi_axes": m.semi_axes,
            "rotation": UnitQuaternion.from_matrix(m.rotation).as_array(),
            "covariance": np.diag(m.covariance), "render_height": m.render_height,
        }  # fmt: skip
    for name, items in sections.items():
        cp[name] = {k: _fmt(v) for k, v in items.items()}
    return cp


def dumps(s: Scenario) -> str:
    buf = io.StringIO()
    scenario_to_config(s).write(buf)
    return buf.getvalue()


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dumps(s), encoding="utf-8")


def _camera(sec, K0: CameraIntrinsics, ext0: Pose):
    K = CameraIntrinsics(
        sec.getfloat("fx", K0.fx), sec.getfloat("fy", K0.fy), sec.getfloat("cx", K0.cx),
        sec.getfloat("cy", K0.cy), sec.getint("width", K0.width), sec.getint("height", K0.height),
    )  # fmt: skip
    rot = UnitQuaternion.from_array(_vec(sec["rotation"])) if "rotation" in sec else ext0.rotation
    trans = _vec(sec["translation"]) if "translation" in sec else ext0.translation
    return K, Pose(trans, rot)


def loads(text: str) -> Scenario:
    cp = configparser.ConfigParser()
    cp.read_string(text)
    return scenario_from_config(cp)


def load_scenario(path) -> Scenario:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(path)
    return loads(p.read_text(encoding="utf-8"))


def scenario_from_config(cp: configparser.ConfigParser) -> Scenario:
    d = default_scenario()
    get = lambda name: cp[name] if cp.has_section(name) else {}  # noqa: E731
    sc = cp["scenario"] if cp.has_section("scenario") else configparser.SectionProxy(cp, "DEFAULT")

    line_secs = sorted((s for s in cp.sections() if s.startswith("line.")), key=lambda s: int(s.split(".", 1)[1]))
    if line_secs:
        lines = tuple(
            SceneLine(
                PowerLine3D(_vec(cp[s]["p1"]), _vec(cp[s]["p2"])),
                cp[s].getfloat("thickness", 0.04),
                cp[s].getfloat("intensity", 1.0),
            )
            for s in line_secs
        )
    else:
        lines = d.scene.lines
    mast_secs = [s for s in cp.sections() if s.startswith("mast.")]
    if mast_secs or cp.has_option("scenario", "masts"):
        masts = []
        for s in mast_secs:
            sec = cp[s]
            masts.append(
                EllipsoidObstacle(
                    _vec(sec["center"]),
                    _vec(sec["semi_axes"]),
                    rotation=_vec(sec.get("rotation", "1, 0, 0, 0")),
                    covariance=_vec(sec.get("covariance", "0, 0, 0")),
                    render_height=float(sec["render_height"]) if "render_height" in sec else None,
                )
            )
        masts = tuple(masts)
        if cp.has_option("scenario", "masts") and cp["scenario"].getint("masts") != len(masts):
            raise ScenarioError("mast count does not match the [mast.*] sections")
    else:
        masts = d.scene.masts
    rs = get("render")
    scene = SceneModel(
        lines,
        masts,
        float(rs.get("background", d.scene.background)),
        float(rs.get("mast_intensity", d.scene.mast_intensity)),
        float(rs.get("noise_sigma", d.scene.noise_sigma)),
    )

    ref = get("reference")
    tr = get("track")
    K, ext = _camera(cp["camera"], d.intrinsics, d.extrinsics) if cp.has_section("camera") else (d.intrinsics, d.extrinsics)
    if cp.has_section("depth_camera"):
        DK, dext = _camera(cp["depth_camera"], d.depth_intrinsics, d.depth_extrinsics)
        baseline = cp["depth_camera"].getfloat("baseline", d.depth_baseline)
    else:
        DK, dext, baseline = d.depth_intrinsics, d.depth_extrinsics, d.depth_baseline
    det = get("detector")
    detector = OracleConfig(
        float(det.get("sigma_px", d.detector.sigma_px)),
        float(det.get("c_max", d.detector.c_max)),
        gate=float(det.get("gate", d.detector.gate)),
    )
    w = get("weights")
    W0 = d.weights
    weights = MpcWeights(
        Q_x=_vec(w["q_x"]) if "q_x" in w else W0.Q_x,
        Q_xN=_vec(w["q_xn"]) if "q_xn" in w else W0.Q_xN,
        R=_vec(w["r"]) if "r" in w else W0.R,
        Q_p=_vec(w["q_p"]).reshape(-1, 3).squeeze() if "q_p" in w else W0.Q_p,
        Q_alpha=float(w.get("q_alpha", W0.Q_alpha)),
        alpha_max=float(w.get("alpha_max", W0.alpha_max)),
        c_coupling=float(w.get("c_coupling", W0.c_coupling)),
    )
    so = get("solver")
    ch = get("chance")
    co = get("cost")
    si = get("sim")
    sim = SimConfig(
        int(si.get("substeps", d.sim.substeps)),
        float(si.get("rate_gain", d.sim.rate_gain)),
        float(si.get("collision_radius", d.sim.collision_radius)),
        str(si.get("stop_on_collision", "true")).strip().lower() in ("1", "true", "yes", "on"),
        float(si.get("settle_time", d.sim.settle_time)),
        float(sc.get("max_time", d.sim.max_time)),
    )
    quad = QuadParams.from_mapping(dict(cp["quad"])) if cp.has_section("quad") else d.quad
    return Scenario(
        name=sc.get("name", d.name),
        scene=scene,
        target_line=int(tr.get("line", 0)),
        d_s=float(tr.get("d_s", d.d_s)),
        start=_vec(ref["start"]) if "start" in ref else d.start,
        end=_vec(ref["end"]) if "end" in ref else d.end,
        speed=float(ref.get("speed", d.speed)),
        yaw=float(ref.get("yaw", d.yaw)),
        controller=sc.get("controller", d.controller),
        perception=sc.get("perception", d.perception),
        obstacle_source=sc.get("obstacles", d.obstacle_source),
        seed=int(sc.get("seed", d.seed)),
        weights=weights,
        horizon=int(so.get("horizon", d.horizon)),
        dt=float(so.get("dt", d.dt)),
        k_nearest=int(so.get("k_nearest", d.k_nearest)),
        normalization=so.get("normalization", d.normalization),
        distance_from=so.get("distance_from", d.distance_from),
        cc_params=ChanceConstraintParams(
            float(ch.get("delta", d.cc_params.delta)),
            float(ch.get("r", d.cc_params.r)),
            _vec(ch["sigma_b"]) if "sigma_b" in ch else d.cc_params.Sigma_B,
        ),
        cost_params=CollisionCostParams(
            float(co.get("q_o", d.cost_params.Q_o)),
            float(co.get("lambda_o", d.cost_params.lambda_o)),
            float(co.get("r_o", d.cost_params.r_o)),
        ),
        intrinsics=K,
        extrinsics=ext,
        depth_intrinsics=DK,
        depth_extrinsics=dext,
        depth_baseline=baseline,
        detector=detector,
        sim=sim,
        quad=quad,
    )


def _visibility_scenario(name: str, p1, p2, masts=()) -> Scenario:
    line = SceneLine(PowerLine3D(np.asarray(p1, dtype=float), np.asarray(p2, dtype=float)), 0.04)
    return default_scenario(
        name=name,
        scene=SceneModel((line,), tuple(masts)),
        start=np.array([-2.0, 0.0, 2.0]),
        perception="oracle",
    )


def visibility_suite() -> list[Scenario]:
    """Four scenes where the straight reference does not centre the line.

    simple: line 1 m above flight height; warehouse: sloped line and a mast
    beside the path; forest: high line behind two trees; village: line
    diverging sideways with a row of masts on the far side.
    """
    return [
        _visibility_scenario("simple", (-10, -2, 3), (25, -2, 3)),
        _visibility_scenario("warehouse", (-10, -2, 1.5), (25, -2, 3.5), mast_row((7.5,), y=-1.0)),
        _visibility_scenario("forest", (-10, -2.5, 3.3), (25, -2.5, 3.3), mast_row((3.0, 9.0), y=1.0)),
        _visibility_scenario("village", (-10, -1.5, 2.8), (25, -3.5, 2.8), mast_row((0.0, 7.5, 15.0), y=0.9)),
    ]
