"""CSV / JSON / SVG emission of rollout logs and experiment summaries.

CSV floats are written with ``repr`` (shortest round-trip form), so parsing
a file reproduces the logged array bit for bit.  Wall-clock timing is not
part of the CSV; it goes to the JSON summary, keeping CSV files identical
across runs with the same seed.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..obstacles import EllipsoidObstacle
from .simulate import LOG_COLUMNS, RolloutLog


def _fmt(v: float) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(v)


def write_table_csv(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write rows of numbers (or strings) under a header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def write_log_csv(log: RolloutLog, path) -> Path:
    return write_table_csv(path, LOG_COLUMNS, log.data.tolist())


def read_log_csv(path) -> np.ndarray:
    """Numeric log array of a file written by :func:`write_log_csv`."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != LOG_COLUMNS:
        raise ValueError(f"{path}: not a rollout log")
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(LOG_COLUMNS))


def summarize(data: np.ndarray) -> dict:
    """Statistics of a numeric log; identical whether computed live or from the CSV."""
    data = np.asarray(data, dtype=float).reshape(-1, len(LOG_COLUMNS))
    col = lambda name: data[:, LOG_COLUMNS.index(name)]  # noqa: E731
    n = data.shape[0]
    if n == 0:
        return {"steps": 0}
    return {
        "steps": n,
        "duration": float(col("t")[-1]),
        "collisions": int(np.count_nonzero(col("collision"))),
        "min_clearance": float(col("clearance").min()),
        "mean_similarity": float(col("similarity").mean()),
        "detected_fraction": float(col("line_detected").mean()),
        "lost_track_steps": int(np.count_nonzero(col("lost_track"))),
        "softened_qps": int(np.count_nonzero(col("qp_status") == 1)),
        "failed_qps": int(np.count_nonzero(col("qp_status") == 2)),
        "alpha_max": float(col("alpha_max").max()),
        "alpha_median": float(np.median(col("alpha_max"))),
        "final_position": [float(v) for v in data[-1, 2:5]],
    }


def log_summary(log: RolloutLog) -> dict:
    out = {"scenario": log.scenario, "controller": log.controller, "seed": log.seed, **summarize(log.data)}
    if len(log):
        out["final_position_error"] = float(np.linalg.norm(log.positions[-1] - log.reference_end))
        out["update_ms_mean"] = float(log.update_us.mean() / 1e3)
        out["solver_ms_mean"] = float(log.solver_us.mean() / 1e3)
    out["events"] = list(log.events)
    return out


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def default(o):
        if isinstance(o, np.generic):
            return o.item()
        if isinstance(o, np.ndarray):
            return o.tolist()
        raise TypeError(f"not serializable: {type(o)}")

    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=default) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# SVG

_PALETTE = ((0.0, (49, 54, 149)), (0.5, (254, 224, 144)), (1.0, (165, 0, 38)))


def _alpha_color(a: float) -> str:
    a = min(max(float(a), 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(_PALETTE, _PALETTE[1:]):
        if a <= t1:
            f = (a - t0) / (t1 - t0)
            rgb = [round(x0 + f * (x1 - x0)) for x0, x1 in zip(c0, c1)]
            return "#%02x%02x%02x" % tuple(rgb)
    return "#%02x%02x%02x" % _PALETTE[-1][1]


def trajectory_svg(
    logs: Sequence[RolloutLog],
    masts: Sequence[EllipsoidObstacle],
    alpha_max: float = 1.0,
    scale: float = 40.0,
    margin: float = 1.0,
) -> str:
    """Top-down view: one polyline per rollout, segments coloured by alpha.

    Every rollout is one ``<g class="trajectory">`` group holding a grey
    ``<polyline>`` and its alpha-coloured segments; masts are drawn as their
    ellipse footprints.
    """
    pts = [lg.positions[:, :2] for lg in logs if len(lg)]
    xy = np.vstack(pts + [m.center[None, :2] for m in masts]) if (pts or masts) else np.zeros((1, 2))
    lo = xy.min(axis=0) - margin
    hi = xy.max(axis=0) + margin
    W, H = (hi - lo) * scale

    def tx(p):
        return (p[0] - lo[0]) * scale, (hi[1] - p[1]) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W:.1f}" height="{H:.1f}" viewBox="0 0 {W:.1f} {H:.1f}">',
        f'<rect width="{W:.1f}" height="{H:.1f}" fill="white"/>',
    ]
    for m in masts:
        cx, cy = tx(m.center)
        R = m.rotation
        ang = math.degrees(math.atan2(R[0, 1], R[0, 0]))
        out.append(
            f'<ellipse class="mast" cx="{cx:.2f}" cy="{cy:.2f}" rx="{m.semi_axes[0] * scale:.2f}" '
            f'ry="{m.semi_axes[1] * scale:.2f}" transform="rotate({-ang:.2f} {cx:.2f} {cy:.2f})" fill="#555"/>'
        )
    for lg in logs:
        P = lg.positions[:, :2]
        a = lg.column("alpha_max") / alpha_max
        coords = " ".join("%.2f,%.2f" % tx(p) for p in P)
        out.append(f'<g class="trajectory" data-controller="{lg.controller}" data-seed="{lg.seed}">')
        out.append(f'<polyline points="{coords}" fill="none" stroke="#bbb" stroke-width="1"/>')
        for k in range(len(P) - 1):
            (x0, y0), (x1, y1) = tx(P[k]), tx(P[k + 1])
            out.append(
                f'<line x1="{x0:.2f}" y1="{y0:.2f}" x2="{x1:.2f}" y2="{y1:.2f}" '
                f'stroke="{_alpha_color(a[k])}" stroke-width="2"/>'
            )
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(logs, masts, path, alpha_max: float = 1.0) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(trajectory_svg(logs, masts, alpha_max), encoding="utf-8")
    return path


def emit_results(logs: Sequence[RolloutLog], out_dir, masts=(), stem: str = "rollout", alpha_max: float = 1.0):
    """Per-rollout CSVs, one JSON summary and one SVG under ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for i, lg in enumerate(logs):
        name = f"{stem}_{lg.controller}_{i:03d}.csv" if len(logs) > 1 else f"{stem}_{lg.controller}.csv"
        files.append(write_log_csv(lg, out_dir / name))
    files.append(write_json([log_summary(lg) for lg in logs], out_dir / f"{stem}_summary.json"))
    files.append(write_svg(logs, masts, out_dir / f"{stem}.svg", alpha_max))
    return files
