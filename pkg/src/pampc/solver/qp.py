"""Dense convex QP wrapper with box bounds, inequalities and soft fallback."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import quadprog

REGULARIZATION = 1e-9
SLACK_L1 = 1e4
SLACK_L2 = 1e-2


@dataclass
class QpResult:
    x: np.ndarray
    status: str  # "optimal", "softened" or "failed"
    slack: np.ndarray
    iterations: int


def solve_box_qp(
    H: np.ndarray,
    g: np.ndarray,
    lb: np.ndarray,
    ub: np.ndarray,
    C: np.ndarray | None = None,
    d: np.ndarray | None = None,
) -> QpResult:
    """Minimize ``0.5 x^T H x + g^T x`` s.t. ``lb <= x <= ub`` and ``C x <= d``.

    When the hard problem is infeasible the general inequalities are
    relaxed with non-negative slacks carrying a large L1 penalty; the box
    bounds are never relaxed.  The result is clipped onto the box.
    """
    n = g.shape[0]
    H = 0.5 * (H + H.T) + REGULARIZATION * np.eye(n)
    finite_lb = np.isfinite(lb)
    finite_ub = np.isfinite(ub)
    eye = np.eye(n)
    # quadprog expects constraints as C_q^T x >= b_q
    blocks = [eye[:, finite_lb], -eye[:, finite_ub]]
    rhs = [lb[finite_lb], -ub[finite_ub]]
    m = 0 if C is None else C.shape[0]
    if m:
        blocks.append(-C.T)
        rhs.append(-d)
    Cq = np.hstack(blocks) if blocks else np.zeros((n, 0))
    bq = np.concatenate(rhs) if rhs else np.zeros(0)
    try:
        x, _, _, it, _, _ = quadprog.solve_qp(H, -g, Cq, bq, 0)
        return QpResult(np.clip(x, lb, ub), "optimal", np.zeros(m), int(it[0]))
    except ValueError:
        if not m:
            return QpResult(np.clip(np.zeros(n), lb, ub), "failed", np.zeros(0), 0)

    # soft version: variables [x, s], C x - s <= d, s >= 0
    Hs = np.zeros((n + m, n + m))
    Hs[:n, :n] = H
    Hs[n:, n:] = SLACK_L2 * np.eye(m)
    gs = np.concatenate([g, np.full(m, SLACK_L1)])
    Cs = np.zeros((n + m, Cq.shape[1] + m))
    Cs[:n, : Cq.shape[1]] = Cq
    Cs[n:, Cq.shape[1] - m : Cq.shape[1]] = np.eye(m)
    Cs[n:, Cq.shape[1] :] = np.eye(m)
    bs = np.concatenate([bq, np.zeros(m)])
    try:
        xs, _, _, it, _, _ = quadprog.solve_qp(Hs, -gs, Cs, bs, 0)
    except ValueError:
        return QpResult(np.clip(np.zeros(n), lb, ub), "failed", np.zeros(m), 0)
    return QpResult(np.clip(xs[:n], lb, ub), "softened", xs[n:], int(it[0]))
