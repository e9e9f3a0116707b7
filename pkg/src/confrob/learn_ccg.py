"""Column-and-constraint generation for exact set learning at desk scale.

Rows are parameterised around a fixed template ``t_k`` as
``w_k = t_k + s_k t_k_perp`` with ``|s_k| <= s_max``. This keeps the
master a mixed-integer *linear* program and guarantees positive spanning
for every feasible point (the tilt never closes an angular gap of pi).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .conformal import SetParams, big_m, conformal_radius, quantile_rank
from .geometry import Halfspaces, Polytope, uniform_template
from .robust import ObjectiveSpec, minimax_over_points, worst_case
from .solver import EQ, LE, LinearProgram, MixedIntegerProgram, solve_milp

DUPLICATE_TOL = 1e-8
FACE_WEIGHT = 0.1
DEFAULT_TILT = 0.3


class CcgError(RuntimeError):
    pass


@dataclass
class MasterSolution:
    W: np.ndarray
    b: np.ndarray
    z: np.ndarray
    q: float
    t: np.ndarray
    eta: float
    nodes: int = 0


@dataclass
class CcgState:
    scenarios: list[np.ndarray] = field(default_factory=list)
    iteration: int = 0
    master: MasterSolution | None = None
    zeta: float = math.nan


@dataclass
class CcgResult:
    params: SetParams  # unit-norm rows; the learned set is its zero sublevel set
    raw: MasterSolution
    gap: float
    converged: bool
    iterations: int
    eta_history: list[float]
    zeta_history: list[float]
    scenarios: list[np.ndarray]


def tilt_limit(K: int) -> float:
    """Largest row tilt keeping the uniform 2-D template positively spanning."""
    return min(1.0, 0.95 * math.tan(math.pi / 2 - math.pi / K))


def default_tilt(K: int) -> float:
    # 0.3 keeps adjacent box faces >= ~57 degrees apart, avoiding sliver vertices
    return min(DEFAULT_TILT, tilt_limit(K))


def _perp(T: np.ndarray) -> np.ndarray:
    return np.column_stack([-T[:, 1], T[:, 0]])


def master_solve(scenarios, residuals, center, obj: ObjectiveSpec, alpha: float,
                 b_max: float = 1.0, K: int = 4, s_max: float | None = None,
                 node_limit: int = 10**6, tiebreak: str = "directional") -> MasterSolution:
    """Restricted master MILP.

    Variable layout: ``[s (K), b (K), z (p), r, t (n), eta]``. With no
    scenarios ``eta`` is unconstrained and reported as ``-inf``.

    The optimal ``eta`` is computed first; among solutions attaining it a
    secondary LP objective picks the geometry. ``"directional"`` weights
    each face distance ``r - b_k`` by how much the face looks along the
    cost direction ``Q^T z`` (plus a small uniform weight), ``"radius"``
    minimises ``r`` and ``"none"`` keeps the first optimum found.
    """
    if tiebreak not in ("directional", "radius", "none"):
        raise ValueError(f"unknown tiebreak {tiebreak!r}")
    if obj.kind != "linear":
        raise ValueError("CCG master requires a linear objective")
    E = np.atleast_2d(np.asarray(residuals, float))
    n, d = E.shape
    if d != 2:
        raise ValueError("CCG master is implemented for d = 2")
    center = np.asarray(center, float)
    p = obj.n_decisions
    T = uniform_template(K, d)
    P = _perp(T)
    if s_max is None:
        s_max = default_tilt(K)
    rho = math.sqrt(1.0 + s_max**2)
    M = big_m(E, b_max, rho)
    r_lo = -(rho * float(np.max(np.linalg.norm(E, axis=1))) + b_max)
    c_n = quantile_rank(n, alpha)

    iS, iB, iZ, iR = 0, K, 2 * K, 2 * K + p
    iT = iR + 1
    iE = iT + n
    nv = iE + 1
    rows, rels, rhs = [], [], []

    def add(row, rel, val):
        rows.append(row)
        rels.append(rel)
        rhs.append(val)

    # calibration: t_k.eps_i + s_k (p_k.eps_i) + b_k - r + M t_i <= M
    for i in range(n):
        for k in range(K):
            row = np.zeros(nv)
            row[iS + k] = P[k] @ E[i]
            row[iB + k] = 1.0
            row[iR] = -1.0
            row[iT + i] = M
            add(row, LE, M - T[k] @ E[i])
    row = np.zeros(nv)
    row[iT:iT + n] = -1.0
    add(row, LE, -float(c_n))
    row = np.zeros(nv)
    row[iZ:iZ + p] = 1.0
    add(row, EQ, 1.0)
    for y in scenarios:
        delta = np.asarray(y, float) - center
        for k in range(K):
            row = np.zeros(nv)
            row[iS + k] = P[k] @ delta
            row[iB + k] = 1.0
            row[iR] = -1.0
            add(row, LE, -(T[k] @ delta))
        row = np.zeros(nv)
        row[iZ:iZ + p] = obj.c + obj.Q @ np.asarray(y, float)
        row[iE] = -1.0
        add(row, LE, 0.0)

    bounds = ([(-s_max, s_max)] * K + [(-b_max, b_max)] * K + [(0.0, np.inf)] * p
              + [(r_lo, np.inf)] + [(0.0, 1.0)] * n + [(-np.inf, np.inf)])
    A = np.array(rows)
    binaries = range(iT, iT + n)

    def solve(cost, extra=None):
        A_, rels_, rhs_ = A, rels, rhs
        if extra is not None:
            A_ = np.vstack([A, extra[0]])
            rels_ = rels + [LE]
            rhs_ = rhs + [extra[1]]
        res = solve_milp(MixedIntegerProgram(LinearProgram(cost, A_, rels_, rhs_, bounds), binaries),
                         node_limit=node_limit)
        if res.status == "node_limit":
            raise CcgError("master MILP hit the node limit")
        if res.status != "optimal":
            raise CcgError(f"master MILP ended with status {res.status}")
        return res

    def secondary(z):
        # faces facing the cost direction pay their distance r - b_k
        a = obj.Q.T @ z
        wts = np.maximum(T @ a, 0.0) + FACE_WEIGHT
        cost = np.zeros(nv)
        cost[iR] = wts.sum()
        cost[iB:iB + K] = -wts
        return cost

    if not scenarios:
        bounds[iE] = (0.0, 0.0)
        z0 = minimax_over_points(center[None, :], obj)[0]
        res = solve(secondary(z0) if tiebreak == "directional" else _unit(nv, iR))
        eta = -math.inf
    else:
        res = solve(_unit(nv, iE))
        eta = float(res.primal[iE])
        if tiebreak != "none":
            z1 = res.primal[iZ:iZ + p]
            cost2 = secondary(z1) if tiebreak == "directional" else _unit(nv, iR)
            res = solve(cost2, (_unit(nv, iE), eta + 1e-12 * max(1.0, abs(eta))))
    x = res.primal
    s = x[iS:iS + K]
    W = T + s[:, None] * P
    return MasterSolution(W, x[iB:iB + K].copy(), x[iZ:iZ + p].copy(), float(x[iR]),
                          x[iT:iT + n].copy(), eta, res.node_count)


def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def separation(W, b, z, q: float, center, obj: ObjectiveSpec) -> tuple[float, np.ndarray]:
    """Worst-case outcome over the master's current set."""
    p = Polytope(Halfspaces(W, b), center, q)
    return worst_case(z, p, obj)


def normalized_params(W, b, q: float) -> SetParams:
    """Unit-norm parameters whose zero sublevel set equals ``{W e + b <= q}``."""
    norms = np.linalg.norm(W, axis=1)
    return SetParams(Halfspaces(W / norms[:, None], (np.asarray(b) - q) / norms))


def train_ccg(residuals, center, obj: ObjectiveSpec, alpha: float = 0.1, epsilon: float = 1e-4,
              max_iters: int = 50, b_max: float = 1.0, K: int = 4, s_max: float | None = None,
              tiebreak: str = "directional") -> CcgResult:
    """Alternate master and separation until ``zeta - eta <= epsilon``.

    Returns the last master's set (normalised), the final gap and the
    ``eta``/``zeta`` histories. Stopping on ``max_iters`` or on a repeated
    scenario without closing the gap sets ``converged = False`` and warns.
    """
    E = np.atleast_2d(np.asarray(residuals, float))
    center = np.asarray(center, float)
    state = CcgState()
    etas, zetas = [], []
    gap = math.inf
    converged = False
    while state.iteration < max_iters:
        m = master_solve(state.scenarios, E, center, obj, alpha, b_max, K, s_max, tiebreak=tiebreak)
        state.master = m
        zeta, y = separation(m.W, m.b, m.z, m.q, center, obj)
        state.zeta = zeta
        etas.append(m.eta)
        zetas.append(zeta)
        state.iteration += 1
        gap = zeta - m.eta
        if gap <= epsilon:
            converged = True
            break
        if any(np.max(np.abs(y - s)) <= DUPLICATE_TOL for s in state.scenarios):
            break
        state.scenarios.append(y)
    if not converged:
        warnings.warn(f"CCG stopped with gap {gap:.3g} > epsilon after {state.iteration} iterations",
                      RuntimeWarning, stacklevel=2)
    m = state.master
    return CcgResult(normalized_params(m.W, m.b, m.q), m, gap, converged, state.iteration,
                     etas, zetas, list(state.scenarios))


def template_robust_value(residuals, center, obj: ObjectiveSpec, alpha: float = 0.1, K: int = 4) -> float:
    """Robust value of the fixed template calibrated on the same residuals."""
    from .conformal import scores
    from .geometry import enumerate_vertices

    E = np.atleast_2d(residuals)
    params = SetParams.from_arrays(uniform_template(K, E.shape[1]))
    r = conformal_radius(scores(params, E), alpha)
    V = np.array(enumerate_vertices(Polytope(params.halfspaces, center, r)))
    return minimax_over_points(V, obj)[1]
