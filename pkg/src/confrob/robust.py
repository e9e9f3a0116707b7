"""Inner worst-case maximisation and outer robust decisions on the simplex."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Polytope, vertices_with_active
from .solver import EQ, LE, LinearProgram, solve_lp

KINDS = ("linear", "quadratic", "newsvendor")
TERNARY_TOL = 1e-8


class EmptySetError(ValueError):
    pass


class InconsistentDualError(RuntimeError):
    """Dual LP infeasible although the primal set is bounded."""


@dataclass(frozen=True)
class Ball:
    """Euclidean ball, used by the conformal-ball baseline."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float).ravel())
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.center.size

    @property
    def is_whole_space(self) -> bool:
        return math.isinf(self.radius)

    def contains(self, u, tol: float = 1e-9) -> bool:
        return bool(np.linalg.norm(np.asarray(u, float) - self.center) <= self.radius + tol)

    def volume(self) -> float:
        d = self.d
        return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * self.radius**d


@dataclass(frozen=True)
class ObjectiveSpec:
    """Decision loss ``g(z, u)``.

    * ``linear``: ``(c + Q u) . z``
    * ``quadratic``: linear plus ``beta (z_1 - z_2)^2``
    * ``newsvendor``: ``sum_j c_o (z_j - u_j)_+ + c_u (u_j - z_j)_+``
    """

    kind: str
    c: np.ndarray | None = None
    Q: np.ndarray | None = None
    beta: float = 0.0
    c_o: float = 0.3
    c_u: float = 0.7
    d: int = 2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "newsvendor":
            if self.c_o <= 0 or self.c_u <= 0:
                raise ValueError("newsvendor costs c_o and c_u must be positive")
            return
        c = np.zeros(self.d) if self.c is None else np.asarray(self.c, float).ravel()
        Q = np.eye(c.size) if self.Q is None else np.array(self.Q, float, ndmin=2)
        if Q.shape[0] != c.size:
            raise ValueError(f"Q has {Q.shape[0]} rows but c has {c.size} entries")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "d", Q.shape[1])

    @classmethod
    def linear(cls, c=(-0.08, 0.0), Q=None) -> "ObjectiveSpec":
        return cls("linear", c=c, Q=Q)

    @classmethod
    def quadratic(cls, c=(-0.08, 0.0), beta=0.08, Q=None) -> "ObjectiveSpec":
        return cls("quadratic", c=c, Q=Q, beta=beta)

    @classmethod
    def newsvendor(cls, c_o=0.3, c_u=0.7, d=2) -> "ObjectiveSpec":
        return cls("newsvendor", c_o=c_o, c_u=c_u, d=d)

    @property
    def n_decisions(self) -> int:
        return self.d if self.kind == "newsvendor" else self.c.size

    def value(self, z, u) -> float:
        return float(self.values(z, np.atleast_2d(u))[0])

    def values(self, z, U) -> np.ndarray:
        """``g(z, u)`` for every row ``u`` of ``U``."""
        z = np.asarray(z, float)
        U = np.atleast_2d(np.asarray(U, float))
        if self.kind == "newsvendor":
            diff = z - U
            return np.sum(self.c_o * np.maximum(diff, 0) + self.c_u * np.maximum(-diff, 0), axis=1)
        out = self.c @ z + U @ (self.Q.T @ z)
        if self.kind == "quadratic":
            out = out + self.beta * (z[0] - z[1]) ** 2
        return out

    def pieces(self, z) -> tuple[np.ndarray, np.ndarray]:
        """Affine pieces ``(A, a0)`` with ``g(z, u) = max_p A[p] . u + a0[p]``."""
        z = np.asarray(z, float)
        if self.kind == "newsvendor":
            A, a0 = [], []
            for pattern in itertools.product((0, 1), repeat=self.d):
                pat = np.array(pattern)
                # 1 -> underage branch c_u (u - z), 0 -> overage branch c_o (z - u)
                A.append(np.where(pat == 1, self.c_u, -self.c_o))
                a0.append(float(np.sum(np.where(pat == 1, -self.c_u * z, self.c_o * z))))
            return np.array(A), np.array(a0)
        const = float(self.c @ z)
        if self.kind == "quadratic":
            const += self.beta * (z[0] - z[1]) ** 2
        return (self.Q.T @ z)[None, :], np.array([const])

    def grad_u(self, z, u) -> np.ndarray:
        z = np.asarray(z, float)
        if self.kind == "newsvendor":
            return np.where(z > u, -self.c_o, self.c_u)
        return self.Q.T @ z

    def grad_z(self, z, u) -> np.ndarray:
        z = np.asarray(z, float)
        u = np.asarray(u, float)
        if self.kind == "newsvendor":
            return np.where(z > u, self.c_o, -self.c_u)
        g = self.c + self.Q @ u
        if self.kind == "quadratic":
            g = g.copy()
            g[0] += 2 * self.beta * (z[0] - z[1])
            g[1] -= 2 * self.beta * (z[0] - z[1])
        return g


@dataclass(frozen=True)
class FeasibleRegion:
    """Probability simplex ``{z >= 0, sum z = 1}`` of dimension ``p``."""

    p: int = 2
    kind: str = field(default="simplex")

    def contains(self, z, tol: float = 1e-9) -> bool:
        z = np.asarray(z, float)
        return bool(z.size == self.p and np.all(z >= -tol) and abs(z.sum() - 1.0) <= tol)


def _vertices(set_) -> list[np.ndarray]:
    if set_.is_whole_space:
        raise ValueError("worst case over the whole space is unbounded; pass a bounding box")
    verts = [v for v, _ in vertices_with_active(set_)]
    if not verts:
        raise EmptySetError("uncertainty set is empty")
    return verts


def worst_case(z, set_, obj: ObjectiveSpec) -> tuple[float, np.ndarray]:
    """``max_u g(z, u)`` over a polytope (or ball) and a maximising point.

    For polytopes the maximiser is a vertex since ``g(z, .)`` is convex.
    """
    z = np.asarray(z, float)
    if isinstance(set_, Ball):
        return _worst_case_ball(z, set_, obj)
    V = np.array(_vertices(set_))
    vals = obj.values(z, V)
    i = int(np.argmax(vals))
    return float(vals[i]), V[i]


def worst_case_active(z, p: Polytope, obj: ObjectiveSpec):
    """Like :func:`worst_case` but also returns the active constraint indices."""
    z = np.asarray(z, float)
    va = vertices_with_active(p, check=False)
    if not va:
        raise EmptySetError("uncertainty set is empty")
    V = np.array([v for v, _ in va])
    vals = obj.values(z, V)
    i = int(np.argmax(vals))
    return float(vals[i]), V[i], va[i][1]


def _worst_case_ball(z, ball: Ball, obj: ObjectiveSpec) -> tuple[float, np.ndarray]:
    if ball.is_whole_space:
        raise ValueError("worst case over the whole space is unbounded; pass a bounding box")
    A, a0 = obj.pieces(z)
    norms = np.linalg.norm(A, axis=1)
    vals = a0 + A @ ball.center + ball.radius * norms
    i = int(np.argmax(vals))
    direction = A[i] / norms[i] if norms[i] > 0 else np.zeros(ball.d)
    return float(vals[i]), ball.center + ball.radius * direction


def worst_case_dual_linear(z, p: Polytope, obj: ObjectiveSpec) -> float:
    """Inner maximum for a linear ``g`` through its LP dual.

    ``min_{lam >= 0} (r 1 - b + W f_hat)^T lam  s.t.  W^T lam = Q^T z``,
    plus the constant ``c . z`` (and the quadratic term, which does not
    depend on ``u``).
    """
    if obj.kind not in ("linear", "quadratic"):
        raise ValueError("dual reformulation needs an objective linear in u")
    z = np.asarray(z, float)
    W = p.halfspaces.W
    K, d = W.shape
    h = p.rhs()
    lp = LinearProgram(h, W.T, [EQ] * d, obj.Q.T @ z, [(0.0, np.inf)] * K)
    res = solve_lp(lp)
    if res.status == "infeasible":
        raise InconsistentDualError("dual LP infeasible: the inner maximum is unbounded")
    if res.status != "optimal":
        raise InconsistentDualError(f"dual LP ended with status {res.status}")
    const = obj.c @ z
    if obj.kind == "quadratic":
        const += obj.beta * (z[0] - z[1]) ** 2
    return float(res.objective_value + const)


def _max_over_points(points: np.ndarray, obj: ObjectiveSpec):
    def F(z):
        return float(np.max(obj.values(z, points)))

    return F


def _max_over_ball(ball: Ball, obj: ObjectiveSpec):
    def F(z):
        return _worst_case_ball(np.asarray(z, float), ball, obj)[0]

    return F


def _ternary_midpoint(F, tol: float = TERNARY_TOL) -> float:
    """Minimise a convex ``F`` on ``[0, 1]``; midpoint of the optimal interval."""
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if F(m1) <= F(m2):
            hi = m2
        else:
            lo = m1
    # the search stops 1e-8 short of an endpoint optimum; anchor on the best candidate
    t = min((0.5 * (lo + hi), 0.0, 1.0), key=F)
    best = F(t)
    slack = 1e-12 * max(1.0, abs(best))

    def edge(inside: float, outside: float) -> float:
        if F(outside) <= best + slack:
            return outside
        for _ in range(60):
            mid = 0.5 * (inside + outside)
            if F(mid) <= best + slack:
                inside = mid
            else:
                outside = mid
        return inside

    left = edge(t, 0.0)
    right = edge(t, 1.0)
    return 0.5 * (left + right)


def minimax_over_points(points, obj: ObjectiveSpec, p: int | None = None) -> tuple[np.ndarray, float]:
    """``min_{z in simplex} max_{u in points} g(z, u)``."""
    P = np.atleast_2d(np.asarray(points, float))
    p = obj.n_decisions if p is None else p
    if obj.kind == "linear":
        return _linear_epigraph(P, obj, p)
    if p != 2:
        raise ValueError(f"non-linear objectives support p = 2 decisions only, got p={p}")
    F = _max_over_points(P, obj)
    t = _ternary_midpoint(lambda t: F(np.array([t, 1.0 - t])))
    z = np.array([t, 1.0 - t])
    return z, F(z)


def _linear_epigraph(P: np.ndarray, obj: ObjectiveSpec, p: int) -> tuple[np.ndarray, float]:
    # variables [z_1..z_p, eta]; (c + Q v) . z - eta <= 0 for every point v
    coef = obj.c[None, :] + P @ obj.Q.T
    n = len(P)
    A = np.hstack([coef, -np.ones((n, 1))])
    A = np.vstack([A, np.r_[np.ones(p), 0.0]])
    rels = [LE] * n + [EQ]
    rhs = np.r_[np.zeros(n), 1.0]
    bounds = [(0.0, np.inf)] * p + [(-np.inf, np.inf)]
    cost = np.r_[np.zeros(p), 1.0]
    res = solve_lp(LinearProgram(cost, A, rels, rhs, bounds))
    if res.status != "optimal":
        raise RuntimeError(f"epigraph LP ended with status {res.status}")
    value = res.objective_value
    z = res.primal[:p]
    if p == 2:
        # midpoint of the optimal face along z_1
        A2 = np.vstack([A, np.r_[np.zeros(p), 1.0]])
        rels2 = rels + [LE]
        rhs2 = np.r_[rhs, value + 1e-12 * max(1.0, abs(value))]
        ends = []
        for direction in ("min", "max"):
            cost1 = np.r_[1.0, np.zeros(p)]
            r = solve_lp(LinearProgram(cost1, A2, rels2, rhs2, bounds, direction))
            ends.append(r.primal[0] if r.optimal else z[0])
        t = 0.5 * (ends[0] + ends[1])
        z = np.array([t, 1.0 - t])
    z = np.clip(z, 0.0, None)
    z /= z.sum()
    return z, float(np.max(obj.values(z, P)))


def robust_decision(set_, obj: ObjectiveSpec, region: FeasibleRegion | None = None) -> tuple[np.ndarray, float]:
    """``argmin_{z in simplex} max_{u in set} g(z, u)`` and its value."""
    p = obj.n_decisions if region is None else region.p
    if isinstance(set_, Ball):
        if p != 2:
            raise ValueError(f"ball sets support p = 2 decisions only, got p={p}")
        F = _max_over_ball(set_, obj)
        t = _ternary_midpoint(lambda t: F(np.array([t, 1.0 - t])))
        z = np.array([t, 1.0 - t])
        return z, F(z)
    return minimax_over_points(np.array(_vertices(set_)), obj, p)


def hindsight_optimum(y, obj: ObjectiveSpec) -> float:
    """``min_{z in simplex} g(z, y)``."""
    return minimax_over_points(np.atleast_2d(y), obj)[1]


def regret(z, y, obj: ObjectiveSpec) -> float:
    """Realised regret ``g(z, y) - min_z' g(z', y)``."""
    return obj.value(z, y) - hindsight_optimum(y, obj)
