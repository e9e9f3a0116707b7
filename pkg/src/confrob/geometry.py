"""Polytopes of the form ``{u : W (u - center) + b <= radius}``."""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .solver import LinearProgram, solve_lp

NORM_TOL = 1e-9
FEAS_TOL = 1e-7
DEDUP_TOL = 1e-8
DET_TOL = 1e-12
MAX_ENUM_DIM = 4


class UnboundedSetError(ValueError):
    """The halfspace normals do not positively span the outcome space."""


@dataclass(frozen=True)
class Halfspaces:
    """Rows ``w_k`` (unit norm) and offsets ``b_k`` of a max-affine score."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float, ndmin=2)
        b = np.array(self.b, dtype=float).ravel()
        if b.size != W.shape[0]:
            raise ValueError(f"W has {W.shape[0]} rows but b has {b.size} entries")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    def is_unit_norm(self, tol: float = NORM_TOL) -> bool:
        return bool(np.all(np.abs(np.linalg.norm(self.W, axis=1) - 1.0) <= tol))

    def validate(self) -> None:
        """Raise if any documented invariant is broken."""
        if self.K < self.d + 1:
            raise ValueError(f"need K >= d + 1, got K={self.K}, d={self.d}")
        if not self.is_unit_norm():
            raise ValueError("rows of W must have unit Euclidean norm")
        if not positively_spans(self.W):
            raise UnboundedSetError("rows of W do not positively span R^d")


@dataclass(frozen=True)
class Polytope:
    halfspaces: Halfspaces
    center: np.ndarray
    radius: float

    def __post_init__(self):
        center = np.array(self.center, dtype=float).ravel()
        if center.size != self.halfspaces.d:
            raise ValueError(
                f"center has dimension {center.size}, halfspaces have {self.halfspaces.d}"
            )
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def d(self) -> int:
        return self.halfspaces.d

    @property
    def is_whole_space(self) -> bool:
        return math.isinf(self.radius) and self.radius > 0

    def rhs(self) -> np.ndarray:
        """Right-hand side ``h`` of the equivalent system ``W u <= h``."""
        hs = self.halfspaces
        return self.radius - hs.b + hs.W @ self.center

    def contains(self, u, tol: float = 1e-9) -> bool:
        return contains(self, u, tol)

    def translate(self, t) -> "Polytope":
        return Polytope(self.halfspaces, self.center + np.asarray(t, float), self.radius)


def uniform_template(K: int, d: int = 2) -> np.ndarray:
    """Deterministic unit normals that positively span R^d.

    For ``d == 2`` the normals sit at angles ``2*pi*k/K``; ``K = 4`` is the
    axis-aligned box. For ``d > 2`` the template starts from ``+-e_j`` (or
    ``e_j`` and ``-1/sqrt(d)`` when ``K < 2d``) and pads with fixed
    pseudo-random directions.
    """
    if K < d + 1:
        raise ValueError(f"need K >= d + 1, got K={K}, d={d}")
    if d == 1:
        base = np.array([[1.0], [-1.0]])
        return np.vstack([base, np.tile(base, (K, 1))])[:K]
    if d == 2:
        ang = 2.0 * np.pi * np.arange(K) / K
        W = np.column_stack([np.cos(ang), np.sin(ang)])
        W[np.abs(W) < 1e-15] = 0.0
        return W
    eye = np.eye(d)
    if K >= 2 * d:
        rows = [v for j in range(d) for v in (eye[j], -eye[j])]
    else:
        rows = list(eye) + [-np.ones(d) / np.sqrt(d)]
        rows += [-eye[j] for j in range(K - d - 1)]
    rng = np.random.default_rng(12345)
    while len(rows) < K:
        v = rng.normal(size=d)
        rows.append(v / np.linalg.norm(v))
    return np.array(rows[:K])


def positively_spans(W) -> bool:
    """True iff the recession cone ``{v : W v <= 0}`` is ``{0}``.

    Solves ``2d`` LPs maximising ``+-v_j`` over the cone intersected with
    the box ``|v| <= 1``; every optimum must be zero.
    """
    W = np.array(W, dtype=float, ndmin=2)
    if not np.all(np.isfinite(W)):
        raise ValueError("W must be finite")
    if W.shape[0] < 1:
        raise ValueError("W must have at least one row")
    return _positively_spans(W.tobytes(), W.shape)


@functools.lru_cache(maxsize=4096)
def _positively_spans(raw: bytes, shape: tuple[int, int]) -> bool:
    W = np.frombuffer(raw, dtype=float).reshape(shape)
    K, d = shape
    bounds = [(-1.0, 1.0)] * d
    for j in range(d):
        for sgn in (1.0, -1.0):
            c = np.zeros(d)
            c[j] = sgn
            res = solve_lp(LinearProgram(c, W, ["<="] * K, np.zeros(K), bounds, "max"))
            if res.status != "optimal" or res.objective_value > 1e-9:
                return False
    return True


def _check_bounded(p: Polytope) -> None:
    if not positively_spans(p.halfspaces.W):
        raise UnboundedSetError("halfspace normals do not positively span R^d")
    if not math.isfinite(p.radius):
        raise UnboundedSetError("polytope radius is not finite")


def vertices_with_active(p: Polytope, check: bool = True) -> list[tuple[np.ndarray, tuple[int, ...]]]:
    """Vertices paired with the ``d`` constraint indices that define them."""
    if check:
        _check_bounded(p)
    W = p.halfspaces.W
    h = p.rhs()
    K, d = W.shape
    if d > MAX_ENUM_DIM:
        raise ValueError(f"vertex enumeration supports d <= {MAX_ENUM_DIM}, got d={d}")
    scale = max(1.0, float(np.max(np.abs(h))))
    found: list[tuple[np.ndarray, tuple[int, ...]]] = []
    for idx in itertools.combinations(range(K), d):
        A = W[list(idx)]
        if abs(np.linalg.det(A)) < DET_TOL:
            continue
        v = np.linalg.solve(A, h[list(idx)])
        if np.all(W @ v <= h + FEAS_TOL * scale):
            if all(np.max(np.abs(v - u)) > DEDUP_TOL * scale for u, _ in found):
                found.append((v, idx))
    if d == 2 and len(found) > 2:
        centroid = np.mean([v for v, _ in found], axis=0)
        found.sort(key=lambda va: math.atan2(va[0][1] - centroid[1], va[0][0] - centroid[0]))
    return found


def enumerate_vertices(p: Polytope) -> list[np.ndarray]:
    """All vertices of a bounded polytope; an empty list means the set is empty.

    For ``d == 2`` the vertices are sorted counter-clockwise around their
    centroid. Dimensions above 4 are rejected.
    """
    return [v for v, _ in vertices_with_active(p)]


def contains(p: Polytope, u, tol: float = 1e-9) -> bool:
    u = np.asarray(u, dtype=float).ravel()
    if u.size != p.d:
        raise ValueError(f"point has dimension {u.size}, polytope has {p.d}")
    if p.is_whole_space:
        return True
    hs = p.halfspaces
    return bool(np.all(hs.W @ (u - p.center) + hs.b <= p.radius + tol))


def contains_many(p: Polytope, U, tol: float = 1e-9) -> np.ndarray:
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if p.is_whole_space:
        return np.ones(U.shape[0], dtype=bool)
    hs = p.halfspaces
    vals = (U - p.center) @ hs.W.T + hs.b
    return np.all(vals <= p.radius + tol, axis=1)


def shoelace(vertices) -> float:
    V = np.asarray(vertices, dtype=float)
    if len(V) < 3:
        return 0.0
    x, y = V[:, 0], V[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def volume(p: Polytope, mc_samples: int = 100_000, seed: int = 0) -> float:
    """Exact area for ``d == 2``; Monte Carlo hit rate in the vertex box otherwise.

    Empty and lower-dimensional polytopes have volume 0.
    """
    if p.is_whole_space:
        return math.inf
    verts = enumerate_vertices(p)
    if len(verts) <= p.d:
        return 0.0
    V = np.array(verts)
    if p.d == 1:
        return float(V.max() - V.min())
    if p.d == 2:
        return shoelace(V)
    lo, hi = V.min(axis=0), V.max(axis=0)
    box = float(np.prod(hi - lo))
    if box <= 0.0:
        return 0.0
    rng = np.random.default_rng(seed)
    U = lo + (hi - lo) * rng.random((mc_samples, p.d))
    return box * float(np.mean(contains_many(p, U)))


def is_degenerate(p: Polytope) -> bool:
    """True for nonempty polytopes with zero volume (flagged, not errored)."""
    verts = enumerate_vertices(p)
    return 0 < len(verts) and volume(p, mc_samples=2000) == 0.0


def box_polytope(lower, upper) -> Polytope:
    """Axis-aligned box as a polytope with radius 0 and per-face offsets."""
    lower = np.asarray(lower, float).ravel()
    upper = np.asarray(upper, float).ravel()
    d = lower.size
    center = 0.5 * (lower + upper)
    half = 0.5 * (upper - lower)
    W = np.vstack([v for j in range(d) for v in (np.eye(d)[j], -np.eye(d)[j])])
    b = -np.repeat(half, 2)
    return Polytope(Halfspaces(W, b), center, 0.0)
