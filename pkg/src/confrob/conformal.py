"""Max-affine nonconformity scores and split-conformal calibration."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .geometry import Halfspaces, Polytope, contains, uniform_template
from .solver import LE, LinearProgram, MixedIntegerProgram, solve_milp


@dataclass(frozen=True)
class SetParams:
    """The learnable hyperplane family ``theta = {(w_k, b_k)}``."""

    halfspaces: Halfspaces

    @classmethod
    def from_arrays(cls, W, b=None) -> "SetParams":
        W = np.array(W, dtype=float, ndmin=2)
        if b is None:
            b = np.zeros(W.shape[0])
        return cls(Halfspaces(W, b))

    @property
    def W(self) -> np.ndarray:
        return self.halfspaces.W

    @property
    def b(self) -> np.ndarray:
        return self.halfspaces.b

    @property
    def K(self) -> int:
        return self.halfspaces.K

    @property
    def d(self) -> int:
        return self.halfspaces.d


@dataclass(frozen=True)
class CalibratedSet:
    """Set parameters plus the radius calibrated on a held-out split."""

    params: SetParams
    radius: float
    predictor: Callable[[np.ndarray], np.ndarray]
    alpha: float

    def at(self, x) -> Polytope:
        center = np.asarray(self.predictor(np.atleast_2d(x)), float)[0]
        return build_set(self.params, self.radius, center)


def score(params: SetParams, residual) -> float:
    """``max_k (w_k . residual + b_k)``."""
    eps = np.asarray(residual, dtype=float).ravel()
    if eps.size != params.d:
        raise ValueError(f"residual has dimension {eps.size}, params have {params.d}")
    return float(np.max(params.W @ eps + params.b))


def scores(params: SetParams, residuals) -> np.ndarray:
    """Vectorised :func:`score` over the rows of ``residuals``."""
    E = np.atleast_2d(np.asarray(residuals, dtype=float))
    return np.max(E @ params.W.T + params.b, axis=1)


def quantile_rank(n: int, alpha: float) -> int:
    """``c_n = ceil((n + 1)(1 - alpha))``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    # guard against (n+1)(1-alpha) landing a hair above an integer
    v = (n + 1) * (1.0 - alpha)
    return int(math.ceil(v - 1e-9 * max(1.0, v)))


def conformal_radius(scores: Iterable[float], alpha: float) -> float:
    """The ``c_n``-th smallest score, or ``+inf`` when ``c_n > n``."""
    s = np.sort(np.asarray(scores, dtype=float).ravel(), kind="stable")
    n = s.size
    if n == 0:
        raise ValueError("conformal_radius needs at least one score")
    c = quantile_rank(n, alpha)
    if c > n:
        return math.inf
    return float(s[c - 1])


def whole_space(d: int) -> Polytope:
    """Sentinel set for an infinite radius; ``contains`` is always true."""
    K = 2 * d
    return Polytope(Halfspaces(uniform_template(K, d), np.zeros(K)), np.zeros(d), math.inf)


def build_set(params: SetParams, radius: float, center) -> Polytope:
    """Polytope ``{u : W (u - center) + b <= radius}``; ``center`` is ``f_hat(x)``."""
    return Polytope(params.halfspaces, center, radius)


def empirical_coverage(set_builder: Callable[[np.ndarray], object], X, Y) -> float:
    """Fraction of pairs ``(x, y)`` with ``y`` inside ``set_builder(x)``."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    if len(X) == 0:
        raise ValueError("empirical_coverage needs a nonempty test set")
    hits = 0
    for x, y in zip(X, Y):
        s = set_builder(x)
        inside = s.contains(y) if hasattr(s, "contains") else contains(s, y)
        hits += bool(inside)
    return hits / len(X)


def big_m(residuals, b_max: float, row_norm: float = 1.0) -> float:
    """Big-M constant ``2 (row_norm * max_i ||eps_i|| + b_max) + 1``."""
    E = np.atleast_2d(np.asarray(residuals, float))
    return 2.0 * (row_norm * float(np.max(np.linalg.norm(E, axis=1))) + b_max) + 1.0


def radius_milp(params: SetParams, residuals, alpha: float, b_max: float | None = None):
    """Big-M MILP whose optimum is the conformal radius for fixed ``params``.

    Variables are ``[r, t_1..t_n]``. ``r`` is bounded below by
    ``-(max ||eps|| + b_max)`` so the big-M premise holds.
    """
    E = np.atleast_2d(np.asarray(residuals, float))
    n = E.shape[0]
    K = params.K
    if b_max is None:
        b_max = float(np.max(np.abs(params.b))) if K else 0.0
    M = big_m(E, b_max)
    r_lo = -(float(np.max(np.linalg.norm(E, axis=1))) + b_max)
    c_n = quantile_rank(n, alpha)
    rows, rhs = [], []
    # w_k . eps_i + b_k <= r + M (1 - t_i)  ->  -r + M t_i <= M - (w_k . eps_i + b_k)
    lin = E @ params.W.T + params.b
    for i in range(n):
        for k in range(K):
            row = np.zeros(n + 1)
            row[0] = -1.0
            row[1 + i] = M
            rows.append(row)
            rhs.append(M - lin[i, k])
    card = np.zeros(n + 1)
    card[1:] = -1.0
    rows.append(card)
    rhs.append(-float(c_n))
    c = np.zeros(n + 1)
    c[0] = 1.0
    bounds = [(r_lo, np.inf)] + [(0.0, 1.0)] * n
    lp = LinearProgram(c, np.array(rows), [LE] * len(rows), np.array(rhs), bounds)
    return MixedIntegerProgram(lp, range(1, n + 1)), M


def conformal_radius_milp(params: SetParams, residuals, alpha: float) -> float:
    """Conformal radius via branch-and-bound; ``+inf`` when no selection is feasible."""
    mip, _ = radius_milp(params, residuals, alpha)
    res = solve_milp(mip)
    if res.status == "infeasible":
        return math.inf
    if res.status != "optimal":
        raise RuntimeError(f"radius MILP ended with status {res.status}")
    return float(res.primal[0])
