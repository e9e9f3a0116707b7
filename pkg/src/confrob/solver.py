"""Dense primal simplex (Bland's rule) and best-first branch-and-bound.

Problems are tiny (tens of rows), so everything works on a dense tableau.
Bland's rule is used in both phases, which rules out cycling on the
degenerate LPs produced by polytope support functions.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7
INT_TOL = 1e-6

LE, EQ, GE = "<=", "=", ">="


class SolverError(RuntimeError):
    """Base class for solver failures that are not infeasible/unbounded."""


class NumericalInstabilityError(SolverError):
    """Raised when the pivot budget is exhausted."""


@dataclass
class LinearProgram:
    """``min|max c @ x`` subject to row constraints and variable bounds.

    ``relations`` holds one of ``"<="``, ``"="``, ``">="`` per row of ``A``.
    ``bounds`` defaults to ``(0, inf)`` for every variable.
    """

    c: np.ndarray
    A: np.ndarray
    relations: list[str]
    rhs: np.ndarray
    bounds: list[tuple[float, float]] | None = None
    direction: str = "min"

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).ravel()
        self.relations = list(self.relations)
        if self.bounds is None:
            self.bounds = [(0.0, np.inf)] * n
        # None means unbounded on that side, as in scipy.optimize.linprog
        self.bounds = [(-np.inf if lo is None else float(lo), np.inf if hi is None else float(hi))
                       for lo, hi in self.bounds]
        m = self.A.shape[0]
        if self.rhs.size != m or len(self.relations) != m:
            raise ValueError(
                f"dimension mismatch: A has {m} rows, rhs {self.rhs.size}, "
                f"relations {len(self.relations)}"
            )
        if len(self.bounds) != n:
            raise ValueError(f"expected {n} bounds, got {len(self.bounds)}")
        if any(r not in (LE, EQ, GE) for r in self.relations):
            raise ValueError(f"unknown relation in {self.relations}")
        if self.direction not in ("min", "max"):
            raise ValueError(f"direction must be 'min' or 'max', got {self.direction!r}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A))
                and np.all(np.isfinite(self.rhs))):
            raise ValueError("LP coefficients must be finite")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


@dataclass
class MixedIntegerProgram:
    base: LinearProgram
    binary_indices: Sequence[int]

    def __post_init__(self):
        self.binary_indices = sorted(set(int(i) for i in self.binary_indices))
        if any(i < 0 or i >= self.base.n_vars for i in self.binary_indices):
            raise ValueError("binary index out of range")


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | node_limit
    primal: np.ndarray | None = None
    dual: np.ndarray | None = None
    objective_value: float = np.nan
    node_count: int = 0
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class _StandardForm:
    # min c_std @ y, A_std @ y = b_std, y >= 0; x = offset + T @ y
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    T: np.ndarray
    offset: np.ndarray
    row_sign: np.ndarray
    n_orig_rows: int
    slack_col: dict = field(default_factory=dict)


def _to_standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    cols: list[np.ndarray] = []  # columns of T (n-vectors)
    offset = np.zeros(n)
    extra_rows: list[tuple[int, float]] = []  # (std column, upper limit)
    for j, (lo, hi) in enumerate(lp.bounds):
        if lo > hi:
            raise ValueError(f"variable {j}: lower bound {lo} > upper bound {hi}")
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo):
            offset[j] = lo
            cols.append(e)
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append(-e)
        else:
            cols.append(e)
            cols.append(-e)
    T = np.array(cols).T if cols else np.zeros((n, 0))
    ny = T.shape[1]

    A_rows = lp.A @ T
    rhs = lp.rhs - lp.A @ offset
    rels = list(lp.relations)
    for col, ub in extra_rows:
        row = np.zeros(ny)
        row[col] = 1.0
        A_rows = np.vstack([A_rows, row]) if A_rows.size else row[None, :]
        rhs = np.append(rhs, ub)
        rels.append(LE)
    m = len(rels)
    A_rows = A_rows.reshape(m, ny)

    n_slack = sum(1 for r in rels if r != EQ)
    A = np.zeros((m, ny + n_slack))
    A[:, :ny] = A_rows
    slack_col = {}
    k = ny
    for i, r in enumerate(rels):
        if r == LE:
            A[i, k] = 1.0
        elif r == GE:
            A[i, k] = -1.0
        else:
            continue
        slack_col[i] = k
        k += 1
    sign = np.where(rhs < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = rhs * sign
    sense = 1.0 if lp.direction == "min" else -1.0
    c = np.zeros(A.shape[1])
    c[:ny] = sense * (lp.c @ T)
    T_full = np.zeros((n, A.shape[1]))
    T_full[:, :ny] = T
    return _StandardForm(A, b, c, T_full, offset, sign, lp.n_rows, slack_col)


class _Tableau:
    """Row-reduced tableau ``[A | b]`` with a basis; objective kept separately."""

    def __init__(self, A: np.ndarray, b: np.ndarray, basis: list[int], max_pivots: int):
        self.M = np.hstack([A, b[:, None]]).astype(float)
        self.basis = list(basis)
        self.max_pivots = max_pivots
        self.pivots = 0

    def pivot(self, row: int, col: int) -> None:
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise NumericalInstabilityError(
                f"simplex exceeded pivot budget ({self.max_pivots})"
            )
        M = self.M
        M[row] /= M[row, col]
        factors = M[:, col].copy()
        factors[row] = 0.0
        M -= np.outer(factors, M[row])
        self.basis[row] = col

    def reduced_costs(self, c: np.ndarray) -> np.ndarray:
        cb = c[self.basis]
        return c - cb @ self.M[:, :-1]

    def run(self, c: np.ndarray, allowed: np.ndarray) -> str:
        """Bland's-rule primal simplex on columns flagged in ``allowed``."""
        while True:
            d = self.reduced_costs(c)
            scale = max(1.0, float(np.max(np.abs(c))) if c.size else 1.0)
            candidates = np.flatnonzero((d < -PIVOT_TOL * scale) & allowed)
            if candidates.size == 0:
                return "optimal"
            col = int(candidates[0])
            column = self.M[:, col]
            rows = np.flatnonzero(column > PIVOT_TOL)
            if rows.size == 0:
                return "unbounded"
            ratios = self.M[rows, -1] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
            row = min(ties, key=lambda r: self.basis[r])
            self.pivot(int(row), col)


def solve_lp(lp: LinearProgram, max_pivots: int | None = None) -> SolveResult:
    """Two-phase primal simplex with Bland's rule.

    Returns duals as sensitivities ``d(objective)/d(rhs_i)`` of the
    original rows, in the problem's own direction.
    """
    sf = _to_standard_form(lp)
    m, N = sf.A.shape
    if max_pivots is None:
        max_pivots = 50 * (m + N + 1)

    # initial basis: reuse +1 slack columns where possible, otherwise artificials
    basis = []
    art_rows = []
    for i in range(m):
        k = sf.slack_col.get(i)
        if k is not None and sf.A[i, k] > 0:
            basis.append(k)
        else:
            basis.append(None)
            art_rows.append(i)
    n_art = len(art_rows)
    A1 = np.hstack([sf.A, np.zeros((m, n_art))])
    for a, i in enumerate(art_rows):
        A1[i, N + a] = 1.0
        basis[i] = N + a
    tab = _Tableau(A1, sf.b, basis, max_pivots)

    if n_art:
        c1 = np.zeros(N + n_art)
        c1[N:] = 1.0
        tab.run(c1, np.ones(N + n_art, dtype=bool))
        infeas = float(c1[tab.basis] @ tab.M[:, -1])
        if infeas > FEAS_TOL * max(1.0, float(np.abs(sf.b).max(initial=0.0))):
            return SolveResult("infeasible", pivots=tab.pivots)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = np.ones(m, dtype=bool)
        for i in range(m):
            if tab.basis[i] >= N:
                nz = np.flatnonzero(np.abs(tab.M[i, :N]) > PIVOT_TOL)
                if nz.size:
                    tab.pivot(i, int(nz[0]))
                else:
                    keep[i] = False
        tab.M = tab.M[keep][:, list(range(N)) + [N + n_art]]
        tab.basis = [bv for bv, k in zip(tab.basis, keep) if k]
        kept_rows = np.flatnonzero(keep)
    else:
        kept_rows = np.arange(m)

    status = tab.run(sf.c, np.ones(N, dtype=bool))
    if status == "unbounded":
        return SolveResult("unbounded", pivots=tab.pivots)

    y = np.zeros(N)
    y[tab.basis] = tab.M[:, -1]
    y = np.maximum(y, 0.0)
    x = sf.offset + sf.T @ y

    # duals from the final basis of the (sign-normalised) standard form
    B = sf.A[np.ix_(kept_rows, tab.basis)]
    dual_std = np.zeros(m)
    if len(kept_rows):
        dual_std[kept_rows] = np.linalg.solve(B.T, sf.c[tab.basis])
    dual = dual_std * sf.row_sign
    if lp.direction == "max":
        dual = -dual
    return SolveResult(
        "optimal",
        primal=x,
        dual=dual[: sf.n_orig_rows],
        objective_value=float(lp.c @ x),
        pivots=tab.pivots,
    )


def solve_milp(
    mip: MixedIntegerProgram,
    node_limit: int = 10**6,
    int_tol: float = INT_TOL,
) -> SolveResult:
    """Best-first branch-and-bound over the binary variables.

    Nodes are ordered by LP bound, then by depth (deeper first), then by
    creation order, so the search is deterministic.
    """
    lp = mip.base
    sense = 1.0 if lp.direction == "min" else -1.0
    base_bounds = list(lp.bounds)
    for j in mip.binary_indices:
        lo, hi = base_bounds[j]
        base_bounds[j] = (max(lo, 0.0), min(hi, 1.0))

    def relax(bounds):
        sub = LinearProgram(lp.c, lp.A, lp.relations, lp.rhs, bounds, lp.direction)
        if any(lo > hi for lo, hi in bounds):
            return SolveResult("infeasible")
        return solve_lp(sub)

    counter = itertools.count()
    incumbent: np.ndarray | None = None
    incumbent_val = np.inf  # in minimisation sense
    nodes = 0
    pivots = 0
    root = relax(base_bounds)
    nodes += 1
    pivots += root.pivots
    if root.status != "optimal":
        return SolveResult(root.status, node_count=nodes, pivots=pivots)
    def cutoff() -> float:
        if incumbent is None:
            return np.inf
        return incumbent_val - 1e-9 * max(1.0, abs(incumbent_val))

    heap = [(sense * root.objective_value, 0, next(counter), base_bounds, root)]
    while heap:
        bound, neg_depth, _, bounds, res = heapq.heappop(heap)
        if bound >= cutoff():
            continue
        x = res.primal
        frac = [(abs(x[j] - round(x[j])), j) for j in mip.binary_indices]
        frac = [(f, j) for f, j in frac if f > int_tol]
        if not frac:
            incumbent = x.copy()
            incumbent[mip.binary_indices] = np.round(incumbent[mip.binary_indices])
            incumbent_val = bound
            continue
        # most fractional, lowest index on ties
        _, j = max(frac, key=lambda fj: (fj[0], -fj[1]))
        for value in (0.0, 1.0):
            if nodes >= node_limit:
                return SolveResult(
                    "node_limit",
                    primal=incumbent,
                    objective_value=np.nan if incumbent is None else sense * incumbent_val,
                    node_count=nodes,
                    pivots=pivots,
                )
            child = list(bounds)
            child[j] = (value, value)
            cres = relax(child)
            nodes += 1
            pivots += cres.pivots
            if cres.status == "optimal":
                cb = sense * cres.objective_value
                if cb < cutoff():
                    heapq.heappush(heap, (cb, neg_depth - 1, next(counter), child, cres))
            elif cres.status == "unbounded":
                return SolveResult("unbounded", node_count=nodes, pivots=pivots)
    if incumbent is None:
        return SolveResult("infeasible", node_count=nodes, pivots=pivots)
    return SolveResult(
        "optimal",
        primal=incumbent,
        objective_value=float(lp.c @ incumbent),
        node_count=nodes,
        pivots=pivots,
    )
