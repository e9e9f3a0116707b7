import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from confrob.solver import (
    EQ,
    GE,
    LE,
    LinearProgram,
    MixedIntegerProgram,
    NumericalInstabilityError,
    solve_lp,
    solve_milp,
)


def scipy_value(lp):
    sign = 1.0 if lp.direction == "min" else -1.0
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for row, rel, r in zip(lp.A, lp.relations, lp.rhs):
        if rel == LE:
            A_ub.append(row), b_ub.append(r)
        elif rel == GE:
            A_ub.append(-row), b_ub.append(-r)
        else:
            A_eq.append(row), b_eq.append(r)
    res = linprog(sign * lp.c, A_ub=A_ub or None, b_ub=b_ub or None, A_eq=A_eq or None,
                  b_eq=b_eq or None, bounds=lp.bounds, method="highs")
    return res.status, sign * res.fun if res.status == 0 else None


class TestLP:
    def test_simple_min(self):
        res = solve_lp(LinearProgram([1.0], [[1.0]], [GE], [1.0], [(None, None)]))
        assert res.status == "optimal" and res.objective_value == pytest.approx(1.0)

    def test_box_support(self):
        A = np.vstack([np.eye(2), -np.eye(2)])
        lp = LinearProgram([1.0, 0.0], A, [LE] * 4, np.ones(4), [(None, None)] * 2, "max")
        res = solve_lp(lp)
        assert res.objective_value == pytest.approx(1.0)
        assert res.dual[0] == pytest.approx(1.0)
        assert np.allclose(res.dual[1:], 0.0)

    def test_degenerate_face(self):
        lp = LinearProgram([1.0, 1.0], [[1.0, 1.0]], [LE], [1.0], [(0, None), (0, None)], "max")
        res = solve_lp(lp)
        # oracle: the basic feasible solutions are (0,0), (1,0), (0,1)
        bfs = max(x + y for x, y in [(0, 0), (1, 0), (0, 1)])
        assert res.objective_value == pytest.approx(bfs)

    def test_infeasible(self):
        lp = LinearProgram([1.0], [[1.0], [1.0]], [LE, GE], [0.0, 1.0], [(None, None)])
        assert solve_lp(lp).status == "infeasible"

    def test_unbounded(self):
        lp = LinearProgram([1.0], [[1.0]], [GE], [0.0], [(None, None)], "max")
        assert solve_lp(lp).status == "unbounded"

    def test_equality_and_bounds(self):
        lp = LinearProgram([1.0, 2.0, -1.0], [[1, 1, 1]], [EQ], [1.0], [(0, 1), (-1, 2), (0, 0.5)])
        res = solve_lp(lp)
        assert res.objective_value == pytest.approx(scipy_value(lp)[1])
        assert abs(res.primal.sum() - 1) <= 1e-9

    def test_pivot_budget(self):
        lp = LinearProgram([-1.0, -1.0], [[1, 2], [2, 1]], [LE, LE], [4, 4], [(0, None)] * 2)
        with pytest.raises(NumericalInstabilityError):
            solve_lp(lp, max_pivots=0)

    def test_matches_scipy_and_strong_duality(self, rng):
        for trial in range(150):
            m, n = int(rng.integers(1, 7)), int(rng.integers(1, 6))
            A = rng.normal(size=(m, n)).round(2)
            rels = list(rng.choice([LE, GE, EQ], size=m, p=[0.6, 0.25, 0.15]))
            rhs = rng.normal(size=m).round(2)
            bounds = []
            for _ in range(n):
                k = rng.integers(4)
                bounds.append([(0, None), (None, None), (-1, 2), (None, 3)][k])
            lp = LinearProgram(rng.normal(size=n).round(2), A, rels, rhs, bounds,
                               "min" if trial % 2 else "max")
            status, val = scipy_value(lp)
            res = solve_lp(lp)
            expected = {0: "optimal", 2: "infeasible", 3: "unbounded"}[status]
            assert res.status == expected
            if expected == "optimal":
                assert res.objective_value == pytest.approx(val, abs=1e-7)
                # primal feasibility
                lhs = A @ res.primal
                for l, rel, r in zip(lhs, rels, rhs):
                    if rel == LE:
                        assert l <= r + 1e-7
                    elif rel == GE:
                        assert l >= r - 1e-7
                    else:
                        assert abs(l - r) <= 1e-7
                # duals as sensitivities: finite-difference check on the rhs
                for i in range(m):
                    h = 1e-6
                    bumped = LinearProgram(lp.c, A, rels, rhs + h * np.eye(m)[i], bounds, lp.direction)
                    r2 = solve_lp(bumped)
                    if r2.status == "optimal":
                        fd = (r2.objective_value - res.objective_value) / h
                        if abs(fd - res.dual[i]) > 1e-4:
                            # nondifferentiable point: one-sided slopes bracket the dual
                            down = LinearProgram(lp.c, A, rels, rhs - h * np.eye(m)[i], bounds, lp.direction)
                            r3 = solve_lp(down)
                            bd = (res.objective_value - r3.objective_value) / h
                            lo, hi = sorted((fd, bd))
                            assert lo - 1e-4 <= res.dual[i] <= hi + 1e-4


def brute_force(c, A, rhs, n_bin, n_cont_bounds):
    best = np.inf
    for bits in itertools.product([0.0, 1.0], repeat=n_bin):
        b = list(zip(bits, bits)) + n_cont_bounds
        res = solve_lp(LinearProgram(c, A, [LE] * len(rhs), rhs, b))
        if res.status == "optimal":
            best = min(best, res.objective_value)
    return best


class TestMILP:
    def test_matches_enumeration(self, rng):
        for _ in range(50):
            nb = int(rng.integers(1, 9))
            n = nb + 2
            m = int(rng.integers(2, 6))
            A = rng.normal(size=(m, n)).round(2)
            rhs = rng.uniform(0.5, 3, size=m).round(2)
            c = rng.normal(size=n).round(2)
            cont = [(-2.0, 2.0), (-2.0, 2.0)]
            mip = MixedIntegerProgram(LinearProgram(c, A, [LE] * m, rhs, [(0, 1)] * nb + cont), range(nb))
            res = solve_milp(mip)
            expect = brute_force(c, A, rhs, nb, cont)
            if np.isinf(expect):
                assert res.status == "infeasible"
            else:
                assert res.status == "optimal"
                assert res.objective_value == pytest.approx(expect, abs=1e-7)
                assert np.all(np.abs(res.primal[:nb] - np.round(res.primal[:nb])) <= 1e-6)

    def test_all_fixed_matches_lp(self):
        c = np.array([1.0, -1.0, 0.5])
        A = np.array([[1.0, 1.0, 1.0]])
        lp = LinearProgram(c, A, [LE], [2.0], [(1, 1), (0, 0), (-1, 1)])
        assert solve_milp(MixedIntegerProgram(lp, [0, 1])).objective_value == pytest.approx(
            solve_lp(lp).objective_value)

    def test_forced_selection(self):
        S = np.array([0.3, 1.2, 0.7, 0.9])
        n = len(S)
        M = 10.0
        rows, rhs = [], []
        for i in range(n):
            row = np.zeros(n + 1)
            row[0], row[1 + i] = -1.0, M
            rows.append(row)
            rhs.append(M - S[i])
        rows.append(np.r_[0.0, -np.ones(n)])
        rhs.append(-n)
        lp = LinearProgram(np.r_[1.0, np.zeros(n)], np.array(rows), [LE] * (n + 1), rhs,
                           [(-5, None)] + [(0, 1)] * n)
        res = solve_milp(MixedIntegerProgram(lp, range(1, n + 1)))
        assert res.objective_value == pytest.approx(S.max())
        assert np.allclose(res.primal[1:], 1.0)

    def test_node_limit(self, rng):
        n = 12
        c = -rng.uniform(1, 2, n)
        A = rng.uniform(1, 2, (1, n))
        lp = LinearProgram(c, A, [LE], [A.sum() / 2], [(0, 1)] * n)
        res = solve_milp(MixedIntegerProgram(lp, range(n)), node_limit=2)
        assert res.status == "node_limit"

    def test_infeasible(self):
        lp = LinearProgram([1.0], [[1.0]], [GE], [0.5], [(0, 1)])
        lp2 = LinearProgram([1.0], [[1.0], [1.0]], [GE, LE], [0.5, 0.9], [(0, 1)])
        assert solve_milp(MixedIntegerProgram(lp, [0])).objective_value == pytest.approx(1.0)
        assert solve_milp(MixedIntegerProgram(lp2, [0])).status == "infeasible"
