import numpy as np
import pytest

from confrob.geometry import Halfspaces, Polytope, box_polytope, enumerate_vertices
from confrob.robust import (
    Ball,
    EmptySetError,
    FeasibleRegion,
    ObjectiveSpec,
    hindsight_optimum,
    minimax_over_points,
    regret,
    robust_decision,
    worst_case,
    worst_case_dual_linear,
)
from confrob.validation import check_duality, random_spanning_params

from conftest import box_W

LIN = ObjectiveSpec.linear()
QUAD = ObjectiveSpec.quadratic()
NEWS = ObjectiveSpec.newsvendor()


def box(radius, center=(0.0, 0.0)):
    return Polytope(Halfspaces(box_W(), np.zeros(4)), np.asarray(center, float), radius)


def grid_minimax(set_, obj, n=10_001):
    V = np.array(enumerate_vertices(set_)) if isinstance(set_, Polytope) else None
    ts = np.linspace(0, 1, n)
    vals = np.array([np.max(obj.values(np.array([t, 1 - t]), V)) for t in ts])
    i = int(np.argmin(vals))
    return ts[i], vals[i]


class TestObjective:
    def test_values(self):
        z, u = np.array([0.3, 0.7]), np.array([1.0, -2.0])
        assert LIN.value(z, u) == pytest.approx(-0.08 * 0.3 + 0.3 - 1.4)
        assert QUAD.value(z, u) == pytest.approx(LIN.value(z, u) + 0.08 * 0.16)
        assert NEWS.value(z, u) == pytest.approx(0.7 * 0.7 + 0.3 * 2.7)

    def test_rejects(self):
        with pytest.raises(ValueError):
            ObjectiveSpec("cubic")
        with pytest.raises(ValueError):
            ObjectiveSpec.newsvendor(c_o=0.0)
        with pytest.raises(ValueError):
            ObjectiveSpec.quadratic(beta=-1)

    def test_default_coupling_follows_c(self):
        obj = ObjectiveSpec.linear(c=(-0.08, 0.0, 0.0, 0.0))
        assert obj.Q.shape == (4, 4) and obj.d == 4

    def test_pieces_reproduce_value(self, rng):
        for obj in (LIN, QUAD, NEWS):
            for _ in range(20):
                z, u = rng.dirichlet([1, 1]), rng.normal(size=2)
                A, a0 = obj.pieces(z)
                assert np.max(A @ u + a0) == pytest.approx(obj.value(z, u))


class TestWorstCase:
    def test_linear_unit_box(self):
        val, u = worst_case((1.0, 0.0), box(1.0), LIN)
        assert val == pytest.approx(0.92)
        assert u[0] == pytest.approx(1.0)

    def test_newsvendor_box(self):
        val, u = worst_case((0.5, 0.5), box_polytope([0, 0], [1, 1]), NEWS)
        # oracle: the four vertex values
        vals = [NEWS.value((0.5, 0.5), v) for v in [(0, 0), (1, 0), (0, 1), (1, 1)]]
        assert sorted(np.round(vals, 12)) == [0.3, 0.5, 0.5, 0.7]
        assert val == pytest.approx(0.7)
        assert np.allclose(u, (1, 1))

    def test_single_point(self):
        p = box(0.0, (0.4, -0.2))
        for obj in (LIN, QUAD, NEWS):
            assert worst_case((0.2, 0.8), p, obj)[0] == pytest.approx(obj.value((0.2, 0.8), (0.4, -0.2)))

    def test_empty(self):
        with pytest.raises(EmptySetError):
            worst_case((0.5, 0.5), box(-1.0), LIN)

    def test_ball(self):
        val, u = worst_case((1.0, 0.0), Ball((0.0, 0.0), 2.0), LIN)
        assert val == pytest.approx(-0.08 + 2.0)
        assert np.allclose(u, (2, 0))

    def test_dual_unit_box(self):
        assert worst_case_dual_linear((1.0, 0.0), box(1.0), LIN) == pytest.approx(0.92, abs=1e-6)

    def test_dual_zero_weight(self):
        # with z_2 = 0 the second coordinate's bounds can be arbitrary
        p = Polytope(Halfspaces(box_W(), np.array([0.0, 0.0, -3.0, 2.5])), np.zeros(2), 1.0)
        assert worst_case_dual_linear((1.0, 0.0), p, LIN) == pytest.approx(0.92, abs=1e-9)

    def test_dual_matches_vertices(self):
        rep = check_duality(100, seed=3)
        assert rep.passed and rep.max_error <= 1e-6, rep.first_failure

    def test_monotone_in_radius(self, rng):
        for _ in range(20):
            params = random_spanning_params(rng, 5)
            z = rng.dirichlet([1, 1])
            base = float(np.max(params.b)) + 0.05
            for obj in (LIN, QUAD, NEWS):
                vals = [worst_case(z, Polytope(params.halfspaces, np.zeros(2), base + r), obj)[0]
                        for r in np.linspace(0, 2, 6)]
                assert np.all(np.diff(vals) >= -1e-12)


class TestRobustDecision:
    def test_linear_box(self):
        z, val = robust_decision(box(0.5), LIN)
        assert np.allclose(z, (1, 0), atol=1e-9) and val == pytest.approx(0.42)

    def test_symmetric_tiebreak(self):
        for obj in (ObjectiveSpec.linear(c=(0, 0)), ObjectiveSpec.newsvendor(0.5, 0.5)):
            z, _ = robust_decision(box(1.0), obj)
            assert z[0] == pytest.approx(0.5, abs=1e-6)

    def test_quadratic_grid(self):
        z, val = robust_decision(box(0.5), QUAD)
        t, gval = grid_minimax(box(0.5), QUAD)
        assert z[0] < 1
        assert abs(z[0] - t) <= 1e-4
        assert val == pytest.approx(gval, abs=1e-6)

    def test_on_simplex_and_consistent(self, rng):
        region = FeasibleRegion(2)
        for _ in range(15):
            params = random_spanning_params(rng, 5)
            p = Polytope(params.halfspaces, rng.normal(size=2), float(np.max(params.b)) + 0.5)
            for obj in (LIN, QUAD, NEWS):
                z, val = robust_decision(p, obj, region)
                assert region.contains(z)
                assert val == pytest.approx(worst_case(z, p, obj)[0], abs=1e-9)
                grid = np.linspace(0, 1, 101)
                assert all(val <= worst_case((t, 1 - t), p, obj)[0] + 1e-9 for t in grid)

    def test_newsvendor_lower_bound(self, rng):
        for _ in range(15):
            params = random_spanning_params(rng, 4)
            p = Polytope(params.halfspaces, rng.uniform(0, 1, 2), float(np.max(params.b)) + 0.3)
            _, val = robust_decision(p, NEWS)
            lb = max(hindsight_optimum(v, NEWS) for v in enumerate_vertices(p))
            assert val >= lb - 1e-9

    def test_newsvendor_grid(self):
        p = box_polytope([0.2, 0.1], [1.0, 0.6])
        z, val = robust_decision(p, NEWS)
        t, gval = grid_minimax(p, NEWS)
        assert val == pytest.approx(gval, abs=1e-4)

    def test_ball_decision(self):
        z, val = robust_decision(Ball((0.0, 0.0), 0.5), LIN)
        ts = np.linspace(0, 1, 10_001)
        g = [-0.08 * t + 0.5 * np.hypot(t, 1 - t) for t in ts]
        assert val == pytest.approx(min(g), abs=1e-6)

    def test_nonlinear_p3_rejected(self):
        obj = ObjectiveSpec.newsvendor(d=3)
        p = Polytope(Halfspaces(np.vstack([np.eye(3), -np.eye(3)]), np.zeros(6)), np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            robust_decision(p, obj)

    def test_linear_p3(self):
        obj = ObjectiveSpec.linear(c=(0.1, -0.2, 0.0), Q=np.eye(3))
        P = np.random.default_rng(0).normal(size=(8, 3))
        z, val = minimax_over_points(P, obj)
        assert FeasibleRegion(3).contains(z)
        # oracle: dense grid on the 3-simplex
        best = np.inf
        for a in np.linspace(0, 1, 201):
            for b in np.linspace(0, 1 - a, max(2, int(201 * (1 - a)))):
                zz = np.array([a, b, 1 - a - b])
                best = min(best, np.max(obj.values(zz, P)))
        assert val <= best + 1e-9 and val >= best - 1e-2


class TestRegret:
    def test_nonnegative(self, rng):
        for obj in (LIN, QUAD, NEWS):
            for _ in range(10):
                z, y = rng.dirichlet([1, 1]), rng.normal(size=2)
                assert regret(z, y, obj) >= -1e-12

    def test_hindsight_linear(self):
        assert hindsight_optimum((0.3, 0.1), LIN) == pytest.approx(min(0.3 - 0.08, 0.1))
