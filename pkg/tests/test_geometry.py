import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from confrob.conformal import SetParams, score
from confrob.geometry import (
    Halfspaces,
    Polytope,
    UnboundedSetError,
    box_polytope,
    contains,
    contains_many,
    enumerate_vertices,
    is_degenerate,
    positively_spans,
    shoelace,
    uniform_template,
    volume,
)
from confrob.validation import random_spanning_params

from conftest import box_W


def box(center=(0.0, 0.0), r=1.0, d=2):
    return Polytope(Halfspaces(box_W(d), np.zeros(2 * d)), np.asarray(center, float), r)


def angles_W(deg):
    a = np.deg2rad(np.asarray(deg, float))
    return np.column_stack([np.cos(a), np.sin(a)])


def as_set(V, tol=1e-7):
    return sorted(tuple(np.round(np.asarray(v) / tol) * tol) for v in V)


class TestPositivelySpans:
    def test_linf_template(self):
        assert positively_spans(box_W())

    def test_two_axes_not_spanning(self):
        assert not positively_spans(np.eye(2))

    def test_triangle(self):
        W = np.array([[1.0, 0.0], [0.0, 1.0], [-1 / math.sqrt(2), -1 / math.sqrt(2)]])
        assert positively_spans(W)

    def test_half_plane_fails(self):
        assert not positively_spans(angles_W([0, 60, 120, 180]))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            positively_spans(np.array([[np.nan, 0.0]]))

    @pytest.mark.parametrize("K,d", [(3, 2), (4, 2), (7, 2), (4, 3), (6, 3), (5, 4), (8, 4)])
    def test_uniform_template_spans(self, K, d):
        W = uniform_template(K, d)
        assert W.shape == (K, d)
        assert np.allclose(np.linalg.norm(W, axis=1), 1.0)
        assert positively_spans(W)

    def test_uniform_template_k4_is_axis_box(self):
        W = uniform_template(4, 2)
        assert as_set(W) == as_set(box_W())

    def test_template_needs_d_plus_one(self):
        with pytest.raises(ValueError):
            uniform_template(2, 2)


class TestHalfspaces:
    def test_validate_ok(self):
        Halfspaces(box_W(), np.zeros(4)).validate()

    def test_validate_rejects_non_unit(self):
        with pytest.raises(ValueError):
            Halfspaces(2 * box_W(), np.zeros(4)).validate()

    def test_validate_rejects_non_spanning(self):
        with pytest.raises(UnboundedSetError):
            Halfspaces(angles_W([0, 45, 90]), np.zeros(3)).validate()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            Halfspaces(box_W(), np.zeros(3))

    def test_immutable(self):
        h = Halfspaces(box_W(), np.zeros(4))
        with pytest.raises(ValueError):
            h.W[0, 0] = 5.0


class TestVertices:
    def test_unit_box(self):
        V = enumerate_vertices(box())
        assert as_set(V) == as_set([(1, 1), (1, -1), (-1, -1), (-1, 1)])

    def test_translated_box(self):
        V = enumerate_vertices(box((2.0, 3.0), 0.5))
        assert as_set(V) == as_set([(2.5, 3.5), (2.5, 2.5), (1.5, 2.5), (1.5, 3.5)])

    def test_equilateral_triangle(self):
        # oracle: the inradius is 1, so each vertex sits at distance 2 from the center
        p = Polytope(Halfspaces(angles_W([90, 210, 330]), np.zeros(3)), np.zeros(2), 1.0)
        V = np.array(enumerate_vertices(p))
        assert len(V) == 3
        assert np.allclose(np.linalg.norm(V, axis=1), 2.0)
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(V[i] - V[j]) == pytest.approx(2 * math.sqrt(3))

    def test_counter_clockwise(self):
        V = np.array(enumerate_vertices(box()))
        assert shoelace(V) == pytest.approx(4.0)
        x, y = V[:, 0], V[:, 1]
        signed = 0.5 * (np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        assert signed > 0

    def test_empty_polytope(self):
        p = Polytope(Halfspaces(box_W(), np.ones(4)), np.zeros(2), 0.5)
        assert enumerate_vertices(p) == []

    def test_unbounded_raises(self):
        p = Polytope(Halfspaces(angles_W([0, 90]), np.zeros(2)), np.zeros(2), 1.0)
        with pytest.raises(UnboundedSetError):
            enumerate_vertices(p)

    def test_infinite_radius_raises(self):
        with pytest.raises(UnboundedSetError):
            enumerate_vertices(box(r=math.inf))

    def test_redundant_row_dropped(self):
        W = np.vstack([box_W(), [[1 / math.sqrt(2), 1 / math.sqrt(2)]]])
        p = Polytope(Halfspaces(W, np.array([0, 0, 0, 0, -5.0])), np.zeros(2), 1.0)
        assert len(enumerate_vertices(p)) == 4

    def test_3d_box(self):
        V = enumerate_vertices(box((0, 0, 0), 1.0, d=3))
        assert len(V) == 8
        assert np.allclose(np.abs(V), 1.0)

    def test_rejects_d5(self):
        with pytest.raises(ValueError):
            enumerate_vertices(box(np.zeros(5), 1.0, d=5))

    def test_vertices_satisfy_all_constraints(self, rng):
        for _ in range(30):
            params = random_spanning_params(rng, int(rng.integers(3, 8)))
            p = Polytope(params.halfspaces, rng.standard_normal(2), 1.5)
            for v in enumerate_vertices(p):
                assert contains(p, v, tol=1e-7)

    def test_permutation_invariance(self, rng):
        for _ in range(20):
            params = random_spanning_params(rng, 6)
            p = Polytope(params.halfspaces, np.zeros(2), 1.5)
            perm = rng.permutation(6)
            q = Polytope(Halfspaces(params.W[perm], params.b[perm]), np.zeros(2), 1.5)
            assert as_set(enumerate_vertices(p)) == as_set(enumerate_vertices(q))

    def test_translation(self, rng):
        params = random_spanning_params(rng, 5)
        p = Polytope(params.halfspaces, np.zeros(2), 2.0)
        t = np.array([0.3, -1.7])
        V0 = np.array(enumerate_vertices(p))
        V1 = np.array(enumerate_vertices(p.translate(t)))
        assert np.allclose(V1, V0 + t, atol=1e-12)
        assert volume(p.translate(t)) == pytest.approx(volume(p))


class TestVolume:
    def test_unit_box(self):
        assert volume(box()) == pytest.approx(4.0)

    def test_triangle_shoelace(self):
        assert shoelace([(0, 0), (1, 0), (0, 1)]) == pytest.approx(0.5)

    def test_3d_box_monte_carlo(self):
        assert abs(volume(box((0, 0, 0), 1.0, d=3), mc_samples=100_000, seed=0) - 8.0) <= 0.2

    def test_3d_deterministic(self):
        p = Polytope(Halfspaces(uniform_template(5, 3), np.zeros(5)), np.zeros(3), 1.0)
        assert volume(p, 5000, seed=3) == volume(p, 5000, seed=3)

    def test_empty_is_zero(self):
        assert volume(Polytope(Halfspaces(box_W(), np.ones(4)), np.zeros(2), 0.5)) == 0.0

    def test_degenerate_flagged(self):
        p = Polytope(Halfspaces(box_W(), np.array([0.0, 0.0, 1.0, 1.0])), np.zeros(2), 1.0)
        # y-extent collapses to the single line y = 0
        assert volume(p) == 0.0
        assert is_degenerate(p)
        assert not is_degenerate(box())

    def test_matches_monte_carlo(self, rng):
        # oracle: hit rate of uniform samples in the bounding box. Fifty
        # separate 3-SE checks would raise false alarms ~13% of the time,
        # so check every z-score at 4 SE and their RMS for a bias.
        zs = []
        for _ in range(50):
            params = random_spanning_params(rng, int(rng.integers(3, 8)))
            p = Polytope(params.halfspaces, np.zeros(2), 1.5)
            V = np.array(enumerate_vertices(p))
            lo, hi = V.min(0), V.max(0)
            U = lo + (hi - lo) * rng.random((100_000, 2))
            hit = contains_many(p, U)
            boxv = float(np.prod(hi - lo))
            est = boxv * hit.mean()
            se = boxv * math.sqrt(hit.mean() * (1 - hit.mean()) / len(U))
            zs.append((volume(p) - est) / se)
        zs = np.array(zs)
        assert np.all(np.abs(zs) <= 4.0)
        assert 0.6 <= math.sqrt(np.mean(zs**2)) <= 1.4
        assert abs(zs.mean()) <= 3.0 / math.sqrt(len(zs))

    def test_whole_space_infinite(self):
        assert volume(box(r=math.inf)) == math.inf


class TestContains:
    def test_origin(self):
        assert contains(box(), (0, 0))

    def test_outside(self):
        assert not contains(box(), (1.5, 0))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            contains(box(), (0, 0, 0))

    def test_box_polytope(self):
        p = box_polytope([0, 0], [2, 1])
        assert as_set(enumerate_vertices(p)) == as_set([(0, 0), (2, 0), (2, 1), (0, 1)])

    @given(st.lists(st.floats(-3, 3), min_size=2, max_size=2),
           st.floats(0.1, 3), st.integers(0, 10_000))
    def test_set_score_duality(self, u, r, seed):
        rng = np.random.default_rng(seed)
        params = random_spanning_params(rng, int(rng.integers(3, 7)))
        center = rng.standard_normal(2)
        p = Polytope(params.halfspaces, center, r)
        u = np.array(u)
        s = score(SetParams(params.halfspaces), u - center)
        if abs(s - r) > 1e-9:
            assert contains(p, u, tol=0.0) == (s <= r)
        assert contains_many(p, u[None, :])[0] == contains(p, u)
