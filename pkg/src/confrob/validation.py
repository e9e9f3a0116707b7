"""Oracle cross-checks: each compares an implementation path with an
independent computation of the same quantity.

* conformal radius by sorting vs the big-M MILP solved by branch and bound
* inner worst case by vertex enumeration vs the dual LP
* pinball minimiser vs a brute-force scan over candidate thresholds
* Monte Carlo coverage vs the nominal ``1 - alpha``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conformal import SetParams, conformal_radius_milp, quantile_rank, scores
from .data import gen_synthetic, ridge_fit
from .geometry import Halfspaces, Polytope, enumerate_vertices, positively_spans, uniform_template
from .learn_pinball import PinballConfig, pinball_objective, pinball_threshold, train_pinball
from .robust import ObjectiveSpec, worst_case_dual_linear


@dataclass
class OracleCase:
    seed: int
    instance: dict
    oracle: float
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        if math.isinf(self.oracle) or math.isinf(self.value):
            return self.oracle == self.value
        return abs(self.oracle - self.value) <= self.tolerance


@dataclass
class CheckReport:
    name: str
    passed: bool
    trials: int
    max_error: float
    first_failure: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _summarise(name: str, cases: list[OracleCase], details=None) -> CheckReport:
    errs = [abs(c.oracle - c.value) for c in cases if math.isfinite(c.oracle) and math.isfinite(c.value)]
    fail = next((c for c in cases if not c.passed), None)
    dump = None
    if fail is not None:
        dump = {"seed": fail.seed, "instance": fail.instance, "oracle": fail.oracle,
                "value": fail.value, "tolerance": fail.tolerance}
    return CheckReport(name, fail is None, len(cases), max(errs, default=0.0), dump, details or {})


def random_spanning_params(rng, K: int, d: int = 2, b_max: float = 1.0) -> SetParams:
    """Perturbed template rows (unit norm, positively spanning) and random offsets."""
    T = uniform_template(K, d)
    while True:
        W = T + 0.4 * rng.standard_normal(T.shape)
        W /= np.linalg.norm(W, axis=1, keepdims=True)
        if positively_spans(W):
            return SetParams(Halfspaces(W, rng.uniform(-b_max, b_max, K)))


def sorted_order_statistic(S, alpha: float) -> float:
    """Oracle: ``c_n``-th smallest score by an explicit sort, ``inf`` if ``c_n > n``."""
    S = sorted(float(s) for s in S)
    c = math.ceil(round((len(S) + 1) * (1.0 - alpha), 9))
    return S[c - 1] if c <= len(S) else math.inf


def check_quantile_milp(trials: int = 50, n_max: int = 15, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    cases = []
    # boundary conventions first: n = 1 and c_n > n
    fixed = [(1, 0.5), (3, 0.05)]
    for t in range(trials + len(fixed)):
        if t < len(fixed):
            n, alpha = fixed[t]
        else:
            n, alpha = int(rng.integers(1, n_max + 1)), float(rng.uniform(0.05, 0.5))
        K = int(rng.integers(3, 7))
        params = random_spanning_params(rng, K)
        E = rng.standard_normal((n, 2)) * rng.uniform(0.2, 2.0, 2)
        oracle = sorted_order_statistic(scores(params, E), alpha)
        value = conformal_radius_milp(params, E, alpha)
        inst = {"n": n, "alpha": alpha, "W": params.W.tolist(), "b": params.b.tolist(), "residuals": E.tolist()}
        cases.append(OracleCase(seed, inst, oracle, value, 1e-9))
    return _summarise("quantile_milp", cases)


def _random_polytope(rng):
    K = int(rng.integers(3, 8))
    params = random_spanning_params(rng, K)
    center = rng.standard_normal(2)
    r = float(np.max(params.b)) + rng.uniform(0.1, 2.0)  # origin stays inside
    return Polytope(params.halfspaces, center, r)


def check_duality(trials: int = 100, seed: int = 0) -> CheckReport:
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(trials):
        p = _random_polytope(rng)
        z = rng.dirichlet(np.ones(2))
        c = rng.uniform(-0.2, 0.2, 2)
        Q = np.eye(2) + 0.3 * rng.standard_normal((2, 2))
        obj = ObjectiveSpec.linear(c, Q)
        V = np.array(enumerate_vertices(p))
        oracle = float(np.max((c + V @ Q.T) @ z))
        value = worst_case_dual_linear(z, p, obj)
        inst = {"W": p.halfspaces.W.tolist(), "b": p.halfspaces.b.tolist(), "center": p.center.tolist(),
                "radius": p.radius, "z": z.tolist(), "c": c.tolist(), "Q": Q.tolist()}
        cases.append(OracleCase(seed, inst, oracle, value, 1e-6))
    return _summarise("duality", cases)


def check_pinball_sort(trials: int = 50, seed: int = 0) -> CheckReport:
    """Smallest pinball minimiser vs a scan of every score as candidate threshold.

    Also records whether the subdifferential sandwich
    ``#{S < r} <= tau n <= #{S <= r}`` holds exactly.
    """
    rng = np.random.default_rng(seed)
    cases = []
    sandwich_ok = 0
    for _ in range(trials):
        n = int(rng.integers(2, 60))
        tau = float(rng.uniform(0.05, 0.95))
        params = random_spanning_params(rng, int(rng.integers(3, 7)))
        S = scores(params, rng.standard_normal((n, 2)))
        if rng.random() < 0.3:
            S = np.round(S, 1)  # ties
        vals = np.array([pinball_objective(S, s, tau) for s in S])
        best = float(np.min(vals))
        oracle = float(np.min(S[vals <= best + 1e-12]))
        value = pinball_threshold(S, tau)
        below, upto = int(np.sum(S < value)), int(np.sum(S <= value))
        sandwich_ok += below <= tau * n <= upto
        cases.append(OracleCase(seed, {"n": n, "tau": tau, "scores": S.tolist()}, oracle, value, 0.0))
    rep = _summarise("pinball_sort", cases, {"sandwich_holds": sandwich_ok, "trials": trials})
    rep.passed = rep.passed and sandwich_ok == trials
    return rep


def binomial_se(p: float, reps: int) -> float:
    """``sqrt(p (1 - p) / reps)``; bounds the standard error of a mean of [0, 1] values."""
    return math.sqrt(max(p * (1.0 - p), 0.0) / reps)


def coverage_replications(n: int, alpha: float, reps: int, seed: int = 0, learned: bool = False,
                          n_train: int = 200, n_learn: int = 100, n_test: int = 100,
                          iterations: int = 200) -> np.ndarray:
    """Per-replication test coverage on fresh synthetic splits.

    The fixed geometry is the ``K = 4`` template; with ``learned`` the
    geometry is trained on a separate learning split first, then the
    radius is re-calibrated on the ``n`` calibration points.
    """
    out = np.empty(reps)
    T = SetParams.from_arrays(uniform_template(4, 2))
    obj = ObjectiveSpec.linear()
    for i in range(reps):
        s = seed + i
        ds = gen_synthetic(n_train + n_learn + n + n_test, 2, s)
        a, b, c = n_train, n_train + n_learn, n_train + n_learn + n
        f = ridge_fit(ds.subset(slice(0, a)))
        params = T
        if learned:
            learn = ds.subset(slice(a, b))
            cfg = PinballConfig(alpha=alpha, iterations=iterations, seed=s)
            params = train_pinball(f.residuals(learn), f.predict(learn.X), obj, cfg).params
        S_cal = scores(params, f.residuals(ds.subset(slice(b, c))))
        r = sorted_order_statistic(S_cal, alpha)
        test = ds.subset(slice(c, None))
        out[i] = float(np.mean(scores(params, f.residuals(test)) <= r + 1e-12))
    return out


def check_coverage_band(n: int = 50, alpha: float = 0.1, reps: int = 200, seed: int = 0,
                        learned_reps: int | None = None, **kw) -> CheckReport:
    """Mean coverage over ``reps`` replications must reach ``1 - alpha - 3 se``.

    Both the fixed template and the re-calibrated learned geometry are
    checked; ``learned_reps`` sets the learned replication count (``None``
    uses ``reps``, ``0`` skips it).
    """
    details = {"n": n, "alpha": alpha, "reps": reps, "c_n": quantile_rank(n, alpha),
               "nominal": 1.0 - alpha}
    passed = True
    runs = [("fixed", reps)]
    lr = reps if learned_reps is None else learned_reps
    if lr:
        runs.append(("recalibrated", lr))
    for label, R in runs:
        cov = coverage_replications(n, alpha, R, seed, learned=label == "recalibrated", **kw)
        m = float(np.mean(cov))
        se = binomial_se(m, R)
        ok = m >= 1.0 - alpha - 3.0 * se
        details[label] = {"mean": m, "se": se, "lower": 1.0 - alpha - 3.0 * se, "passed": bool(ok),
                          "inconclusive": R < 2}
        passed = passed and ok
    inconclusive = any(details[lbl]["inconclusive"] for lbl, _ in runs)
    details["inconclusive"] = inconclusive
    return CheckReport("coverage_band", passed and not inconclusive, reps, 0.0, None, details)


def run_all(seed: int = 0, quick: bool = False) -> dict:
    """Every check with its default size; ``quick`` shrinks trial counts."""
    k = 5 if quick else 1
    reports = [
        check_quantile_milp(50 // k, 15, seed),
        check_duality(100 // k, seed),
        check_pinball_sort(50 // k, seed),
        check_coverage_band(50, 0.1, 200 // k, seed, learned_reps=100 // k),
    ]
    return {"seed": seed, "passed": all(r.passed for r in reports),
            "checks": [r.to_dict() for r in reports]}
