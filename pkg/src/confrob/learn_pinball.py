"""Decision-aware set learning with a stochastic pinball-subgradient method.

The surrogate minimised over ``(theta, r, z)`` is

    max_{y in C_theta(x, r)} g(z, y) + gamma * mean_i rho_tau(S_i(theta) - r)

with ``theta`` restricted to unit-norm rows, ``|b_k| <= b_max`` and
positively spanning normals. The inner maximiser is a vertex; within a
step its active constraints are held fixed, which gives the envelope
subgradient ``-lam_k eps*`` for ``w_k``, ``-lam_k`` for ``b_k`` and
``sum lam`` for ``r``, where ``W_A^T lam = grad_u g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conformal import SetParams, conformal_radius, quantile_rank, scores
from .geometry import Halfspaces, Polytope, positively_spans, uniform_template, vertices_with_active
from .robust import ObjectiveSpec, worst_case_active


@dataclass
class PinballConfig:
    gamma: float = 5.0
    alpha: float = 0.1
    tau: float | None = None  # defaults to c_n / n
    eta0: float = 0.05
    batch_size: int = 32
    iterations: int = 2000
    b_max: float = 1.0
    K: int = 4
    seed: int = 0
    loss: str = "robust"  # robust | volume

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.tau is not None and not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.loss not in ("robust", "volume"):
            raise ValueError(f"unknown loss {self.loss!r}")

    def tau_for(self, n: int) -> float:
        if self.tau is not None:
            return self.tau
        return min(quantile_rank(n, self.alpha), n) / n


@dataclass
class PinballState:
    W: np.ndarray
    b: np.ndarray
    r: float
    z: np.ndarray

    @property
    def params(self) -> SetParams:
        return SetParams(Halfspaces(self.W, self.b))

    def polytope(self, center) -> Polytope:
        return Polytope(Halfspaces(self.W, self.b), center, self.r)


@dataclass
class TrainTrace:
    objective: list[float] = field(default_factory=list)
    radius: list[float] = field(default_factory=list)
    pinball_loss: list[float] = field(default_factory=list)
    step_norm: list[float] = field(default_factory=list)
    repairs: int = 0

    def __len__(self) -> int:
        return len(self.objective)


@dataclass
class PinballResult:
    params: SetParams
    radius: float
    z: np.ndarray
    trace: TrainTrace


def pinball(u, tau: float):
    """``rho_tau(u) = tau u_+ + (1 - tau)(-u)_+``."""
    u = np.asarray(u, float)
    out = tau * np.maximum(u, 0.0) + (1.0 - tau) * np.maximum(-u, 0.0)
    return float(out) if out.ndim == 0 else out


def pinball_objective(S, r: float, tau: float) -> float:
    """``L_n(theta, r)`` for precomputed scores ``S``."""
    return float(np.mean(pinball(np.asarray(S, float) - r, tau)))


def pinball_threshold(S, tau: float) -> float:
    """Smallest minimiser of ``r -> mean rho_tau(S_i - r)``: the ``ceil(tau n)``-th score."""
    S = np.sort(np.asarray(S, float).ravel())
    n = S.size
    if n == 0:
        raise ValueError("pinball_threshold needs scores")
    k = int(math.ceil(tau * n - 1e-9 * max(1.0, tau * n)))
    return float(S[min(max(k, 1), n) - 1])


def pinball_radius(params: SetParams, residuals, tau: float) -> float:
    """:func:`pinball_threshold` of the scores of ``residuals``."""
    return pinball_threshold(scores(params, residuals), tau)


def project_simplex(z) -> np.ndarray:
    """Euclidean projection onto ``{z >= 0, sum z = 1}`` (sort-based)."""
    z = np.asarray(z, float).ravel()
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, z.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(z - theta, 0.0)


def _normalize_rows(W: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=1)
    out = fallback.copy()
    ok = norms > 1e-12
    out[ok] = W[ok] / norms[ok, None]
    return out


def project_theta(params: SetParams, b_max: float, template: np.ndarray | None = None) -> tuple[SetParams, float]:
    """Project onto unit-norm rows, ``|b| <= b_max`` and positive spanning.

    Returns the projected parameters and the blend coefficient used to
    restore spanning (0 when no repair was needed).
    """
    W = np.array(params.W, float)
    K, d = W.shape
    T = uniform_template(K, d) if template is None else template
    W = _normalize_rows(W, T)
    b = np.clip(params.b, -b_max, b_max)
    blend = 0.0
    if not positively_spans(W):
        def mix(lam):
            return _normalize_rows((1.0 - lam) * W + lam * T, T)

        lo, hi = 0.0, 1.0
        while hi - lo > 1e-3:
            mid = 0.5 * (lo + hi)
            if positively_spans(mix(mid)):
                hi = mid
            else:
                lo = mid
        blend = hi
        W = mix(hi)
    return SetParams(Halfspaces(W, b)), blend


def _active_multipliers(W: np.ndarray, active, grad_u: np.ndarray) -> np.ndarray:
    A = W[list(active)]
    try:
        return np.linalg.solve(A.T, grad_u)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A.T, grad_u, rcond=None)[0]


def _face_lengths(state: PinballState):
    """Edge length and residual-space midpoint of every face (d = 2)."""
    p = state.polytope(np.zeros(state.W.shape[1]))
    va = vertices_with_active(p, check=False)
    K = state.W.shape[0]
    lengths = np.zeros(K)
    mids = np.zeros((K, 2))
    for k in range(K):
        pts = [v for v, act in va if k in act]
        if len(pts) >= 2:
            lengths[k] = np.linalg.norm(pts[0] - pts[1])
            mids[k] = 0.5 * (pts[0] + pts[1])
    return lengths, mids


def surrogate_terms(state: PinballState, batch, center, obj: ObjectiveSpec, cfg: PinballConfig,
                    tau: float, active=None):
    """Surrogate value on a minibatch and the active set of the inner maximiser.

    With ``active`` given, the inner maximiser is the vertex defined by
    those constraints (used for finite-difference checks).
    """
    center = np.asarray(center, float)
    E = np.atleast_2d(batch)
    S = np.max(E @ state.W.T + state.b, axis=1)
    pin = pinball_objective(S, state.r, tau)
    if cfg.loss == "volume":
        from .geometry import shoelace

        p = state.polytope(np.zeros(state.W.shape[1]))
        va = vertices_with_active(p, check=False)
        area = shoelace([v for v, _ in va]) if len(va) > 2 else 0.0
        return area + cfg.gamma * pin, None, pin
    if active is None:
        val, _, active = worst_case_active(state.z, state.polytope(center), obj)
    else:
        A = state.W[list(active)]
        h = state.r - state.b[list(active)]
        y = center + np.linalg.solve(A, h)
        val = obj.value(state.z, y)
    return val + cfg.gamma * pin, active, pin


def surrogate_gradient(state: PinballState, batch, center, obj: ObjectiveSpec, cfg: PinballConfig,
                       tau: float):
    """Stochastic subgradient ``(gW, gb, gr, gz)`` of the minibatch surrogate."""
    center = np.asarray(center, float)
    E = np.atleast_2d(batch)
    B = E.shape[0]
    K, d = state.W.shape
    gW = np.zeros((K, d))
    gb = np.zeros(K)
    gr = 0.0
    gz = np.zeros_like(state.z)

    if cfg.loss == "robust":
        _, y, active = worst_case_active(state.z, state.polytope(center), obj)
        eps = y - center
        lam = _active_multipliers(state.W, active, obj.grad_u(state.z, y))
        for k, l in zip(active, lam):
            gW[k] -= l * eps
            gb[k] -= l
        gr += float(np.sum(lam))
        gz = obj.grad_z(state.z, y)
    else:
        if d != 2:
            raise ValueError("volume loss is implemented for d = 2 only")
        lengths, mids = _face_lengths(state)
        gW -= lengths[:, None] * mids
        gb -= lengths
        gr += float(lengths.sum())

    lin = E @ state.W.T + state.b
    kstar = np.argmax(lin, axis=1)
    S = lin[np.arange(B), kstar]
    xi = np.where(S >= state.r, tau, -(1.0 - tau))
    coef = cfg.gamma * xi / B
    np.add.at(gW, kstar, coef[:, None] * E)
    np.add.at(gb, kstar, coef)
    gr -= cfg.gamma * float(np.mean(xi))
    return gW, gb, gr, gz


def _ensure_nonempty(state: PinballState, E: np.ndarray, tau: float) -> bool:
    p = state.polytope(np.zeros(state.W.shape[1]))
    if vertices_with_active(p, check=False):
        return False
    S = np.max(E @ state.W.T + state.b, axis=1)
    state.r = max(state.r, float(np.sort(S)[max(int(math.ceil(tau * len(S))), 1) - 1]))
    return True


def subgradient_step(state: PinballState, batch, center, obj: ObjectiveSpec, cfg: PinballConfig,
                     tau: float, iteration: int, template: np.ndarray | None = None):
    """One projected stochastic subgradient step; returns ``(new_state, step_norm)``."""
    gW, gb, gr, gz = surrogate_gradient(state, batch, center, obj, cfg, tau)
    eta = cfg.eta0 / math.sqrt(iteration + 1.0)
    raw = SetParams(Halfspaces(state.W - eta * gW, state.b - eta * gb))
    params, _ = project_theta(raw, cfg.b_max, template)
    z = project_simplex(state.z - eta * gz) if cfg.loss == "robust" else state.z
    new = PinballState(np.array(params.W), np.array(params.b), state.r - eta * gr, z)
    step = math.sqrt(float(np.sum(gW**2) + np.sum(gb**2) + gr**2 + np.sum(gz**2))) * eta
    return new, step


def init_state(residuals, K: int, alpha: float, p: int) -> PinballState:
    E = np.atleast_2d(residuals)
    d = E.shape[1]
    W = uniform_template(K, d)
    b = np.zeros(K)
    r = conformal_radius(np.max(E @ W.T, axis=1), alpha)
    if not math.isfinite(r):
        r = float(np.max(np.max(E @ W.T, axis=1)))
    return PinballState(W, b, r, np.full(p, 1.0 / p))


def train_pinball(residuals, centers, obj: ObjectiveSpec, cfg: PinballConfig) -> PinballResult:
    """Run the stochastic pinball-subgradient method on the learning split.

    ``residuals`` are ``y_i - f_hat(x_i)``; ``centers`` are the predictions
    ``f_hat(x_i)``. Each step draws a minibatch for the pinball term and
    one context for the robust term.
    """
    E = np.atleast_2d(np.asarray(residuals, float))
    C = np.atleast_2d(np.asarray(centers, float))
    n, d = E.shape
    if n < cfg.K:
        raise ValueError(f"need at least K={cfg.K} learning residuals, got {n}")
    tau = cfg.tau_for(n)
    B = min(cfg.batch_size, n)
    rng = np.random.default_rng(cfg.seed)
    template = uniform_template(cfg.K, d)
    state = init_state(E, cfg.K, cfg.alpha, obj.n_decisions)
    trace = TrainTrace()
    for it in range(cfg.iterations):
        idx = rng.choice(n, size=B, replace=False)
        j = int(rng.integers(n))
        batch = E[idx]
        if _ensure_nonempty(state, batch, tau):
            trace.repairs += 1
        obj_val, _, pin = surrogate_terms(state, batch, C[j], obj, cfg, tau)
        state, step = subgradient_step(state, batch, C[j], obj, cfg, tau, it, template)
        trace.objective.append(obj_val)
        trace.radius.append(state.r)
        trace.pinball_loss.append(pin)
        trace.step_norm.append(step)
    _ensure_nonempty(state, E, tau)
    return PinballResult(state.params, state.r, state.z, trace)


def full_surrogate(params: SetParams, r: float, z, residuals, center, obj: ObjectiveSpec,
                   cfg: PinballConfig) -> float:
    """Deterministic surrogate on the whole learning split at one context."""
    E = np.atleast_2d(residuals)
    st = PinballState(np.array(params.W), np.array(params.b), r, np.asarray(z, float))
    val, _, _ = surrogate_terms(st, E, center, obj, cfg, cfg.tau_for(len(E)))
    return val
