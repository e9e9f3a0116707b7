"""Two-stage learn/re-calibrate procedure, baselines, metrics and experiments.

An experiment is a grid of independent cells keyed by
``(sweep value, task, seed, method)``. Each cell is cached as JSON in the
run directory, so an interrupted run resumes where it stopped, and the
aggregate files are rebuilt from the cache in a fixed order.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import CCG_MAX_LEARN, ENERGY_FRACTIONS, METHODS, RunConfig, to_dict, to_ini
from .conformal import SetParams, conformal_radius, scores
from .data import Dataset, RidgePredictor, Standardizer, gen_synthetic, load_energy, make_splits, ridge_fit
from .geometry import Halfspaces, Polytope, box_polytope, contains_many, enumerate_vertices, uniform_template, volume
from .learn_ccg import train_ccg
from .learn_pinball import PinballConfig, train_pinball
from .robust import Ball, ObjectiveSpec, hindsight_optimum, minimax_over_points, robust_decision

SCHEMA_VERSION = 1
METRICS = ("coverage", "volume", "volume_rel", "wc_cost", "regret")
TIMINGS = ("time_learn", "time_calibrate", "time_evaluate")


class PipelineError(RuntimeError):
    """A learner or evaluation failure tagged with the method that raised it."""


@dataclass(frozen=True)
class MethodSpec:
    name: str
    learner: str = "pinball"  # pinball | ccg | identity
    hyper: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.name not in METHODS:
            raise ValueError(f"unknown method {self.name!r}")
        if self.learner not in ("pinball", "ccg", "identity"):
            raise ValueError(f"unknown learner {self.learner!r}")
        if self.learner == "pinball":
            PinballConfig(**self.pinball_kwargs())

    def pinball_kwargs(self) -> dict:
        keys = ("gamma", "eta0", "batch_size", "iterations", "b_max", "K", "seed", "alpha")
        return {k: self.hyper[k] for k in keys if k in self.hyper}


def make_objective(task: str, d: int = 2) -> ObjectiveSpec:
    """Appendix-C objectives; the linear task extends ``c`` with zeros for ``d > 2``."""
    if task in ("linear", "energy"):
        c = np.zeros(d)
        c[0] = -0.08
        return ObjectiveSpec.linear(c)
    if task == "quadratic":
        return ObjectiveSpec.quadratic()
    if task == "newsvendor":
        return ObjectiveSpec.newsvendor(d=d)
    raise ValueError(f"unknown task {task!r}")


@dataclass
class Model:
    """A calibrated set family ``x -> C(x)`` plus what it took to build it."""

    method: str
    predictor: RidgePredictor
    params: SetParams | None
    radius: float
    ball: bool = False
    learn_radius: float = math.nan
    info: dict = field(default_factory=dict)

    @property
    def is_whole_space(self) -> bool:
        return math.isinf(self.radius)

    def set_at(self, center):
        center = np.asarray(center, float)
        if self.ball:
            return Ball(center, self.radius)
        return Polytope(self.params.halfspaces, center, self.radius)

    def set_for(self, x):
        return self.set_at(self.predictor(np.atleast_2d(x))[0])


@dataclass
class Prepared:
    """One (task, seed) data instance: predictor, residuals and test points."""

    predictor: RidgePredictor
    E_learn: np.ndarray
    C_learn: np.ndarray
    E_cal: np.ndarray
    C_cal: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray
    bbox: tuple[np.ndarray, np.ndarray]
    meta: dict = field(default_factory=dict)


def y_bounding_box(Y, margin: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Coordinate-wise ``[min, max]`` widened by ``margin`` times the range."""
    Y = np.atleast_2d(Y)
    lo, hi = Y.min(axis=0), Y.max(axis=0)
    pad = margin * (hi - lo)
    return lo - pad, hi + pad


@functools.lru_cache(maxsize=4)
def _energy(path: str) -> Dataset:
    return load_energy(path)


def prepare(cfg: RunConfig, task: str, seed: int) -> Prepared:
    """Generate or load data, split it, fit the ridge predictor, form residuals."""
    meta = {}
    if task == "energy":
        ds = _energy(str(cfg.data))
        if cfg.fractions is not None:
            sp = make_splits(len(ds), fractions=cfg.fractions, seed=seed)
        elif sum(cfg.sizes) <= len(ds):
            sp = make_splits(len(ds), sizes=cfg.sizes, seed=seed)
        else:
            # the paper's absolute split does not fit the 768-row table
            sp = make_splits(len(ds), fractions=ENERGY_FRACTIONS, seed=seed)
            meta["split_note"] = (f"requested sizes {tuple(cfg.sizes)} exceed {len(ds)} rows; "
                                  f"used fractions {ENERGY_FRACTIONS}")
        xs = Standardizer.fit(ds.X[sp.train])
        X = xs.transform(ds.X)
        Y = ds.Y
        if cfg.standardize_outcomes in ("auto", "true"):
            Y = Standardizer.fit(ds.Y[sp.train]).transform(ds.Y)
        ds = Dataset(X, Y, "energy", seed)
    else:
        total = sum(cfg.sizes) if cfg.sizes is not None else cfg.n_total
        ds = gen_synthetic(total, cfg.d, seed)
        if cfg.standardize_outcomes == "true":
            raise ValueError("outcome standardisation is only defined for the energy task")
        sp = make_splits(total, sizes=cfg.sizes, fractions=cfg.fractions, seed=seed)
    meta["split_sizes"] = list(sp.sizes())
    train, learn, cal, test = (ds.subset(i) for i in (sp.train, sp.learn, sp.cal, sp.test))
    f = ridge_fit(train)
    return Prepared(
        predictor=f,
        E_learn=f.residuals(learn),
        C_learn=f.predict(learn.X),
        E_cal=f.residuals(cal),
        C_cal=f.predict(cal.X),
        X_test=test.X,
        Y_test=test.Y,
        bbox=y_bounding_box(train.Y, cfg.bbox_margin),
        meta=meta,
    )


def _box_params(d: int, half=None) -> SetParams:
    W = np.vstack([v for j in range(d) for v in (np.eye(d)[j], -np.eye(d)[j])])
    b = np.zeros(2 * d) if half is None else -np.repeat(np.asarray(half, float), 2)
    return SetParams(Halfspaces(W, b))


def learn_geometry(spec: MethodSpec, E, C, obj: ObjectiveSpec, alpha: float, K: int) -> tuple[SetParams, dict]:
    """Stage one: learn ``theta`` from the learning residuals."""
    E = np.atleast_2d(E)
    d = E.shape[1]
    if spec.learner == "identity":
        return SetParams.from_arrays(uniform_template(K, d)), {}
    if spec.learner == "ccg":
        if len(E) > CCG_MAX_LEARN:
            raise ValueError(f"ccg learns on at most {CCG_MAX_LEARN} residuals, got {len(E)}")
        h = spec.hyper
        res = train_ccg(E, np.mean(C, axis=0), obj, alpha, epsilon=h.get("epsilon", 1e-4),
                        max_iters=h.get("max_iters", 50), b_max=h.get("b_max", 1.0), K=K)
        return res.params, {"ccg_gap": res.gap, "ccg_iterations": res.iterations,
                            "ccg_converged": res.converged}
    kw = spec.pinball_kwargs()
    kw.update(alpha=alpha, K=K)
    cfg = PinballConfig(**kw, loss="volume" if spec.name == "min-size-polyhedron" else "robust")
    res = train_pinball(E, C, obj, cfg)
    return res.params, {"pinball_repairs": res.trace.repairs}


def two_stage(spec: MethodSpec, E_learn, C_learn, E_cal, obj: ObjectiveSpec, alpha: float, K: int,
              predictor: RidgePredictor) -> tuple[Model, dict]:
    """Learn on ``D_n``, re-calibrate the radius on the independent ``D_m``.

    Returns the model and the wall-clock seconds of each phase.
    """
    t0 = time.perf_counter()
    try:
        params, info = learn_geometry(spec, E_learn, C_learn, obj, alpha, K)
    except Exception as exc:
        raise PipelineError(f"[{spec.name}] learning failed: {exc}") from exc
    t1 = time.perf_counter()
    radius = conformal_radius(scores(params, E_cal), alpha)
    t2 = time.perf_counter()
    learn_r = conformal_radius(scores(params, E_learn), alpha)
    model = Model(spec.name, predictor, params, radius, learn_radius=learn_r, info=info)
    return model, {"time_learn": t1 - t0, "time_calibrate": t2 - t1}


def baseline_set(spec: MethodSpec, E_cal, alpha: float, K: int = 4):
    """Geometry-free baselines calibrated on ``E_cal``.

    Returns ``(SetParams or None, radius, is_ball)``; apply at a center
    with :class:`Model`.
    """
    E = np.atleast_2d(np.asarray(E_cal, float))
    d = E.shape[1]
    name = spec.name
    if name == "bonferroni-box":
        half = [conformal_radius(np.abs(E[:, j]), alpha / d) for j in range(d)]
        if not all(math.isfinite(h) for h in half):
            return _box_params(d), math.inf, False
        return _box_params(d, half), 0.0, False
    if name == "conformal-box":
        return _box_params(d), conformal_radius(np.max(np.abs(E), axis=1), alpha), False
    if name == "conformal-ball":
        return None, conformal_radius(np.linalg.norm(E, axis=1), alpha), True
    if name == "fixed-polyhedron":
        P = SetParams.from_arrays(uniform_template(K, d))
        return P, conformal_radius(scores(P, E), alpha), False
    raise ValueError(f"{name} is not a geometry-free baseline")


def fit_method(spec: MethodSpec, data: Prepared, obj: ObjectiveSpec, alpha: float, K: int) -> tuple[Model, dict]:
    """Build the calibrated set family of one method.

    Learned methods follow :func:`two_stage`; the fixed polyhedron uses
    the same data flow with an identity learner. ``ours-no-recal`` learns
    and calibrates on the pooled ``D_n + D_m``, and the geometry-free
    baselines calibrate on the same pool.
    """
    if spec.name in ("ours", "min-size-polyhedron"):
        return two_stage(spec, data.E_learn, data.C_learn, data.E_cal, obj, alpha, K, data.predictor)
    if spec.name == "fixed-polyhedron":
        ident = MethodSpec("fixed-polyhedron", "identity")
        return two_stage(ident, data.E_learn, data.C_learn, data.E_cal, obj, alpha, K, data.predictor)
    pool_E = np.vstack([data.E_learn, data.E_cal])
    if spec.name == "ours-no-recal":
        pool_C = np.vstack([data.C_learn, data.C_cal])
        return two_stage(spec, pool_E, pool_C, pool_E, obj, alpha, K, data.predictor)
    t0 = time.perf_counter()
    params, radius, ball = baseline_set(spec, pool_E, alpha, K)
    t1 = time.perf_counter()
    model = Model(spec.name, data.predictor, params, radius, ball=ball)
    return model, {"time_learn": 0.0, "time_calibrate": t1 - t0}


def set_volume(model: Model, d: int, mc_samples: int = 100_000, seed: int = 0) -> float:
    """Volume of the set at the origin (all sets are translates of it)."""
    if model.is_whole_space:
        return math.inf
    s = model.set_at(np.zeros(d))
    if model.ball:
        return s.volume()
    return volume(s, mc_samples=mc_samples, seed=seed)


def evaluate(model: Model, X_test, Y_test, obj: ObjectiveSpec, bbox=None, mc_samples: int = 100_000,
             ref_volume: float | None = None) -> dict:
    """Test metrics of one model.

    ``wc_cost`` is the robust value at the prescribed decision, ``regret``
    is ``g(z_hat(x), y) - min_z g(z, y)``; both are averaged over the test
    points. Whole-space sets (infinite radius) cover everything and are
    evaluated on the ``bbox`` outcome box.
    """
    X = np.atleast_2d(np.asarray(X_test, float))
    Y = np.atleast_2d(np.asarray(Y_test, float))
    if len(X) == 0:
        raise ValueError("evaluate needs a nonempty test split")
    d = Y.shape[1]
    t0 = time.perf_counter()
    centers = model.predictor(X)
    if model.is_whole_space:
        if bbox is None:
            raise ValueError("a whole-space set needs an outcome bounding box")
        covered = np.ones(len(Y), dtype=bool)
        V = np.array(enumerate_vertices(box_polytope(*bbox)))
        z, wc = minimax_over_points(V, obj)
        decisions = [(z, wc)] * len(Y)
    elif model.ball:
        covered = np.linalg.norm(Y - centers, axis=1) <= model.radius + 1e-9
        decisions = [robust_decision(model.set_at(c), obj) for c in centers]
    else:
        base = model.set_at(np.zeros(d))
        covered = np.array([contains_many(base, (y - c)[None, :])[0] for c, y in zip(centers, Y)])
        V0 = np.array(enumerate_vertices(base))
        if len(V0) == 0:
            raise PipelineError(f"[{model.method}] calibrated set is empty")
        decisions = [minimax_over_points(V0 + c, obj) for c in centers]
    wc = np.array([v for _, v in decisions])
    reg = np.array([obj.value(z, y) - hindsight_optimum(y, obj) for (z, _), y in zip(decisions, Y)])
    vol = set_volume(model, d, mc_samples)
    out = {
        "coverage": float(np.mean(covered)),
        "volume": vol,
        "volume_rel": vol / ref_volume if ref_volume else math.nan,
        "wc_cost": float(np.mean(wc)),
        "regret": float(np.mean(reg)),
        "time_evaluate": time.perf_counter() - t0,
    }
    return out


# ---------------------------------------------------------------- experiments


def method_spec(name: str, cfg: RunConfig, seed: int) -> MethodSpec:
    learner = cfg.learner if name in ("ours", "ours-no-recal") else "pinball"
    if name in ("ours", "ours-no-recal", "min-size-polyhedron"):
        hyper = {"gamma": cfg.gamma, "eta0": cfg.eta0, "batch_size": cfg.batch_size,
                 "iterations": cfg.iterations, "b_max": cfg.b_max, "seed": seed,
                 "epsilon": cfg.epsilon, "max_iters": cfg.max_iters}
        return MethodSpec(name, learner, hyper)
    return MethodSpec(name, "identity")


def run_cell(cfg: RunConfig, sweep_value, task: str, seed: int, method: str) -> dict:
    """Compute one ``(sweep value, task, seed, method)`` cell."""
    c = cfg.at_sweep(sweep_value)
    data = prepare(c, task, seed)
    obj = make_objective(task, c.d)
    spec = method_spec(method, c, seed)
    model, times = fit_method(spec, data, obj, c.alpha, c.K)
    ref_params, ref_radius, _ = baseline_set(MethodSpec("conformal-box"),
                                             np.vstack([data.E_learn, data.E_cal]), c.alpha)
    ref = Model("conformal-box", data.predictor, ref_params, ref_radius)
    ref_vol = set_volume(ref, c.d, c.mc_samples)
    try:
        metrics = evaluate(model, data.X_test, data.Y_test, obj, data.bbox, c.mc_samples, ref_vol)
    except (ValueError, ArithmeticError) as exc:
        raise PipelineError(f"[{method}] evaluation failed: {exc}") from exc
    times["time_evaluate"] = metrics.pop("time_evaluate")
    return {
        "key": cell_key(sweep_value, task, seed, method),
        "fingerprint": cfg.at_sweep(sweep_value).fingerprint(),
        "metrics": metrics,
        "timings": times,
        "radius": model.radius,
        "learn_radius": model.learn_radius,
        "info": model.info,
        "meta": data.meta,
    }


def cell_key(sweep_value, task: str, seed: int, method: str) -> str:
    sv = "none" if sweep_value is None else repr(float(sweep_value))
    return f"{sv}|{task}|{seed}|{method}"


def job_matrix(cfg: RunConfig) -> list[tuple]:
    return [(sv, t, s, m) for sv in cfg.sweep_points() for t in cfg.tasks
            for s in cfg.effective_seeds for m in cfg.methods]


def _cell_path(run_dir: Path, key: str) -> Path:
    safe = key.replace("|", "__").replace("/", "_")
    return run_dir / "cells" / f"{safe}.json"


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _run_job(args):
    cfg, sv, task, seed, method = args
    return run_cell(cfg, sv, task, seed, method)


def _load_cached(path: Path, fingerprint: str):
    if not path.is_file():
        return None
    try:
        cell = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError):
        return None
    return cell if cell.get("fingerprint") == fingerprint else None


@dataclass
class EvalReport:
    """Per-cell metric arrays over seeds plus summary statistics."""

    seeds: list[int]
    rows: dict  # (sweep value, task, method) -> {metric: [per-seed values]}

    def summary(self) -> list[dict]:
        out = []
        for (sv, task, method), metrics in self.rows.items():
            entry = {"sweep_value": sv, "task": task, "method": method, "metrics": {}}
            for name, vals in metrics.items():
                arr = np.array(vals, float)
                entry["metrics"][name] = {"mean": float(np.mean(arr)), "std": float(np.std(arr)),
                                          "values": [float(v) for v in arr]}
            out.append(entry)
        return out

    def mean(self, method: str, metric: str, task: str | None = None, sweep_value=None) -> float:
        for (sv, t, m), metrics in self.rows.items():
            if m == method and (task is None or t == task) and (sweep_value is None or sv == sweep_value):
                return float(np.mean(metrics[metric]))
        raise KeyError((method, metric, task, sweep_value))


def run_experiment(cfg: RunConfig, run_dir=None, jobs: int = 1, resume: bool = True, log=None) -> EvalReport:
    """Execute every cell, then write ``results.csv``, ``summary.json``,
    ``sweep.csv`` (for sweeps), ``timings.csv`` and ``config.ini``.

    Everything except ``timings.csv`` is a pure function of the config.
    """
    run_dir = Path(run_dir if run_dir is not None else cfg.output)
    (run_dir / "cells").mkdir(parents=True, exist_ok=True)
    (run_dir / "config.ini").write_text(to_ini(cfg), encoding="utf-8")
    jobs_list = job_matrix(cfg)
    cells = {}
    todo = []
    for sv, task, seed, method in jobs_list:
        key = cell_key(sv, task, seed, method)
        cached = _load_cached(_cell_path(run_dir, key), cfg.at_sweep(sv).fingerprint()) if resume else None
        if cached is not None:
            cells[key] = cached
        else:
            todo.append((cfg, sv, task, seed, method))

    def store(cell):
        _cell_path(run_dir, cell["key"]).write_text(_dump(cell), encoding="utf-8")
        cells[cell["key"]] = json.loads(_dump(cell))
        if log:
            log(f"done {cell['key']}")

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            for cell in ex.map(_run_job, todo):
                store(cell)
    else:
        for job in todo:
            store(_run_job(job))
    return write_outputs(cfg, run_dir, cells)


def write_outputs(cfg: RunConfig, run_dir: Path, cells: dict) -> EvalReport:
    rows = {}
    lines = io.StringIO()
    w = csv.writer(lines, lineterminator="\n")
    w.writerow(["sweep", "sweep_value", "seed", "task", "method", "metric", "value"])
    tlines = io.StringIO()
    tw = csv.writer(tlines, lineterminator="\n")
    tw.writerow(["sweep", "sweep_value", "seed", "task", "method", "phase", "seconds"])
    sweep_name = cfg.sweep_variable or "none"
    for sv, task, seed, method in job_matrix(cfg):
        cell = cells[cell_key(sv, task, seed, method)]
        svs = "" if sv is None else repr(float(sv))
        bucket = rows.setdefault((sv, task, method), {m: [] for m in METRICS})
        for m in METRICS:
            v = float(cell["metrics"][m])
            bucket[m].append(v)
            w.writerow([sweep_name, svs, seed, task, method, m, repr(v)])
        for ph in TIMINGS:
            tw.writerow([sweep_name, svs, seed, task, method, ph, f"{cell['timings'][ph]:.6f}"])
    report = EvalReport(list(cfg.effective_seeds), rows)
    (run_dir / "results.csv").write_text(lines.getvalue(), encoding="utf-8")
    (run_dir / "timings.csv").write_text(tlines.getvalue(), encoding="utf-8")
    notes = sorted({n for c in cells.values() for n in [c.get("meta", {}).get("split_note")] if n})
    summary = {
        "schema_version": SCHEMA_VERSION,
        "package_version": __version__,
        "config": {k: v for k, v in to_dict(cfg).items() if k != "output"},
        "sweep": cfg.sweep_variable,
        "cells": report.summary(),
        "notes": notes,
    }
    (run_dir / "summary.json").write_text(_dump(summary), encoding="utf-8")
    if cfg.sweep_variable:
        sl = io.StringIO()
        sw = csv.writer(sl, lineterminator="\n")
        sw.writerow([cfg.sweep_variable, "task", "method", "metric", "mean", "std"])
        for entry in report.summary():
            for m, st in entry["metrics"].items():
                sw.writerow([repr(float(entry["sweep_value"])), entry["task"], entry["method"], m,
                             repr(st["mean"]), repr(st["std"])])
        (run_dir / "sweep.csv").write_text(sl.getvalue(), encoding="utf-8")
    return report


def default_jobs() -> int:
    return max(1, min(4, os.cpu_count() or 1))
