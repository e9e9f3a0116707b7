"""Run configuration: an INI file with fixed sections and strict keys.

Grammar (every key optional unless noted)::

    [experiment]
    tasks = linear, newsvendor        # linear | quadratic | newsvendor | energy
    methods = ours, conformal-box
    seeds = 0, 1, 2                   # or a range "0-4"
    seed_offset = 0
    alpha = 0.1
    K = 4
    d = 2
    output = runs/demo
    data =                            # Energy Efficiency CSV (energy task only)
    standardize_outcomes = auto       # auto | true | false

    [split]
    sizes = 1200, 300, 300, 1000      # train, learn, calibrate, test
    fractions =                       # alternative to sizes
    n_total =                         # synthetic row count in fraction mode

    [learner]
    name = pinball                    # pinball | ccg
    gamma = 5.0
    eta0 = 0.05
    batch_size = 32
    iterations = 2000
    b_max = 1.0
    epsilon = 1e-4
    max_iters = 50

    [evaluation]
    bbox_margin = 0.1
    mc_samples = 100000

    [sweep]
    variable =                        # d | K | learn_fraction
    values =
    total = 200                       # n + m held fixed in learn_fraction sweeps

Unknown sections or keys raise :class:`ConfigError` naming ``section.key``.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import re
from dataclasses import dataclass
from pathlib import Path

TASKS = ("linear", "quadratic", "newsvendor", "energy")
METHODS = (
    "ours",
    "ours-no-recal",
    "bonferroni-box",
    "conformal-box",
    "conformal-ball",
    "fixed-polyhedron",
    "min-size-polyhedron",
)
LEARNERS = ("pinball", "ccg")
SWEEPS = ("d", "K", "learn_fraction")
ENERGY_FRACTIONS = (0.5, 0.15, 0.15, 0.2)
CCG_MAX_LEARN = 40


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass(frozen=True)
class RunConfig:
    tasks: tuple[str, ...] = ("linear",)
    methods: tuple[str, ...] = ("ours", "conformal-box")
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    seed_offset: int = 0
    alpha: float = 0.1
    K: int = 4
    d: int = 2
    output: str = "runs/default"
    data: str | None = None
    standardize_outcomes: str = "auto"
    sizes: tuple[int, ...] | None = (1200, 300, 300, 1000)
    fractions: tuple[float, ...] | None = None
    n_total: int | None = None
    learner: str = "pinball"
    gamma: float = 5.0
    eta0: float = 0.05
    batch_size: int = 32
    iterations: int = 2000
    b_max: float = 1.0
    epsilon: float = 1e-4
    max_iters: int = 50
    bbox_margin: float = 0.1
    mc_samples: int = 100_000
    sweep_variable: str | None = None
    sweep_values: tuple[float, ...] = ()
    sweep_total: int = 200

    def __post_init__(self):
        validate(self)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    @property
    def effective_seeds(self) -> tuple[int, ...]:
        return tuple(s + self.seed_offset for s in self.seeds)

    def at_sweep(self, value) -> "RunConfig":
        """The configuration of one sweep point (unchanged without a sweep)."""
        v = self.sweep_variable
        if v is None:
            return self
        if v == "d":
            return self.replace(d=int(value), sweep_variable=None, sweep_values=())
        if v == "K":
            return self.replace(K=int(value), sweep_variable=None, sweep_values=())
        tr, _, _, te = self.sizes
        n = int(round(float(value) * self.sweep_total))
        return self.replace(sizes=(tr, n, self.sweep_total - n, te), sweep_variable=None, sweep_values=())

    def sweep_points(self) -> list:
        return list(self.sweep_values) if self.sweep_variable else [None]

    def fingerprint(self) -> str:
        """Everything that can change a cell's numbers (not output, seeds or method list)."""
        d = to_dict(self)
        for k in ("output", "seeds", "methods", "tasks"):
            d.pop(k, None)
        return repr(sorted(d.items()))


_FIELDS = {
    "experiment": {
        "tasks": "tasks", "methods": "methods", "seeds": "seeds", "seed_offset": "seed_offset",
        "alpha": "alpha", "k": "K", "d": "d", "output": "output", "data": "data",
        "standardize_outcomes": "standardize_outcomes",
    },
    "split": {"sizes": "sizes", "fractions": "fractions", "n_total": "n_total"},
    "learner": {
        "name": "learner", "gamma": "gamma", "eta0": "eta0", "batch_size": "batch_size",
        "iterations": "iterations", "b_max": "b_max", "epsilon": "epsilon", "max_iters": "max_iters",
    },
    "evaluation": {"bbox_margin": "bbox_margin", "mc_samples": "mc_samples"},
    "sweep": {"variable": "sweep_variable", "values": "sweep_values", "total": "sweep_total"},
}


def _fail(path: str, msg: str):
    raise ConfigError(f"{path}: {msg}")


def validate(c: RunConfig) -> None:
    if not c.tasks:
        _fail("experiment.tasks", "at least one task is required")
    for t in c.tasks:
        if t not in TASKS:
            _fail("experiment.tasks", f"unknown task {t!r}; choose from {', '.join(TASKS)}")
    if not c.methods:
        _fail("experiment.methods", "at least one method is required")
    for m in c.methods:
        if m not in METHODS:
            _fail("experiment.methods", f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    if len(set(c.methods)) != len(c.methods):
        _fail("experiment.methods", "duplicate method")
    if not c.seeds:
        _fail("experiment.seeds", "at least one seed is required")
    if len(set(c.seeds)) != len(c.seeds):
        _fail("experiment.seeds", "duplicate seed")
    if any(s + c.seed_offset < 0 for s in c.seeds):
        _fail("experiment.seed_offset", "effective seeds must be nonnegative")
    if not 0.0 < c.alpha < 1.0:
        _fail("experiment.alpha", f"must lie in (0, 1), got {c.alpha}")
    if c.d < 1:
        _fail("experiment.d", f"must be >= 1, got {c.d}")
    if c.standardize_outcomes not in ("auto", "true", "false"):
        _fail("experiment.standardize_outcomes", "must be auto, true or false")
    if (c.sizes is None) == (c.fractions is None):
        _fail("split", "give exactly one of sizes or fractions")
    if c.sizes is not None:
        if len(c.sizes) != 4 or any(s < 1 for s in c.sizes):
            _fail("split.sizes", f"need four positive counts, got {c.sizes}")
    if c.fractions is not None:
        if len(c.fractions) != 4 or any(f <= 0 for f in c.fractions) or sum(c.fractions) > 1 + 1e-9:
            _fail("split.fractions", f"need four positive fractions summing to <= 1, got {c.fractions}")
        if any(t != "energy" for t in c.tasks) and (c.n_total is None or c.n_total < 1):
            _fail("split.n_total", "synthetic tasks in fraction mode need a positive n_total")
    if "energy" in c.tasks and not c.data:
        _fail("experiment.data", "the energy task needs the path of the Energy Efficiency CSV")
    if c.learner not in LEARNERS:
        _fail("learner.name", f"unknown learner {c.learner!r}; choose from {', '.join(LEARNERS)}")
    if c.gamma <= 0:
        _fail("learner.gamma", "must be positive")
    if c.eta0 <= 0:
        _fail("learner.eta0", "must be positive")
    if c.batch_size < 1:
        _fail("learner.batch_size", "must be >= 1")
    if c.iterations < 0:
        _fail("learner.iterations", "must be >= 0")
    if c.b_max <= 0:
        _fail("learner.b_max", "must be positive")
    if c.epsilon <= 0:
        _fail("learner.epsilon", "must be positive")
    if c.max_iters < 1:
        _fail("learner.max_iters", "must be >= 1")
    if c.bbox_margin < 0:
        _fail("evaluation.bbox_margin", "must be nonnegative")
    if c.mc_samples < 1:
        _fail("evaluation.mc_samples", "must be positive")
    if c.sweep_variable is not None:
        if c.sweep_variable not in SWEEPS:
            _fail("sweep.variable", f"unknown sweep {c.sweep_variable!r}; choose from {', '.join(SWEEPS)}")
        if not c.sweep_values:
            _fail("sweep.values", "a sweep needs at least one value")
        if c.sweep_variable == "learn_fraction":
            if c.sizes is None:
                _fail("split.sizes", "learn_fraction sweeps need absolute sizes for train and test")
            if c.sweep_total < 2:
                _fail("sweep.total", "must be >= 2")
            for f in c.sweep_values:
                n = int(round(f * c.sweep_total))
                if not 0.0 < f < 1.0 or n < 1 or n >= c.sweep_total:
                    _fail("sweep.values", f"fraction {f} leaves an empty learn or calibration split")
        points = [c.at_sweep(v) for v in c.sweep_values]
    else:
        points = [c]
    for p in points:
        _validate_point(p)


def _validate_point(c: RunConfig) -> None:
    if c.K < c.d + 1:
        _fail("experiment.K", f"need K >= d + 1, got K={c.K}, d={c.d}")
    if c.d > 4:
        _fail("experiment.d", "vertex enumeration supports d <= 4")
    for t in c.tasks:
        if t in ("quadratic", "newsvendor", "energy") and c.d != 2:
            _fail("experiment.d", f"task {t} is defined for d = 2")
    if "min-size-polyhedron" in c.methods and c.d != 2:
        _fail("experiment.methods", "min-size-polyhedron needs d = 2 (area loss)")
    if c.learner == "ccg" and any(m in ("ours", "ours-no-recal") for m in c.methods):
        if c.d != 2:
            _fail("learner.name", "ccg needs d = 2")
        if any(t not in ("linear", "energy") for t in c.tasks):
            _fail("learner.name", "ccg needs a linear objective")
        if c.sizes is not None and c.sizes[1] + ("ours-no-recal" in c.methods) * c.sizes[2] > CCG_MAX_LEARN:
            _fail("split.sizes", f"ccg learns on at most {CCG_MAX_LEARN} residuals")


def _split_list(raw: str) -> list[str]:
    return [s.strip() for s in raw.replace("\n", ",").split(",") if s.strip()]


def _parse_seeds(raw: str) -> tuple[int, ...]:
    out = []
    for tok in _split_list(raw):
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", tok)
        if m:
            out.extend(range(int(m[1]), int(m[2]) + 1))
        else:
            out.append(int(tok))
    return tuple(out)


_KINDS = {
    "tasks": lambda s: tuple(_split_list(s)),
    "methods": lambda s: tuple(_split_list(s)),
    "seeds": _parse_seeds,
    "seed_offset": int, "alpha": float, "K": int, "d": int, "output": str,
    "data": lambda s: s or None,
    "standardize_outcomes": lambda s: s.lower(),
    "sizes": lambda s: tuple(int(v) for v in _split_list(s)) or None,
    "fractions": lambda s: tuple(float(v) for v in _split_list(s)) or None,
    "n_total": lambda s: int(s) if s else None,
    "learner": str, "gamma": float, "eta0": float, "batch_size": int, "iterations": int,
    "b_max": float, "epsilon": float, "max_iters": int, "bbox_margin": float, "mc_samples": int,
    "sweep_variable": lambda s: s or None,
    "sweep_values": lambda s: tuple(float(v) for v in _split_list(s)),
    "sweep_total": int,
}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in _FIELDS:
            _fail(section, "unknown section")
        for key, raw in cp.items(section):
            name = _FIELDS[section].get(key)
            if name is None:
                _fail(f"{section}.{key}", "unknown key")
            try:
                values[name] = _KINDS[name](raw.strip())
            except ValueError as exc:
                _fail(f"{section}.{key}", f"cannot parse {raw!r}: {exc}")
    if "fractions" in values and values["fractions"] and "sizes" not in values:
        values["sizes"] = None
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config: file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def to_dict(c: RunConfig) -> dict:
    out = {}
    for f in dataclasses.fields(c):
        v = getattr(c, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_ini(c: RunConfig) -> str:
    """Resolved configuration with every default spelled out."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for section, keys in _FIELDS.items():
        cp.add_section(section)
        for key, name in keys.items():
            cp.set(section, "K" if name == "K" else key, _fmt(getattr(c, name)))
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
