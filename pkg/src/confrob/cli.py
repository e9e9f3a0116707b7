"""Command-line entry point: ``confrob <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Failures print a one-line JSON object ``{"error": ..., "message": ...}``
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config, to_ini
from .data import DataFormatError, gen_synthetic, write_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
SEED_ENV = "CONFROB_SEED_OFFSET"

# Published reference means (coverage, volume, WC cost x10^-1, regret x10^-1).
REFERENCE = {
    "synthetic": {
        "source": "reference, synthetic objectives (n=m=300, K=4, 1-alpha=0.90, five seeds)",
        "rows": {
            "linear": {
                "bonferroni-box": (0.913, 0.84, 1.35, 0.26),
                "conformal-box": (0.901, 1.10, 1.64, 0.11),
                "conformal-ball": (0.896, 1.03, 1.97, 0.30),
                "fixed-polyhedron": (0.906, 0.69, 2.23, 0.35),
                "min-size-polyhedron": (0.909, 0.61, 2.44, 0.29),
                "ours-no-recal": (0.901, 0.78, 1.15, 0.27),
                "ours": (0.902, 0.78, 1.19, 0.29),
            },
            "quadratic": {
                "bonferroni-box": (0.913, 0.84, 2.10, 0.24),
                "conformal-box": (0.901, 1.10, 2.39, 0.12),
                "conformal-ball": (0.896, 1.03, 2.55, 0.29),
                "fixed-polyhedron": (0.906, 0.69, 2.87, 0.33),
                "min-size-polyhedron": (0.909, 0.61, 3.09, 0.28),
                "ours-no-recal": (0.906, 0.81, 1.89, 0.20),
                "ours": (0.901, 0.78, 1.80, 0.20),
            },
            "newsvendor": {
                "bonferroni-box": (0.911, 0.88, 8.76, 0.21),
                "conformal-box": (0.898, 1.08, 9.07, 0.19),
                "conformal-ball": (0.895, 1.05, 8.03, 0.15),
                "fixed-polyhedron": (0.898, 0.73, 8.39, 0.24),
                "min-size-polyhedron": (0.901, 0.59, 8.47, 0.26),
                "ours-no-recal": (0.892, 0.70, 8.05, 0.20),
                "ours": (0.898, 0.73, 8.12, 0.21),
            },
        },
    },
    "energy": {
        "source": "reference, Energy Efficiency (K=4, 1-alpha=0.90, five seeds)",
        "rows": {
            "energy": {
                "bonferroni-box": (0.914, 0.72, 2.29, 0.43),
                "conformal-box": (0.915, 0.88, 3.53, 0.32),
                "conformal-ball": (0.908, 0.84, 2.94, 0.74),
                "fixed-polyhedron": (0.900, 0.66, 3.70, 0.84),
                "min-size-polyhedron": (0.929, 0.65, 3.06, 0.77),
                "ours-no-recal": (0.897, 1.20, 1.80, 0.48),
                "ours": (0.896, 1.16, 1.76, 0.48),
            },
        },
    },
}
REF_METRICS = ("coverage", "volume", "wc_cost", "regret")
# the tables print WC cost and regret in units of 1e-1
REF_SCALE = {"coverage": 1.0, "volume": 1.0, "wc_cost": 10.0, "regret": 10.0}

SCALES = {
    "desk": {"sizes": (400, 100, 100, 500), "seeds": (0, 1, 2)},
    "paper": {"sizes": (1200, 300, 300, 1000), "seeds": (0, 1, 2, 3, 4)},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed_offset(args) -> int:
    if args.seed_offset is not None:
        return args.seed_offset
    raw = os.environ.get(SEED_ENV, "").strip()
    if not raw:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be positive, got {args.n}")
    if args.d < 1:
        raise UsageError(f"--d must be positive, got {args.d}")
    ds = gen_synthetic(args.n, args.d, args.seed + _seed_offset(args))
    out = Path(args.out)
    try:
        if out.parent and not out.parent.exists():
            out.parent.mkdir(parents=True)
        write_csv(ds, out)
    except OSError as exc:
        raise RuntimeError(f"cannot write {out}: {exc}") from None
    print(f"wrote {len(ds)} rows to {out}")
    return EXIT_OK


def _apply_common(cfg: RunConfig, args) -> RunConfig:
    kw = {}
    off = _seed_offset(args)
    if off:
        kw["seed_offset"] = cfg.seed_offset + off
    if getattr(args, "out", None):
        kw["output"] = args.out
    return cfg.replace(**kw) if kw else cfg


def _print_matrix(cfg: RunConfig) -> None:
    from .pipeline import job_matrix

    jobs = job_matrix(cfg)
    print(f"{len(jobs)} jobs -> {cfg.output}")
    for sv, task, seed, method in jobs:
        sweep = "" if sv is None else f"{cfg.sweep_variable}={sv:g} "
        print(f"  {sweep}task={task} seed={seed} method={method}")


def _execute(cfg: RunConfig, args) -> int:
    from .pipeline import run_experiment

    if args.dry_run:
        _print_matrix(cfg)
        return EXIT_OK
    report = run_experiment(cfg, cfg.output, jobs=args.jobs, resume=not args.no_resume,
                            log=_log if args.verbose else None)
    print(f"results in {cfg.output}")
    for entry in report.summary():
        m = entry["metrics"]
        sv = "" if entry["sweep_value"] is None else f"[{cfg.sweep_variable}={entry['sweep_value']:g}] "
        print(f"  {sv}{entry['task']:<10} {entry['method']:<20} coverage={m['coverage']['mean']:.3f} "
              f"wc_cost={m['wc_cost']['mean']:.4f} regret={m['regret']['mean']:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    return _execute(cfg, args)


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    kw = {}
    if args.variable:
        kw["sweep_variable"] = args.variable
    if args.values:
        kw["sweep_values"] = tuple(float(v) for v in args.values.split(","))
    if args.total:
        kw["sweep_total"] = args.total
    cfg = _apply_common(cfg.replace(**kw) if kw else cfg, args)
    if cfg.sweep_variable is None:
        raise ConfigError("sweep.variable: sweep needs a variable (config or --variable)")
    return _execute(cfg, args)


def reproduce_config(table: str, scale: str, data: str | None, out: str, iterations: int = 2000) -> RunConfig:
    from .config import METHODS

    if table == "energy" and not data:
        raise UsageError("reproduce --table energy requires --data PATH (Energy Efficiency CSV)")
    sc = SCALES[scale]
    tasks = ("energy",) if table == "energy" else ("linear", "quadratic", "newsvendor")
    return RunConfig(tasks=tasks, methods=METHODS, seeds=sc["seeds"], sizes=sc["sizes"], data=data,
                     output=out, iterations=iterations)


def comparison_rows(report, table: str) -> list[dict]:
    ref = REFERENCE[table]
    rows = []
    for entry in report.summary():
        known = ref["rows"].get(entry["task"], {}).get(entry["method"])
        if known is None:
            continue
        for metric, pv in zip(REF_METRICS, known):
            ours = entry["metrics"][metric]["mean"] * REF_SCALE[metric]
            rows.append({"task": entry["task"], "method": entry["method"], "metric": metric,
                         "ours": ours, "reference": pv, "delta": ours - pv, "source": ref["source"]})
    return rows


def cmd_reproduce(args) -> int:
    from .pipeline import run_experiment

    out = args.out or f"runs/reproduce-{args.table}-{args.scale}"
    cfg = _apply_common(reproduce_config(args.table, args.scale, args.data, out, args.iterations), args)
    if args.dry_run:
        _print_matrix(cfg)
        return EXIT_OK
    report = run_experiment(cfg, cfg.output, jobs=args.jobs, resume=not args.no_resume,
                            log=_log if args.verbose else None)
    rows = comparison_rows(report, args.table)
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["task", "method", "metric", "ours", "reference", "delta", "source"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({**r, "ours": repr(r["ours"]), "delta": repr(r["delta"])})
    Path(cfg.output, "comparison.csv").write_text(buf.getvalue(), encoding="utf-8")
    print(f"reference: {REFERENCE[args.table]['source']}")
    print("WC cost and regret are shown x10 to match the reference's 1e-1 units; volumes are raw "
          "(the reference's volume normalisation is not stated)")
    print(f"{'task':<11}{'method':<21}{'metric':<10}{'ours':>10}{'ref':>9}{'delta':>10}")
    for r in rows:
        print(f"{r['task']:<11}{r['method']:<21}{r['metric']:<10}{r['ours']:>10.3f}{r['reference']:>9.3f}"
              f"{r['delta']:>+10.3f}")
    print(f"results in {cfg.output}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import run_all

    rep = run_all(seed=args.seed + _seed_offset(args), quick=args.quick)
    text = json.dumps(rep, indent=2, sort_keys=True, default=float) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    for c in rep["checks"]:
        _log(f"{c['name']:<15} {'pass' if c['passed'] else 'FAIL'}")
    return EXIT_OK if rep["passed"] else EXIT_RUNTIME


def cmd_version(args) -> int:
    print(f"confrob {__version__}")
    return EXIT_OK


def cmd_show_config(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    sys.stdout.write(to_ini(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed-offset", type=int, default=None,
                        help=f"added to every seed (default: ${SEED_ENV} or 0)")
    runner = _Parser(add_help=False)
    runner.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    runner.add_argument("--dry-run", action="store_true", help="print the job matrix and exit")
    runner.add_argument("--no-resume", action="store_true", help="recompute cached cells")
    runner.add_argument("--out", help="run directory (overrides the config)")
    runner.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="confrob", description="Decision-aware conformal uncertainty sets.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("run", parents=[common, runner], help="run an experiment from a config file")
    r.add_argument("--config", required=True)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", parents=[common, runner], help="run a d, K or learn-fraction sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--variable", choices=("d", "K", "learn_fraction"))
    s.add_argument("--values", help="comma-separated sweep values")
    s.add_argument("--total", type=int, help="n + m for learn_fraction sweeps")
    s.set_defaults(func=cmd_sweep)

    rp = sub.add_parser("reproduce", parents=[common, runner], help="rerun the reference benchmark rows")
    rp.add_argument("--table", choices=("synthetic", "energy"), required=True)
    rp.add_argument("--scale", choices=("desk", "paper"), default="desk")
    rp.add_argument("--data", help="Energy Efficiency CSV (required for --table energy)")
    rp.add_argument("--iterations", type=int, default=2000, help="pinball learner iterations")
    rp.set_defaults(func=cmd_reproduce)

    v = sub.add_parser("validate", parents=[common], help="run the oracle cross-checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--quick", action="store_true", help="fewer trials")
    v.add_argument("--out", help="write the JSON report here instead of stdout")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("show-config", parents=[common], help="print a config with defaults resolved")
    c.add_argument("--config", required=True)
    c.set_defaults(func=cmd_show_config)

    ver = sub.add_parser("version", help="print the package version")
    ver.set_defaults(func=cmd_version)
    return p


def _fail(kind: str, exc: BaseException, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc), "exit_code": code}) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_USAGE)
    except (FileNotFoundError, DataFormatError) as exc:
        return _fail(type(exc).__name__, exc, EXIT_USAGE)
    except KeyboardInterrupt:
        return _fail("Interrupted", RuntimeError("interrupted"), EXIT_RUNTIME)
    except Exception as exc:  # noqa: BLE001 - top-level report
        return _fail(type(exc).__name__, exc, EXIT_RUNTIME)


if __name__ == "__main__":
    sys.exit(main())
