import json
import subprocess
import sys

import pytest

from confrob.cli import REFERENCE, comparison_rows, main, reproduce_config
from confrob.config import ConfigError, RunConfig, load_config, parse_config, to_ini

MINIMAL = """
[experiment]
tasks = linear
methods = ours, conformal-box
seeds = 0
output = {out}

[split]
sizes = 200, 60, 60, 80

[learner]
iterations = 100   # short run

[evaluation]
mc_samples = 1000
"""


def write_cfg(tmp_path, **fmt):
    path = tmp_path / "run.ini"
    path.write_text(MINIMAL.format(out=tmp_path / "out", **fmt))
    return path


def run_cli(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


class TestConfig:
    def test_defaults(self):
        c = RunConfig()
        assert c.alpha == 0.1 and c.K == 4 and c.sizes == (1200, 300, 300, 1000)
        assert c.seeds == (0, 1, 2, 3, 4)

    def test_parse(self):
        c = parse_config("[experiment]\nseeds = 0-2, 7\nalpha = 0.2\n[split]\nsizes = 10, 10, 10, 10\n")
        assert c.seeds == (0, 1, 2, 7) and c.alpha == 0.2 and c.sizes == (10, 10, 10, 10)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learner.gama"):
            parse_config("[learner]\ngama = 3\n")

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="plots"):
            parse_config("[plots]\nx = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="experiment.alpha"):
            parse_config("[experiment]\nalpha = lots\n")
        with pytest.raises(ConfigError, match="experiment.alpha"):
            parse_config("[experiment]\nalpha = 1.5\n")

    def test_range_checks(self):
        with pytest.raises(ConfigError, match="experiment.K"):
            RunConfig(K=2)
        with pytest.raises(ConfigError, match="experiment.d"):
            RunConfig(tasks=("newsvendor",), d=3, K=5)
        with pytest.raises(ConfigError, match="experiment.data"):
            RunConfig(tasks=("energy",))
        with pytest.raises(ConfigError, match="split.sizes"):
            RunConfig(learner="ccg", methods=("ours",))

    def test_round_trip(self, tmp_path):
        c = load_config(write_cfg(tmp_path))
        again = parse_config(to_ini(c))
        assert again == c

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="file not found"):
            load_config(tmp_path / "none.ini")

    def test_fractions_mode(self):
        c = parse_config("[split]\nfractions = 0.5, 0.15, 0.15, 0.2\nn_total = 1000\n")
        assert c.sizes is None and c.fractions == (0.5, 0.15, 0.15, 0.2)

    def test_learn_fraction_sweep(self):
        c = RunConfig(sizes=(200, 100, 100, 100), sweep_variable="learn_fraction",
                      sweep_values=(0.1, 0.9), sweep_total=200)
        assert c.at_sweep(0.1).sizes == (200, 20, 180, 100)
        assert c.at_sweep(0.9).sizes == (200, 180, 20, 100)
        with pytest.raises(ConfigError, match="sweep.values"):
            c.replace(sweep_values=(1.0,))


class TestCli:
    def test_version(self, capsys):
        code, out, _ = run_cli(["version"], capsys)
        assert code == 0 and out.startswith("confrob ")

    def test_gen_data(self, tmp_path, capsys):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert run_cli(["gen-data", "--n", "100", "--seed", "0", "--out", str(a)], capsys)[0] == 0
        assert run_cli(["gen-data", "--n", "100", "--seed", "0", "--out", str(b)], capsys)[0] == 0
        assert len(a.read_text().splitlines()) == 101
        assert a.read_bytes() == b.read_bytes()

    def test_gen_data_zero(self, tmp_path, capsys):
        code, _, err = run_cli(["gen-data", "--n", "0", "--out", str(tmp_path / "x.csv")], capsys)
        assert code == 2
        assert json.loads(err)["error"] == "UsageError"

    def test_seed_offset(self, tmp_path, capsys, monkeypatch):
        a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
        run_cli(["gen-data", "--n", "20", "--seed", "3", "--out", str(a)], capsys)
        run_cli(["gen-data", "--n", "20", "--seed", "1", "--seed-offset", "2", "--out", str(b)], capsys)
        monkeypatch.setenv("CONFROB_SEED_OFFSET", "2")
        run_cli(["gen-data", "--n", "20", "--seed", "1", "--out", str(c)], capsys)
        assert a.read_bytes() == b.read_bytes() == c.read_bytes()

    def test_bad_env_offset(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("CONFROB_SEED_OFFSET", "two")
        code, _, _ = run_cli(["gen-data", "--n", "5", "--out", str(tmp_path / "x.csv")], capsys)
        assert code == 2

    def test_usage_error(self, capsys):
        code, _, err = run_cli(["run"], capsys)
        assert code == 2 and "--config" in err

    def test_missing_config(self, tmp_path, capsys):
        code, _, err = run_cli(["run", "--config", str(tmp_path / "nope.ini")], capsys)
        assert code == 2 and "nope.ini" in err

    def test_dry_run(self, tmp_path, capsys):
        code, out, _ = run_cli(["run", "--config", str(write_cfg(tmp_path)), "--dry-run"], capsys)
        assert code == 0 and out.startswith("2 jobs")
        assert not (tmp_path / "out" / "results.csv").exists()

    def test_run_and_rerun_from_echoed_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert run_cli(["run", "--config", str(cfg)], capsys)[0] == 0
        out = tmp_path / "out"
        assert (out / "results.csv").is_file() and (out / "summary.json").is_file()
        echoed = out / "config.ini"
        code = run_cli(["run", "--config", str(echoed), "--out", str(tmp_path / "again"), "--no-resume"],
                       capsys)[0]
        assert code == 0
        for name in ("results.csv", "summary.json"):
            assert (out / name).read_bytes() == (tmp_path / "again" / name).read_bytes()

    def test_runtime_error_exit_1(self, tmp_path, capsys, monkeypatch):
        import confrob.pipeline as pl

        def boom(*a, **k):
            raise RuntimeError("solver exploded")

        monkeypatch.setattr(pl, "run_experiment", boom)
        code, _, err = run_cli(["run", "--config", str(write_cfg(tmp_path))], capsys)
        assert code == 1 and "solver exploded" in err

    def test_sweep_needs_variable(self, tmp_path, capsys):
        code, _, err = run_cli(["sweep", "--config", str(write_cfg(tmp_path))], capsys)
        assert code == 2 and "sweep.variable" in err

    def test_sweep_dry_run(self, tmp_path, capsys):
        code, out, _ = run_cli(["sweep", "--config", str(write_cfg(tmp_path)), "--variable", "K",
                                "--values", "4,6,8", "--dry-run"], capsys)
        assert code == 0 and out.startswith("6 jobs")

    def test_energy_without_data(self, capsys):
        code, _, err = run_cli(["reproduce", "--table", "energy"], capsys)
        assert code == 2 and "--data" in err

    def test_reproduce_dry_run(self, capsys, tmp_path):
        code, out, _ = run_cli(["reproduce", "--table", "synthetic", "--dry-run", "--out", str(tmp_path)],
                               capsys)
        assert code == 0 and out.startswith(f"{3 * 7 * 3} jobs")

    def test_reproduce_scales(self):
        desk = reproduce_config("synthetic", "desk", None, "x")
        paper = reproduce_config("synthetic", "paper", None, "x")
        assert desk.sizes[1:] == (100, 100, 500) and len(desk.seeds) == 3
        assert paper.sizes == (1200, 300, 300, 1000) and len(paper.seeds) == 5

    def test_comparison_rows_scale(self):
        class Fake:
            def summary(self):
                m = {k: {"mean": 0.1} for k in ("coverage", "volume", "wc_cost", "regret")}
                return [{"task": "linear", "method": "ours", "metrics": m}]

        rows = comparison_rows(Fake(), "synthetic")
        wc = next(r for r in rows if r["metric"] == "wc_cost")
        assert wc["ours"] == pytest.approx(1.0)
        assert wc["reference"] == REFERENCE["synthetic"]["rows"]["linear"]["ours"][2]

    def test_show_config(self, tmp_path, capsys):
        code, out, _ = run_cli(["show-config", "--config", str(write_cfg(tmp_path))], capsys)
        assert code == 0 and "[learner]" in out and "iterations = 100" in out

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "confrob", "version"], capture_output=True, text=True)
        assert res.returncode == 0 and "confrob" in res.stdout
