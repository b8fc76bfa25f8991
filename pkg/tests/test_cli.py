import csv
import json

import numpy as np
import pytest

from adobo import cli
from adobo.harness import eta


def _run(args):
    return cli.main([str(a) for a in args])


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def lin1d_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert _run(["run", "--plant", "lin1d", "--budget", 100, "--seeds", "1..2", "--out", out]) == 0
    return out


def test_run_directory_contents(lin1d_runs):
    d = lin1d_runs / "lin1d_adobo_seed1"
    for name in ("config.ini", "records.csv", "gp_data.csv", "summary.json"):
        assert (d / name).exists()
    rows = _rows(d / "records.csv")
    assert len(rows) == 100
    assert list(rows[0]) == ["n", "theta_1", "theta_2", "J", "y", "J_best", "eta", "method", "flag"]
    summary = json.loads((d / "summary.json").read_text())
    assert summary["final_eta"] <= 1.0
    assert len(summary["best_theta"]) == 2
    assert summary["wall_time_s"] > 0


def test_eta_column_recomputable(lin1d_runs):
    cache = json.loads((lin1d_runs / cli.CACHE_NAME).read_text())
    (entry,) = cache.values()
    for r in _rows(lin1d_runs / "lin1d_adobo_seed2" / "records.csv"):
        assert float(r["eta"]) == pytest.approx(float(eta(float(r["J_best"]), entry["j_star"])), abs=1e-9)


def test_rerun_and_snapshot_replay_are_byte_identical(lin1d_runs, tmp_path):
    original = (lin1d_runs / "lin1d_adobo_seed1" / "records.csv").read_bytes()
    assert _run(["run", "--plant", "lin1d", "--budget", 100, "--seed", 1, "--out", tmp_path / "a"]) == 0
    assert (tmp_path / "a" / "lin1d_adobo_seed1" / "records.csv").read_bytes() == original
    snap = lin1d_runs / "lin1d_adobo_seed1" / "config.ini"
    assert _run(["run", "--config", snap, "--out", tmp_path / "b"]) == 0
    assert (tmp_path / "b" / "lin1d_adobo_seed1" / "records.csv").read_bytes() == original


def test_config_file_and_seed(tmp_path):
    cfg = tmp_path / "dubins.cfg"
    cfg.write_text("[plant]\nname = dubins\n\n[run]\nbudget = 4\n\n[bo]\nrestarts = 1\n")
    assert _run(["run", "--config", cfg, "--seed", 7, "--out", tmp_path]) == 0
    assert len(_rows(tmp_path / "dubins_adobo_seed7" / "records.csv")) == 4


def test_oracle_command_and_cache(tmp_path, capsys):
    assert _run(["oracle", "--plant", "lin1d", "--out", tmp_path]) == 0
    first = capsys.readouterr().out
    assert "1.61" in first and "cached" not in first
    assert _run(["oracle", "--plant", "lin1d", "--out", tmp_path]) == 0
    second = capsys.readouterr().out
    assert "cached" in second
    assert first.split("=")[1].split()[0] == second.split("=")[1].split()[0]


def test_oracle_seeds_agree_on_dubins(tmp_path):
    from adobo import presets

    cfg = presets.dubins()
    a, _ = cli.cached_oracle(cfg, tmp_path, seed=1)
    b, hit = cli.cached_oracle(cfg, tmp_path, seed=2)
    assert not hit
    assert abs(a - b) <= 0.01 * a
    assert cli.oracle_key(cfg, 1) != cli.oracle_key(cfg, 2)


def test_compare_tables(lin1d_runs, tmp_path):
    runs = [lin1d_runs / "lin1d_adobo_seed1", lin1d_runs / "lin1d_adobo_seed2"]
    assert _run(["compare", *runs, "--checkpoints", "50,100", "--out", tmp_path]) == 0
    table = _rows(tmp_path / "compare_table.csv")
    assert [(r["method"], r["iteration"]) for r in table] == [("adobo", "50"), ("adobo", "100")]
    etas = [float(_rows(r / "records.csv")[99]["eta"]) for r in runs]
    assert float(table[1]["median"]) == pytest.approx(np.median(etas))
    assert len(_rows(tmp_path / "eta_curves.csv")) == 100
    # a single run gives a one-row table per checkpoint
    assert _run(["compare", runs[0], "--checkpoints", "100", "--out", tmp_path / "one"]) == 0
    assert len(_rows(tmp_path / "one" / "compare_table.csv")) == 1


def test_compare_errors(lin1d_runs, tmp_path):
    assert _run(["run", "--plant", "lin2d", "--method", "klearn", "--budget", 2, "--out", tmp_path]) == 0
    mixed = [lin1d_runs / "lin1d_adobo_seed1", tmp_path / "lin2d_klearn_seed0"]
    assert _run(["compare", *mixed, "--checkpoints", "1", "--out", tmp_path]) == 2
    assert _run(["compare", mixed[0], "--checkpoints", "200", "--out", tmp_path]) == 2


@pytest.mark.parametrize(
    "text",
    [
        "[plant]\nname = quadrotor\n",
        "[cost]\nQ = 1, 2, 3\n",
        "[run]\nbudget = many\n",
        "[run]\nmethod = ppo\n",
        "[bo]\nbounds = 3, -3\n",
        "[extra]\nkey = 1\n",
        "not an ini file",
    ],
)
def test_config_errors_exit_2(tmp_path, text, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    # a command-line --plant would override the bad plant name
    extra = [] if "quadrotor" in text else ["--plant", "lin1d"]
    assert _run(["run", "--config", cfg, *extra, "--out", tmp_path]) == 2
    assert "config error" in capsys.readouterr().err


def test_missing_config_exit_2(tmp_path):
    assert _run(["run", "--config", tmp_path / "nope.cfg", "--out", tmp_path]) == 2


def test_runtime_failure_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("simulated failure")

    monkeypatch.setattr(cli, "run_adobo", boom)
    assert _run(["run", "--plant", "lin1d", "--budget", 2, "--out", tmp_path]) == 3


def test_all_methods_run(tmp_path):
    for method, plant in (("qr", "lin1d"), ("klearn", "lin1d"), ("ls", "lin2d"), ("useq", "lin1d")):
        assert _run(["run", "--plant", plant, "--method", method, "--budget", 3, "--out", tmp_path]) == 0
        assert len(_rows(tmp_path / f"{plant}_{method}_seed0" / "records.csv")) == 3


def test_parallel_seeds_match_serial(tmp_path):
    args = ["run", "--plant", "lin1d", "--budget", 6, "--seeds", "1,2", "--warp", "off"]
    assert _run(args + ["--out", tmp_path / "s"]) == 0
    assert _run(args + ["--jobs", 2, "--out", tmp_path / "p"]) == 0
    for s in (1, 2):
        name = f"lin1d_adobo_seed{s}/records.csv"
        assert (tmp_path / "s" / name).read_bytes() == (tmp_path / "p" / name).read_bytes()


def test_config_overrides_and_parsing():
    import configparser

    p = configparser.ConfigParser()
    p.optionxform = str
    p.read_string(
        "[plant]\nname = lin2d_hinge\n[cost]\nlower = 0.4, -inf\nweight = 50\nR = 2\n"
        "[bo]\nwarp = off\nard = yes\n[run]\nx0 = 1, 1\nbudget = 7\nmethod = useq\ninput_limit = 1.5\n"
    )
    config, options = cli.parse_config(p)
    assert config.cost.soft_bounds.weight == 50.0
    np.testing.assert_array_equal(config.cost.soft_bounds.lower, [0.4, -np.inf])
    assert config.cost.R[0, 0] == 2.0
    assert not config.settings.warp and config.settings.hyper.ard
    np.testing.assert_array_equal(config.x0, [1.0, 1.0])
    assert (config.budget, options.method, options.input_limit) == (7, "useq", 1.5)


def test_seed_list_parsing():
    assert cli.parse_seeds("1..5") == [1, 2, 3, 4, 5]
    assert cli.parse_seeds("3,9") == [3, 9]
    with pytest.raises(cli.ConfigError):
        cli.parse_seeds("a..b")
