import csv
import io
import json

import numpy as np
import pytest

from bdshape import cli
from bdshape.channel import Scenario, sample_channels
from bdshape.solvers import capacity

SMALL = {
    "pareto": "scenario: {n_t: 2, n_r: 2, n_s: 4}\ngroup_sizes: [1, 4]\nweight_count: 3\ntrials: 2\n",
    "rate-sweep": "scenario: {n_t: 2, n_r: 2, n_s: 4}\npower_db: [0, 10]\ngroup_sizes: [1, 4]\ntrials: 2\n",
    "power-sweep": "scenario: {n_t: 2, n_r: 2}\nn_s_list: [4]\ngroup_sizes: [1, 2, 4]\ntrials: 2\n",
    "bounds-check": "scenario: {n_t: 2, n_r: 2, n_s: 4}\ntrials: 2\nthetas: 20\n",
    "robustness": "scenario: {n_t: 2, n_r: 2, n_s: 4}\nepsilons: [0.0, 0.1]\ngroup_sizes: [1, 4]\ntrials: 2\n",
}


def run(tmp_path, command, config_text, *extra, name="out"):
    cfg = tmp_path / f"{name}.yaml"
    cfg.write_text(config_text)
    out = tmp_path / f"{name}.txt"
    code = cli.main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out.read_text() if out.exists() else None


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.mark.parametrize("command", sorted(SMALL))
def test_commands_are_deterministic(tmp_path, command):
    code1, first = run(tmp_path, command, SMALL[command], "--seed", "7", name="a")
    code2, second = run(tmp_path, command, SMALL[command], "--seed", "7", name="b")
    assert code1 == code2 == 0
    assert first == second


@pytest.mark.parametrize("command", ["rate-sweep", "power-sweep"])
def test_worker_count_does_not_change_output(tmp_path, command):
    _, one = run(tmp_path, command, SMALL[command], "--threads", "1", name="a")
    _, two = run(tmp_path, command, SMALL[command], "--threads", "2", name="b")
    assert one == two


def test_seed_changes_output(tmp_path):
    _, a = run(tmp_path, "power-sweep", SMALL["power-sweep"], "--seed", "1", name="a")
    _, b = run(tmp_path, "power-sweep", SMALL["power-sweep"], "--seed", "2", name="b")
    assert a != b


def test_csv_headers(tmp_path):
    expected = {
        "rate-sweep": ["power_db", "group_size", "method", "mean_rate", "trials"],
        "power-sweep": ["n_s", "group_size", "method", "mean_power", "mean_power_db", "trials"],
        "robustness": ["epsilon", "power_db", "group_size", "method", "mean_rate", "trials"],
        "pareto": ["weight_1", "weight_2", "sigma_1", "sigma_2", "group_size", "trial_seed"],
    }
    for command, header in expected.items():
        _, text = run(tmp_path, command, SMALL[command], name=command)
        assert text.splitlines()[0].split(",") == header


def test_json_format(tmp_path):
    _, text = run(tmp_path, "power-sweep", SMALL["power-sweep"], "--format", "json")
    doc = json.loads(text)
    assert doc["columns"][0] == "n_s"
    assert [r[2] for r in doc["rows"]] == ["no-ris", "saa", "saa", "saa"]


class TestConfigErrors:
    def test_unknown_key_named(self, tmp_path, capsys):
        code, _ = run(tmp_path, "pareto", "trails: 3\n")
        assert code == 2
        assert "trails" in capsys.readouterr().err

    def test_wrong_type_names_path(self, tmp_path, capsys):
        code, _ = run(tmp_path, "rate-sweep", "power_db: [0, loud]\n")
        assert code == 2
        assert "power_db.1" in capsys.readouterr().err

    def test_bad_scenario(self, tmp_path, capsys):
        code, _ = run(tmp_path, "pareto", "scenario: {n_s: 6, group_size: 4}\n")
        assert code == 2
        assert "scenario" in capsys.readouterr().err

    def test_invalid_yaml(self, tmp_path):
        code, _ = run(tmp_path, "pareto", "scenario: [unclosed\n")
        assert code == 2

    def test_missing_file(self, tmp_path):
        assert cli.main(["pareto", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_bad_trials_flag(self):
        assert cli.main(["pareto", "--trials", "0"]) == 2

    def test_unknown_example(self):
        with pytest.raises(SystemExit):
            cli.main(["example", "ex9"])


def test_violation_sets_exit_code(tmp_path, monkeypatch):
    monkeypatch.setitem(cli._COMMANDS, "power-sweep", lambda cfg, threads: (["a"], [[1]], ["broken invariant"]))
    code, text = run(tmp_path, "power-sweep", "")
    assert code == 1
    assert text == "a\n1\n"


@pytest.mark.parametrize("name", ["ex2", "ex3", "ex4"])
def test_examples_pass(tmp_path, name):
    out = tmp_path / "ex.json"
    assert cli.main(["example", name, "--out", str(out)]) == 0
    items = json.loads(out.read_text())["items"]
    assert items and all(i["status"] == "PASS" for i in items)


@pytest.fixture(scope="module")
def table(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sweep")
    text = (
        "power_db: [-20, -15, -10, -5, 0, 5, 10, 15, 20]\n"
        "group_sizes: [1, 16]\nmethods: [two-stage, no-ris]\ntrials: 50\n"
    )
    code, out = run(tmp, "rate-sweep", text)
    assert code == 0
    return rows(out)


class TestRateSweep:
    def test_rate_grows_with_power(self, table):
        for (l, m) in {(r["group_size"], r["method"]) for r in table}:
            series = [float(r["mean_rate"]) for r in table if (r["group_size"], r["method"]) == (l, m)]
            assert all(b >= a for a, b in zip(series, series[1:]))

    def test_fully_connected_beats_diagonal(self, table):
        at20 = {r["group_size"]: float(r["mean_rate"]) for r in table if float(r["power_db"]) == 20 and r["method"] == "two-stage"}
        assert at20["16"] / at20["1"] > 1

    def test_no_ris_row_is_direct_capacity(self, tmp_path):
        _, out = run(tmp_path, "rate-sweep", "power_db: [10]\ngroup_sizes: [1]\nmethods: [no-ris]\ntrials: 1\n")
        (row,) = rows(out)
        seed = cli.trial_seed(0, 0)
        ch = sample_channels(Scenario(n_t=4, n_s=16, n_r=4, seed=seed))
        assert float(row["mean_rate"]) == pytest.approx(capacity(ch.h_d, 10.0, Scenario().noise), rel=1e-12)


class TestRobustness:
    def test_zero_error_matches_rate_sweep(self, tmp_path):
        base = "power_db: [20]\ngroup_sizes: [1, 16]\nmethods: [two-stage, ao]\ntrials: 3\n"
        _, sweep = run(tmp_path, "rate-sweep", base, name="sweep")
        _, robust = run(tmp_path, "robustness", base + "epsilons: [0.0]\n", name="robust")
        a = {(r["group_size"], r["method"]): r["mean_rate"] for r in rows(sweep)}
        b = {(r["group_size"], r["method"]): r["mean_rate"] for r in rows(robust)}
        assert a == b

    def test_rate_does_not_grow_with_error(self, tmp_path):
        text = "epsilons: [0.01, 0.1, 0.5]\nmethods: [ao]\ngroup_sizes: [1, 16]\ntrials: 50\n"
        code, out = run(tmp_path, "robustness", text)
        assert code == 0
        table = rows(out)
        for l in ("1", "16"):
            series = [float(r["mean_rate"]) for r in table if r["group_size"] == l]
            assert all(b <= a for a, b in zip(series, series[1:]))

    def test_bd_with_large_error_beats_diagonal_with_small_error(self, tmp_path):
        text = (
            "scenario: {n_t: 4, n_s: 128, n_r: 4}\nepsilons: [0.01, 0.5]\n"
            "group_sizes: [1, 128]\nmethods: [two-stage]\ntrials: 50\n"
        )
        _, out = run(tmp_path, "robustness", text)
        table = {(r["epsilon"], r["group_size"]): float(r["mean_rate"]) for r in rows(out)}
        assert table[("0.5", "128")] >= table[("0.01", "1")]


def test_bounds_check_report(tmp_path):
    code, text = run(tmp_path, "bounds-check", SMALL["bounds-check"])
    assert code == 0
    doc = json.loads(text)
    assert doc["total_violations"] == 0


def test_trial_seeds_are_distinct():
    seeds = {cli.trial_seed(0, t) for t in range(1000)}
    assert len(seeds) == 1000
    assert all(0 <= s < 2**63 for s in seeds)


def test_manipulation_range_uses_midrange():
    up, down = cli.manipulation_range(np.array([[1.0], [3.0]]))
    assert up[0] == pytest.approx(50.0) and down[0] == pytest.approx(-50.0)
