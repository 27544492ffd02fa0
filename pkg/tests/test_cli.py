import csv
import json
import math

import numpy as np
import pytest
from conftest import ring_scenario

from irsloc import cli
from irsloc.crlb import analytic_lower_bound
from irsloc.errors import ParseError, ValidationError
from irsloc.geometry import random_scenario

DEFAULT_FILE = {
    "bs": [[-100, 60], [100, 60], [-100, -60], [100, -60]],
    "targets": [[-90 + 20 * i, 0] for i in range(10)],
    "heights": {"h_bs_m": 5, "h_irs_m": 1},
    "irs": {"L_x": 40, "L_y": 40},
    "radio": {"beta0_db": -30, "sigma_s2_db": -80, "p_tx_w": 1.0, "delta_T_s": 0.1,
              "delta_t_s": 1e-6, "c0": 0.1, "d_min_m": 10},
    "r_e_m": 5,
}


def write(tmp_path, data, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def read_csv(prefix):
    with open(f"{prefix}.csv") as f:
        return list(csv.DictReader(f))


def test_default_parameter_file(tmp_path):
    sc = cli.load_scenario(write(tmp_path, DEFAULT_FILE))
    assert sc.n_bs == 4 and sc.n_targets == 10
    assert sc.radio.beta0 == pytest.approx(1e-3, rel=1e-12)
    assert sc.radio.sigma_s2 == pytest.approx(1e-8, rel=1e-12)
    assert sc.irs_size == (40, 40)


def test_negative_radius_names_the_field(tmp_path):
    with pytest.raises(ValidationError) as exc:
        cli.load_scenario(write(tmp_path, dict(DEFAULT_FILE, r_e_m=-1)))
    assert exc.value.path == "r_e_m"


def test_bad_field_types(tmp_path):
    bad = dict(DEFAULT_FILE, radio=dict(DEFAULT_FILE["radio"], c0="x"))
    with pytest.raises(ValidationError) as exc:
        cli.load_scenario(write(tmp_path, bad))
    assert exc.value.path == "radio.c0"
    with pytest.raises(ValidationError) as exc:
        cli.load_scenario(write(tmp_path, dict(DEFAULT_FILE, bs=[[1, 2, 3]])))
    assert exc.value.path == "bs[0]"


def test_bad_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{ not json")
    with pytest.raises(ParseError):
        cli.load_scenario(str(p))


def test_round_trip_is_exact(tmp_path, rng):
    sc = random_scenario(rng, 3, 5).with_power(0.37)
    p = tmp_path / "rt.json"
    cli.dump_scenario(sc, p)
    assert cli.load_scenario(p) == sc


def test_parse_values():
    assert cli.parse_values("1,2,3") == (1.0, 2.0, 3.0)
    assert cli.parse_values("0.05..1.0") == pytest.approx(tuple(np.linspace(0.05, 1.0, 10)))
    assert cli.parse_values("1..2:3") == (1.0, 1.5, 2.0)
    with pytest.raises(ParseError):
        cli.parse_values("a,b")


def test_spec_validation():
    with pytest.raises(ValidationError):
        cli.ExperimentSpec("sweep", sweep_axis="power", sweep_values=(1.0, 0.5))
    with pytest.raises(ValidationError):
        cli.ExperimentSpec("sweep", sweep_axis="height")
    with pytest.raises(ValidationError):
        cli.ExperimentSpec("crlb", schemes=("nearest",))


def test_bounds_command(tmp_path):
    out = str(tmp_path / "b")
    assert cli.main(["bounds", "K=10", "M=4", "--out", out]) == 0
    row = read_csv(out)[0]
    assert row["n_min"] == "5" and row["k_max"] == "10"
    manifest = json.loads((tmp_path / "b.manifest.json").read_text())
    assert {"seed", "config_hash", "versions"} <= set(manifest)


def test_optimize_single_on_ring(tmp_path):
    sc = ring_scenario(4)
    path = tmp_path / "ring.json"
    cli.dump_scenario(sc, path)
    out = str(tmp_path / "o")
    assert cli.main(["optimize-single", "--scenario", str(path), "--out", out]) == 0
    rows = read_csv(out)
    bound = analytic_lower_bound(sc.radio, sc.n_elements, sc.height_gap)
    assert float(rows[0]["crlb"]) == pytest.approx(bound, rel=1e-6)
    assert [float(r["eta"]) for r in rows] == pytest.approx([0.25] * 4, abs=1e-6)


def test_errors_are_json_on_stderr(tmp_path, capsys):
    assert cli.main(["crlb", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 1
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "ParseError"
    bad = write(tmp_path, dict(DEFAULT_FILE, r_e_m=-2))
    assert cli.main(["crlb", "--scenario", bad, "--out", str(tmp_path / "x")]) == 1
    assert json.loads(capsys.readouterr().err)["path"] == "r_e_m"


def test_seed_falls_back_to_env(monkeypatch):
    monkeypatch.setenv("LOC_SEED", "42")
    assert cli.spec_from_args(["bounds", "K=1", "M=2"]).seed == 42
    assert cli.spec_from_args(["bounds", "K=1", "M=2", "--seed", "7"]).seed == 7
    monkeypatch.delenv("LOC_SEED")
    assert cli.spec_from_args(["bounds", "K=1", "M=2"]).seed == 0


def test_commands_run_and_repeat_byte_identically(tmp_path):
    path = write(tmp_path, DEFAULT_FILE)
    for command in ("crlb", "associate"):
        outs = []
        for i in range(2):
            out = str(tmp_path / f"{command}{i}")
            assert cli.main([command, "--scenario", path, "--scheme", "all", "--out", out]) == 0
            outs.append(open(f"{out}.csv", "rb").read())
        assert outs[0] == outs[1]
        assert outs[0].startswith(b"scheme,")


def test_sweep_workers_keep_order(tmp_path):
    path = write(tmp_path, DEFAULT_FILE)
    args = ["sweep", "--scenario", path, "--sweep", "M", "2,3,4", "--scheme", "proposed,average"]
    assert cli.main(args + ["--out", str(tmp_path / "s1")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "s2"), "--workers", "2"]) == 0
    a, b = (tmp_path / "s1.csv").read_bytes(), (tmp_path / "s2.csv").read_bytes()
    assert a == b
    rows = read_csv(str(tmp_path / "s1"))
    assert list(rows[0]) == list(cli.SWEEP_COLUMNS)
    assert [(r["value"], r["scheme"]) for r in rows][:2] == [("2.0", "proposed"), ("2.0", "average")]


def test_power_sweep_mse_is_nonincreasing(tmp_path):
    sc = random_scenario(np.random.default_rng(2), 1, 4)
    path = tmp_path / "one.json"
    cli.dump_scenario(sc, path)
    out = str(tmp_path / "p")
    args = ["sweep", "--scenario", str(path), "--sweep", "power", "0.05..1.0",
            "--scheme", "proposed", "--trials", "500", "--seed", "1", "--out", out]
    assert cli.main(args) == 0
    mse = [float(r["mse"]) for r in read_csv(out)]
    assert len(mse) == 10
    assert all(b <= a for a, b in zip(mse, mse[1:]))


def test_stats_table_partitions():
    etas = [[0.5, 0.5, 0, 0], [0.3, 0.3, 0.4, 0], [0.2] * 5, [0.9995, 0.0005, 0, 0]]
    rows = cli.stats_table(etas)
    counts = {r["n_active"]: r["count"] for r in rows}
    assert counts == {"1": 1, "2": 1, "3": 1, "4": 0, "5+": 1}
    assert sum(counts.values()) == len(etas)
    assert rows[1]["min_eta"] == 0.5


def test_stats_command(tmp_path):
    out = str(tmp_path / "st")
    assert cli.main(["stats", "--count", "10", "--out", out]) == 0
    rows = read_csv(out)
    assert sum(int(r["count"]) for r in rows) == 10


def test_simulate_mle(tmp_path):
    sc = random_scenario(np.random.default_rng(4), 1, 3)
    path = tmp_path / "one.json"
    cli.dump_scenario(sc, path)
    out = str(tmp_path / "m")
    assert cli.main(["simulate-mle", "--scenario", str(path), "--trials", "50", "--out", out]) == 0
    row = read_csv(out)[0]
    assert math.isfinite(float(row["mse"])) and row["trials"] == "50"


def test_layout_defaults():
    assert cli.spec_from_args(["stats"]).layout == "road"
    assert cli.spec_from_args(["sweep", "--random", "2"]).layout == "square"
    assert cli.spec_from_args(["stats", "--layout", "square"]).layout == "square"
    with pytest.raises(ValidationError):
        cli.ExperimentSpec("stats", layout="ring")
