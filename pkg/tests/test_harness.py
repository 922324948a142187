import os

import numpy as np
import pytest
import yaml

from mmo.cli import main as cli_main
from mmo.exceptions import ConfigError
from mmo.harness import CSV_FIELDS, load_config, run_experiment, write_csv


def _uplink_cfg(**over):
    cfg = {
        "scenario": "uplink",
        "seed": 1234,
        "trials": 1,
        "snr_db": [10.0],
        "algorithms": ["closed_form"],
        "dims": {"users": 2, "bs_antennas": 4, "user_antennas": 2},
        "constraint": {"family": "sum_power", "total": 1.0},
        "solver": {"max_iter": 10},
    }
    cfg.update(over)
    return cfg


def test_load_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(bogus=1))
    bad = _uplink_cfg()
    bad["dims"]["bogus"] = 1
    with pytest.raises(ConfigError):
        load_config(bad)


def test_load_config_validates_fields():
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(trials=0))
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(snr_db=[]))
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(algorithms=["non_robust"]))
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(constraint={"family": "joint", "total": 1.0}))
    with pytest.raises(ConfigError):
        load_config(_uplink_cfg(correlation={"r_rx": 1.0}))
    missing = _uplink_cfg()
    del missing["seed"]
    with pytest.raises(ConfigError):
        load_config(missing)


def test_record_counting(tmp_path):
    out = tmp_path / "res.csv"
    cfg = load_config(_uplink_cfg(trials=1, algorithms=["closed_form", "oracle"],
                                  oracle={"restarts": 2, "steps": 40}))
    records = run_experiment(cfg, out_path=str(out))
    assert len(records) == 2  # one per (algorithm, trial, snr)
    assert {r.algorithm for r in records} == {"closed_form", "oracle"}
    assert out.exists()


def test_byte_identical_reruns(tmp_path):
    cfg_dict = _uplink_cfg(trials=2, snr_db=[0.0, 10.0])
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(load_config(cfg_dict), out_path=str(out1))
    run_experiment(load_config(cfg_dict), out_path=str(out2))
    assert out1.read_bytes() == out2.read_bytes()


def test_trial_independence(tmp_path):
    # records for trial t are unaffected by the presence of other trials
    one = run_experiment(load_config(_uplink_cfg(trials=1)), out_path=None)
    three = run_experiment(load_config(_uplink_cfg(trials=3)), out_path=None)
    vals_one = {(r.trial, r.snr_db): r.value for r in one}
    vals_three = {(r.trial, r.snr_db): r.value for r in three if r.trial == 0}
    assert vals_one == vals_three


def test_parallel_equals_serial(tmp_path):
    cfg = _uplink_cfg(trials=3)
    a = tmp_path / "serial.csv"
    b = tmp_path / "parallel.csv"
    run_experiment(load_config(cfg), out_path=str(a), parallel=1)
    run_experiment(load_config(cfg), out_path=str(b), parallel=2)
    assert a.read_bytes() == b.read_bytes()


def test_csv_schema(tmp_path):
    out = tmp_path / "res.csv"
    run_experiment(load_config(_uplink_cfg()), out_path=str(out))
    header = out.read_text().splitlines()[0]
    assert header == ",".join(CSV_FIELDS)
    row = out.read_text().splitlines()[1].split(",")
    assert row[0] == "uplink" and row[6] == "0"  # wall time zeroed by default


def test_csv_timings_flag(tmp_path):
    out = tmp_path / "res.csv"
    records = run_experiment(load_config(_uplink_cfg()), out_path=str(out),
                             timings=True)
    assert records[0].wall_time_ms > 0
    row = out.read_text().splitlines()[1].split(",")
    assert float(row[6]) > 0


def test_sensor_and_relay_trials_run(tmp_path):
    sensor = {
        "scenario": "sensor", "seed": 7, "trials": 1, "snr_db": [10.0],
        "algorithms": ["closed_form"],
        "dims": {"sensors": 2, "fusion_antennas": 4, "sensor_antennas": 2,
                 "signal_dim": 2},
        "constraint": {"family": "sum_power", "total": 1.0},
        "solver": {"max_iter": 10},
    }
    recs = run_experiment(load_config(sensor), out_path=None)
    assert recs[0].metric_name == "mutual_info" and recs[0].value > 0

    relay = {
        "scenario": "relay", "seed": 7, "trials": 1, "snr_db": [10.0],
        "algorithms": ["closed_form", "non_robust"],
        "dims": {"hops": 2, "antennas": 2},
        "constraint": {"family": "per_antenna", "budgets": [1.0, 1.0]},
        "relay": {"sigma_e2": [0.0, 0.008], "psi_corr": 0.6, "objective": 1},
        "solver": {"max_iter": 10},
    }
    recs = run_experiment(load_config(relay), out_path=None)
    labels = {r.scenario for r in recs}
    assert labels == {"relay:se2=0", "relay:se2=0.008"}
    assert len(recs) == 4


def test_cli_validate_and_run(tmp_path):
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text(yaml.safe_dump(_uplink_cfg()))
    assert cli_main(["validate", "--config", str(cfg_path)]) == 0
    out = tmp_path / "cli.csv"
    assert cli_main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    assert out.exists()

    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(_uplink_cfg(bogus=3)))
    assert cli_main(["validate", "--config", str(bad)]) == 2
    assert cli_main(["run", "--config", str(bad), "--out", str(out)]) == 2
    assert cli_main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_cli_oracle_subcommand(tmp_path):
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text(yaml.safe_dump(_uplink_cfg(
        oracle={"restarts": 2, "steps": 30})))
    out = tmp_path / "oracle.csv"
    assert cli_main(["oracle", "--config", str(cfg_path), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert all(line.split(",")[1] == "oracle" for line in lines[1:])


def test_write_csv_atomic(tmp_path):
    out = tmp_path / "x.csv"
    write_csv([], str(out))
    assert out.read_text().splitlines() == [",".join(CSV_FIELDS)]
    leftovers = [p for p in os.listdir(tmp_path) if p.endswith(".tmp")]
    assert not leftovers
