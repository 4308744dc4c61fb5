import json
import math

import numpy as np

from mfhjb.report import RunReport, config_hash, write_csv


def test_checks_and_relations():
    rep = RunReport(config={"a": 1})
    assert rep.check("le", 1.0, 1.0).passed
    assert not rep.check("lt", 1.0, 1.0, "<").passed
    assert rep.check("ge", 2.0, 1.0, ">=").passed
    assert rep.checks[0].line() == "PASS le: 1 <= 1"
    assert rep.checks[1].line().startswith("FAIL lt")
    assert not rep.passed


def test_json_is_stable_without_timings(tmp_path):
    rep = RunReport(config={"b": (1, 2), "a": np.float64(0.5)})
    rep.stages["x"] = {"arr": np.arange(3), "bad": math.inf}
    with rep.timed("stage"):
        pass
    d = json.loads(rep.to_json(timings=False))
    assert "timings" not in d and d["stages"]["x"] == {"arr": [0, 1, 2], "bad": "inf"}
    assert d["config_hash"] == config_hash({"a": 0.5, "b": [1, 2]})
    rep.write(tmp_path / "r.json")
    assert "stage" in json.loads((tmp_path / "r.json").read_text())["timings"]


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_write_csv(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, [{"N": 1, "v": 0.1, "extra": 5}, {"N": 2, "v": None}], ["N", "v"])
    lines = path.read_text().splitlines()
    assert lines[0] == "N,v"
    assert lines[1].split(",")[0] == "1" and float(lines[1].split(",")[1]) == 0.1
    assert lines[2] == "2,"
