import csv
import json
import subprocess
import sys

import pytest

from capdrum import geometry as G
from capdrum.cli import main, run_suite, SuiteDomain


def write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_constants(capsys):
    code, out, _ = run(capsys, "constants", "--n", "3", "--gamma", "0.5")
    assert code == 0
    res = json.loads(out)["result"]
    assert abs(res["c_lower"] - 1 / 112) < 1e-12
    assert abs(res["C_upper"] - 351232) < 1e-6


def test_output_deterministic_and_sorted(capsys):
    a = run(capsys, "constants", "--n", "4", "--gamma", "0.3", "--N-override", "7")[1]
    b = run(capsys, "constants", "--n", "4", "--gamma", "0.3", "--N-override", "7")[1]
    assert a == b
    assert a == json.dumps(json.loads(a), sort_keys=True, indent=2) + "\n"


def test_config_echo_round_trips(capsys, tmp_path):
    dom = write(tmp_path, "ball.json", {"op": "ball", "center": [0, 0, 0], "radius": 0.5})
    argv = ["radius", "--domain", dom, "--gamma", "0.5", "--h", "1/8", "--r-min", "0.25",
            "--r-max", "0.5", "--r-steps", "2", "--bbox", "0,0,0,0,0,0", "--top-k", "2"]
    code, out, _ = run(capsys, *argv)
    assert code == 0
    doc = json.loads(out)
    cfg = doc["config"]
    assert cfg["subcommand"] == "radius" and cfg["domain"] == dom
    assert cfg["h"] == 0.125 and cfg["gamma"] == 0.5 and cfg["r_steps"] == 2
    assert cfg["bbox"] == [0, 0, 0, 0, 0, 0] and cfg["top_k"] == 2
    assert doc["result"]["status"] == "finite"


def test_malformed_domain(capsys, tmp_path):
    dom = write(tmp_path, "bad.json", {"op": "union", "args": [{"op": "ball", "center": [0, 0, 0]}]})
    code, _, err = run(capsys, "eigen", "--domain", dom, "--h", "0.25")
    assert code == 1
    assert "$.args[0]" in err and "radius" in err


def test_invalid_json_file(capsys, tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert run(capsys, "eigen", "--domain", str(p), "--h", "0.25")[0] == 1


def test_capacity_both(capsys, tmp_path):
    dom = write(tmp_path, "b.json", {"op": "ball", "center": [0, 0, 0], "radius": 0.5})
    code, out, _ = run(capsys, "capacity", "--set", dom, "--h", "0.125", "--method", "both", "--walks", "2000")
    res = json.loads(out)["result"]
    assert code == 0 and res["grid"]["value"] > 0 and res["wos"]["method"] == "wos"


def test_eigen_negative_bbox_and_periodic(capsys, tmp_path):
    dom = write(tmp_path, "s.json", {"op": "intersection", "args": [
        {"op": "halfspace", "normal": [0, 0, 1], "offset": 1},
        {"op": "halfspace", "normal": [0, 0, -1], "offset": 1}]})
    code, out, _ = run(capsys, "eigen", "--domain", dom, "--h", "1/8", "--bbox", "-0.25,-0.25,-1,0.25,0.25,1",
                       "--periodic", "0,1", "--extrapolate")
    assert code == 0
    assert json.loads(out)["result"]["extrapolated"] == pytest.approx(2.4674, rel=0.01)


def test_bounds_exit_codes(capsys, tmp_path):
    dom = write(tmp_path, "b.json", {"op": "ball", "center": [0, 0, 0], "radius": 1})
    common = ["bounds", "--domain", dom, "--h", "1/8", "--r-min", "0.75", "--r-max", "1",
              "--r-steps", "2", "--bbox", "0,0,0,0,0,0"]
    code, out, _ = run(capsys, *common, "--gamma", "0.5", "--with-oracle")
    assert code == 0 and json.loads(out)["result"]["verdict"] == "sandwich-holds"
    code, out, _ = run(capsys, *common, "--lieb", "--alpha", "0.5")
    assert code == 0 and json.loads(out)["result"]["verdict"] == "oracle-missing"


def test_missing_gamma_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["radius", "--domain", "x.json", "--h", "0.1"])
    assert e.value.code == 2


def test_suite_small(tmp_path):
    doms = [SuiteDomain("ball", G.ball((0, 0, 0), 1.0), (0.75, 1.0), ((0, 0, 0), (0, 0, 0)))]
    code, bundle = run_suite(1 / 8, (0.5,), tmp_path, domains=doms)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert rows[0]["verdict"] == "sandwich-holds"
    assert json.loads((tmp_path / "ball_gamma0.5.json").read_text())["verdict"] == "sandwich-holds"


def test_module_entry_point():
    p = subprocess.run([sys.executable, "-m", "capdrum", "constants", "--n", "3", "--gamma", "0.5"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and json.loads(p.stdout)["result"]["N_cov"] == 18
