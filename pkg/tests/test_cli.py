import csv
import json

import pytest

from rfent import ConfigurationError
from rfent import cli


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_documented_config_is_valid():
    cfg = cli.parse_config('{"command":"volume","model":{"family":"flat","dim":3},"t_values":[1.0]}')
    assert cfg.command == "volume" and cfg.t_values == [1.0]
    assert cfg.scheme == {"kind": "tensor-hermite", "order": 32}
    assert cfg.tolerances == cli.DEFAULT_TOLERANCES
    assert cfg.build_model().dim == 3


def test_time_flag_parsing():
    args = cli.build_parser().parse_args(["volume", "--model", "flat", "--t", "0.1,0.5,1"])
    assert cli.config_from_args(args).t_values == [0.1, 0.5, 1.0]


@pytest.mark.parametrize("text", [
    '{"model":{"family":"flat","dim":2},"t_values":[-1]}',
    '{"model":{"family":"flat","dim":-2}}',
    '{"model":{"family":"flat","dim":2},"colour":"red"}',
    '{"t_values":[1.0]}',
    '{"model":{"family":"flat","dim":2},"command":"plot"}',
    '{"model":{"family":"sphere","dim":2},"t_values":[0.7]}',
    '{"model":{"family":"flat","dim":2},"tolerances":{"wiggle":1}}',
    '{"model":{"family":"flat","dim":2},"lambda":[-2]}',
    '{"model":{"family":"flat","dim":2},"jobs":0}',
    '{"model":{"family":"flat","dim":2},"scheme":{"kind":"simpson"}}',
])
def test_invalid_configs(text):
    with pytest.raises(ConfigurationError):
        cli.parse_config(text)


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigurationError, match="colour"):
        cli.parse_config('{"model":"flat","colour":1,"shade":2}')


def test_default_times():
    flat = cli.parse_config('{"model":"flat"}')
    assert flat.t_values == [0.1, 0.5, 1.0, 2.0]
    sphere = cli.parse_config('{"model":{"family":"sphere","dim":2}}')
    assert sphere.t_values == [0.05, 0.15, 0.3]


def test_flags_override_file(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"model": {"family": "hyperbolic", "dim": 2}, "t_values": [1.0], "seed": 3}))
    args = cli.build_parser().parse_args(["volume", "--config", str(cfg_path), "--t", "0.5", "--dim", "3",
                                          "--quad", "radial", "--order", "8"])
    cfg = cli.config_from_args(args)
    assert cfg.t_values == [0.5] and cfg.seed == 3 and cfg.model["dim"] == 3
    assert cfg.scheme == {"kind": "radial", "order": 8}


def test_env_out_dir(monkeypatch, tmp_path):
    monkeypatch.setenv("RFENT_OUT_DIR", str(tmp_path))
    assert cli.parse_config('{"model":"flat"}').out_dir == str(tmp_path)


@pytest.mark.parametrize("argv", [
    ["volume", "--model", "flat", "--dim", "-2"],
    ["volume", "--model", "flat", "--t", "-1"],
    ["volume", "--model", "sphere", "--t", "0.7"],
    ["volume", "--model", "einstein", "--dim", "2"],
    ["volume", "--model", "flat", "--t", "a,b"],
    ["volume", "--model", "flat", "--tol-scale", "-1"],
])
def test_exit_code_two(argv, tmp_path):
    assert cli.main([*argv, "--out", str(tmp_path)]) == 2


def test_volume_csv_round_trip(tmp_path):
    code = cli.main(["volume", "--model", "flat", "--dim", "2", "--t", "0.5,1", "--quad", "radial", "--order", "8",
                     "--out", str(tmp_path)])
    assert code == 0
    header, rows = read_csv(tmp_path / "volume.csv")
    assert header == ["t", "Vtilde", "Vtilde_err", "omega_fraction", "bound_gap"]
    for row in rows:
        assert abs(float(row[1]) / (4 * 3.141592653589793) - 1) < 1e-12
        assert cli._fmt(float(row[1])) == row[1]
    manifest = json.loads((tmp_path / "run_manifest.json").read_text())
    assert manifest["status"] == 0 and manifest["config"]["command"] == "volume"
    assert "wall_time_s" in manifest and "versions" in manifest


def test_rescale_example(tmp_path):
    code = cli.main(["rescale", "--model", "hyperbolic", "--dim", "2", "--lambda", "2", "--t", "1.0",
                     "--quad", "radial", "--out", str(tmp_path)])
    assert code == 0
    _, rows = read_csv(tmp_path / "rescale.csv")
    assert len(rows) == 1 and float(rows[0][4]) <= 1e-5


def test_failing_property_exits_one(tmp_path):
    # a tolerance of zero cannot be met by the finite-difference gradient check
    cfg = cli.parse_config({"command": "geodesic", "model": {"family": "hyperbolic", "dim": 2}, "t_values": [0.5],
                            "tolerances": {"gradient": 0.0}, "out_dir": str(tmp_path)})
    assert cli.run(cfg) == 1
    diags = json.loads((tmp_path / "geodesic_diagnostics.json").read_text())
    assert {d["check"] for d in diags} == {"K relation", "gradient identity"}
    assert json.loads((tmp_path / "run_manifest.json").read_text())["failures"]


def test_numerical_failure_exits_three(tmp_path):
    cfg = cli.parse_config({"command": "geodesic", "model": {"family": "sphere", "dim": 2}, "t_values": [0.3],
                            "V": [[6.0, 0.0]], "out_dir": str(tmp_path)})
    assert cli.run(cfg) == 3
    assert "TruncationError" in json.loads((tmp_path / "run_manifest.json").read_text())["error"]


def test_geodesic_and_jacobi_artifacts(tmp_path):
    assert cli.main(["geodesic", "--model", "cigar", "--t", "0.5", "--out", str(tmp_path)]) == 0
    files = sorted(p.name for p in tmp_path.glob("geodesic_t*.csv"))
    assert files == ["geodesic_t0.5_0.csv"]
    header, rows = read_csv(tmp_path / files[0])
    assert header == ["s", "x0", "x1", "speed", "R", "HX"]
    assert float(rows[0][0]) == 0.0 and rows[0][-1] == "nan"
    assert cli.main(["jacobi", "--model", "hyperbolic", "--t", "0.5", "--out", str(tmp_path)]) == 0
    diags = json.loads((tmp_path / "jacobi_diagnostics.json").read_text())
    assert all(d["pass"] for d in diags)


def test_theta_and_identities(tmp_path):
    assert cli.main(["theta", "--model", "flat", "--t", "0.5", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "theta.csv")
    assert rows[0][2] == "false"
    assert cli.main(["identities", "--model", "hyperbolic", "--t", "0.5", "--out", str(tmp_path)]) == 0
    table = json.loads((tmp_path / "identities.json").read_text())
    assert len(table) == 4 * 5


def test_volume_is_deterministic_across_jobs(tmp_path):
    outs = []
    for jobs in (1, 4):
        d = tmp_path / f"j{jobs}"
        assert cli.main(["volume", "--model", "hyperbolic", "--t", "0.5", "--quad", "mc", "--order", "300",
                         "--seed", "5", "--jobs", str(jobs), "--out", str(d)]) == 0
        outs.append((d / "volume.csv").read_bytes())
    assert outs[0] == outs[1]
