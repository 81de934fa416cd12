import json

import pytest

from bondsep.cli import main


def run(tmp_path, *args, out="out"):
    return main(["run", *args, "--cache", str(tmp_path / "cache"), "--output", str(tmp_path / out)])


def test_small_N_is_a_usage_error(tmp_path, capsys):
    assert run(tmp_path, "hydro", "--N", "8") == 2
    assert "below the minimum" in capsys.readouterr().err


def test_unknown_verify_level(capsys):
    with pytest.raises(SystemExit) as info:
        main(["verify", "medium"])
    assert info.value.code == 2


def test_unknown_experiment(capsys):
    with pytest.raises(SystemExit) as info:
        main(["run", "nonsense"])
    assert info.value.code == 2


def test_ellipticity_error_is_tagged(tmp_path, capsys):
    code = run(tmp_path, "hydro", "--N", "32", "--replicas", "4", "--law", "uniform:0.1,0.5")
    assert code == 3
    assert capsys.readouterr().err.startswith("error [environment]:")


def test_run_is_reproducible_byte_for_byte(tmp_path):
    args = ["hydro", "--N", "32", "--replicas", "12", "--seed", "5"]
    run(tmp_path, *args, out="a")
    # a fresh cache forces the replicas to be simulated again
    main(["run", *args, "--cache", str(tmp_path / "cache2"), "--output", str(tmp_path / "b")])
    for name in ("hydro-samples.csv", "hydro-checks.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "hydro.json").read_text())
    assert report["config"]["N"] == 32
    assert all(c["env_seed"] == report["config"]["env_seed"] for c in report["checks"])


def test_config_file_and_report(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "hydro", "N": 32, "replicas": 6}))
    main(["run", "--config", str(cfg), "--cache", str(tmp_path / "c"), "--output", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "o" / "hydro.json")]) == 0
    assert "hydro" in capsys.readouterr().out


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"experiment": "hydro", "colour": "blue"}))
    assert main(["run", "--config", str(cfg), "--output", str(tmp_path / "o")]) == 2


def test_env_roundtrip(tmp_path, capsys):
    path = tmp_path / "env.json"
    assert main(["env", "--N", "32", "--seed", "3", "--out", str(path)]) == 0
    first = capsys.readouterr().out
    assert main(["env", "--env-file", str(path)]) == 0
    second = capsys.readouterr().out
    assert first.splitlines()[:4] == second.splitlines()[:4]


def test_verify_fast_passes(capsys):
    assert main(["verify", "fast"]) == 0
