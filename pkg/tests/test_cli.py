import json
import logging

import pytest

from orthofield import cli
from orthofield.cli import StoreUnwritable, persist, run

DELTA_TOML = """
seed = 3
[field]
dimension = 1
coefficients = [{index = [0], value = 1.0}]
[check]
n_max = 16
"""

TWO_TAP_TOML = """
[field]
dimension = 1
coefficients = [{index = [0], value = 0.5}, {index = [1], value = 0.5}]
[approx]
k = [1, 2, 4]
n = 16
reps = 50
"""

NON_SOLVABLE = {"d": 1, "weights": [0.25] * 4, "perms": [[2, 3, 0, 1]], "partition": [0, 1, 2, 3], "function": [1, 0, 1, 0]}
SOLVABLE = {"d": 1, "weights": [0.25] * 4, "perms": [[1, 2, 3, 0]], "partition": [0, 1, 2, 3], "function": [1, 0, 0, 0]}


@pytest.fixture
def cfg_file(tmp_path):
    def make(text, name="cfg.toml"):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return make


def run_out(capsys, argv):
    code = run(argv)
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_check_delta(capsys, cfg_file):
    code, out, _ = run_out(capsys, ["check", "--config", cfg_file(DELTA_TOML), "--format", "table"])
    assert code == 0
    assert out.count("satisfied") == 3


def test_check_json_sorted(capsys, cfg_file):
    code, out, _ = run_out(capsys, ["check", "--config", cfg_file(DELTA_TOML)])
    doc = json.loads(out)
    assert code == 0 and list(doc) == sorted(doc)


def test_input_error_names_key(capsys, cfg_file):
    bad = cfg_file("[field]\ndimension = 1\ninnovation = {sd = -1.0}\n")
    code, _, err = run_out(capsys, ["check", "--config", bad])
    assert code == 2 and "field.innovation.sd" in err
    code, _, err = run_out(capsys, ["check", "--config", cfg_file("[field]\n")])
    assert code == 2 and "field.dimension" in err
    code, _, err = run_out(capsys, ["check", "--config", "/nonexistent.toml"])
    assert code == 2 and "--config" in err
    code, _, err = run_out(capsys, ["check", "--config", cfg_file("[field\n")])
    assert code == 2


def test_unknown_subcommand(capsys):
    assert run(["plot"]) == 2


def test_help_lists_keys(capsys):
    for cmd, keys in cli.COMMAND_KEYS.items():
        argv = [cmd, "doob", "--help"] if cmd == "inequality" else [cmd, "--help"]
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(argv)
        out = capsys.readouterr().out
        for key, unit, default, _ in keys:
            assert key in out and f"[{unit}]" in out and default in out


def test_decompose_exit_codes(capsys, tmp_path):
    p = tmp_path / "sys.json"
    p.write_text(json.dumps(NON_SOLVABLE))
    code, out, _ = run_out(capsys, ["decompose", "--system", str(p)])
    assert code == 1
    assert json.loads(out)["decomposition"]["solvable"] is False
    p.write_text(json.dumps(SOLVABLE))
    code, out, _ = run_out(capsys, ["decompose", "--system", str(p)])
    assert code == 0
    doc = json.loads(out)
    assert doc["decomposition"]["residual"] < 1e-9
    p.write_text(json.dumps({"d": 1, "weights": [1.0]}))
    code, _, err = run_out(capsys, ["decompose", "--system", str(p)])
    assert code == 2 and "decompose.system" in err


def test_decompose_embedded(capsys, cfg_file):
    cfg = cfg_file("[field]\ndimension = 2\ncoefficients = [{index = [0, 0], value = 1.0}, {index = [1, 0], value = 0.5}]\n")
    code, out, _ = run_out(capsys, ["decompose", "--config", cfg])
    assert code == 0 and json.loads(out)["decomposition"]["certified"]


def test_approx(capsys, cfg_file):
    code, out, _ = run_out(capsys, ["approx", "--config", cfg_file(TWO_TAP_TOML), "--format", "csv"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "k,mk_coefficient,error,std_error"
    assert lines[1].startswith("1,0.5,") and lines[2].startswith("2,0.75,")
    code, _, err = run_out(capsys, ["approx", "--config", cfg_file(TWO_TAP_TOML), "--k", "4,2"])
    assert code == 2 and "approx.k" in err


def test_inequality(capsys, cfg_file):
    code, out, _ = run_out(capsys, ["inequality", "doob", "--d", "2", "--n", "8,8", "--reps", "200", "--seed", "7"])
    assert code == 0 and json.loads(out)["passed"]
    cfg = cfg_file("[field]\ndimension = 1\n[inequality]\nn_dyadic = 3\nreps = 50\n")
    code, out, _ = run_out(capsys, ["inequality", "dyadic", "--config", cfg])
    assert code == 0
    code, _, err = run_out(capsys, ["inequality", "dyadic", "--config", cfg, "--E", "1"])
    assert code == 2 and "inequality.E" in err


def test_fclt_degenerate(capsys, cfg_file):
    cfg = cfg_file("[field]\ndimension = 1\ncoefficients = [{index = 0, value = 1.0}, {index = 1, value = -1.0}]\n")
    code, out, _ = run_out(capsys, ["fclt", "--config", cfg, "--n", "8", "--reps", "10"])
    assert code == 1 and json.loads(out)["degenerate"]


def test_sheet_csv(capsys):
    code, out, _ = run_out(capsys, ["sheet", "--grid", "3", "--format", "csv", "--seed", "1"])
    lines = out.splitlines()
    assert code == 0 and lines[0] == "t1,t2,value" and len(lines) == 10
    assert lines[1] == "0.0,0.0,0.0"
    assert "\r" not in out


def test_reproducible_and_store(capsys, tmp_path, cfg_file):
    store = tmp_path / "runs.jsonl"
    argv = ["approx", "--config", cfg_file(TWO_TAP_TOML), "--seed", "11", "--store", str(store)]
    _, a, _ = run_out(capsys, argv)
    _, b, _ = run_out(capsys, argv)
    assert a == b
    recs = [json.loads(l) for l in store.read_text().splitlines()]
    assert [r["id"] for r in recs] == [1, 2]
    assert recs[0]["outputs"] == recs[1]["outputs"] and recs[0]["seed"] == 11
    assert recs[0]["subcommand"] == "approx"


def test_seed_precedence(capsys, monkeypatch, cfg_file, tmp_path):
    store = tmp_path / "s.jsonl"
    cfg = cfg_file(DELTA_TOML)
    run_out(capsys, ["check", "--config", cfg, "--store", str(store)])
    monkeypatch.setenv("ORTHOFIELD_SEED", "42")
    run_out(capsys, ["check", "--config", cfg, "--store", str(store)])
    run_out(capsys, ["check", "--config", cfg, "--store", str(store), "--seed", "5"])
    seeds = [json.loads(l)["seed"] for l in store.read_text().splitlines()]
    assert seeds == [3, 42, 5]
    monkeypatch.setenv("ORTHOFIELD_SEED", "nope")
    code, _, err = run_out(capsys, ["check", "--config", cfg])
    assert code == 2 and "ORTHOFIELD_SEED" in err


def test_env_seed_changes_output(capsys, monkeypatch):
    monkeypatch.setenv("ORTHOFIELD_SEED", "1")
    _, a, _ = run_out(capsys, ["sheet", "--grid", "3"])
    monkeypatch.setenv("ORTHOFIELD_SEED", "2")
    _, b, _ = run_out(capsys, ["sheet", "--grid", "3"])
    assert a != b


def test_out_file(capsys, tmp_path, cfg_file):
    out = tmp_path / "res.json"
    code, text, _ = run_out(capsys, ["check", "--config", cfg_file(DELTA_TOML), "--out", str(out)])
    assert code == 0 and text == "" and json.loads(out.read_text())["hannan"]


def test_persist_corrupted_line(tmp_path, caplog):
    store = tmp_path / "runs.jsonl"
    store.write_text('{"id": 1, "x": 0}\n{"id": 2, "x"')
    with caplog.at_level(logging.WARNING, logger="orthofield"):
        assert persist({"x": 1}, store) == 2
    assert "corrupted" in caplog.text
    lines = store.read_text().splitlines()
    assert lines[0] == '{"id": 1, "x": 0}' and json.loads(lines[-1]) == {"id": 2, "x": 1}


def test_persist_missing_directory(tmp_path):
    with pytest.raises(StoreUnwritable):
        persist({"x": 1}, tmp_path / "missing" / "runs.jsonl")
    assert run(["sheet", "--grid", "3", "--store", str(tmp_path / "missing" / "r.jsonl")]) == 2
