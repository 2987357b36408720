import json
import subprocess
import sys

import pytest

from cpwc import cli
from cpwc.netspec import parse_spec

TRAIN_FLAGS = ["--n-train", "64", "--n-val", "32", "--size", "8", "--epochs", "1",
               "--channels", "4", "--batch-size", "32"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert code == 0, err
    doc = json.loads(out)
    assert doc["schema_version"] == 1
    return doc["result"]


def test_plan_case2(capsys):
    code, out, _ = run(capsys, "plan", "--in", "256", "--out", "64")
    assert code == 0
    assert out.splitlines()[0] == "case 2, 64 groups × 4 channels"


def test_plan_case1_and_case3(capsys):
    _, out, _ = run(capsys, "plan", "--in", "8", "--out", "8")
    assert out.splitlines()[0] == "case 1, 8 singleton groups"
    res = run_json(capsys, "plan", "--in", "3", "--out", "10")
    assert res["case"] == 3
    assert res["sizes"] == [1] * 10
    assert res["share_counts"] == [4, 3, 3]


def test_count_builtin(capsys):
    res = run_json(capsys, "count", "--builtin", "resnet164", "--cpwc", "full")
    assert res["total_params"] / 1e6 == pytest.approx(1.96, abs=0.01)
    assert res["baseline_params"] / 1e6 == pytest.approx(1.7, abs=0.03)
    _, out, _ = run(capsys, "count", "--builtin", "resnet50")
    assert "Params" in out and "FLOPS" in out


def test_surgery_emits_spec(capsys, tmp_path):
    dest = tmp_path / "r50-cpwc.json"
    code, out, _ = run(capsys, "surgery", "--builtin", "resnet50", "--cpwc", "no-stage2",
                       "--emit", str(dest))
    assert code == 0 and str(dest) in out
    spec = parse_spec(dest.read_text())
    assert any(s.cpwc for s in spec.stages)
    res = run_json(capsys, "count", "--spec", str(dest))
    assert res["total_params"] / 1e6 == pytest.approx(25.8, abs=0.1)


def test_check_grad(capsys):
    res = run_json(capsys, "check-grad", "--trials", "6")
    assert res["failed"] == 0
    assert {t["case"] for t in res["trials"]} == {1, 2, 3}
    assert {t["stride"] for t in res["trials"]} == {1, 2}


def test_check_grad_failure_exit_code(capsys):
    code, _, err = run(capsys, "check-grad", "--trials", "3", "--tol", "1e-30")
    assert code == cli.EXIT_COMPUTE
    assert json.loads(err)["error"] == "compute"


@pytest.mark.parametrize("argv, code, kind", [
    (["plan", "--in", "0", "--out", "3"], 2, "usage"),
    (["plan", "--in", "x"], 2, "usage"),
    (["frobnicate"], 2, "usage"),
    (["count", "--spec", "/nonexistent/spec.json"], 3, "io"),
    (["train", "--dataset", "cifar100"], 2, "usage"),
    (["compare", "--variants", "full,bogus"], 2, "usage"),
])
def test_error_exit_codes(capsys, argv, code, kind):
    got, out, err = run(capsys, *argv)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1
    doc = json.loads(lines[0])
    assert doc["error"] == kind and doc["exit_code"] == code and doc["message"]


def test_format_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x", "stages": []}')
    code, _, err = run(capsys, "count", "--spec", str(bad))
    assert code == cli.EXIT_FORMAT and "no input node" in err
    cifar = tmp_path / "cifar-100-binary"
    cifar.mkdir()
    (cifar / "train.bin").write_bytes(bytes(100))
    (cifar / "test.bin").write_bytes(bytes(3074))
    code, _, err = run(capsys, "train", "--dataset", "cifar100", "--data", str(tmp_path))
    assert code == cli.EXIT_FORMAT and "byte offset 0" in err


def test_missing_cifar_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--dataset", "cifar10", "--data", str(tmp_path))
    assert code == cli.EXIT_IO


def test_every_flag_is_documented():
    parser = cli.build_parser()
    subparsers = next(a for a in parser._actions if a.dest == "command").choices
    assert set(subparsers) == set(cli.COMMANDS)
    for name, sub in subparsers.items():
        for action in sub._actions:
            assert action.help, f"{name} {action.option_strings} has no help text"


def test_outputs_are_byte_identical(capsys):
    for argv in (["plan", "--in", "10", "--out", "3", "--json"],
                 ["count", "--builtin", "resnet164", "--cpwc", "full", "--json"],
                 ["train", *TRAIN_FLAGS, "--seed", "3", "--json"]):
        first = run(capsys, *argv)
        assert first[0] == 0
        assert run(capsys, *argv) == first


def test_train_and_compare_results_dir(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.RESULTS_ENV, str(tmp_path))
    res = run_json(capsys, "train", *TRAIN_FLAGS, "--variant", "no-stage2")
    assert len(res["epochs"]) == 1
    stem = tmp_path / "train-no-stage2-seed0"
    assert json.loads(stem.with_suffix(".json").read_text())["params"] == res["params"]
    assert "wall_time" in json.loads((tmp_path / "train-no-stage2-seed0.meta.json").read_text())
    out_dir = tmp_path / "cmp"
    res = run_json(capsys, "compare", *TRAIN_FLAGS, "--variants", "pwc-only,full",
                   "--seeds", "0,1", "--results", str(out_dir))
    assert [r["variant"] for r in res["rows"]] == ["pwc-only", "full"]
    assert all(len(r["accuracies"]) == 2 for r in res["rows"])
    assert (out_dir / "compare.txt").read_text().startswith("Variant")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "cpwc", "plan", "--in", "4", "--out", "4"],
                          capture_output=True, text=True, check=True)
    assert proc.stdout.startswith("case 1")
    proc = subprocess.run([sys.executable, "-m", "cpwc", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "cpwc" in proc.stdout
