"""Test script for the mittag-lab command line."""

import json
import math

import pytest

import main
from main import SelfCheck, main as cli
from settings import get_settings


@pytest.fixture(autouse=True)
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def summary(capsys):
    return capsys.readouterr().out.strip().splitlines()[-1]


def test_ml_prints_value(capsys):
    assert cli(["ml", "--beta", "1", "--z", "1"]) == 0
    assert summary(capsys) == "2.7182818285"
    print("✅ ml subcommand")


def test_ml_json_output(tmp_path):
    out = tmp_path / "ml.json"
    assert cli(["ml", "--beta", "0.5", "--z", "-1", "--derivative", "--out", str(out)]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert payload["value"] == pytest.approx(0.4275835762, abs=1e-10)
    assert payload["derivative"] < 0


def test_kernel_table_file(tmp_path, capsys):
    out = tmp_path / "k.csv"
    args = ["kernel", "--alpha", "0.5", "--beta", "0.5", "--t", "1", "--xmin", "-3", "--xmax", "3", "--n", "121",
            "--out", str(out)]
    assert cli(args) == 0
    lines = out.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 122
    assert lines[0] == "x,value"
    x, value = (float(v) for v in lines[61].split(","))
    assert x == pytest.approx(0.0, abs=1e-12)
    assert value == pytest.approx(0.5771, abs=1e-4)
    meta = json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))
    assert meta["alpha"] == 0.5 and meta["t"] == 1.0
    assert "121 rows" in summary(capsys)


def test_simulate_is_byte_identical(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    base = ["simulate", "--alpha", "0.5", "--beta", "0.5", "--paths", "200", "--steps", "20", "--seed", "42"]
    assert cli(base + ["--out", str(first)]) == 0
    assert cli(base + ["--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.with_suffix(".json").read_text(encoding="utf-8"))["seed"] == 42


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MITTAG_DEFAULT_SEED", "7")
    get_settings.cache_clear()
    out = tmp_path / "paths.csv"
    assert cli(["simulate", "--alpha", "1", "--beta", "1", "--paths", "10", "--steps", "5", "--out", str(out)]) == 0
    assert json.loads(out.with_suffix(".json").read_text(encoding="utf-8"))["seed"] == 7


def test_missing_parameter_exits_2(capsys):
    assert cli(["kernel", "--alpha", "0.5", "--beta", "0.5"]) == 2
    assert "missing required parameter" in capsys.readouterr().err


def test_invalid_parameter_exits_2():
    assert cli(["ml", "--beta", "0", "--z", "1"]) == 2
    assert cli(["cov", "--alpha", "0.5", "--beta", "0.5", "--times", "1,0.5"]) == 2


def test_accuracy_loss_exits_1(capsys):
    assert cli(["ml", "--beta", "0.2", "--gamma", "1.3", "--z", "6", "--zi", "6"]) == 1
    assert "error" in capsys.readouterr().err


def test_quick_subcommands(capsys):
    assert cli(["foxh", "--kind", "exp", "--z", "1"]) == 0
    assert float(summary(capsys)) == pytest.approx(math.exp(-1.0), abs=1e-10)
    assert cli(["mwright", "--beta", "0.5", "--x", "1"]) == 0
    assert float(summary(capsys)) == pytest.approx(math.exp(-0.25) / math.sqrt(math.pi), abs=1e-10)
    assert cli(["frac", "--op", "inner", "--alpha", "1"]) == 0
    assert float(summary(capsys)) == pytest.approx(math.sqrt(math.pi / 2.0), rel=1e-6)
    assert cli(["cov", "--alpha", "0.5", "--beta", "0.5", "--times", "0.5,1", "--theta", "0,0"]) == 0
    assert "char_fn = 1.0000000000" in summary(capsys)
    assert cli(["donsker", "--alpha", "0.5", "--beta", "0.5", "--t", "1", "--a", "1", "--n-cut", "50"]) == 0
    assert "kernel" in summary(capsys)
    assert cli(["loctime", "--alpha", "0.5", "--beta", "0.5", "--a", "0", "--T", "1"]) == 0
    line = summary(capsys)
    assert line.startswith("E L(0.0, 1.0) = ")
    assert float(line.split("=")[1]) == pytest.approx(4.0 / 3.0 / (math.sqrt(2.0) * math.gamma(0.75)), rel=1e-9)


def test_frac_indicator_table(tmp_path):
    out = tmp_path / "mh.csv"
    args = ["frac", "--op", "mh-indicator", "--alpha", "0.75", "--a", "0", "--b", "1", "--side", "right",
            "--xmin", "-2", "--xmax", "2", "--n", "9", "--out", str(out)]
    assert cli(args) == 0
    rows = out.read_text(encoding="utf-8").splitlines()[1:]
    # the two jump points are skipped
    assert len(rows) == 7


def test_manifest_is_covered():
    assert main.uncovered_operations() == []


def test_selftest_failure_exits_1(monkeypatch, tmp_path, capsys):
    failing = SelfCheck("always-fails", (), lambda: [("residual", 1.0, 1e-6)])
    monkeypatch.setattr(main, "SELFTESTS", main.SELFTESTS[:1] + (failing,))
    monkeypatch.setattr(main, "OPERATIONS", main.SELFTESTS[0].covers)
    out = tmp_path / "selftest.json"
    assert cli(["selftest", "--out", str(out)]) == 1
    assert "❌ always-fails" in capsys.readouterr().out
    report = json.loads(out.read_text(encoding="utf-8"))
    assert [c["passed"] for c in report["checks"]] == [True, False]


def test_donsker_check_tracks_the_gaps():
    measurements = main._check_donsker()
    assert [m[0] for m in measurements][-1] == "non-shrinking gaps over n_cut=5..80"
    assert all(measured <= tolerance for _, measured, tolerance in measurements)


@pytest.mark.slow
def test_selftest_grids_are_complete():
    laplace = main._check_laplace()
    assert sum(label.startswith("beta=") for label, _, _ in laplace) == 24
    kernels = main._check_kernels()
    assert sum(label.startswith("spread") for label, _, _ in kernels) == 24
    sampler = main._check_sampler()
    assert sum("z-score" in label for label, _, _ in sampler) == 11
    assert all(tolerance <= 3.0 for label, _, tolerance in sampler if "z-score" in label)
    local_time = dict((label, tolerance) for label, _, tolerance in main._check_local_time())
    assert local_time["occupation (relative)"] == 0.05
    for label, measured, tolerance in laplace + kernels + sampler:
        assert measured <= tolerance, label
    print("✅ selftest runs the full acceptance grids")


@pytest.mark.slow
def test_full_selftest(tmp_path, capsys):
    out = tmp_path / "selftest.json"
    assert cli(["selftest", "--out", str(out)]) == 0
    assert "❌" not in capsys.readouterr().out
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["uncovered"] == []
    assert all(c["passed"] for c in report["checks"])


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
