import json
import math
import shutil
import subprocess

import pytest

from kwlattice.cli import DEFAULTS, EXIT_ARGUMENT, EXIT_CONSISTENCY, EXIT_NONCONVERGENCE, EXIT_OK, main


def run(tmp_path, *args, name="out"):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def report(out, name):
    return json.loads((out / f"{name}.json").read_text())


class TestGreens:
    def test_check(self, tmp_path, table64):
        code, out = run(tmp_path, "greens", "check", "--radius", "64")
        assert code == EXIT_OK
        doc = report(out, "greens_check_R64")
        assert doc["result"]["passed"] and doc["table_fingerprint"] == table64.fingerprint
        assert doc["result"]["closest_reference"] == "classical"

    def test_build_csv(self, tmp_path, table64):
        code, out = run(tmp_path, "greens", "build", "--radius", "64", "--csv")
        assert code == EXIT_OK and (out / "greens_R64.csv").exists()


class TestSolve:
    def test_source(self, tmp_path):
        code, out = run(tmp_path, "solve", "source", "--kappa", "0.5", "--sigma", "4", "--radius", "32")
        assert code == EXIT_OK
        doc = report(out, "solve_source")
        assert doc["config"]["alpha"] == pytest.approx(16 * math.pi)
        assert doc["result"]["total_energy"] == pytest.approx(16 * math.pi, rel=1e-9)

    def test_deterministic_bytes(self, tmp_path):
        args = ("solve", "source", "--kappa", "0.5", "--sigma", "4", "--radius", "24", "--save-solution")
        _, a = run(tmp_path, *args, name="a")
        _, b = run(tmp_path, *args, name="b")
        for f in ("solve_source.json", "solve_source_solution.csv"):
            assert (a / f).read_bytes() == (b / f).read_bytes()

    def test_absorption(self, tmp_path):
        code, out = run(tmp_path, "solve", "absorption", "--kappa", "2", "--beta", "12.566370614359172",
                        "--sigma", "3", "--radius", "32")
        assert code == EXIT_OK
        assert report(out, "solve_absorption")["result"]["total_energy"] == pytest.approx(math.pi, rel=1e-8)

    def test_sigma_at_most_two(self, tmp_path):
        code, _ = run(tmp_path, "solve", "source", "--kappa", "0.5", "--sigma", "2", "--radius", "16")
        assert code == EXIT_ARGUMENT

    def test_alpha_sigma_conflict(self, tmp_path):
        code, _ = run(tmp_path, "solve", "source", "--kappa", "0.5", "--sigma", "4", "--alpha", "3",
                      "--radius", "16")
        assert code == EXIT_ARGUMENT

    def test_missing_kappa(self, tmp_path):
        assert run(tmp_path, "solve", "source", "--sigma", "4")[0] == EXIT_ARGUMENT

    def test_unknown_flag(self, tmp_path, capsys):
        assert run(tmp_path, "solve", "source", "--bogus", "1")[0] == EXIT_ARGUMENT

    def test_nonconvergence(self, tmp_path):
        code, _ = run(tmp_path, "solve", "source", "--kappa", "0.5", "--sigma", "4", "--radius", "16",
                      "--max-iter", "2", "--tol", "1e-14")
        assert code == EXIT_NONCONVERGENCE

    def test_literal_extremal_exterior(self, tmp_path):
        code, _ = run(tmp_path, "solve", "extremal", "--kappa", "2", "--beta", "12.566370614359172",
                      "--radius", "32", "--exterior", "literal")
        assert code == EXIT_CONSISTENCY


class TestConfig:
    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kappa": 0.5, "sigma": 4, "radius": 16, "max-iter": 500}))
        code, out = run(tmp_path, "solve", "source", "--config", str(cfg), "--radius", "20")
        assert code == EXIT_OK
        used = report(out, "solve_source")["config"]
        assert used["radius"] == 20 and used["max_iter"] == 500 and used["kappa"] == 0.5

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kappa": 0.5, "sigma": 4, "radious": 16}))
        assert run(tmp_path, "solve", "source", "--config", str(cfg))[0] == EXIT_ARGUMENT

    def test_nested_config_rejected(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"kappa": {"value": 0.5}}))
        assert run(tmp_path, "solve", "source", "--config", str(cfg))[0] == EXIT_ARGUMENT

    def test_every_command_has_a_parser(self, capsys):
        for command in DEFAULTS:
            assert main([*command.split(), "--help"]) == 0


class TestVerify:
    def test_barrier_claimed_bounds(self, tmp_path):
        code, out = run(tmp_path, "verify", "barrier")
        assert code == EXIT_CONSISTENCY
        assert report(out, "verify_barrier")["result"]["passed"] is False

    def test_barrier_measured_bounds(self, tmp_path):
        code, out = run(tmp_path, "verify", "barrier", "--lower", "4.5", "--upper", "3.5")
        assert code == EXIT_OK and report(out, "verify_barrier")["result"]["m0"] >= 10

    def test_maxprinciple(self, tmp_path):
        code, out = run(tmp_path, "verify", "maxprinciple", "--instances", "40", "--pairs", "5")
        assert code == EXIT_OK and report(out, "verify_maxprinciple")["result"]["passed"]

    def test_layers(self, tmp_path):
        code, out = run(tmp_path, "verify", "layers", "--kappa", "2", "--beta", "12.6", "--alphas", "7,8,9",
                        "--radius", "32")
        assert code == EXIT_OK
        assert report(out, "verify_layers")["result"]["ordered"]

    def test_sweep(self, tmp_path):
        code, out = run(tmp_path, "sweep", "beta", "--kappa", "0.5", "--sigma", "4", "--values", "0,10,20",
                        "--radius", "24", "--workers", "1")
        assert code == EXIT_OK
        assert sorted(p.name for p in out.iterdir() if p.suffix == ".csv")


class TestScan:
    def test_given_constants(self, tmp_path):
        code, out = run(tmp_path, "scan", "thresholds", "--c0", "1", "--c1", "1", "--C2", "1")
        assert code == EXIT_OK
        doc = report(out, "scan_thresholds")
        assert doc["result"]["a0"] == pytest.approx(4.75524, abs=1e-3)
        assert doc["table_fingerprint"] is None
        assert (out / "scan_thresholds.csv").read_text().startswith("sigma,h0,kappa_star_flag")

    def test_bad_range(self, tmp_path):
        code, _ = run(tmp_path, "scan", "thresholds", "--c0", "1", "--c1", "1", "--C2", "1", "--sigma-min", "1")
        assert code == EXIT_ARGUMENT


@pytest.mark.skipif(shutil.which("kwlattice") is None, reason="console script not installed")
def test_console_script(tmp_path):
    proc = subprocess.run(["kwlattice", "verify", "barrier", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == EXIT_CONSISTENCY and "consistency failure" in proc.stderr
