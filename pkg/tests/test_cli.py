"""End-to-end checks of the command-line surface and its exit codes."""

import json

import numpy as np
import pytest

from vts import cli
from vts import numerics as nm


@pytest.fixture
def gev_file(tmp_path):
    path = tmp_path / "instance.json"
    nm.save_matrix_file(path, nm.random_instance(3, 4))
    return path


@pytest.fixture
def easy_file(tmp_path):
    # triangular with distinct ratios: converges in one iteration
    a = np.triu(np.ones((4, 4), dtype=complex)) + np.diag([0, 1, 2, 3])
    b = np.triu(np.full((4, 4), 0.5 + 0.25j))
    path = tmp_path / "easy.json"
    nm.save_matrix_file(path, nm.make_instance(nm.GEV, a, b))
    return path


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestSolve:
    def test_easy_instance_converges(self, capsys, easy_file, tmp_path):
        trace_path = tmp_path / "trace.csv"
        code, out, _ = run_cli(capsys, "solve", "--input", str(easy_file),
                               "--eps", "1e-6", "--M", "2",
                               "--trace", str(trace_path))
        assert code == cli.EXIT_OK
        summary = json.loads(out)
        assert summary["stop_reason"] == "converged"
        assert summary["iterations"] == 1
        assert trace_path.read_text().startswith("iteration,loss,delta")

    def test_convergence_failure_exit_code(self, capsys, gev_file):
        code, out, _ = run_cli(capsys, "solve", "--input", str(gev_file),
                               "--eps", "1e-8", "--max-iterations", "5")
        assert code == cli.EXIT_CONVERGENCE
        assert json.loads(out)["stop_reason"] == "max_iterations"

    def test_ev_override_drops_second_matrix(self, capsys, easy_file):
        code, out, _ = run_cli(capsys, "solve", "--input", str(easy_file),
                               "--kind", "ev", "--eps", "1e-6", "--M", "2")
        assert code == cli.EXIT_OK
        assert json.loads(out)["config"]["evaluator"] == "matrix"

    def test_missing_file_is_io_error(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "solve", "--input",
                               str(tmp_path / "absent.json"))
        assert code == cli.EXIT_IO
        assert "io error" in err

    def test_bad_payload_is_validation_error(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"n": 2, "kind": "ev"}')
        code, _, err = run_cli(capsys, "solve", "--input", str(path))
        assert code == cli.EXIT_VALIDATION
        assert "invalid input" in err

    def test_bad_evaluator_is_validation_error(self, capsys, easy_file):
        code, _, _ = run_cli(capsys, "solve", "--input", str(easy_file),
                             "--evaluator", "quantum")
        assert code == cli.EXIT_VALIDATION


class TestOracle:
    def test_spectrum_json(self, capsys, gev_file):
        code, out, _ = run_cli(capsys, "oracle", "--input", str(gev_file))
        assert code == cli.EXIT_OK
        payload = json.loads(out)
        assert payload["kind"] == "gev"
        assert len(payload["eigenvalues"]) == 4
        spectrum = [complex(re, im) for re, im in payload["eigenvalues"]]
        assert min(abs(v) for v in spectrum) >= 0.1


class TestCompile:
    def test_program_and_counts(self, capsys, tmp_path):
        out_path = tmp_path / "program.txt"
        code, out, _ = run_cli(capsys, "compile", "--n", "2", "--M", "10",
                               "--kind", "gev", "--out", str(out_path),
                               "--counts")
        assert code == cli.EXIT_OK
        text = out_path.read_text()
        assert "# stage W5" in text
        assert "total depth:" in out
        assert "W2" in out and "CCX=20" in out


class TestExperimentAndPlotdata:
    def test_scaling_then_plotdata(self, capsys, tmp_path):
        out_dir = tmp_path / "results"
        code, out, _ = run_cli(
            capsys, "experiment", "scaling", "--kind", "gev",
            "--instances", "1", "--seed-base", "2", "--out", str(out_dir),
            "--eps-grid", "1e-1,1e-2", "--threads", "1",
            "--max-iterations", "20000")
        assert code == cli.EXIT_OK
        assert json.loads(out)["label"] == "scaling_gev"
        rows_file = out_dir / "scaling_gev_rows.csv"
        assert rows_file.exists()
        assert (out_dir / "scaling_gev_result.json").exists()

        plot_path = tmp_path / "plots.csv"
        code, _, _ = run_cli(capsys, "plotdata", "--in", str(out_dir),
                             "--out", str(plot_path))
        assert code == cli.EXIT_OK
        assert plot_path.read_text().startswith("figure,kind,x,y,count")

    def test_plotdata_without_rows_is_validation_error(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "plotdata", "--in", str(tmp_path),
                             "--out", str(tmp_path / "plots.csv"))
        assert code == cli.EXIT_VALIDATION
