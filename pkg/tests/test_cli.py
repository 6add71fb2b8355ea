"""
Tests for the command-line interface
"""
import json

import pytest
from click.testing import CliRunner

from selshare.cli.app import cli
from selshare.core.exceptions import ConfigurationError, TraceVersionError
from selshare.data.planted import load_planted_spec
from selshare.services.traces import SUMMARY_FILE, TRACE_FILE
from tests.conftest import planted_config_dict


@pytest.fixture
def runner():
    return CliRunner()


def _write_config(tmp_path, name="config.json", **overrides):
    path = tmp_path / name
    path.write_text(json.dumps(planted_config_dict(tmp_path, **overrides)))
    return path


def _line(output, prefix):
    return next(line for line in output.splitlines() if line.startswith(prefix))


class TestRunCommand:
    """selshare run"""

    def test_run_prints_summary(self, runner, tmp_path):
        """Exit 0 and the summary lines"""
        config = _write_config(tmp_path)
        out = tmp_path / "cli-run"
        result = runner.invoke(cli, ["run", "--config", str(config), "--out", str(out), "--epochs", "3"])
        assert result.exit_code == 0, result.output
        assert _line(result.output, "run directory:").endswith(str(out))
        assert "test score:" in result.output
        assert "lock epoch:" in result.output
        summary = json.loads((out / SUMMARY_FILE).read_text())
        assert summary["epochs"] == 3

    def test_overrides_reach_the_run(self, runner, tmp_path):
        """--criterion none --capture off keeps every branch"""
        config = _write_config(tmp_path)
        out = tmp_path / "baseline"
        result = runner.invoke(cli, ["run", "--config", str(config), "--out", str(out),
                                     "--criterion", "none", "--capture", "off", "--seed", "3"])
        assert result.exit_code == 0, result.output
        assert _line(result.output, "branches:").startswith("branches: 6 ")
        assert json.loads((out / "config.json").read_text())["seed"] == 3

    def test_invalid_override_is_a_config_error(self, runner, tmp_path):
        """Sharing with the tap off fails validation"""
        config = _write_config(tmp_path)
        result = runner.invoke(cli, ["run", "--config", str(config), "--capture", "off"])
        assert result.exit_code == ConfigurationError.exit_code

    def test_unknown_flag(self, runner, tmp_path):
        """Usage errors come from click"""
        result = runner.invoke(cli, ["run", "--config", str(_write_config(tmp_path)), "--bogus"])
        assert result.exit_code == 2

    def test_missing_config_file(self, runner, tmp_path):
        """The path must exist"""
        result = runner.invoke(cli, ["run", "--config", str(tmp_path / "absent.json")])
        assert result.exit_code == 2

    def test_bad_schema_version(self, runner, tmp_path):
        """Config errors exit with their own code"""
        config = _write_config(tmp_path, schema_version=7)
        result = runner.invoke(cli, ["run", "--config", str(config)])
        assert result.exit_code == ConfigurationError.exit_code
        assert "schema_version" in result.output


class TestEvalAndInspect:
    """selshare eval and selshare inspect-trace"""

    @pytest.fixture
    def run_dir(self, runner, tmp_path):
        config = _write_config(tmp_path)
        out = tmp_path / "done"
        result = runner.invoke(cli, ["run", "--config", str(config), "--out", str(out)])
        assert result.exit_code == 0, result.output
        return out

    def test_eval_reproduces_test_score(self, runner, run_dir):
        """Best checkpoint on the test split gives the summary's score"""
        result = runner.invoke(cli, ["eval", "--checkpoint", str(run_dir / "checkpoints" / "best.json")])
        assert result.exit_code == 0, result.output
        score = float(_line(result.output, "score:").split(":", 1)[1])
        summary = json.loads((run_dir / SUMMARY_FILE).read_text())
        assert score == pytest.approx(summary["test_score"], abs=1e-9)
        assert len([line for line in result.output.splitlines() if line.startswith("task ")]) == 6

    def test_eval_val_split(self, runner, run_dir):
        """Validation split with an explicit config"""
        result = runner.invoke(cli, ["eval", "--checkpoint", str(run_dir / "checkpoints" / "last.json"),
                                     "--split", "val", "--config", str(run_dir / "config.json")])
        assert result.exit_code == 0, result.output
        assert "split: val" in result.output

    def test_eval_without_config(self, runner, tmp_path, run_dir):
        """A checkpoint moved out of its run needs --config"""
        moved = tmp_path / "elsewhere" / "ckpt" / "best.json"
        moved.parent.mkdir(parents=True)
        moved.write_bytes((run_dir / "checkpoints" / "best.json").read_bytes())
        result = runner.invoke(cli, ["eval", "--checkpoint", str(moved)])
        assert result.exit_code == ConfigurationError.exit_code

    def test_inspect_trace(self, runner, tmp_path, run_dir):
        """Curve and groups are printed, CSV written on request"""
        csv_path = tmp_path / "curve.csv"
        result = runner.invoke(cli, ["inspect-trace", str(run_dir), "--csv", str(csv_path)])
        assert result.exit_code == 0, result.output
        assert _line(result.output, "epochs:") == "epochs: 4"
        assert len(_line(result.output, "param curve:").split()) == 2 + 4
        assert csv_path.is_file()

    def test_inspect_newer_trace(self, runner, run_dir):
        """Unknown trace versions exit with their own code"""
        path = run_dir / TRACE_FILE
        lines = path.read_text().splitlines()
        raw = json.loads(lines[-1])
        raw["schema_version"] = 99
        path.write_text("\n".join(lines[:-1] + [json.dumps(raw)]) + "\n")
        result = runner.invoke(cli, ["inspect-trace", str(run_dir)])
        assert result.exit_code == TraceVersionError.exit_code


class TestPlantedAndCompare:
    """selshare planted-spec and selshare compare"""

    def test_planted_spec_drives_a_run(self, runner, tmp_path):
        """Spec file written by the CLI, referenced by planted_path"""
        spec_path = tmp_path / "specs" / "p.json"
        result = runner.invoke(cli, ["planted-spec", str(spec_path), "--n-tasks", "4", "--n-groups", "2",
                                     "--n-samples", "160", "--seed", "9"])
        assert result.exit_code == 0, result.output
        assert load_planted_spec(spec_path).n_tasks == 4

        raw = planted_config_dict(tmp_path)
        raw["dataset"] = {"kind": "planted", "planted_path": str(spec_path)}
        config = tmp_path / "from-file.json"
        config.write_text(json.dumps(raw))
        result = runner.invoke(cli, ["run", "--config", str(config), "--out", str(tmp_path / "p-run"),
                                     "--epochs", "2"])
        assert result.exit_code == 0, result.output

    def test_planted_spec_validation(self, runner, tmp_path):
        """More groups than tasks is rejected"""
        result = runner.invoke(cli, ["planted-spec", str(tmp_path / "bad.json"), "--n-tasks", "2",
                                     "--n-groups", "3"])
        assert result.exit_code == ConfigurationError.exit_code

    def test_compare(self, runner, tmp_path):
        """Two criteria, one table"""
        config = _write_config(tmp_path, epochs=2)
        out = tmp_path / "cmp"
        result = runner.invoke(cli, ["compare", "--config", str(config), "--out", str(out),
                                     "--criterion", "none", "--criterion", "dissimilarity"])
        assert result.exit_code == 0, result.output
        assert "written: comparison.csv" in result.output
        assert (out / "comparison.csv").is_file()
        assert (out / "dissimilarity" / TRACE_FILE).is_file()
