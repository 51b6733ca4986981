import json

import numpy as np
import pytest
from typer.testing import CliRunner

from config import settings
from main import EXIT_BUDGET, EXIT_OK, EXIT_PIPELINE, EXIT_USAGE, app
from services.evaluation import ROBUSTNESS_CONDITIONS
from services.rendering import save_png

runner = CliRunner()


def flat_output(result):
    return " ".join(result.output.split())


@pytest.fixture
def eye_png(tmp_path, clean_eye):
    return save_png(clean_eye.image.data, tmp_path / "eye.png")


@pytest.fixture
def plan_file(tmp_path):
    path = tmp_path / "plan.env"
    path.write_text("count=3\nseed=2\n")
    return path


class TestSegmentCommand:
    def test_clean_eye(self, tmp_path, eye_png):
        out = tmp_path / "out"
        result = runner.invoke(app, ["--r-avg", "25", "segment", str(eye_png), "-o", str(out)])
        assert result.exit_code == EXIT_OK, result.output
        assert sorted(p.name for p in out.iterdir()) == ["eye.overlay.png", "eye.result.json"]
        record = json.loads((out / "eye.result.json").read_text())
        assert abs(record["pupil"]["r"] - 25) <= 1.0
        assert abs(record["iris"]["r"] - 60) <= 1.5

    def test_debug_images(self, tmp_path, eye_png):
        out = tmp_path / "out"
        result = runner.invoke(app, ["--r-avg", "25", "segment", str(eye_png), "-o", str(out), "--debug"])
        assert result.exit_code == EXIT_OK, result.output
        names = {p.name for p in out.iterdir()}
        assert len(names) == 10
        assert "eye.zero_crossings_clean.png" in names and "eye.trilevel.png" in names

    def test_debug_default_from_environment(self, tmp_path, eye_png, monkeypatch):
        monkeypatch.setattr(settings, "DEBUG", True)
        out = tmp_path / "out"
        result = runner.invoke(app, ["--r-avg", "25", "segment", str(eye_png), "-o", str(out)])
        assert result.exit_code == EXIT_OK, result.output
        assert len(list(out.iterdir())) == 10
        plain = tmp_path / "plain"
        runner.invoke(app, ["--r-avg", "25", "segment", str(eye_png), "-o", str(plain), "--no-debug"])
        assert len(list(plain.iterdir())) == 2

    def test_all_black_names_pupil_stage(self, tmp_path):
        black = save_png(np.zeros((240, 320)), tmp_path / "black.png")
        result = runner.invoke(app, ["segment", str(black), "-o", str(tmp_path / "out")])
        assert result.exit_code == EXIT_PIPELINE
        assert "pupil" in flat_output(result)
        assert "NO_PUPIL_CANDIDATE" in flat_output(result)

    def test_unreadable_image_is_usage_error(self, tmp_path):
        result = runner.invoke(app, ["segment", str(tmp_path / "missing.png")])
        assert result.exit_code == EXIT_USAGE


class TestEvalCommand:
    def test_empty_directory(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        result = runner.invoke(app, ["eval", str(empty)])
        assert result.exit_code == EXIT_USAGE
        assert "no images found" in flat_output(result)

    def test_plan_file_summary_and_csv(self, tmp_path, plan_file):
        csv_path = tmp_path / "report.csv"
        result = runner.invoke(app, ["eval", str(plan_file), "--jobs", "2", "--output", str(csv_path)])
        assert result.exit_code == EXIT_OK, result.output
        assert "# summary: images=3 Ar=" in result.output
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "id,ae,success,ms" and len(lines) == 5

    def test_matrix_writes_one_report_per_condition(self, tmp_path, plan_file):
        out = tmp_path / "matrix"
        result = runner.invoke(app, ["eval", str(plan_file), "--matrix", "--output", str(out)])
        assert result.exit_code == EXIT_OK, result.output
        assert {p.stem for p in out.glob("*.csv")} == set(ROBUSTNESS_CONDITIONS)
        assert "Robustness Matrix" in result.output

    def test_synth_then_directory_eval(self, tmp_path):
        corpus = tmp_path / "corpus"
        result = runner.invoke(app, ["synth", str(corpus), "--count", "3", "--seed", "4"])
        assert result.exit_code == EXIT_OK, result.output
        assert len(list(corpus.glob("*.truth.png"))) == 3
        assert (corpus / "truth.csv").is_file()

        result = runner.invoke(app, ["eval", str(corpus)])
        assert result.exit_code == EXIT_OK, result.output
        assert "images=3 Ar=100.0" in result.output


class TestBenchCommand:
    def test_zero_budget_fails(self, plan_file):
        result = runner.invoke(app, ["bench", str(plan_file), "--budget-ms", "0"])
        assert result.exit_code == EXIT_BUDGET
        assert "Timing per Image" in result.output

    def test_generous_budget_passes(self, plan_file):
        result = runner.invoke(app, ["bench", str(plan_file), "--budget-ms", "600000"])
        assert result.exit_code == EXIT_OK, result.output


class TestConfig:
    def test_print_config_round_trip(self, tmp_path):
        first = runner.invoke(app, ["--t1", "0.25", "--lambda-c", "0.2", "--print-config"])
        assert first.exit_code == EXIT_OK
        assert "t1=0.25" in first.output and "lambda_c=0.2" in first.output
        saved = tmp_path / "pipeline.env"
        saved.write_text(first.output)
        second = runner.invoke(app, ["--config", str(saved), "--print-config"])
        assert second.exit_code == EXIT_OK
        assert second.output == first.output

    def test_flag_beats_config_file(self, tmp_path):
        saved = tmp_path / "pipeline.env"
        saved.write_text("t1=0.3\n")
        result = runner.invoke(app, ["--config", str(saved), "--t1", "0.1", "--print-config"])
        assert "t1=0.1" in result.output.splitlines()

    def test_invalid_thresholds(self):
        result = runner.invoke(app, ["--t1", "0.7", "--t2", "0.5", "--print-config"])
        assert result.exit_code == EXIT_USAGE

    def test_missing_config_file(self, tmp_path):
        result = runner.invoke(app, ["--config", str(tmp_path / "nope.env"), "--print-config"])
        assert result.exit_code == EXIT_USAGE

    def test_unknown_config_key(self, tmp_path):
        saved = tmp_path / "pipeline.env"
        saved.write_text("colour=blue\n")
        result = runner.invoke(app, ["--config", str(saved), "--print-config"])
        assert result.exit_code == EXIT_USAGE

    def test_no_command(self):
        assert runner.invoke(app, []).exit_code == EXIT_USAGE

    def test_invalid_jobs(self, plan_file):
        assert runner.invoke(app, ["eval", str(plan_file), "--jobs", "0"]).exit_code == EXIT_USAGE

    def test_print_config_includes_run_defaults(self):
        result = runner.invoke(app, ["--print-config"])
        assert result.exit_code == EXIT_OK
        lines = result.output.splitlines()
        assert f"jobs={settings.JOBS}" in lines
        assert f"seed={settings.SEED}" in lines
        assert f"budget_ms={settings.BUDGET_MS}" in lines

    def test_config_file_budget_reaches_bench(self, tmp_path, plan_file):
        saved = tmp_path / "pipeline.env"
        saved.write_text("budget_ms=0\njobs=2\n")
        result = runner.invoke(app, ["--config", str(saved), "bench", str(plan_file)])
        assert result.exit_code == EXIT_BUDGET
        printed = runner.invoke(app, ["--config", str(saved), "--print-config"]).output.splitlines()
        assert "jobs=2" in printed and "budget_ms=0.0" in printed

    def test_jobs_default_follows_environment(self, monkeypatch, plan_file):
        monkeypatch.setattr(settings, "JOBS", 0)
        assert runner.invoke(app, ["bench", str(plan_file)]).exit_code == EXIT_USAGE
        assert runner.invoke(app, ["eval", str(plan_file)]).exit_code == EXIT_USAGE
        explicit = runner.invoke(app, ["bench", str(plan_file), "--jobs", "1", "--budget-ms", "600000"])
        assert explicit.exit_code == EXIT_OK, explicit.output
