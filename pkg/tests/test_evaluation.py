import math

import numpy as np
import pandas as pd
import pytest

from schemas.models import EvalRecord, NoiseSpec, SyntheticPlan
from services.errors import CorpusError
from services.evaluation import (
    FAILED_AE, ROBUSTNESS_CONDITIONS, accuracy_error, accuracy_rate, build_report, directory_items, gap_overlap,
    run_corpus, summary_line, timing_table, write_report_csv,
)
from services.rendering import save_png


def record(image_id, ae, **extra):
    return EvalRecord(image_id=image_id, ae=ae, success=ae < 10, **extra)


def masks(n_truth, n_detected, shape=(100, 100)):
    truth, detected = np.zeros(shape, dtype=bool), np.zeros(shape, dtype=bool)
    truth.flat[:n_truth] = True
    detected.flat[:n_detected] = True
    return detected, truth


class TestAccuracyError:
    def test_known_values(self):
        assert accuracy_error(*masks(1302, 0)) == pytest.approx(13.02)
        assert accuracy_error(*masks(1000, 870)) == pytest.approx(1.30)

    def test_symmetric_and_zero_iff_equal_counts(self):
        detected, truth = masks(500, 800)
        assert accuracy_error(detected, truth) == accuracy_error(truth, detected)
        shifted = np.roll(truth, 3)
        assert accuracy_error(shifted, truth) == 0.0

    def test_counting_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            shape = tuple(rng.integers(5, 30, size=2))
            a, b = rng.random(shape) < rng.random(), rng.random(shape) < rng.random()
            oracle = abs(sum(map(int, b.flat)) - sum(map(int, a.flat))) * 100.0 / (shape[0] * shape[1])
            assert accuracy_error(a, b) == pytest.approx(oracle, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            accuracy_error(np.zeros((3, 3)), np.zeros((3, 4)))


class TestAccuracyRate:
    def test_ninety_nine_of_hundred(self):
        records = [record(f"i{k}", 1.0) for k in range(99)] + [record("bad", 50.0)]
        assert accuracy_rate(records) == pytest.approx(99.0)

    def test_all_and_none(self):
        assert accuracy_rate([record("a", 0.0), record("b", 9.99)]) == 100.0
        assert accuracy_rate([record(f"f{k}", FAILED_AE) for k in range(5)]) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            accuracy_rate([])

    def test_success_must_match_threshold(self):
        with pytest.raises(ValueError):
            EvalRecord(image_id="x", ae=12.0, success=True)


class TestBuildReport:
    def test_matches_counting_oracle(self):
        rng = np.random.default_rng(3)
        records = [record(f"r{k}", float(ae)) for k, ae in enumerate(rng.uniform(0, 20, 57))]
        report = build_report(records)
        assert report.ar == pytest.approx(100.0 * sum(1 for r in records if r.ae < 10) / len(records))
        assert report.mean_ae == pytest.approx(np.mean([r.ae for r in records]))
        assert report.median_ae == pytest.approx(np.median([r.ae for r in records]))
        assert [r.image_id for r in report.records] == [r.image_id for r in records]

    def test_diagnostics_only_when_known(self):
        report = build_report([record("a", 1.0), record("b", 2.0)])
        assert report.mean_pupil_center_error is None and report.mean_gap_overlap is None
        report = build_report([record("a", 1.0, pupil_center_error=0.5), record("b", 2.0, pupil_center_error=1.5)])
        assert report.mean_pupil_center_error == pytest.approx(1.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            build_report([])


class TestGapOverlap:
    def test_nothing_planted(self):
        assert gap_overlap([(0.0, 1.0)], []) is None

    def test_full_and_partial(self):
        planted = [(math.radians(220), math.radians(320))]
        assert gap_overlap(planted, planted) == 1.0
        half = gap_overlap([(math.radians(220), math.radians(270))], planted)
        assert half == pytest.approx(0.5, abs=0.02)

    def test_negative_angles_and_wrap(self):
        planted = [(math.radians(-140), math.radians(-40))]
        detected = [(math.radians(220), math.radians(320))]
        assert gap_overlap(detected, planted) == 1.0
        assert gap_overlap([(math.radians(350), math.radians(370))], [(math.radians(-10), math.radians(10))]) == 1.0


class TestDirectoryCorpus:
    def test_empty_directory(self, tmp_path):
        with pytest.raises(CorpusError, match="no images found"):
            directory_items(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(CorpusError):
            directory_items(tmp_path / "absent")

    def test_missing_truth(self, tmp_path):
        save_png(np.zeros((20, 20)), tmp_path / "eye.png")
        with pytest.raises(CorpusError, match="truth"):
            directory_items(tmp_path)

    def test_truth_masks_are_not_images(self, tmp_path):
        save_png(np.zeros((20, 20)), tmp_path / "b.png")
        save_png(np.zeros((20, 20), dtype=bool), tmp_path / "b.truth.png")
        save_png(np.zeros((20, 20)), tmp_path / "a.png")
        save_png(np.zeros((20, 20), dtype=bool), tmp_path / "a.truth.png")
        assert [item.image_id for item in directory_items(tmp_path)] == ["a", "b"]

    def test_all_black_image_scores_zero(self, tmp_path, pipeline_config):
        save_png(np.zeros((240, 320)), tmp_path / "black.png")
        truth = np.zeros((240, 320), dtype=bool)
        truth[100:140, 140:180] = True
        save_png(truth, tmp_path / "black.truth.png")
        report = run_corpus(tmp_path, pipeline_config)
        assert report.ar == 0.0
        (failure,) = report.records
        assert failure.ae == FAILED_AE and not failure.success
        assert failure.error == "NO_PUPIL_CANDIDATE"

    def test_unreadable_image_recorded(self, tmp_path, pipeline_config):
        (tmp_path / "broken.png").write_bytes(b"not a png")
        save_png(np.zeros((20, 20), dtype=bool), tmp_path / "broken.truth.png")
        (failure,) = run_corpus(tmp_path, pipeline_config).records
        assert failure.error == "IMAGE_LOAD_ERROR"

    def test_exported_synthetic_eye_scores_well(self, tmp_path, clean_eye, pipeline_config):
        save_png(clean_eye.image.data, tmp_path / "eye.png")
        save_png(clean_eye.truth.iris_mask, tmp_path / "eye.truth.png")
        report = run_corpus(tmp_path, pipeline_config)
        assert report.ar == 100.0


class TestPlanCorpus:
    def test_small_clean_plan(self, pipeline_config):
        report = run_corpus(SyntheticPlan(count=6, seed=7), pipeline_config)
        assert report.ar == 100.0
        assert [r.image_id for r in report.records] == [f"synth_{k:04d}" for k in range(6)]
        assert report.mean_pupil_center_error <= 1.0
        assert report.mean_iris_radius_error <= 1.5
        assert report.mean_gap_overlap is None

    def test_parallel_matches_sequential(self, pipeline_config):
        plan = SyntheticPlan(count=6, seed=5, noise=NoiseSpec(kind="gaussian", strength=0.05))
        sequential = run_corpus(plan, pipeline_config, jobs=1)
        parallel = run_corpus(plan, pipeline_config, jobs=3)
        strip = lambda report: [r.model_dump(exclude={"total_ms", "stage_timings_ms"}) for r in report.records]
        assert strip(sequential) == strip(parallel)
        assert sequential.ar == parallel.ar and sequential.mean_ae == parallel.mean_ae

    def test_conditions(self):
        assert set(ROBUSTNESS_CONDITIONS) == {
            "clean", "gaussian", "salt-pepper", "speckle", "poisson", "eyelid-100", "lashes", "reflections",
        }


class TestReportOutput:
    def test_csv_layout(self, tmp_path):
        report = build_report([record("a", 1.5, total_ms=20.0), record("b", 12.0, total_ms=30.0)])
        path = write_report_csv(report, tmp_path / "nested" / "report.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "id,ae,success,ms"
        assert lines[1] == "a,1.500000,True,20.000000"
        assert lines[-1] == summary_line(report)
        assert lines[-1].startswith("# summary: images=2 Ar=50.0")
        frame = pd.read_csv(path, comment="#")
        assert list(frame["id"]) == ["a", "b"]

    def test_csv_without_timings_is_stable(self, tmp_path):
        first = build_report([record("a", 1.5, total_ms=20.0)])
        second = build_report([record("a", 1.5, total_ms=99.0)])
        a = write_report_csv(first, tmp_path / "a.csv", include_timings=False).read_bytes()
        b = write_report_csv(second, tmp_path / "b.csv", include_timings=False).read_bytes()
        assert a == b
        assert b"ms" not in a

    def test_timing_table(self):
        records = [
            record("a", 1.0, stage_timings_ms={"pupil": 10.0, "total": 30.0}),
            record("b", 1.0, stage_timings_ms={"pupil": 20.0, "total": 50.0}),
            record("c", FAILED_AE),
        ]
        table = timing_table(records)
        assert table.loc["pupil", "mean_ms"] == pytest.approx(15.0)
        assert table.loc["total", "p95_ms"] == pytest.approx(49.0)

    def test_timing_table_needs_timings(self):
        with pytest.raises(CorpusError):
            timing_table([record("c", FAILED_AE)])


@pytest.mark.slow
class TestCorpusScale:
    def test_clean_corpus(self, pipeline_config):
        report = run_corpus(SyntheticPlan(count=200, seed=1234), pipeline_config, jobs=4)
        assert report.ar >= 99.0
        assert report.mean_pupil_center_error <= 1.0
        assert report.mean_iris_radius_error <= 1.5

    @pytest.mark.parametrize("condition", sorted(ROBUSTNESS_CONDITIONS))
    def test_robustness_condition(self, condition, pipeline_config):
        plan = SyntheticPlan(count=100, seed=99).model_copy(update=ROBUSTNESS_CONDITIONS[condition])
        report = run_corpus(plan, pipeline_config, jobs=4)
        assert report.ar >= 99.0
        assert report.mean_pupil_center_error <= 1.0
        if condition in ("eyelid-100", "lashes"):
            assert report.mean_gap_overlap >= 0.8
