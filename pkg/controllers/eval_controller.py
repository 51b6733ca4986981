import logging
from pathlib import Path
from typing import Optional, Union

from pydantic import ValidationError

from config import settings
from schemas.models import PipelineConfig, SyntheticPlan
from services.errors import CorpusError
from services.evaluation import robustness_matrix, run_corpus, summary_line, write_report_csv
from services.synthetic import load_plan

logger = logging.getLogger(__name__)


def resolve_source(source: Optional[str], seed: Optional[int] = None) -> Union[Path, SyntheticPlan]:
    """A corpus directory, a plan file, or the default synthetic plan when nothing is given"""
    if source is None:
        return SyntheticPlan(count=settings.SYNTH_COUNT, seed=settings.SEED if seed is None else seed)
    path = Path(source)
    if path.is_dir():
        return path
    if path.is_file():
        plan = load_plan(path)
        return plan if seed is None else plan.model_copy(update={"seed": seed})
    raise CorpusError(f"Corpus source not found: {source}")


def serialize_report(report):
    """Report summary plus records without per-stage timings"""
    return {
        "ar": report.ar,
        "mean_ae": report.mean_ae,
        "median_ae": report.median_ae,
        "mean_ms": report.mean_ms,
        "mean_pupil_center_error": report.mean_pupil_center_error,
        "mean_iris_radius_error": report.mean_iris_radius_error,
        "mean_gap_overlap": report.mean_gap_overlap,
        "images": len(report.records),
        "failures": [r.image_id for r in report.records if not r.success]
    }


def evaluate_corpus(source: Optional[str], config: PipelineConfig, jobs: int = 1, seed: Optional[int] = None,
                    output_csv: Optional[str] = None, progress: bool = False):
    """Evaluate a corpus and optionally write the CSV report"""
    try:
        resolved = resolve_source(source, seed)
        report = run_corpus(resolved, config, jobs=jobs, progress=progress)
    except (CorpusError, ValidationError) as e:
        logger.error(f"Corpus evaluation failed: {e}")
        return {
            "success": False,
            "data": None,
            "message": str(e),
            "error": "CORPUS_ERROR"
        }

    csv_path = write_report_csv(report, output_csv) if output_csv else None
    return {
        "success": True,
        "data": {
            "report": serialize_report(report),
            "summary": summary_line(report),
            "csv_path": str(csv_path) if csv_path else None
        },
        "message": "Corpus evaluated successfully",
        "error": None
    }


def evaluate_matrix(source: Optional[str], config: PipelineConfig, jobs: int = 1, seed: Optional[int] = None,
                    output_dir: Optional[str] = None, progress: bool = False):
    """Run the robustness matrix on a synthetic plan; one CSV per condition when output_dir is set"""
    try:
        plan = resolve_source(source, seed)
        if not isinstance(plan, SyntheticPlan):
            raise CorpusError("the robustness matrix needs a synthetic plan, not a directory")
        reports = robustness_matrix(plan, config, jobs=jobs, progress=progress)
    except (CorpusError, ValidationError) as e:
        logger.error(f"Robustness matrix failed: {e}")
        return {
            "success": False,
            "data": None,
            "message": str(e),
            "error": "CORPUS_ERROR"
        }

    if output_dir:
        for name, report in reports.items():
            write_report_csv(report, Path(output_dir) / f"{name}.csv")
    return {
        "success": True,
        "data": {"conditions": {name: serialize_report(report) for name, report in reports.items()}},
        "message": "Robustness matrix evaluated successfully",
        "error": None
    }
