import logging
from typing import Optional

from pydantic import ValidationError

from controllers.eval_controller import resolve_source
from schemas.models import PipelineConfig
from services.errors import CorpusError
from services.evaluation import run_corpus, timing_table

logger = logging.getLogger(__name__)


def run_benchmark(source: Optional[str], config: PipelineConfig, budget_ms: float, jobs: int = 1,
                  seed: Optional[int] = None, progress: bool = False):
    """Per-stage mean and p95 wall time, checked against a mean-total budget"""
    try:
        report = run_corpus(resolve_source(source, seed), config, jobs=jobs, progress=progress)
        table = timing_table(report.records)
    except (CorpusError, ValidationError) as e:
        logger.error(f"Benchmark failed: {e}")
        return {
            "success": False,
            "data": None,
            "message": str(e),
            "error": "CORPUS_ERROR"
        }

    mean_total = float(table.loc["total", "mean_ms"])
    data = {
        "stages": {stage: {"mean_ms": float(row.mean_ms), "p95_ms": float(row.p95_ms)} for stage, row in table.iterrows()},
        "mean_total_ms": mean_total,
        "budget_ms": budget_ms,
        "images": len(report.records)
    }
    if len(report.records) < 10:
        logger.warning(f"Only {len(report.records)} images timed, averages will be noisy")
    if mean_total > budget_ms:
        return {
            "success": False,
            "data": data,
            "message": f"Mean time {mean_total:.1f} ms per image exceeds the {budget_ms:.1f} ms budget",
            "error": "BUDGET_EXCEEDED"
        }
    return {
        "success": True,
        "data": data,
        "message": f"Mean time {mean_total:.1f} ms per image within the {budget_ms:.1f} ms budget",
        "error": None
    }
