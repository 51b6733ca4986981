"""Accuracy metrics, corpus runs over directories or synthetic plans, and the robustness matrix"""
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from schemas.models import Circle, EvalRecord, EvalReport, NoiseSpec, PipelineConfig, SyntheticPlan
from services.boundary import angles_in_runs
from services.errors import CorpusError, ImageLoadError, SegmentationError
from services.imgcore import GrayImage, load_image
from services.pipeline import detected_iris_mask, segment
from services.synthetic import generate_eye, plan_specs

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLD = 10.0
FAILED_AE = 100.0
IMAGE_SUFFIXES = (".png", ".pgm")
TRUTH_SUFFIX = ".truth.png"
OVERLAP_STEP_DEG = 1.0

# condition name -> changes applied to the base plan
ROBUSTNESS_CONDITIONS: Dict[str, Dict[str, object]] = {
    "clean": {},
    "gaussian": {"noise": NoiseSpec(kind="gaussian", strength=0.05)},
    "salt-pepper": {"noise": NoiseSpec(kind="salt-pepper", strength=0.02)},
    "speckle": {"noise": NoiseSpec(kind="speckle", strength=0.05)},
    "poisson": {"noise": NoiseSpec(kind="poisson", strength=0.005)},
    "eyelid-100": {"eyelid_span_deg": 100.0},
    "lashes": {"eyelid_span_deg": 100.0, "lash_count": 15},
    "reflections": {"reflection_count": 2},
}


@dataclass(frozen=True)
class CorpusItem:
    """One image to evaluate; `load` returns (image, truth mask, planted pupil, planted iris, planted runs)"""
    image_id: str
    load: Callable[[], Tuple[GrayImage, np.ndarray, Optional[Circle], Optional[Circle], Optional[list]]]


def accuracy_error(detected: np.ndarray, truth: np.ndarray) -> float:
    """Pixel-count discrepancy in percent of the image area"""
    detected, truth = np.asarray(detected, dtype=bool), np.asarray(truth, dtype=bool)
    if detected.shape != truth.shape:
        raise ValueError(f"mask shapes differ: {detected.shape} vs {truth.shape}")
    return abs(int(truth.sum()) - int(detected.sum())) / truth.size * 100.0


def accuracy_rate(records: Sequence[EvalRecord]) -> float:
    if not records:
        raise ValueError("accuracy rate needs at least one record")
    return 100.0 * sum(1 for r in records if r.success) / len(records)


def gap_overlap(detected_runs: Sequence[Tuple[float, float]], planted_runs: Sequence[Tuple[float, float]]) -> Optional[float]:
    """Fraction of planted occluded angles (sampled every degree) that fall in a detected run"""
    if not planted_runs:
        return None
    grid = np.radians(np.arange(0.0, 360.0, OVERLAP_STEP_DEG))
    planted = angles_in_runs(grid, planted_runs)
    if not planted.any():
        return None
    detected = angles_in_runs(grid, detected_runs)
    return float((planted & detected).sum() / planted.sum())


def directory_items(directory: Union[str, Path]) -> List[CorpusItem]:
    """Images in a directory with their `<name>.truth.png` masks, sorted by file name"""
    directory = Path(directory)
    if not directory.is_dir():
        raise CorpusError(f"Corpus directory not found: {directory}")
    images = sorted(
        p for p in directory.iterdir()
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES and not p.name.endswith(TRUTH_SUFFIX)
    )
    if not images:
        raise CorpusError(f"no images found in {directory}")

    items = []
    for path in images:
        truth_path = path.with_name(path.stem + TRUTH_SUFFIX)
        if not truth_path.is_file():
            raise CorpusError(f"Missing truth mask {truth_path.name} for {path.name}")

        def load(path=path, truth_path=truth_path):
            return load_image(path), load_image(truth_path).data > 0.5, None, None, None

        items.append(CorpusItem(image_id=path.stem, load=load))
    return items


def plan_items(plan: SyntheticPlan) -> List[CorpusItem]:
    items = []
    for index, spec in enumerate(plan_specs(plan)):
        def load(spec=spec):
            eye = generate_eye(spec)
            return eye.image, eye.truth.iris_mask, eye.pupil, eye.iris, eye.occluded_runs

        items.append(CorpusItem(image_id=f"synth_{index:04d}", load=load))
    return items


def corpus_items(source: Union[str, Path, SyntheticPlan]) -> List[CorpusItem]:
    if isinstance(source, SyntheticPlan):
        return plan_items(source)
    return directory_items(source)


def evaluate_item(item: CorpusItem, config: PipelineConfig) -> EvalRecord:
    """Segment one corpus image and score it; failures become records with Ae = 100"""
    try:
        image, truth, true_pupil, true_iris, planted_runs = item.load()
    except ImageLoadError as e:
        logger.error(f"Skipping unreadable image {item.image_id}: {e}")
        return EvalRecord(image_id=item.image_id, ae=FAILED_AE, success=False, error=e.code)
    if truth.shape != image.shape:
        logger.error(f"Truth mask for {item.image_id} has shape {truth.shape}, image has {image.shape}")
        return EvalRecord(image_id=item.image_id, ae=FAILED_AE, success=False, error="TRUTH_SHAPE_MISMATCH")

    try:
        result = segment(image, config, image_id=item.image_id)
    except SegmentationError as e:
        logger.error(f"Segmentation failed for {item.image_id}: {e}")
        return EvalRecord(image_id=item.image_id, ae=FAILED_AE, success=False, error=e.code)

    ae = accuracy_error(detected_iris_mask(result, image.shape), truth)
    record = EvalRecord(
        image_id=item.image_id,
        ae=ae,
        success=ae < SUCCESS_THRESHOLD,
        total_ms=result.stage_timings_ms.get("total", 0.0),
        stage_timings_ms=result.stage_timings_ms,
    )
    if true_pupil is not None and true_iris is not None:
        record.pupil_center_error = math.hypot(result.pupil.cx - true_pupil.cx, result.pupil.cy - true_pupil.cy)
        record.iris_radius_error = abs(result.iris.r - true_iris.r)
        record.gap_overlap = gap_overlap(result.gap_runs, planted_runs or [])
    return record


def _mean_or_none(frame: pd.DataFrame, column: str) -> Optional[float]:
    if column not in frame or frame[column].isna().all():
        return None
    return float(frame[column].mean())


def build_report(records: List[EvalRecord]) -> EvalReport:
    """Aggregate records in their given order"""
    if not records:
        raise ValueError("cannot build a report without records")
    frame = pd.DataFrame([r.model_dump(exclude={"stage_timings_ms"}) for r in records])
    return EvalReport(
        records=records,
        ar=accuracy_rate(records),
        mean_ae=float(frame["ae"].mean()),
        median_ae=float(frame["ae"].median()),
        mean_ms=float(frame["total_ms"].mean()),
        mean_pupil_center_error=_mean_or_none(frame, "pupil_center_error"),
        mean_iris_radius_error=_mean_or_none(frame, "iris_radius_error"),
        mean_gap_overlap=_mean_or_none(frame, "gap_overlap"),
    )


def run_corpus(source: Union[str, Path, SyntheticPlan], config: PipelineConfig, jobs: int = 1,
               progress: bool = False) -> EvalReport:
    """Evaluate every image of a directory or synthetic plan, up to `jobs` at a time, keeping input order"""
    items = corpus_items(source)
    logger.info(f"Evaluating {len(items)} image(s) with {jobs} worker(s)")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
        results = executor.map(lambda item: evaluate_item(item, config), items)
        records = list(tqdm(results, total=len(items), desc="Evaluating", disable=not progress))
    report = build_report(records)
    logger.info(f"Ar={report.ar:.1f}%, mean Ae={report.mean_ae:.3f}%, mean {report.mean_ms:.1f} ms/image")
    return report


def robustness_matrix(plan: SyntheticPlan, config: PipelineConfig, jobs: int = 1,
                      progress: bool = False) -> Dict[str, EvalReport]:
    """Run the same plan under every degradation condition"""
    reports = {}
    for name, changes in ROBUSTNESS_CONDITIONS.items():
        logger.info(f"Robustness condition: {name}")
        reports[name] = run_corpus(plan.model_copy(update=changes), config, jobs=jobs, progress=progress)
    return reports


def report_frame(report: EvalReport, include_timings: bool = True) -> pd.DataFrame:
    rows = [{"id": r.image_id, "ae": r.ae, "success": r.success, "ms": r.total_ms} for r in report.records]
    frame = pd.DataFrame(rows, columns=["id", "ae", "success", "ms"])
    return frame if include_timings else frame.drop(columns=["ms"])


def summary_line(report: EvalReport, include_timings: bool = True) -> str:
    line = (f"# summary: images={len(report.records)} Ar={report.ar:.1f} mean_Ae={report.mean_ae:.4f} "
            f"median_Ae={report.median_ae:.4f}")
    return f"{line} mean_ms={report.mean_ms:.1f}" if include_timings else line


def write_report_csv(report: EvalReport, path: Union[str, Path], include_timings: bool = True) -> Path:
    """One row per image (id, ae, success, ms) followed by a summary comment line"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    report_frame(report, include_timings).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
    with path.open("a") as f:
        f.write(summary_line(report, include_timings) + "\n")
    return path


def timing_table(records: Sequence[EvalRecord]) -> pd.DataFrame:
    """Mean and p95 wall time (ms) per stage over successful segmentations"""
    timed = [r.stage_timings_ms for r in records if r.stage_timings_ms]
    if not timed:
        raise CorpusError("no image was segmented, nothing to time")
    frame = pd.DataFrame(timed)
    return pd.DataFrame({"mean_ms": frame.mean(), "p95_ms": frame.quantile(0.95)})
