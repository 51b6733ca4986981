"""End-to-end segmentation: opening, coarse pupil, zero-crossings, refinement, orientation, limbic search, occlusion"""
import math
import time
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from schemas.models import BoundaryParams, Circle, PipelineConfig, PupilParams, SegmentationResult, ZonePartition
from services.boundary import (
    LimbicResult, angular_runs, eye_orientation, locate_limbic, occlusion_mask, partition_zones, refine_pupil,
)
from services.edges import EdgeMap, detect_edges
from services.errors import LimbicNotFoundError, PupilNotFoundError, SegmentationError
from services.imgcore import GrayImage, StructuringElement, annulus_mask, morph_open
from services.pupil import CoarsePupil, locate_pupil, plausible_radius

logger = logging.getLogger(__name__)

STAGES = ("open", "pupil", "edges", "refine", "orientation", "limbic", "occlusion")


@dataclass(frozen=True)
class PipelineArtifacts:
    """Intermediate rasters, kept for --debug output"""
    smooth: GrayImage
    coarse: CoarsePupil
    raw_edges: EdgeMap
    edges: EdgeMap
    eye_mask: np.ndarray
    zones: ZonePartition


@contextmanager
def _stage(name: str, timings: Dict[str, float]):
    start = time.perf_counter()
    try:
        yield
    except SegmentationError:
        raise
    except Exception as e:
        raise SegmentationError(f"{name} stage failed: {e}", stage=name,
                                code=getattr(e, "code", "STAGE_FAILED")) from e
    finally:
        timings[name] = (time.perf_counter() - start) * 1000.0


def _check_pupil(pupil: Circle, params: PupilParams):
    if not plausible_radius(pupil.r, params):
        raise PupilNotFoundError(f"pupil r={pupil.r:.1f} is implausible for r_avg={params.r_avg}")


def _check_nesting(pupil: Circle, iris: Circle, params: BoundaryParams = BoundaryParams()):
    if iris.r <= pupil.r:
        raise LimbicNotFoundError(f"limbic circle r={iris.r:.1f} does not enclose pupil r={pupil.r:.1f}")
    if math.hypot(pupil.cx - iris.cx, pupil.cy - iris.cy) >= pupil.r:
        raise LimbicNotFoundError("limbic circle center lies outside the pupil")
    ratio = iris.r / pupil.r
    if not params.min_iris_ratio <= ratio <= params.max_iris_ratio:
        raise LimbicNotFoundError(f"limbic circle r={iris.r:.1f} is {ratio:.2f} pupil radii, outside "
                                  f"[{params.min_iris_ratio}, {params.max_iris_ratio}]")


def _limbic(edges: EdgeMap, pupil: Circle, orientation: float, config: PipelineConfig) -> Tuple[LimbicResult, ZonePartition]:
    zones = partition_zones(orientation, config.boundary.stable_halfwidth)
    try:
        limbic = locate_limbic(edges, pupil, zones, config.boundary)
        _check_nesting(pupil, limbic.iris, config.boundary)
        return limbic, zones
    except LimbicNotFoundError as e:
        if orientation == 0.0:
            raise
        logger.warning(f"Limbic search failed at orientation {orientation:.3f}, retrying horizontally: {e}")
    zones = partition_zones(0.0, config.boundary.stable_halfwidth)
    limbic = locate_limbic(edges, pupil, zones, config.boundary)
    _check_nesting(pupil, limbic.iris, config.boundary)
    return limbic, zones


def segment_with_artifacts(img: GrayImage, config: PipelineConfig,
                           image_id: str = "") -> Tuple[SegmentationResult, PipelineArtifacts]:
    """Segment one eye image and keep every intermediate raster"""
    timings: Dict[str, float] = {}
    start = time.perf_counter()

    with _stage("open", timings):
        smooth = morph_open(img, StructuringElement(config.pupil.open_radius))
    with _stage("pupil", timings):
        coarse = locate_pupil(smooth, config.pupil)
    with _stage("edges", timings):
        raw_edges, edges = detect_edges(smooth, config.edges)
    with _stage("refine", timings):
        pupil, refined = refine_pupil(edges, coarse.circle, config.boundary)
        _check_pupil(pupil, config.pupil)
    with _stage("orientation", timings):
        estimate = eye_orientation(smooth, pupil, config.pupil.r_avg)
        orientation = estimate.orientation if estimate.confident else 0.0
    with _stage("limbic", timings):
        limbic, zones = _limbic(edges, pupil, orientation, config)
    with _stage("occlusion", timings):
        occluded = occlusion_mask(edges, limbic.iris, pupil, limbic.gap_angles, limbic.angle_step)
        runs = angular_runs(limbic.gap_angles, limbic.angle_step)
    timings["total"] = (time.perf_counter() - start) * 1000.0

    result = SegmentationResult(
        image_id=image_id,
        pupil=pupil,
        iris=limbic.iris,
        orientation=zones.orientation,
        orientation_confident=estimate.confident,
        pupil_refined=refined,
        gap_runs=runs,
        gap_angles=[float(a) for a in limbic.gap_angles],
        occlusion_mask=occluded,
        stage_timings_ms=timings,
    )
    artifacts = PipelineArtifacts(smooth=smooth, coarse=coarse, raw_edges=raw_edges, edges=edges,
                                  eye_mask=estimate.eye_mask, zones=zones)
    logger.info(f"Segmented {image_id or 'image'}: pupil r={pupil.r:.1f}, iris r={limbic.iris.r:.1f}, "
                f"{len(runs)} occluded run(s) in {timings['total']:.0f} ms")
    return result, artifacts


def segment(img: GrayImage, config: PipelineConfig, image_id: str = "") -> SegmentationResult:
    result, _ = segment_with_artifacts(img, config, image_id)
    return result


def detected_iris_mask(result: SegmentationResult, shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Annulus between the two circles minus the occluded region"""
    if shape is None:
        if result.occlusion_mask is None:
            raise ValueError("shape is required when the result carries no occlusion mask")
        shape = result.occlusion_mask.shape
    mask = annulus_mask(shape, result.pupil, result.iris)
    if result.occlusion_mask is not None:
        mask &= ~result.occlusion_mask
    return mask
