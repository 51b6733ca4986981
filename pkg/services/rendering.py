"""Overlay and debug PNG output"""
import math
import logging
from pathlib import Path
from typing import Dict, List, Union

import cv2
import numpy as np
from PIL import Image

from schemas.models import Circle, SegmentationResult
from services.imgcore import GrayImage, rescale01
from services.pipeline import PipelineArtifacts

logger = logging.getLogger(__name__)

# RGB
PUPIL_COLOR = (0, 255, 0)
IRIS_COLOR = (255, 0, 0)
AXIS_COLOR = (0, 160, 255)
OCCLUSION_COLOR = (255, 255, 0)


def to_uint8(data: np.ndarray) -> np.ndarray:
    return np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(array: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a uint8 gray (H, W) or RGB (H, W, 3) array, or a bool/float array scaled to 0..255"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if array.dtype == bool:
        array = array.astype(np.uint8) * 255
    elif array.dtype != np.uint8:
        array = to_uint8(array)
    Image.fromarray(array, mode="RGB" if array.ndim == 3 else "L").save(path, "PNG")
    return path


def _circle(canvas: np.ndarray, circle: Circle, color):
    cv2.circle(canvas, (int(round(circle.cx)), int(round(circle.cy))), int(round(circle.r)), color, 1, cv2.LINE_8)


def render_overlay(img: GrayImage, result: SegmentationResult) -> np.ndarray:
    """RGB copy of the input with the pupil, iris, major axis and occluded runs drawn in 1-px strokes"""
    gray = to_uint8(img.data)
    canvas = np.ascontiguousarray(np.stack([gray, gray, gray], axis=-1))

    pupil, iris = result.pupil, result.iris
    dx, dy = math.cos(result.orientation), math.sin(result.orientation)
    reach = iris.r * 1.2
    start = (int(round(pupil.cx - reach * dx)), int(round(pupil.cy - reach * dy)))
    end = (int(round(pupil.cx + reach * dx)), int(round(pupil.cy + reach * dy)))
    cv2.line(canvas, start, end, AXIS_COLOR, 1, cv2.LINE_8)

    _circle(canvas, pupil, PUPIL_COLOR)
    _circle(canvas, iris, IRIS_COLOR)
    # occluded runs are drawn over the iris circle, angles measured about the pupil center
    for run_start, run_end in result.gap_runs:
        cv2.ellipse(canvas, (int(round(pupil.cx)), int(round(pupil.cy))), (int(round(iris.r)), int(round(iris.r))),
                    0, math.degrees(run_start), math.degrees(run_end), OCCLUSION_COLOR, 1, cv2.LINE_8)
    return canvas


def save_overlay(img: GrayImage, result: SegmentationResult, path: Union[str, Path]) -> Path:
    return save_png(render_overlay(img, result), path)


def debug_rasters(artifacts: PipelineArtifacts) -> Dict[str, np.ndarray]:
    coarse = artifacts.coarse
    return {
        "opened": artifacts.smooth.data,
        "trilevel": coarse.tri.data,
        "log_response": coarse.response.data,
        "seed_mask": coarse.mask,
        "pupil_region": coarse.region.mask,
        "zero_crossings": artifacts.raw_edges.data,
        "zero_crossings_clean": artifacts.edges.data,
        "eye_mask": artifacts.eye_mask,
    }


def write_debug_images(artifacts: PipelineArtifacts, out_dir: Union[str, Path], stem: str) -> List[Path]:
    """One PNG per intermediate raster, named <stem>.<stage>.png"""
    out_dir = Path(out_dir)
    paths = []
    for name, raster in debug_rasters(artifacts).items():
        if raster.dtype != bool and (raster.min() < 0 or raster.max() > 1):
            raster = rescale01(raster).data
        paths.append(save_png(raster, out_dir / f"{stem}.{name}.png"))
    logger.debug(f"Wrote {len(paths)} debug images to {out_dir}")
    return paths
