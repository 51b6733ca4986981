import logging
from pathlib import Path

from schemas.models import PipelineConfig
from services.errors import ImageLoadError, KernelFitError, SegmentationError
from services.imgcore import load_image
from services.pipeline import segment_with_artifacts
from services.rendering import save_overlay, write_debug_images

logger = logging.getLogger(__name__)


def segment_image(image_path: str, config: PipelineConfig, output_dir: str, debug: bool = False):
    """Segment one image and write its result record, overlay and optional debug images"""
    try:
        img = load_image(image_path)
    except ImageLoadError as e:
        return {
            "success": False,
            "data": None,
            "message": str(e),
            "error": e.code
        }

    stem = Path(image_path).stem
    try:
        result, artifacts = segment_with_artifacts(img, config, image_id=stem)
    except SegmentationError as e:
        logger.error(f"Segmentation of {image_path} failed: {e}")
        return {
            "success": False,
            "data": {"stage": e.stage},
            "message": str(e),
            "error": e.code
        }
    except KernelFitError as e:
        return {
            "success": False,
            "data": None,
            "message": str(e),
            "error": e.code
        }

    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = out_dir / f"{stem}.result.json"
    record_path.write_text(result.record_json() + "\n")
    overlay_path = save_overlay(img, result, out_dir / f"{stem}.overlay.png")
    debug_paths = write_debug_images(artifacts, out_dir, stem) if debug else []

    return {
        "success": True,
        "data": {
            "result": result.model_dump(mode="json"),
            "record_path": str(record_path),
            "overlay_path": str(overlay_path),
            "debug_paths": [str(p) for p in debug_paths]
        },
        "message": f"Segmented {stem}",
        "error": None
    }
