import math
import logging
from pathlib import Path

import pandas as pd
from tqdm import tqdm

from schemas.models import SyntheticPlan
from services.evaluation import TRUTH_SUFFIX
from services.rendering import save_png
from services.synthetic import generate_eye, plan_specs

logger = logging.getLogger(__name__)


def _runs_text(runs):
    return ";".join(f"{math.degrees(s):.2f}:{math.degrees(e):.2f}" for s, e in runs)


def export_corpus(plan: SyntheticPlan, output_dir: str, progress: bool = False):
    """Write a generated corpus as PNG images, truth masks and truth.csv"""
    out_dir = Path(output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        return {
            "success": False,
            "data": None,
            "message": f"Cannot create {out_dir}: {e}",
            "error": "OUTPUT_ERROR"
        }

    rows = []
    specs = plan_specs(plan)
    for index, spec in enumerate(tqdm(specs, desc="Generating", disable=not progress)):
        name = f"synth_{index:04d}"
        eye = generate_eye(spec)
        save_png(eye.image.data, out_dir / f"{name}.png")
        save_png(eye.truth.iris_mask, out_dir / f"{name}{TRUTH_SUFFIX}")
        rows.append({
            "id": name,
            "pupil_cx": eye.pupil.cx,
            "pupil_cy": eye.pupil.cy,
            "pupil_r": eye.pupil.r,
            "iris_cx": eye.iris.cx,
            "iris_cy": eye.iris.cy,
            "iris_r": eye.iris.r,
            "occluded_runs_deg": _runs_text(eye.occluded_runs),
            "truth_pixels": eye.truth.area
        })

    truth_csv = out_dir / "truth.csv"
    pd.DataFrame(rows).to_csv(truth_csv, index=False, float_format="%.4f", lineterminator="\n")
    logger.info(f"Exported {len(rows)} synthetic eyes to {out_dir}")
    return {
        "success": True,
        "data": {"images": len(rows), "output_dir": str(out_dir), "truth_csv": str(truth_csv)},
        "message": f"Exported {len(rows)} synthetic eyes",
        "error": None
    }
