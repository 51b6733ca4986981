"""Synthetic eye images with exact ground truth: corpus plans, rendering, eyelids, lashes, reflections and noise"""
import math
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import cv2
import numpy as np
from dotenv import dotenv_values

from schemas.models import Circle, EyelidOcclusion, NoiseSpec, SyntheticEyeSpec, SyntheticPlan
from services.errors import CorpusError
from services.imgcore import GrayImage

logger = logging.getLogger(__name__)

OPENING_AXES = (2.2, 1.3)  # eye opening semi-axes, in iris radii
LID_DEPTH_FRACTION = 0.6   # of the iris band width
MIN_IRIS_PUPIL_RATIO = 1.6
MAX_IRIS_PUPIL_RATIO = 3.5
UPPER = -math.pi / 2       # y grows downwards


@dataclass(frozen=True)
class GroundTruth:
    iris_mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.iris_mask, dtype=bool, copy=True)
        mask.setflags(write=False)
        object.__setattr__(self, "iris_mask", mask)

    @property
    def area(self) -> int:
        return int(self.iris_mask.sum())


@dataclass(frozen=True)
class SyntheticEye:
    image: GrayImage
    truth: GroundTruth
    pupil: Circle
    iris: Circle
    occluded_runs: List[Tuple[float, float]]


def _angle_in_run(phi: np.ndarray, center: float, span: float) -> np.ndarray:
    return np.mod(phi - (center - span / 2), 2 * math.pi) <= span


def apply_noise(data: np.ndarray, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    """Degrade a clean render; the result is clipped back to [0, 1]"""
    s = noise.strength
    if noise.kind == "none" or s == 0:
        return data
    out = data.copy()
    if noise.kind == "gaussian":
        out = out + rng.normal(0.0, s, out.shape)
    elif noise.kind == "salt-pepper":
        flip = rng.random(out.shape) < s
        salt = rng.random(out.shape) < 0.5
        out[flip & salt] = 1.0
        out[flip & ~salt] = 0.0
    elif noise.kind == "speckle":
        out = out * (1.0 + rng.normal(0.0, s, out.shape))
    elif noise.kind == "poisson":
        # strength is the intensity of one photon
        out = rng.poisson(out / s) * s
    return np.clip(out, 0.0, 1.0)


def _draw_lashes(spec: SyntheticEyeSpec, rng: np.random.Generator) -> np.ndarray:
    p, i = spec.pupil, spec.iris
    band = i.r - p.r
    lashes = np.zeros((spec.height, spec.width), dtype=np.uint8)
    for _ in range(spec.lash_count):
        if spec.eyelids:
            lid = spec.eyelids[0]
            angle = lid.center_angle + rng.uniform(-0.5, 0.5) * lid.span
            start_r = i.r - lid.depth
        else:
            angle = UPPER + rng.uniform(-math.pi / 6, math.pi / 6)
            start_r = i.r
        length = min(rng.uniform(0.2, 0.5) * band, start_r - p.r - 3)
        if length < 2:
            continue
        heading = angle + math.pi + rng.uniform(-0.3, 0.3)
        x0, y0 = p.cx + start_r * math.cos(angle), p.cy + start_r * math.sin(angle)
        x1, y1 = x0 + length * math.cos(heading), y0 + length * math.sin(heading)
        cv2.line(lashes, (int(round(x0)), int(round(y0))), (int(round(x1)), int(round(y1))), 1, 1)
    # lashes never reach into the pupil
    y, x = np.mgrid[0:spec.height, 0:spec.width]
    lashes[(x - p.cx) ** 2 + (y - p.cy) ** 2 <= (p.r + 2) ** 2] = 0
    return lashes.astype(bool)


def generate_eye(spec: SyntheticEyeSpec) -> SyntheticEye:
    """Render an eye image and its iris truth mask (annulus minus eyelid and lash pixels)"""
    rng = np.random.default_rng(spec.seed)
    levels, p, i = spec.levels, spec.pupil, spec.iris
    h, w = spec.height, spec.width
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)

    img = np.full((h, w), levels.skin)
    a, b = OPENING_AXES[0] * i.r, OPENING_AXES[1] * i.r
    ct, st = math.cos(spec.eye_tilt), math.sin(spec.eye_tilt)
    u = (x - i.cx) * ct + (y - i.cy) * st
    v = -(x - i.cx) * st + (y - i.cy) * ct
    img[(u / a) ** 2 + (v / b) ** 2 <= 1] = levels.sclera

    iris_dist = np.hypot(x - i.cx, y - i.cy)
    pupil_dist = np.hypot(x - p.cx, y - p.cy)
    iris_disc = iris_dist <= i.r
    pupil_disc = pupil_dist <= p.r
    img[iris_disc] = levels.iris
    img[pupil_disc] = levels.pupil
    truth = iris_disc & ~pupil_disc

    phi = np.arctan2(y - p.cy, x - p.cx)
    runs = []
    for lid in spec.eyelids:
        covered = _angle_in_run(phi, lid.center_angle, lid.span) & (iris_dist >= i.r - lid.depth) & ~pupil_disc
        img[covered] = levels.skin
        truth &= ~covered
        runs.append((lid.center_angle - lid.span / 2, lid.center_angle + lid.span / 2))

    if spec.lash_count:
        lashes = _draw_lashes(spec, rng)
        img[lashes] = levels.lash
        truth &= ~lashes

    for _ in range(spec.reflection_count):
        offset_r = rng.uniform(0.0, 0.5) * p.r
        offset_a = rng.uniform(0.0, 2 * math.pi)
        rx, ry = p.cx + offset_r * math.cos(offset_a), p.cy + offset_r * math.sin(offset_a)
        img[(x - rx) ** 2 + (y - ry) ** 2 <= spec.reflection_radius ** 2] = levels.reflection

    img = apply_noise(img, spec.noise, rng)
    return SyntheticEye(image=GrayImage(img), truth=GroundTruth(truth), pupil=p, iris=i, occluded_runs=runs)


def plan_specs(plan: SyntheticPlan) -> List[SyntheticEyeSpec]:
    """Expand a plan into per-image specs; image k depends only on (seed, k)"""
    children = np.random.SeedSequence(plan.seed).spawn(plan.count)
    specs = []
    for child in children:
        rng = np.random.default_rng(child)
        rp = rng.uniform(plan.pupil_min, plan.pupil_max)
        lo = max(plan.iris_min, MIN_IRIS_PUPIL_RATIO * rp)
        hi = min(plan.iris_max, MAX_IRIS_PUPIL_RATIO * rp)
        ri = rng.uniform(lo, max(lo, hi))
        margin = ri + 4
        icx = rng.uniform(margin, plan.width - 1 - margin)
        icy = rng.uniform(margin, plan.height - 1 - margin)
        offset = min(plan.max_offset, 0.5 * (ri - rp - 1))
        offset_r, offset_a = rng.uniform(0.0, offset), rng.uniform(0.0, 2 * math.pi)
        pupil = Circle(cx=icx + offset_r * math.cos(offset_a), cy=icy + offset_r * math.sin(offset_a), r=rp)

        eyelids = []
        if plan.eyelid_span_deg > 0:
            eyelids.append(EyelidOcclusion(
                center_angle=UPPER + math.radians(rng.uniform(-5.0, 5.0)),
                span=math.radians(plan.eyelid_span_deg),
                depth=LID_DEPTH_FRACTION * (ri - rp),
            ))
        specs.append(SyntheticEyeSpec(
            width=plan.width,
            height=plan.height,
            pupil=pupil,
            iris=Circle(cx=icx, cy=icy, r=ri),
            eyelids=eyelids,
            noise=plan.noise,
            reflection_count=plan.reflection_count,
            lash_count=plan.lash_count,
            eye_tilt=math.radians(rng.uniform(-10.0, 10.0)),
            seed=int(child.generate_state(1)[0]),
        ))
    return specs


def plan_to_flat(plan: SyntheticPlan) -> Dict[str, object]:
    flat = plan.model_dump(exclude={"noise"})
    flat["noise_kind"] = plan.noise.kind
    flat["noise_strength"] = plan.noise.strength
    return flat


def plan_from_flat(values: Dict[str, object]) -> SyntheticPlan:
    values = {k.lower(): v for k, v in values.items() if v not in (None, "")}
    noise = NoiseSpec(kind=values.pop("noise_kind", "none"), strength=values.pop("noise_strength", 0.0))
    unknown = set(values) - set(SyntheticPlan.model_fields)
    if unknown:
        raise CorpusError(f"Unknown plan keys: {', '.join(sorted(unknown))}")
    return SyntheticPlan(noise=noise, **values)


def load_plan(path: Union[str, Path]) -> SyntheticPlan:
    """Read a flat key=value plan file"""
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"Plan file not found: {path}")
    return plan_from_flat(dotenv_values(path))
