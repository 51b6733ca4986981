"""Coarse pupil localization: tri-level quantization, disc-scale LoG, seed extraction and region growing"""
import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import cv2
import numpy as np

from schemas.models import Circle, PupilParams
from services.errors import NoPupilCandidateError, PupilNotFoundError
from services.imgcore import (
    GrayImage, StructuringElement, convolve, fill_holes, label_components, largest_component, log_kernel, open_mask,
    rescale01,
)

logger = logging.getLogger(__name__)

MIN_PUPIL_AREA = 9
SEED_ATTEMPTS = 8
TRI_LEVELS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class TriLevelImage:
    """Pupil = 0, band around it = 1, background = 0.5"""
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if not np.all(np.isin(arr, TRI_LEVELS)):
            raise ValueError("tri-level samples must be 0, 0.5 or 1")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class PixelRegion:
    mask: np.ndarray
    seed: Tuple[int, int]

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool, copy=True)
        if not mask.any():
            raise ValueError("a pixel region cannot be empty")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def members(self) -> np.ndarray:
        """(N, 2) array of (x, y) member coordinates in raster order"""
        rows, cols = np.nonzero(self.mask)
        return np.column_stack([cols, rows])

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    @property
    def centroid(self) -> Tuple[float, float]:
        rows, cols = np.nonzero(self.mask)
        return float(cols.mean()), float(rows.mean())

    @property
    def bbox(self) -> Tuple[int, int, int, int]:
        """(x_min, y_min, x_max, y_max), inclusive"""
        rows, cols = np.nonzero(self.mask)
        return int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max())


@dataclass(frozen=True)
class CoarsePupil:
    """Everything the coarse stage produced, kept for refinement and debug output"""
    tri: TriLevelImage
    response: GrayImage
    mask: np.ndarray
    seed: Tuple[int, int]
    region: PixelRegion
    circle: Circle


def to_trilevel(img: GrayImage, t1: float, t2: float) -> TriLevelImage:
    if not 0 < t1 < t2 < 1:
        raise ValueError(f"thresholds must satisfy 0 < t1 < t2 < 1, got t1={t1}, t2={t2}")
    v = img.data
    out = np.full(v.shape, 0.5)
    out[v < t1] = 0.0
    # both threshold values belong to the middle band
    out[(v >= t1) & (v <= t2)] = 1.0
    return TriLevelImage(out)


def coarse_log_response(tri: TriLevelImage, r_avg: float) -> GrayImage:
    """Scale-normalized LoG at sigma = r_avg over the tri-level image, rescaled to [0, 1]"""
    return rescale01(convolve(tri.data, log_kernel(r_avg, scale_normalized=True)))


def seed_mask(response: GrayImage, lambda_a: float) -> np.ndarray:
    return response.data > lambda_a


def seed_point(mask: np.ndarray, smooth: GrayImage) -> Tuple[int, int]:
    """Member pixel of the largest mask component closest to that component's centroid, as (x, y)"""
    if mask.shape != smooth.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image shape {smooth.shape}")
    component = largest_component(mask)
    if not component.any():
        raise NoPupilCandidateError("no pupil candidate: the LoG seed mask is empty")
    rows, cols = np.nonzero(component)
    i = int(np.argmin((cols - cols.mean()) ** 2 + (rows - rows.mean()) ** 2))
    return int(cols[i]), int(rows[i])


def region_grow(smooth: GrayImage, seed: Tuple[int, int], grow_tolerance: float) -> PixelRegion:
    """8-connected flood from the seed over pixels within grow_tolerance of the seed intensity"""
    x, y = seed
    if not (0 <= x < smooth.width and 0 <= y < smooth.height):
        raise ValueError(f"seed {seed} outside {smooth.width}x{smooth.height} image")
    v = smooth.data
    joinable = np.abs(v - v[y, x]) <= grow_tolerance
    _, labels = cv2.connectedComponents(joinable.astype(np.uint8), connectivity=8)
    return PixelRegion(labels == labels[y, x], seed=(x, y))


def dark_seed_candidates(mask: np.ndarray, response: GrayImage, tri: TriLevelImage,
                         limit: int = SEED_ATTEMPTS) -> List[Tuple[int, int]]:
    """Tri-level 0 members of the mask components, strongest LoG peak first, as (x, y).

    Within a component the dark members closest to its centroid come first.
    """
    if mask.shape != response.shape or mask.shape != tri.data.shape:
        raise ValueError(f"mask shape {mask.shape} does not match the response and tri-level shapes")
    n, labels, _, centroids = label_components(mask)
    if n <= 1:
        raise NoPupilCandidateError("no pupil candidate: the LoG seed mask is empty")
    peaks = np.full(n, -np.inf)
    np.maximum.at(peaks, labels.ravel(), response.data.ravel())
    order = 1 + np.argsort(-peaks[1:], kind="stable")

    dark = tri.data == 0.0
    seeds = []
    for label in order[:limit]:
        rows, cols = np.nonzero((labels == label) & dark)
        if rows.size == 0:
            continue
        cx, cy = centroids[label]
        nearest = np.argsort((cols - cx) ** 2 + (rows - cy) ** 2, kind="stable")[:limit]
        seeds.extend((int(cols[i]), int(rows[i])) for i in nearest)
    return seeds


def dark_components_near_peak(tri: TriLevelImage, response: GrayImage,
                              limit: int = SEED_ATTEMPTS) -> List[Tuple[int, int]]:
    """One seed per tri-level 0 component, components nearest the global LoG peak first"""
    n, labels, stats, centroids = label_components(tri.data == 0.0)
    peak_y, peak_x = np.unravel_index(np.argmax(response.data), response.shape)
    sized = [k for k in range(1, n) if stats[k, cv2.CC_STAT_AREA] >= MIN_PUPIL_AREA]
    sized.sort(key=lambda k: (centroids[k][0] - peak_x) ** 2 + (centroids[k][1] - peak_y) ** 2)
    seeds = []
    for k in sized[:limit]:
        rows, cols = np.nonzero(labels == k)
        cx, cy = centroids[k]
        i = int(np.argmin((cols - cx) ** 2 + (rows - cy) ** 2))
        seeds.append((int(cols[i]), int(rows[i])))
    return seeds


def pupil_region(smooth: GrayImage, dark_labels: np.ndarray, seed: Tuple[int, int],
                 params: PupilParams) -> Optional[PixelRegion]:
    """Grown region joined with the dark component under the seed, then opened and hole-filled.

    The opening cuts lashes and impulse specks attached to the pupil; None when nothing survives it.
    """
    x, y = seed
    merged = region_grow(smooth, seed, params.grow_tolerance).mask
    if dark_labels[y, x] > 0:
        merged = merged | (dark_labels == dark_labels[y, x])
    radius = max(1, min(params.open_radius, int(params.min_radius_factor * params.r_avg / 2)))
    opened = open_mask(merged, StructuringElement(radius))
    n, labels, stats, _ = label_components(opened)
    if n <= 1:
        return None
    keep = labels[y, x] if labels[y, x] > 0 else 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    return PixelRegion(fill_holes(labels == keep), seed=seed)


def plausible_radius(r: float, params: PupilParams) -> bool:
    return params.min_radius_factor * params.r_avg <= r <= params.max_radius_factor * params.r_avg


def pupil_estimate(region: PixelRegion) -> Circle:
    """Centroid plus equivalent-area radius"""
    if region.area < MIN_PUPIL_AREA:
        raise PupilNotFoundError(f"pupil not found: grown region has only {region.area} pixels")
    cx, cy = region.centroid
    return Circle(cx=cx, cy=cy, r=math.sqrt(region.area / math.pi))


def locate_pupil(smooth: GrayImage, params: PupilParams) -> CoarsePupil:
    """Run the whole coarse stage on an opened image.

    The centroid seed of the largest mask component goes first when it is dark, then the peak-ordered
    candidates. The region a seed grows must have a radius within the band around r_avg; the first seed
    that passes wins.
    """
    tri = to_trilevel(smooth, params.t1, params.t2)
    response = coarse_log_response(tri, params.r_avg)
    mask = seed_mask(response, params.lambda_a)
    x0, y0 = seed_point(mask, smooth)
    seeds = [(x0, y0)] if tri.data[y0, x0] == 0.0 else []
    seeds += dark_seed_candidates(mask, response, tri)
    seeds += dark_components_near_peak(tri, response)
    if not seeds:
        raise NoPupilCandidateError("no pupil candidate: no dark pixel under the LoG seed mask")

    _, dark_labels = cv2.connectedComponents((tri.data == 0.0).astype(np.uint8), connectivity=8)
    tried, rejected = set(), []
    for seed in seeds:
        x, y = seed
        component = int(dark_labels[y, x])
        if component in tried:
            continue
        tried.add(component)
        region = pupil_region(smooth, dark_labels, seed, params)
        if region is None or region.area < MIN_PUPIL_AREA:
            rejected.append(f"{seed}: no region")
            continue
        circle = pupil_estimate(region)
        if plausible_radius(circle.r, params):
            logger.debug(f"Coarse pupil at ({circle.cx:.1f}, {circle.cy:.1f}) r={circle.r:.1f} from seed {seed}")
            return CoarsePupil(tri=tri, response=response, mask=mask, seed=seed, region=region, circle=circle)
        rejected.append(f"{seed}: r={circle.r:.1f}")
        logger.warning(f"Seed {seed} grew an implausible pupil r={circle.r:.1f} for r_avg={params.r_avg}")
    raise PupilNotFoundError(f"pupil not found: no seed grew a plausible region ({'; '.join(rejected[:4])})")
