"""Pupillary and limbic circles from the cleaned zero-crossing map.

Angles follow image coordinates: 0 points along +x, angles grow towards +y
(downwards on screen), so "upper" sectors have negative sine.
"""
import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np

from schemas.models import BoundaryParams, Circle, ZonePartition
from services.edges import EdgeMap
from services.errors import BoundaryNotRecoverableError, LimbicNotFoundError
from services.imgcore import (
    GrayImage, StructuringElement, annulus_mask, disc_mask, fill_holes, label_components, open_mask,
)

logger = logging.getLogger(__name__)

HIT_LEVEL = 0.25
MIN_SPAN = math.pi / 2
SKIN_MARGIN = 0.1
MIN_OPENING_FACTOR = 4.0
LOW_CONFIDENCE_SPREAD = 0.05
TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class RadialProfile:
    """First edge hit per ray; `radii` holds NaN where the ray missed"""
    center: Tuple[float, float]
    angles: np.ndarray
    radii: np.ndarray

    @property
    def hits(self) -> np.ndarray:
        return ~np.isnan(self.radii)

    @property
    def coverage(self) -> float:
        return float(self.hits.mean()) if self.angles.size else 0.0

    def hit_points(self) -> np.ndarray:
        """(N, 2) array of (x, y) points at the hit radii"""
        hits = self.hits
        a, r = self.angles[hits], self.radii[hits]
        cx, cy = self.center
        return np.column_stack([cx + r * np.cos(a), cy + r * np.sin(a)])


@dataclass(frozen=True)
class OrientationEstimate:
    orientation: float
    eye_mask: np.ndarray
    confident: bool


@dataclass(frozen=True)
class LimbicResult:
    iris: Circle
    gap_angles: np.ndarray
    stable_radius: float
    angle_step: float


@dataclass(frozen=True)
class _ScanGrid:
    # per (angle, sample): hit flag, coordinates of the edge pixel responsible, its distance to the origin
    hit: np.ndarray
    px: np.ndarray
    py: np.ndarray
    radius: np.ndarray


def uniform_angles(n_angles: int) -> np.ndarray:
    return np.arange(n_angles) * (TWO_PI / n_angles)


def _scan_grid(edges: EdgeMap, center, angles: np.ndarray, r_min: float, r_max: float, step: float) -> _ScanGrid:
    cx, cy = center
    radii = np.arange(r_min, r_max + step / 2, step)
    xs = cx + np.outer(np.cos(angles), radii)
    ys = cy + np.outer(np.sin(angles), radii)
    x0, y0 = np.floor(xs).astype(np.int64), np.floor(ys).astype(np.int64)
    fx, fy = xs - x0, ys - y0
    h, w = edges.data.shape

    weights, members, cols, rows = [], [], [], []
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        px, py = x0 + dx, y0 + dy
        valid = (px >= 0) & (px < w) & (py >= 0) & (py < h)
        value = np.zeros(xs.shape, dtype=bool)
        value[valid] = edges.data[py[valid], px[valid]]
        weights.append((fx if dx else 1 - fx) * (fy if dy else 1 - fy))
        members.append(value)
        cols.append(px)
        rows.append(py)
    weights, members = np.stack(weights), np.stack(members)
    cols, rows = np.stack(cols), np.stack(rows)

    contribution = weights * members
    level = contribution.sum(axis=0)
    best = np.argmax(contribution, axis=0)[None]
    hit_x = np.take_along_axis(cols, best, axis=0)[0].astype(np.float64)
    hit_y = np.take_along_axis(rows, best, axis=0)[0].astype(np.float64)
    return _ScanGrid(
        hit=level >= HIT_LEVEL,
        px=hit_x,
        py=hit_y,
        radius=np.hypot(hit_x - cx, hit_y - cy),
    )


def _first(grid: _ScanGrid, accept: np.ndarray) -> np.ndarray:
    found = accept.any(axis=1)
    index = np.argmax(accept, axis=1)
    radii = grid.radius[np.arange(accept.shape[0]), index]
    return np.where(found, radii, np.nan)


def _check_center(edges: EdgeMap, center):
    cx, cy = center
    if not (0 <= cx <= edges.width - 1 and 0 <= cy <= edges.height - 1):
        raise ValueError(f"scan center ({cx:.1f}, {cy:.1f}) outside {edges.width}x{edges.height} image")


def radial_scan(edges: EdgeMap, center, r_min: float, r_max: float, n_angles: int,
                step: float = 0.5) -> RadialProfile:
    """March n_angles uniform rays outward from r_min to r_max and record the first edge hit on each"""
    if not 0 <= r_min < r_max:
        raise ValueError(f"scan range must satisfy 0 <= r_min < r_max, got [{r_min}, {r_max}]")
    _check_center(edges, center)
    angles = uniform_angles(n_angles)
    grid = _scan_grid(edges, center, angles, r_min, r_max, step)
    return RadialProfile(center=tuple(center), angles=angles, radii=_first(grid, grid.hit))


def _kasa(points: np.ndarray) -> Circle:
    mean = points.mean(axis=0)
    u, v = points[:, 0] - mean[0], points[:, 1] - mean[1]
    design = np.column_stack([2 * u, 2 * v, np.ones_like(u)])
    solution, _, rank, singular = np.linalg.lstsq(design, u * u + v * v, rcond=None)
    if rank < 3 or singular[-1] <= 1e-10 * singular[0]:
        raise BoundaryNotRecoverableError("boundary not recoverable: hit points are collinear")
    a, b, c = solution
    r2 = c + a * a + b * b
    if not (r2 > 0 and math.isfinite(r2)):
        raise BoundaryNotRecoverableError("boundary not recoverable: degenerate circle fit")
    return Circle(cx=float(a + mean[0]), cy=float(b + mean[1]), r=math.sqrt(r2))


def fit_circle_points(points, inlier_tol: Optional[float] = None) -> Circle:
    """Algebraic least-squares circle, then one re-fit over points within inlier_tol of the first fit"""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 3:
        raise BoundaryNotRecoverableError(f"boundary not recoverable: only {len(pts)} hit points")
    circle = _kasa(pts)
    if inlier_tol is None:
        return circle
    residual = np.abs(np.hypot(pts[:, 0] - circle.cx, pts[:, 1] - circle.cy) - circle.r)
    inliers = residual <= inlier_tol
    if 3 <= inliers.sum() < len(pts):
        circle = _kasa(pts[inliers])
    return circle


def angular_span(angles: np.ndarray) -> float:
    """Length of the smallest arc containing all angles"""
    if angles.size == 0:
        return 0.0
    a = np.sort(np.mod(angles, TWO_PI))
    gaps = np.diff(np.concatenate([a, [a[0] + TWO_PI]]))
    return float(TWO_PI - gaps.max())


def fit_circle(profile: RadialProfile, inlier_tol: float) -> Circle:
    """Interpolate a broken boundary: the fitted circle also defines it over the missed angles"""
    hits = profile.hits
    if hits.sum() < 3:
        raise BoundaryNotRecoverableError(f"boundary not recoverable: {int(hits.sum())} hit angles")
    if angular_span(profile.angles[hits]) <= MIN_SPAN:
        raise BoundaryNotRecoverableError("boundary not recoverable: hits span 90 degrees or less")
    return fit_circle_points(profile.hit_points(), inlier_tol)


def mask_orientation(mask: np.ndarray) -> Tuple[float, bool]:
    """Principal-axis angle in (-pi/2, pi/2] from second central moments, plus a confidence flag"""
    m = cv2.moments(np.ascontiguousarray(mask, dtype=np.uint8), binaryImage=True)
    mu20, mu02, mu11 = m["mu20"], m["mu02"], m["mu11"]
    spread = math.hypot((mu20 - mu02) / 2, mu11)
    major = (mu20 + mu02) / 2 + spread
    minor = (mu20 + mu02) / 2 - spread
    if major <= 0:
        return 0.0, False
    theta = 0.5 * math.atan2(2 * mu11, mu20 - mu02)
    if theta <= -math.pi / 2:
        theta += math.pi
    return theta, (major - minor) > LOW_CONFIDENCE_SPREAD * major


def skin_level(smooth: GrayImage) -> float:
    """Median intensity along the image border, where the skin around the eye opening shows"""
    a = smooth.data
    return float(np.median(np.concatenate([a[0], a[-1], a[1:-1, 0], a[1:-1, -1]])))


def eye_opening_mask(smooth: GrayImage, pupil: Circle, skin_margin: float = SKIN_MARGIN) -> np.ndarray:
    """Connected region darker than the skin (sclera, iris and pupil) that overlaps the pupil, holes filled"""
    darker = smooth.data < skin_level(smooth) - skin_margin
    # a one-pixel opening detaches impulse noise and single lash strokes from the opening
    darker = open_mask(darker, StructuringElement(1))
    _, labels, stats, _ = label_components(darker)
    overlapping = np.unique(labels[disc_mask(labels.shape, pupil) & (labels > 0)])
    if not overlapping.size:
        return np.zeros(labels.shape, dtype=bool)
    chosen = overlapping[np.argmax(stats[overlapping, cv2.CC_STAT_AREA])]
    return fill_holes(labels == chosen)


def eye_orientation(smooth: GrayImage, pupil: Circle, r_avg: float) -> OrientationEstimate:
    """Eye major-axis angle from the shape of the eye opening around the pupil"""
    eye_mask = eye_opening_mask(smooth, pupil)
    if not eye_mask.any():
        logger.warning("No eye opening overlaps the pupil, assuming a horizontal eye")
        return OrientationEstimate(0.0, eye_mask, False)
    theta, confident = mask_orientation(eye_mask)
    area = int(eye_mask.sum())
    if area < MIN_OPENING_FACTOR * math.pi * r_avg ** 2:
        logger.warning(f"Eye opening of {area} pixels is too small to orient, assuming a horizontal eye")
        confident = False
    return OrientationEstimate(theta, eye_mask, confident)


def partition_zones(orientation: float, stable_halfwidth: float) -> ZonePartition:
    if not 0 < stable_halfwidth < math.pi / 4:
        raise ValueError(f"stable_halfwidth must lie in (0, pi/4), got {stable_halfwidth}")
    return ZonePartition(orientation=orientation, stable_halfwidth=stable_halfwidth)


def _trimmed_mean(values: np.ndarray, trim: float) -> float:
    ordered = np.sort(values)
    k = int(math.floor(len(ordered) * trim))
    kept = ordered[k:len(ordered) - k] if len(ordered) > 2 * k else ordered
    return float(kept.mean())


def locate_limbic(edges: EdgeMap, pupil: Circle, zones: ZonePartition,
                  params: BoundaryParams = BoundaryParams()) -> LimbicResult:
    """Stable-zone radius estimate, banded search over every ray, gap detection in the occlusion zones, final fit"""
    _check_center(edges, pupil.center)
    angles = uniform_angles(params.n_angles)
    stable = np.array([zones.is_stable(a) for a in angles])

    grid = _scan_grid(edges, pupil.center, angles, params.limbic_min_factor * pupil.r,
                      params.limbic_max_factor * pupil.r, params.radial_step)
    off_pupil = np.abs(np.hypot(grid.px - pupil.cx, grid.py - pupil.cy) - pupil.r) > params.pupil_exclusion
    stable_first = _first(grid, grid.hit & off_pupil)[stable]
    stable_hits = stable_first[~np.isnan(stable_first)]
    coverage = stable_hits.size / max(int(stable.sum()), 1)
    if coverage < params.min_stable_coverage:
        raise LimbicNotFoundError(f"limbic boundary not found: stable-zone coverage {coverage:.0%}")
    stable_radius = _trimmed_mean(stable_hits, params.trim_fraction)

    band_lo = (1 - params.limbic_band) * stable_radius
    band_hi = (1 + params.limbic_band) * stable_radius
    band_grid = _scan_grid(edges, pupil.center, angles, band_lo, band_hi, params.radial_step)
    accept = band_grid.hit & (band_grid.radius >= band_lo) & (band_grid.radius <= band_hi)
    accept &= np.abs(np.hypot(band_grid.px - pupil.cx, band_grid.py - pupil.cy) - pupil.r) > params.pupil_exclusion
    band_radii = _first(band_grid, accept)

    gaps = ~stable & np.isnan(band_radii)
    profile = RadialProfile(center=pupil.center, angles=angles, radii=band_radii)
    try:
        iris = fit_circle(profile, params.inlier_tol)
    except BoundaryNotRecoverableError as e:
        raise LimbicNotFoundError(f"limbic boundary not found: {e}") from e
    logger.debug(f"Limbic radius {stable_radius:.1f} from {stable_hits.size} stable hits, "
                 f"{int(gaps.sum())} gap angles")
    return LimbicResult(iris=iris, gap_angles=angles[gaps], stable_radius=stable_radius,
                        angle_step=TWO_PI / params.n_angles)


def angular_runs(angles: Sequence[float], step: float) -> List[Tuple[float, float]]:
    """Group sampled angles into contiguous runs (start, end) covering half a step on either side.

    Runs that wrap through 0 are reported with end > 2*pi.
    """
    a = np.unique(np.round(np.mod(np.asarray(angles, dtype=np.float64), TWO_PI) / step).astype(np.int64))
    if a.size == 0:
        return []
    n = int(round(TWO_PI / step))
    if a.size >= n:
        return [(-step / 2, TWO_PI - step / 2)]
    breaks = np.nonzero(np.diff(a) > 1)[0]
    starts = np.concatenate([[a[0]], a[breaks + 1]])
    ends = np.concatenate([a[breaks], [a[-1]]])
    if starts[0] == 0 and ends[-1] == n - 1 and len(starts) > 1:
        # merge the run crossing angle zero
        starts, ends = starts[1:], np.concatenate([ends[1:-1], [ends[0] + n]])
    return [(s * step - step / 2, e * step + step / 2) for s, e in zip(starts, ends)]


def angles_in_runs(phi: np.ndarray, runs: Sequence[Tuple[float, float]]) -> np.ndarray:
    inside = np.zeros(np.shape(phi), dtype=bool)
    for start, end in runs:
        inside |= np.mod(phi - start, TWO_PI) <= (end - start)
    return inside


def occlusion_mask(edges: EdgeMap, iris: Circle, pupil: Circle, gap_angles: Sequence[float],
                   angle_step: float = TWO_PI / 360) -> np.ndarray:
    """Annulus pixels whose angle about the pupil center falls in a run of gap angles"""
    shape = edges.data.shape
    runs = angular_runs(gap_angles, angle_step)
    if not runs:
        return np.zeros(shape, dtype=bool)
    y, x = np.mgrid[0:shape[0], 0:shape[1]]
    phi = np.arctan2(y - pupil.cy, x - pupil.cx)
    return annulus_mask(shape, pupil, iris) & angles_in_runs(phi, runs)


def refine_pupil(edges: EdgeMap, coarse: Circle, params: BoundaryParams = BoundaryParams()) -> Tuple[Circle, bool]:
    """Circle fitted to zero-crossings around the coarse pupil; (coarse, False) when that fails"""
    try:
        profile = radial_scan(edges, coarse.center, 0.5 * coarse.r, 1.5 * coarse.r, params.n_angles,
                              params.radial_step)
        refined = fit_circle(profile, params.inlier_tol)
    except (BoundaryNotRecoverableError, ValueError) as e:
        logger.warning(f"Pupil refinement failed, keeping the coarse circle: {e}")
        return coarse, False
    if not (refined.inside(edges.width, edges.height) and 0.5 * coarse.r <= refined.r <= 1.5 * coarse.r):
        logger.warning("Refined pupil circle is implausible, keeping the coarse circle")
        return coarse, False
    return refined, True
