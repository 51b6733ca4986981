"""LoG zero-crossing edges with edge-strength suppression and small-component cleanup"""
import logging
from dataclasses import dataclass
from typing import Tuple

import cv2
import numpy as np

from schemas.models import EdgeParams
from services.imgcore import GrayImage, convolve, gaussian_smooth, label_components, log_kernel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EdgeMap:
    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=bool, copy=True)
        if arr.ndim != 2:
            raise ValueError("edge map must be 2-D")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def count(self) -> int:
        return int(self.data.sum())


def _sign_changes(resp: np.ndarray) -> np.ndarray:
    # each sign change between 4-neighbors marks the pixel with the smaller |response|
    marked = np.zeros(resp.shape, dtype=bool)
    mag = np.abs(resp)

    a, b = resp[:, :-1], resp[:, 1:]
    change = ((a > 0) & (b < 0)) | ((a < 0) & (b > 0))
    first = mag[:, :-1] <= mag[:, 1:]
    marked[:, :-1] |= change & first
    marked[:, 1:] |= change & ~first

    a, b = resp[:-1, :], resp[1:, :]
    change = ((a > 0) & (b < 0)) | ((a < 0) & (b > 0))
    first = mag[:-1, :] <= mag[1:, :]
    marked[:-1, :] |= change & first
    marked[1:, :] |= change & ~first

    nonzero = resp != 0
    has_nonzero_neighbor = np.zeros(resp.shape, dtype=bool)
    has_nonzero_neighbor[:, :-1] |= nonzero[:, 1:]
    has_nonzero_neighbor[:, 1:] |= nonzero[:, :-1]
    has_nonzero_neighbor[:-1, :] |= nonzero[1:, :]
    has_nonzero_neighbor[1:, :] |= nonzero[:-1, :]
    marked |= ~nonzero & has_nonzero_neighbor
    return marked


def edge_strength(smooth: GrayImage, sigma: float) -> np.ndarray:
    """Central-difference gradient magnitude of a Gaussian-smoothed copy, relative to its image maximum"""
    blurred = gaussian_smooth(smooth, sigma)
    gy, gx = np.gradient(blurred)
    magnitude = np.hypot(gx, gy)
    peak = float(magnitude.max())
    if peak == 0.0:
        return np.zeros_like(magnitude)
    return magnitude / peak


def zero_crossings(smooth: GrayImage, params: EdgeParams) -> EdgeMap:
    response = convolve(smooth, log_kernel(params.sigma_zc))
    crossings = _sign_changes(response)
    strong = edge_strength(smooth, params.sigma_zc) >= params.lambda_c
    return EdgeMap(crossings & strong)


def clean_components(edges: EdgeMap, min_component: int) -> EdgeMap:
    """Erase 8-connected components with fewer than min_component pixels"""
    n, labels, stats, _ = label_components(edges.data)
    if n <= 1:
        return EdgeMap(edges.data)
    keep = np.zeros(n, dtype=bool)
    keep[1:] = stats[1:, cv2.CC_STAT_AREA] >= min_component
    return EdgeMap(keep[labels])


def detect_edges(smooth: GrayImage, params: EdgeParams) -> Tuple[EdgeMap, EdgeMap]:
    """(raw zero-crossings, cleaned zero-crossings)"""
    raw = zero_crossings(smooth, params)
    cleaned = clean_components(raw, params.min_component)
    logger.debug(f"Zero-crossings: {raw.count} raw, {cleaned.count} after cleanup")
    return raw, cleaned
