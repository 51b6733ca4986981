"""Raster types, image I/O, grayscale morphology and the convolution machinery shared by every stage.

All rasters are float64, row-major (rows = y, columns = x). Filters pad with
replicated edge pixels.
"""
import math
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple, Union

import cv2
import numpy as np
from PIL import Image, UnidentifiedImageError

from schemas.models import Circle
from services.errors import ImageLoadError, KernelFitError

logger = logging.getLogger(__name__)

SUPPORTED_FORMATS = ("PNG", "PPM")  # Pillow reports PGM files as PPM
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
FLAT_TOLERANCE = 1e-12


def _frozen(data, dtype=np.float64) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _cv(arr: np.ndarray) -> np.ndarray:
    # OpenCV wants a writable, contiguous float64 buffer
    return np.ascontiguousarray(arr, dtype=np.float64).copy()


@dataclass(frozen=True)
class GrayImage:
    """2-D intensities in [0, 1]"""
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"GrayImage needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all((arr >= 0) & (arr <= 1)):
            raise ValueError("GrayImage samples must lie in [0, 1]")
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Kernel2D:
    """Square, odd-sized filter taps.

    `raw_taps` keeps the sampled values before DC correction; `factors` lists
    (column, row) 1-D pairs whose outer products sum to `raw_taps`, letting
    `convolve` take the separable path; `dc` is the mean removed from the taps.
    """
    taps: np.ndarray
    raw_taps: Optional[np.ndarray] = None
    factors: Tuple[Tuple[np.ndarray, np.ndarray], ...] = ()
    dc: float = 0.0
    sigma: Optional[float] = None

    def __post_init__(self):
        taps = _frozen(self.taps)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
            raise ValueError(f"kernel must be square with odd size, got shape {taps.shape}")
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "raw_taps", taps if self.raw_taps is None else _frozen(self.raw_taps))
        object.__setattr__(self, "factors", tuple((_frozen(c), _frozen(r)) for c, r in self.factors))

    @property
    def size(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class StructuringElement:
    """Flat disc footprint {(dx, dy): dx^2 + dy^2 <= radius^2}"""
    radius: int
    shape: str = field(default="disc")

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("structuring element radius must be at least 1")
        if self.shape != "disc":
            raise ValueError(f"unsupported structuring element shape: {self.shape}")

    @property
    def footprint(self) -> np.ndarray:
        r = self.radius
        y, x = np.mgrid[-r:r + 1, -r:r + 1]
        return (x * x + y * y <= r * r).astype(np.uint8)


def load_image(path: Union[str, Path]) -> GrayImage:
    """Read an 8-bit PGM or PNG and rescale it to [0, 1]; color input is converted to luminance first"""
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise ImageLoadError(f"Unsupported raster format {img.format} for {path}")
            img.load()
            if img.width == 0 or img.height == 0:
                raise ImageLoadError(f"Zero-dimension image: {path}")
            mode = img.mode
            if mode == "P":
                img = img.convert("RGBA")
                mode = img.mode
            arr = np.asarray(img)
    except ImageLoadError:
        raise
    except (FileNotFoundError, IsADirectoryError, PermissionError) as e:
        raise ImageLoadError(f"Could not read image {path}: {e}") from e
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise ImageLoadError(f"Invalid or corrupted image {path}: {e}") from e

    if mode == "1":
        data = arr.astype(np.float64)
    elif mode in ("L", "LA"):
        data = (arr[..., 0] if arr.ndim == 3 else arr).astype(np.float64) / 255.0
    elif mode in ("RGB", "RGBA"):
        rgb = arr[..., :3].astype(np.float64)
        data = (rgb @ np.array(LUMA_WEIGHTS)) / 255.0
    elif mode.startswith("I"):
        data = arr.astype(np.float64) / 65535.0
    else:
        raise ImageLoadError(f"Unsupported pixel mode {mode} for {path}")

    if data.size == 0:
        raise ImageLoadError(f"Zero-dimension image: {path}")
    logger.debug(f"Loaded {path} ({data.shape[1]}x{data.shape[0]}, mode {mode})")
    return GrayImage(np.clip(data, 0.0, 1.0))


def morph_open(img: GrayImage, se: StructuringElement) -> GrayImage:
    """Grayscale opening (dilation of the erosion) with a flat disc"""
    if 2 * se.radius >= min(img.width, img.height):
        raise KernelFitError(
            f"Structuring element radius {se.radius} too large for {img.width}x{img.height} image"
        )
    opened = cv2.morphologyEx(_cv(img.data), cv2.MORPH_OPEN, se.footprint, borderType=cv2.BORDER_REPLICATE)
    return GrayImage(opened)


def log_function(x, y, sigma: float):
    """Continuous Laplacian of Gaussian h(x, y; sigma)"""
    s2 = sigma * sigma
    rr = (np.asarray(x, dtype=np.float64) ** 2 + np.asarray(y, dtype=np.float64) ** 2) / (2 * s2)
    return -1.0 / (math.pi * s2 * s2) * (1 - rr) * np.exp(-rr)


def kernel_size(sigma: float) -> int:
    return int(math.floor(3 * sigma)) * 2 + 1


def gaussian_1d(sigma: float, n: Optional[int] = None) -> np.ndarray:
    n = kernel_size(sigma) if n is None else n
    x = np.arange(n, dtype=np.float64) - n // 2
    return np.exp(-x * x / (2 * sigma * sigma)) / (math.sqrt(2 * math.pi) * sigma)


def log_kernel(sigma: float, scale_normalized: bool = False) -> Kernel2D:
    """Sampled LoG with n = floor(3*sigma)*2 + 1 taps, optionally scale-normalized, then made zero-sum"""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    n = kernel_size(sigma)
    half = n // 2
    y, x = np.mgrid[-half:half + 1, -half:half + 1].astype(np.float64)
    raw = log_function(x, y, sigma)

    # h = g''(x) g(y) + g(x) g''(y)
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    g = gaussian_1d(sigma, n)
    g2 = g * (offsets * offsets - sigma * sigma) / sigma ** 4
    if scale_normalized:
        raw = sigma * sigma * raw
        g2 = sigma * sigma * g2
    dc = float(raw.mean())
    return Kernel2D(
        taps=raw - dc,
        raw_taps=raw,
        factors=((g, g2), (g2, g)),
        dc=dc,
        sigma=sigma,
    )


def _as_field(field_or_image) -> np.ndarray:
    if isinstance(field_or_image, GrayImage):
        return field_or_image.data
    return np.asarray(field_or_image, dtype=np.float64)


def convolve_direct(field_or_image, kernel: Kernel2D) -> np.ndarray:
    """Reference 2-D convolution: shift-and-accumulate over every tap"""
    a = _as_field(field_or_image)
    _check_fit(a, kernel)
    n = kernel.size
    h, w = a.shape
    padded = np.pad(a, n // 2, mode="edge")
    flipped = kernel.taps[::-1, ::-1]
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(n):
        for j in range(n):
            weight = flipped[i, j]
            if weight != 0.0:
                out += weight * padded[i:i + h, j:j + w]
    return out


def _convolve_separable(a: np.ndarray, kernel: Kernel2D) -> np.ndarray:
    src = _cv(a)
    out = np.zeros_like(src)
    for column, row in kernel.factors:
        out += cv2.sepFilter2D(src, cv2.CV_64F, row, column, borderType=cv2.BORDER_REPLICATE)
    if kernel.dc != 0.0:
        ones = np.ones(kernel.size, dtype=np.float64)
        out -= kernel.dc * cv2.sepFilter2D(src, cv2.CV_64F, ones, ones, borderType=cv2.BORDER_REPLICATE)
    return out


def _check_fit(a: np.ndarray, kernel: Kernel2D):
    if kernel.size > min(a.shape):
        raise KernelFitError(f"{kernel.size}x{kernel.size} kernel larger than {a.shape[1]}x{a.shape[0]} image")


def convolve(field_or_image, kernel: Kernel2D, method: str = "auto") -> np.ndarray:
    """Linear convolution with replicate padding; returns an unclamped field of the input's shape.

    Kernels carrying separable factors go through OpenCV's separable filter,
    which matches `convolve_direct` to rounding error.
    """
    a = _as_field(field_or_image)
    _check_fit(a, kernel)
    if method == "direct" or not kernel.factors:
        return convolve_direct(a, kernel)
    return _convolve_separable(a, kernel)


def rescale01(field_values) -> GrayImage:
    """Affine map of [min, max] onto [0, 1]; a constant field maps to 0.5"""
    a = _as_field(field_values)
    lo, hi = float(a.min()), float(a.max())
    # rounding residue of a zero-sum kernel over a flat field counts as constant
    if hi - lo <= FLAT_TOLERANCE * max(1.0, abs(hi), abs(lo)):
        return GrayImage(np.full(a.shape, 0.5))
    return GrayImage(np.clip((a - lo) / (hi - lo), 0.0, 1.0))


def gaussian_smooth(img: GrayImage, sigma: float) -> np.ndarray:
    """Gaussian blur with the same n = floor(3*sigma)*2 + 1 support as the LoG kernels"""
    g = gaussian_1d(sigma)
    g = g / g.sum()
    return cv2.sepFilter2D(_cv(img.data), cv2.CV_64F, g, g, borderType=cv2.BORDER_REPLICATE)


def label_components(mask: np.ndarray):
    """8-connected labelling; returns (count including background, labels, stats, centroids)"""
    return cv2.connectedComponentsWithStats(np.ascontiguousarray(mask, dtype=np.uint8), connectivity=8)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Boolean mask of the largest 8-connected component (empty if the mask is empty)"""
    n, labels, stats, _ = label_components(mask)
    if n <= 1:
        return np.zeros(mask.shape, dtype=bool)
    best = 1 + int(np.argmax(stats[1:, cv2.CC_STAT_AREA]))
    return labels == best


def disc_mask(shape: Tuple[int, int], circle: Circle) -> np.ndarray:
    """Pixels whose centers lie within the circle"""
    h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    return (x - circle.cx) ** 2 + (y - circle.cy) ** 2 <= circle.r ** 2


def annulus_mask(shape: Tuple[int, int], inner: Circle, outer: Circle) -> np.ndarray:
    return disc_mask(shape, outer) & ~disc_mask(shape, inner)


def open_mask(mask: np.ndarray, se: StructuringElement) -> np.ndarray:
    """Binary opening: drops structures the disc cannot fit inside"""
    opened = cv2.morphologyEx(np.ascontiguousarray(mask, dtype=np.uint8), cv2.MORPH_OPEN, se.footprint,
                              borderType=cv2.BORDER_CONSTANT, borderValue=0)
    return opened.astype(bool)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Mask plus every background pocket that does not reach the image border"""
    mask = np.asarray(mask, dtype=bool)
    n, labels, _, _ = label_components(~mask)
    if n <= 1:
        return mask.copy()
    border = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    holes = (labels > 0) & ~np.isin(labels, border)
    return mask | holes
