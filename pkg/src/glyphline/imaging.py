"""Pixel-level primitives shared by all pipeline stages.

Images wrap read-only numpy arrays: `RasterImage` holds uint8 pixels shaped
(height, width) for gray or (height, width, 3) for RGB, `BinaryImage` holds
a bool mask shaped (height, width). Every function returns new images.
"""
from __future__ import annotations

import logging
import math

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from glyphline.errors import InvalidInput
from glyphline.geometry import Box

logger = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
CANNY_SIGMA = 0.33
EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class RasterImage:
    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.dtype != np.uint8:
            raise InvalidInput(f"RasterImage needs uint8 pixels, got {arr.dtype}")
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise InvalidInput(f"RasterImage needs 1 or 3 channels, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInput(f"RasterImage needs at least one pixel, got shape {arr.shape}")
        object.__setattr__(self, 'data', _frozen(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return 1 if self.data.ndim == 2 else 3

    @property
    def frame(self) -> Box:
        return Box(0, 0, self.width, self.height)

    def __eq__(self, other):
        return isinstance(other, RasterImage) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class BinaryImage:
    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise InvalidInput(f"BinaryImage needs a 2-d mask, got shape {arr.shape}")
        object.__setattr__(self, 'bits', _frozen(arr.astype(bool)))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    def to_raster(self) -> RasterImage:
        """Mask as a gray image, 255 where set"""
        return RasterImage(np.where(self.bits, 255, 0).astype(np.uint8))

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.bits, other.bits)

    def __repr__(self):
        return f"BinaryImage({self.width}x{self.height}, {int(self.bits.sum())} set)"


@dataclass(frozen=True)
class GaussianSpec:
    sigma: float
    kernel_size: Optional[int] = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_size is not None and (self.kernel_size < 1 or self.kernel_size % 2 == 0):
            raise ValueError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")

    @classmethod
    def from_kernel_size(cls, kernel_size: int) -> GaussianSpec:
        """Fixed-size kernel with the sigma OpenCV derives for it"""
        sigma = 0.3 * ((kernel_size - 1) * 0.5 - 1) + 0.8
        return cls(sigma=sigma, kernel_size=kernel_size)

    @property
    def radius(self) -> int:
        if self.kernel_size is not None:
            return self.kernel_size // 2
        return int(math.ceil(4.0 * self.sigma))

    def kernel(self) -> np.ndarray:
        x = np.arange(-self.radius, self.radius + 1, dtype=np.float64)
        weights = np.exp(-0.5 * (x / self.sigma) ** 2)
        return weights / weights.sum()


class Component(NamedTuple):
    component_id: int
    box: Box
    pixel_count: int


def from_array(array: np.ndarray) -> RasterImage:
    """Build an image from any numeric array, clipping to 0..255"""
    array = np.asarray(array)
    if array.dtype != np.uint8:
        array = np.clip(np.floor(array.astype(np.float64) + 0.5), 0, 255).astype(np.uint8)
    return RasterImage(array)


def read_image(path: str) -> RasterImage:
    """Decode a PNG or JPEG file to a gray or RGB image"""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ('1', 'L', 'LA'):
                im = im.convert('L')
            elif im.mode in ('I', 'I;16', 'I;16B', 'F'):
                arr = np.asarray(im, dtype=np.float64)
                top = arr.max() if arr.max() > 0 else 1.0
                return from_array(arr * (255.0 / top))
            else:
                im = im.convert('RGB')
            return RasterImage(np.asarray(im))
    except (OSError, UnidentifiedImageError, SyntaxError) as err:
        raise InvalidInput(f"Cannot decode image {path}: {err}") from err


def write_image(img: Union[RasterImage, BinaryImage], path: str, **kwargs) -> str:
    if isinstance(img, BinaryImage):
        img = img.to_raster()
    Image.fromarray(np.ascontiguousarray(img.data)).save(path, **kwargs)
    return path


def to_pil(img: RasterImage) -> Image.Image:
    return Image.fromarray(np.ascontiguousarray(img.data))


def resize(img: RasterImage, width: int, height: int) -> RasterImage:
    if (img.width, img.height) == (width, height):
        return img
    resized = to_pil(img).resize((int(width), int(height)), Image.Resampling.BILINEAR)
    return RasterImage(np.asarray(resized))


def crop(img: RasterImage, box: Box) -> RasterImage:
    clipped = box.clip(img.width, img.height)
    if clipped is None:
        raise InvalidInput(f"{box} lies outside the {img.width}x{img.height} image")
    return RasterImage(img.data[clipped.y:clipped.y2, clipped.x:clipped.x2])


def to_grayscale(img: RasterImage) -> RasterImage:
    """ITU-R 601 luma; gray input is returned unchanged"""
    if img.channels == 1:
        return img
    gray = img.data.astype(np.float64) @ LUMA
    return from_array(gray)


def _gray(img: RasterImage, op: str) -> np.ndarray:
    if img.channels != 1:
        raise InvalidInput(f"{op} needs a 1-channel image, got {img.channels} channels")
    return img.data


def smooth(values: np.ndarray, spec: GaussianSpec) -> np.ndarray:
    """Separable Gaussian filter over the two image axes of a float array,
    mirrored at the borders"""
    kernel = spec.kernel()
    out = np.asarray(values, dtype=np.float64)
    for axis in (0, 1):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode='reflect')
    return out


def gaussian_blur(img: RasterImage, spec: GaussianSpec) -> RasterImage:
    return from_array(smooth(img.data, spec))


def otsu_threshold(img: RasterImage) -> Tuple[int, BinaryImage]:
    """Threshold maximizing the between-class variance of the histogram

    Candidates t split pixels into <= t and > t. Variances are compared in
    exact integer arithmetic and the lowest maximizing t wins. A constant
    image has no valid split and yields its own value with an empty mask.
    """
    gray = _gray(img, 'otsu_threshold')
    counts = [int(c) for c in np.bincount(gray.ravel(), minlength=256)]
    total = sum(counts)
    total_sum = sum(i * c for i, c in enumerate(counts))

    best_t, best_num, best_den = None, 0, 1
    n0 = s0 = 0
    for t, count in enumerate(counts):
        n0 += count
        s0 += t * count
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        # between-class variance is num / (den * total**2)
        num = (s0 * total - total_sum * n0) ** 2
        den = n0 * n1
        if best_t is None or num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den

    if best_t is None:
        value = int(gray.flat[0])
        logger.debug(f"constant image, otsu threshold {value}")
        return value, BinaryImage(np.zeros(gray.shape, dtype=bool))
    return best_t, BinaryImage(gray > best_t)


def _region_sum(img: RasterImage, region: Union[Box, Sequence[Box]], op: str) -> Tuple[int, int]:
    gray = _gray(img, op)
    boxes = [region] if isinstance(region, Box) else list(region)
    sample = np.zeros(gray.shape, dtype=bool)
    for box in boxes:
        clipped = box.clip(img.width, img.height)
        if clipped is not None:
            sample[clipped.y:clipped.y2, clipped.x:clipped.x2] = True
    count = int(sample.sum())
    if count == 0:
        raise InvalidInput(f"{op}: background region is empty")
    return int(gray[sample].astype(np.int64).sum()), count


def region_mean(img: RasterImage, region: Union[Box, Sequence[Box]]) -> float:
    """Mean intensity over a box or the union of several boxes"""
    total, count = _region_sum(img, region, 'region_mean')
    return total / count


def mean_threshold(img: RasterImage, region: Union[Box, Sequence[Box]]) -> BinaryImage:
    """Mark pixels brighter than the mean of a background sample

    Args:
        img (RasterImage): 1-channel image
        region (Box | Sequence[Box]): Sample area; the union of several
            boxes is taken once per pixel. Parts outside the image are ignored.
    """
    total, count = _region_sum(img, region, 'mean_threshold')
    # pixel > total / count without rounding
    return BinaryImage(img.data.astype(np.int64) * count > total)


# neighbor offsets (dy, dx) along the quantized gradient direction
_DIRECTIONS = {0: (0, 1), 45: (1, 1), 90: (1, 0), 135: (1, -1)}


def _shifted(padded: np.ndarray, dy: int, dx: int, shape) -> np.ndarray:
    h, w = shape
    return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]


def _non_maximum_suppression(magnitude: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    sector = (np.floor((angle + 22.5) / 45.0).astype(int) % 4) * 45
    padded = np.pad(magnitude, 1)
    keep = np.zeros(magnitude.shape, dtype=bool)
    for direction, (dy, dx) in _DIRECTIONS.items():
        ahead = _shifted(padded, dy, dx, magnitude.shape)
        behind = _shifted(padded, -dy, -dx, magnitude.shape)
        # strict on one side so a plateau two pixels wide keeps one pixel
        local_max = (magnitude > behind) & (magnitude >= ahead)
        keep |= (sector == direction) & local_max
    return np.where(keep, magnitude, 0.0)


def canny_thresholds(gray: np.ndarray, k: float = CANNY_SIGMA) -> Tuple[float, float]:
    median = float(np.median(gray))
    return max(0.0, (1.0 - k) * median), min(255.0, (1.0 + k) * median)


def gradient_magnitude(gray: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    values = gray.astype(np.float64)
    gx = ndimage.sobel(values, axis=1, mode='reflect')
    gy = ndimage.sobel(values, axis=0, mode='reflect')
    return np.hypot(gx, gy), gx, gy


def canny_auto(img: RasterImage, k: float = CANNY_SIGMA) -> BinaryImage:
    """Canny edges with hysteresis thresholds taken from the median intensity

    Sobel gradients, non-maximum suppression over four directions, then
    hysteresis: pixels above (1 - k) * median survive when 8-connected
    through surviving pixels to one at or above (1 + k) * median.
    """
    gray = _gray(img, 'canny_auto')
    magnitude, gx, gy = gradient_magnitude(gray)
    thin = _non_maximum_suppression(magnitude, gx, gy)
    lower, upper = canny_thresholds(gray, k)

    candidates = thin > lower
    return keep_components(BinaryImage(candidates), candidates & (thin >= upper))


def keep_components(mask: BinaryImage, seeds: np.ndarray) -> BinaryImage:
    """The 8-connected components of `mask` holding at least one seed pixel,
    kept whole"""
    labels, count = ndimage.label(mask.bits, structure=EIGHT_CONNECTED)
    if count == 0:
        return mask
    anchored = np.unique(labels[seeds & mask.bits])
    anchored = anchored[anchored > 0]
    return BinaryImage(np.isin(labels, anchored))


def connected_components(img: BinaryImage) -> List[Component]:
    """8-connected components of the set pixels, numbered from 1 in raster
    order of their first pixel, with tight bounding boxes"""
    labels, count = ndimage.label(img.bits, structure=EIGHT_CONNECTED)
    if count == 0:
        return []
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    components = []
    for index, slices in enumerate(ndimage.find_objects(labels), start=1):
        rows, cols = slices
        box = Box.from_edges(cols.start, rows.start, cols.stop, rows.stop)
        components.append(Component(index, box, int(sizes[index])))
    return components
