"""Region proposals by graph-based over-segmentation followed by greedy
hierarchical grouping on color, texture, size and fill similarity."""
from __future__ import annotations

import heapq
import logging

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from typing import Dict, FrozenSet, List, Sequence, Set, Tuple, Union

import numpy as np

from scipy import ndimage
from skimage import segmentation

from glyphline.geometry import Box
from glyphline.imaging import RasterImage

logger = logging.getLogger(__name__)

COLOR_BINS = 25
TEXTURE_ORIENTATIONS = 8
TEXTURE_BINS = 10

SCALES = (350, 450, 500)
MIN_SIZES = (30, 60, 120)


@dataclass(frozen=True)
class SegmentationParams:
    scale: float
    sigma: float = 0.8
    min_size: int = 30
    min_area: int = 2000

    def __post_init__(self):
        if not self.scale > 0 or not self.sigma > 0:
            raise ValueError(f"scale and sigma must be positive: {self}")
        if self.min_size < 1 or self.min_area < 1:
            raise ValueError(f"min_size and min_area must be >= 1: {self}")

    @classmethod
    def from_dict(cls, d: Dict) -> SegmentationParams:
        return cls(**d)

    def to_dict(self) -> Dict:
        return {
            'scale': self.scale,
            'sigma': self.sigma,
            'min_size': self.min_size,
            'min_area': self.min_area,
        }


def default_grid() -> List[SegmentationParams]:
    return [SegmentationParams(scale=s, min_size=m) for s, m in product(SCALES, MIN_SIZES)]


@dataclass(frozen=True, eq=False)
class SegmentMap:
    labels: np.ndarray
    segment_count: int

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels.ravel(), minlength=self.segment_count)


@dataclass(frozen=True, eq=False)
class RegionNode:
    segments: FrozenSet[int]
    box: Box
    size: int
    color_hist: np.ndarray
    texture_hist: np.ndarray

    @classmethod
    def merge(cls, a: RegionNode, b: RegionNode) -> RegionNode:
        size = a.size + b.size
        return cls(
            segments=a.segments | b.segments,
            box=a.box.union(b.box),
            size=size,
            color_hist=(a.color_hist * a.size + b.color_hist * b.size) / size,
            texture_hist=(a.texture_hist * a.size + b.texture_hist * b.size) / size,
        )


def felzenszwalb(img: RasterImage, p: SegmentationParams) -> SegmentMap:
    """Graph-based segmentation with labels renumbered 0..n-1 in order of
    the original label values"""
    channel_axis = None if img.channels == 1 else -1
    raw = segmentation.felzenszwalb(
        img.data, scale=p.scale, sigma=p.sigma, min_size=p.min_size, channel_axis=channel_axis,
    )
    values, labels = np.unique(raw, return_inverse=True)
    labels = labels.reshape(raw.shape).astype(np.int64)
    return SegmentMap(labels=labels, segment_count=len(values))


def _channels(img: RasterImage) -> List[np.ndarray]:
    if img.channels == 1:
        return [img.data]
    return [img.data[:, :, c] for c in range(3)]


def _region_histograms(labels: np.ndarray, count: int, bins: np.ndarray, nbins: int) -> np.ndarray:
    flat = labels.ravel() * nbins + bins.ravel()
    return np.bincount(flat, minlength=count * nbins).reshape(count, nbins).astype(np.float64)


def _normalized(hist: np.ndarray) -> np.ndarray:
    totals = hist.sum(axis=1, keepdims=True)
    totals[totals == 0] = 1.0
    return hist / totals


def color_histograms(img: RasterImage, seg: SegmentMap) -> np.ndarray:
    parts = []
    for channel in _channels(img):
        bins = channel.astype(np.int64) * COLOR_BINS // 256
        parts.append(_region_histograms(seg.labels, seg.segment_count, bins, COLOR_BINS))
    return _normalized(np.hstack(parts))


def _oriented_responses(channel: np.ndarray) -> List[np.ndarray]:
    """Half-wave rectified Gaussian derivatives (sigma 1) at 8 orientations"""
    values = channel.astype(np.float64)
    gy = ndimage.gaussian_filter(values, sigma=1.0, order=(1, 0), mode='reflect')
    gx = ndimage.gaussian_filter(values, sigma=1.0, order=(0, 1), mode='reflect')
    responses = []
    for k in range(TEXTURE_ORIENTATIONS):
        theta = 2.0 * np.pi * k / TEXTURE_ORIENTATIONS
        responses.append(np.maximum(np.cos(theta) * gx + np.sin(theta) * gy, 0.0))
    return responses


def texture_histograms(img: RasterImage, seg: SegmentMap) -> np.ndarray:
    parts = []
    for channel in _channels(img):
        for response in _oriented_responses(channel):
            top = response.max()
            if top > 0:
                bins = np.minimum((response / top * TEXTURE_BINS).astype(np.int64), TEXTURE_BINS - 1)
            else:
                bins = np.zeros(response.shape, dtype=np.int64)
            parts.append(_region_histograms(seg.labels, seg.segment_count, bins, TEXTURE_BINS))
    return _normalized(np.hstack(parts))


def initial_regions(img: RasterImage, seg: SegmentMap) -> List[RegionNode]:
    sizes = seg.sizes()
    color = color_histograms(img, seg)
    texture = texture_histograms(img, seg)
    nodes = []
    for index, slices in enumerate(ndimage.find_objects(seg.labels + 1)):
        rows, cols = slices
        nodes.append(RegionNode(
            segments=frozenset([index]),
            box=Box.from_edges(cols.start, rows.start, cols.stop, rows.stop),
            size=int(sizes[index]),
            color_hist=color[index],
            texture_hist=texture[index],
        ))
    return nodes


def adjacent_pairs(seg: SegmentMap) -> List[Tuple[int, int]]:
    """Segment pairs sharing a horizontal or vertical pixel edge"""
    labels = seg.labels
    pairs = []
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        differ = a != b
        pairs.append(np.stack([np.minimum(a[differ], b[differ]), np.maximum(a[differ], b[differ])], axis=1))
    stacked = np.vstack(pairs)
    if len(stacked) == 0:
        return []
    return [(int(i), int(j)) for i, j in np.unique(stacked, axis=0)]


def similarity(a: RegionNode, b: RegionNode, image_area: int) -> float:
    s_color = float(np.minimum(a.color_hist, b.color_hist).sum())
    s_texture = float(np.minimum(a.texture_hist, b.texture_hist).sum())
    s_size = 1.0 - (a.size + b.size) / image_area
    s_fill = 1.0 - (a.box.union(b.box).area - a.size - b.size) / image_area
    return s_color + s_texture + s_size + s_fill


def hierarchical_grouping(img: RasterImage, p: SegmentationParams) -> Tuple[int, List[Box]]:
    """Merge the most similar adjacent pair until one region remains

    Ties go to the lower (min_id, max_id) pair; merged regions take the next
    free id.

    Returns:
        Tuple[int, List[Box]]: Initial region count and the box of every
            region ever formed, initial regions first then in merge order.
    """
    seg = felzenszwalb(img, p)
    nodes: Dict[int, RegionNode] = dict(enumerate(initial_regions(img, seg)))
    neighbors: Dict[int, Set[int]] = {i: set() for i in nodes}
    image_area = seg.width * seg.height

    heap = []
    for i, j in adjacent_pairs(seg):
        neighbors[i].add(j)
        neighbors[j].add(i)
        heap.append((-similarity(nodes[i], nodes[j], image_area), i, j))
    heapq.heapify(heap)

    initial_count = len(nodes)
    boxes = [nodes[i].box for i in range(initial_count)]
    next_id = initial_count
    while heap:
        _, i, j = heapq.heappop(heap)
        if i not in nodes or j not in nodes:
            continue
        merged = RegionNode.merge(nodes.pop(i), nodes.pop(j))
        k = next_id
        next_id += 1
        nodes[k] = merged
        boxes.append(merged.box)

        around = (neighbors.pop(i) | neighbors.pop(j)) - {i, j}
        neighbors[k] = around
        for n in sorted(around):
            neighbors[n] -= {i, j}
            neighbors[n].add(k)
            heapq.heappush(heap, (-similarity(nodes[n], merged, image_area), n, k))

    logger.debug(f"{p}: {initial_count} segments, {len(boxes)} regions")
    return initial_count, boxes


def _grid_cell(args) -> List[Box]:
    img, p = args
    _, boxes = hierarchical_grouping(img, p)
    return boxes


def selective_search(
    img: RasterImage,
    grid: Sequence[SegmentationParams] = None,
    workers: int = 1,
    with_params: bool = False,
) -> Union[List[Box], List[Tuple[Box, SegmentationParams]]]:
    """Proposals from every grid cell, filtered by area and de-duplicated

    Grid cells run in a process pool when workers > 1; results are combined
    in grid order either way.

    Args:
        img (RasterImage): Gray or RGB image
        grid (Sequence[SegmentationParams], optional): Defaults to default_grid().
        workers (int, optional): Process count. Defaults to 1.
        with_params (bool, optional): Pair every box with the first grid cell
            that produced it. Defaults to False.

    Returns:
        Boxes sorted by (y, x, w, h).
    """
    grid = list(grid) if grid is not None else default_grid()
    if workers > 1 and len(grid) > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            per_cell = list(executor.map(_grid_cell, [(img, p) for p in grid]))
    else:
        per_cell = [_grid_cell((img, p)) for p in grid]

    found: Dict[Box, SegmentationParams] = {}
    for p, boxes in zip(grid, per_cell):
        for box in boxes:
            if box.area >= p.min_area and box not in found:
                found[box] = p
    ordered = sorted(found, key=lambda b: b.sort_key)
    logger.debug(f"{len(ordered)} proposals from {len(grid)} grid cells")
    if with_params:
        return [(box, found[box]) for box in ordered]
    return ordered
