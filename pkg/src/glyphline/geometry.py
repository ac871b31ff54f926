"""Axis-aligned box algebra, the four-level region grouping and the two
text-region formulation levels.

Every operation is a pure function over immutable values. Operations that
replace boxes iterate to a fixpoint and work on input sorted by
(y, x, w, h), so the result as a set does not depend on input order.
"""
from __future__ import annotations

import logging
import math

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as graph_components

logger = logging.getLogger(__name__)


def round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class Box:
    """Integer rectangle; (x, y) is the top-left pixel, the right and bottom
    edges x2 = x + w and y2 = y + h are exclusive"""
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        for name in ('x', 'y', 'w', 'h'):
            object.__setattr__(self, name, int(getattr(self, name)))
        if self.w < 1 or self.h < 1:
            raise ValueError(f"Box needs w >= 1 and h >= 1, got {self.w}x{self.h}")

    @classmethod
    def from_edges(cls, x1: int, y1: int, x2: int, y2: int) -> Box:
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_dict(cls, d: Dict) -> Box:
        return cls(d['x'], d['y'], d['w'], d['h'])

    def to_dict(self) -> Dict:
        return {'x': self.x, 'y': self.y, 'w': self.w, 'h': self.h}

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def center(self) -> Tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    @property
    def sort_key(self) -> Tuple[int, int, int, int]:
        return (self.y, self.x, self.w, self.h)

    def intersection(self, other: Box) -> Optional[Box]:
        x1, y1 = max(self.x, other.x), max(self.y, other.y)
        x2, y2 = min(self.x2, other.x2), min(self.y2, other.y2)
        if x2 <= x1 or y2 <= y1:
            return None
        return Box.from_edges(x1, y1, x2, y2)

    def union(self, other: Box) -> Box:
        return Box.from_edges(
            min(self.x, other.x), min(self.y, other.y),
            max(self.x2, other.x2), max(self.y2, other.y2),
        )

    def contains(self, other: Box) -> bool:
        return (self.x <= other.x and self.y <= other.y
                and self.x2 >= other.x2 and self.y2 >= other.y2)

    def translate(self, dx: int, dy: int) -> Box:
        return Box(self.x + dx, self.y + dy, self.w, self.h)

    def clip(self, width: int, height: int) -> Optional[Box]:
        """Intersection with the frame (0, 0, width, height), None when empty"""
        return self.intersection(Box(0, 0, width, height))

    def scaled(self, fx: float, fy: float) -> Box:
        """Scale the edges and round each one half up; the result is at least 1x1"""
        x1, y1 = round_half_up(self.x * fx), round_half_up(self.y * fy)
        x2, y2 = round_half_up(self.x2 * fx), round_half_up(self.y2 * fy)
        return Box.from_edges(x1, y1, max(x2, x1 + 1), max(y2, y1 + 1))

    def __repr__(self):
        return f"Box({self.x}, {self.y}, {self.w}, {self.h})"


def union_all(boxes: Iterable[Box]) -> Box:
    boxes = list(boxes)
    return Box.from_edges(
        min(b.x for b in boxes), min(b.y for b in boxes),
        max(b.x2 for b in boxes), max(b.y2 for b in boxes),
    )


class RegionLabel(Enum):
    TEXT = 'text'
    NO_TEXT = 'no-text'
    BOTH = 'both'


@dataclass(frozen=True)
class LabeledRegion:
    box: Box
    label: RegionLabel
    confidence: float = 1.0

    @classmethod
    def from_dict(cls, d: Dict) -> LabeledRegion:
        return cls(Box.from_dict(d), RegionLabel(d['label']), float(d['confidence']))

    def to_dict(self) -> Dict:
        return dict(self.box.to_dict(), label=self.label.value, confidence=round(float(self.confidence), 6))

    @property
    def sort_key(self):
        return self.box.sort_key + (self.label.value,)


@dataclass(frozen=True)
class GroupingParams:
    concentric_frac: float = 0.14
    containment_frac: float = 1.00
    superbox_overlap_frac: float = 0.40
    extension_offset_frac: float = 0.06

    def __post_init__(self):
        _check_fractions(self)

    @classmethod
    def from_dict(cls, d: Dict) -> GroupingParams:
        return cls(**d)

    def to_dict(self) -> Dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class TextBoxParams:
    width_merge_frac: float = 0.25
    height_merge_frac: float = 0.20
    trim_major_frac: float = 0.70
    trim_minor_frac: float = 0.20

    def __post_init__(self):
        _check_fractions(self)

    @classmethod
    def from_dict(cls, d: Dict) -> TextBoxParams:
        return cls(**d)

    def to_dict(self) -> Dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def _check_fractions(params):
    for name in params.__dataclass_fields__:
        value = getattr(params, name)
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{type(params).__name__}.{name} must be in [0, 1], got {value}")


def _sorted(boxes: Iterable[Box]) -> List[Box]:
    return sorted(boxes, key=lambda b: b.sort_key)


def _as_arrays(boxes: Sequence[Box]):
    arr = np.array([(b.x, b.y, b.x2, b.y2) for b in boxes], dtype=np.int64).reshape(-1, 4)
    return arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]


def _pairwise_overlap(boxes: Sequence[Box]) -> np.ndarray:
    x1, y1, x2, y2 = _as_arrays(boxes)
    iw = np.minimum(x2[:, None], x2[None, :]) - np.maximum(x1[:, None], x1[None, :])
    ih = np.minimum(y2[:, None], y2[None, :]) - np.maximum(y1[:, None], y1[None, :])
    return np.clip(iw, 0, None) * np.clip(ih, 0, None)


def _pair_mean_dimension(boxes: Sequence[Box]) -> np.ndarray:
    """Arithmetic mean of the four dimensions of every pair"""
    dims = np.array([b.w + b.h for b in boxes], dtype=np.float64)
    return (dims[:, None] + dims[None, :]) / 4.0


def _clusters(adjacency: np.ndarray) -> np.ndarray:
    n = adjacency.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    _, labels = graph_components(csr_matrix(adjacency), directed=False)
    return labels


def _replace_clusters(boxes: List[Box], adjacency: np.ndarray, combine) -> List[Box]:
    labels = _clusters(adjacency)
    out = []
    for label in np.unique(labels):
        members = [boxes[i] for i in np.flatnonzero(labels == label)]
        out.append(members[0] if len(members) == 1 else combine(members))
    return _sorted(out)


def overlap_area(a: Box, b: Box) -> int:
    """Area of the intersection of two boxes, 0 when they are disjoint"""
    inter = a.intersection(b)
    return 0 if inter is None else inter.area


def iou(a: Box, b: Box) -> float:
    inter = overlap_area(a, b)
    return inter / (a.area + b.area - inter)


def _mean_box(members: List[Box]) -> Box:
    cx = sum(b.center[0] for b in members) / len(members)
    cy = sum(b.center[1] for b in members) / len(members)
    w = max(1, round_half_up(sum(b.w for b in members) / len(members)))
    h = max(1, round_half_up(sum(b.h for b in members) / len(members)))
    return Box(round_half_up(cx - w / 2), round_half_up(cy - h / 2), w, h)


def merge_concentric(boxes: Sequence[Box], p: GroupingParams = GroupingParams()) -> List[Box]:
    """Replace proposals that approximate each other by their mean box

    Two boxes match when the x and y distances of their centers and the
    differences of their widths and heights are all within
    `concentric_frac` of the mean of the pair's four dimensions. Matches are
    closed transitively and each cluster becomes one box with the mean
    center and mean dimensions; repeated until no pair matches.
    """
    current = _sorted(boxes)
    while len(current) > 1:
        x1, y1, x2, y2 = _as_arrays(current)
        cx, cy = (x1 + x2) / 2.0, (y1 + y2) / 2.0
        w, h = (x2 - x1).astype(np.float64), (y2 - y1).astype(np.float64)
        thr = p.concentric_frac * _pair_mean_dimension(current)
        adjacency = (
            (np.abs(cx[:, None] - cx[None, :]) <= thr)
            & (np.abs(cy[:, None] - cy[None, :]) <= thr)
            & (np.abs(w[:, None] - w[None, :]) <= thr)
            & (np.abs(h[:, None] - h[None, :]) <= thr)
        )
        np.fill_diagonal(adjacency, False)
        if not adjacency.any():
            break
        current = _replace_clusters(current, adjacency, _mean_box)
    return current


def remove_contained(boxes: Sequence[Box], containment_frac: float = 1.0) -> List[Box]:
    """Drop every box lying inside another box of the list

    A box counts as inside a box at least as large when the intersection
    covers `containment_frac` of its own area (1.0: fully encompassed).
    Exact duplicates collapse to their first occurrence. The result keeps
    input order; with the default fraction it contains no pair in a
    containment relation.
    """
    unique = list(dict.fromkeys(boxes))
    if len(unique) < 2:
        return unique
    inter = _pairwise_overlap(unique)
    areas = np.array([b.area for b in unique], dtype=np.int64)
    index = np.arange(len(unique))
    larger = (areas[None, :] > areas[:, None]) | (
        (areas[None, :] == areas[:, None]) & (index[None, :] < index[:, None])
    )
    # inside[i, j]: box i inside box j
    inside = (inter >= containment_frac * areas[:, None]) & larger
    np.fill_diagonal(inside, False)
    return [b for b, dropped in zip(unique, inside.any(axis=1)) if not dropped]


def draw_super_box(boxes: Sequence[Box], overlap_frac: float = 0.40) -> List[Box]:
    """Replace boxes overlapping by at least `overlap_frac` of each one's own
    area with their minimal bounding box, until no such pair remains"""
    if not 0.0 <= overlap_frac <= 1.0:
        raise ValueError(f"overlap_frac must be in [0, 1], got {overlap_frac}")
    current = _sorted(boxes)
    while len(current) > 1:
        inter = _pairwise_overlap(current)
        areas = np.array([b.area for b in current], dtype=np.float64)
        adjacency = (
            (inter > 0)
            & (inter >= overlap_frac * areas[:, None])
            & (inter >= overlap_frac * areas[None, :])
        )
        np.fill_diagonal(adjacency, False)
        if not adjacency.any():
            break
        current = _replace_clusters(current, adjacency, union_all)
    return current


def _axis_continuous(boxes: Sequence[Box], offset_frac: float) -> np.ndarray:
    x1, y1, x2, y2 = _as_arrays(boxes)
    # gaps are negative when the extents overlap
    gap_x = np.maximum(x1[:, None], x1[None, :]) - np.minimum(x2[:, None], x2[None, :])
    gap_y = np.maximum(y1[:, None], y1[None, :]) - np.minimum(y2[:, None], y2[None, :])
    thr = offset_frac * _pair_mean_dimension(boxes)
    horizontal = (gap_x <= thr) & (gap_y < 0)
    vertical = (gap_y <= thr) & (gap_x < 0)
    adjacency = horizontal | vertical
    np.fill_diagonal(adjacency, False)
    return adjacency


def draw_extended_super_box(boxes: Sequence[Box], offset_frac: float = 0.06) -> List[Box]:
    """Join boxes that continue each other along the horizontal or vertical
    axis: the gap along one axis is at most `offset_frac` of the pair's mean
    dimension while their extents overlap along the other. With
    `offset_frac=0` only touching or overlapping boxes join."""
    current = _sorted(boxes)
    while len(current) > 1:
        adjacency = _axis_continuous(current, offset_frac)
        if not adjacency.any():
            break
        current = _replace_clusters(current, adjacency, union_all)
    return current


_TEXT_PAIRS = {
    (RegionLabel.TEXT, RegionLabel.TEXT),
    (RegionLabel.TEXT, RegionLabel.BOTH),
    (RegionLabel.BOTH, RegionLabel.TEXT),
}


def _text_mergeable(a: LabeledRegion, b: LabeledRegion, p: TextBoxParams) -> bool:
    if (a.label, b.label) not in _TEXT_PAIRS:
        return False
    ba, bb = a.box, b.box
    if abs(ba.h - bb.h) > p.height_merge_frac * (ba.h + bb.h) / 2:
        return False
    if abs(ba.w - bb.w) > p.width_merge_frac * (ba.w + bb.w) / 2:
        return False
    rows_overlap = min(ba.y2, bb.y2) > max(ba.y, bb.y)
    cols_overlap = min(ba.x2, bb.x2) > max(ba.x, bb.x)
    return rows_overlap or cols_overlap


def draw_text_box(regions: Sequence[LabeledRegion], p: TextBoxParams = TextBoxParams()) -> List[LabeledRegion]:
    """Merge aligned Text/Text and Text/Both pairs of similar size into Text
    boxes, overlapping or not, until no pair qualifies

    Pairs are tried in (y, x, w, h, label) order and the first qualifying
    pair is merged, so the outcome is deterministic.
    """
    current = sorted(regions, key=lambda r: r.sort_key)
    merged = True
    while merged:
        merged = False
        for i in range(len(current)):
            for j in range(i + 1, len(current)):
                a, b = current[i], current[j]
                if _text_mergeable(a, b, p):
                    joined = LabeledRegion(
                        a.box.union(b.box),
                        RegionLabel.TEXT,
                        min(a.confidence, b.confidence),
                    )
                    rest = [r for k, r in enumerate(current) if k not in (i, j)]
                    current = sorted(rest + [joined], key=lambda r: r.sort_key)
                    merged = True
                    break
            if merged:
                break
    return current


def _trim(text: Box, cut: Box, axis: str) -> Optional[Box]:
    """Cut the slab covered by `cut` off `text` along `axis`, keeping the
    larger remaining side when `cut` sits strictly inside"""
    if axis == 'x':
        left = cut.x - text.x
        right = text.x2 - cut.x2
        if cut.x <= text.x:
            x1, x2 = cut.x2, text.x2
        elif cut.x2 >= text.x2:
            x1, x2 = text.x, cut.x
        elif left >= right:
            x1, x2 = text.x, cut.x
        else:
            x1, x2 = cut.x2, text.x2
        if x2 - x1 < 1:
            return None
        return Box.from_edges(x1, text.y, x2, text.y2)
    top = cut.y - text.y
    bottom = text.y2 - cut.y2
    if cut.y <= text.y:
        y1, y2 = cut.y2, text.y2
    elif cut.y2 >= text.y2:
        y1, y2 = text.y, cut.y
    elif top >= bottom:
        y1, y2 = text.y, cut.y
    else:
        y1, y2 = cut.y2, text.y2
    if y2 - y1 < 1:
        return None
    return Box.from_edges(text.x, y1, text.x2, y2)


def trim_text_box(
    regions: Sequence[LabeledRegion],
    p: TextBoxParams = TextBoxParams(),
    warnings: Optional[List[str]] = None,
) -> List[LabeledRegion]:
    """Clip NoText areas off Text regions

    A Text region overlapped by a NoText region over at least
    `trim_major_frac` of its height and `trim_minor_frac` of its width loses
    the overlapped columns; the transposed condition removes rows. Fractions
    are taken of the Text region's own extent. A Text region trimmed to
    nothing is dropped with a warning.
    """
    ordered = sorted(regions, key=lambda r: r.sort_key)
    blockers = [r.box for r in ordered if r.label is RegionLabel.NO_TEXT]
    out = []
    for region in ordered:
        if region.label is not RegionLabel.TEXT:
            out.append(region)
            continue
        box = region.box
        for cut in blockers:
            inter = box.intersection(cut)
            if inter is None:
                continue
            frac_w, frac_h = inter.w / box.w, inter.h / box.h
            cut_x = frac_h >= p.trim_major_frac and frac_w >= p.trim_minor_frac
            cut_y = frac_w >= p.trim_major_frac and frac_h >= p.trim_minor_frac
            if cut_x and cut_y:
                # trim along the axis with the smaller overlap
                axis = 'x' if frac_w <= frac_h else 'y'
            elif cut_x:
                axis = 'x'
            elif cut_y:
                axis = 'y'
            else:
                continue
            box = _trim(box, cut, axis)
            if box is None:
                break
        if box is None:
            msg = f"text region {region.box} annihilated by trimming"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        out.append(replace(region, box=box))
    return sorted(out, key=lambda r: r.sort_key)
