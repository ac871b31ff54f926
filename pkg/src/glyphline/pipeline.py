"""End-to-end seal reading: extract the seal, propose and group regions,
classify them, formulate text boxes, segment and identify glyphs."""
from __future__ import annotations

import json
import logging
import time

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from PIL import ImageDraw

from glyphline.classifiers import (
    ClassifierHandle, GlyphLabel, classify_glyph, classify_region,
)
from glyphline.errors import InvalidInput
from glyphline.geometry import (
    Box, GroupingParams, LabeledRegion, RegionLabel, TextBoxParams, draw_extended_super_box,
    draw_super_box, draw_text_box, merge_concentric, remove_contained, round_half_up, trim_text_box,
)
from glyphline.imaging import (
    BinaryImage, GaussianSpec, RasterImage, canny_auto, connected_components, crop,
    gaussian_blur, keep_components, mean_threshold, otsu_threshold, region_mean, resize, smooth, to_grayscale,
    to_pil,
)
from glyphline.logging import get_task_logger
from glyphline.selective_search import SegmentationParams, default_grid, selective_search
from glyphline.transfer import get_s3_session
from glyphline.utils import canonical_json, validate

logger = logging.getLogger(__name__)

REPORT_VERSION = 1
STAGES = ('seal', 'proposals', 'regions', 'text', 'symbols', 'glyphs')
SCALE_MODES = ('512', '256', 'none')
READING_ORDERS = ('lr', 'rl', 'auto')


@dataclass(frozen=True)
class StageConfig:
    seal_blur_sigma: float = 3.0
    seal_second_blur_kernel: int = 7
    seal_frame_frac: float = 0.05
    seal_threshold_margin: float = 0.5
    segmentation_blur_sigma: float = 3.5
    grouping: GroupingParams = field(default_factory=GroupingParams)
    textbox: TextBoxParams = field(default_factory=TextBoxParams)
    segmentation_superbox_overlap: float = 0.15
    scale_mode: str = '512'
    reading_order: str = 'lr'
    min_region_crop: int = 4
    record_timings: bool = False
    grid: Tuple[SegmentationParams, ...] = field(default_factory=lambda: tuple(default_grid()))
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'scale_mode', str(self.scale_mode))
        object.__setattr__(self, 'grid', tuple(self.grid))
        if min(self.seal_blur_sigma, self.segmentation_blur_sigma) <= 0:
            raise InvalidInput("blur sigmas must be positive")
        if self.seal_second_blur_kernel < 1 or self.seal_second_blur_kernel % 2 == 0:
            raise InvalidInput(f"seal_second_blur_kernel must be odd, got {self.seal_second_blur_kernel}")
        if not 0 < self.seal_frame_frac < 0.5:
            raise InvalidInput(f"seal_frame_frac must be in (0, 0.5), got {self.seal_frame_frac}")
        if not 0 <= self.seal_threshold_margin < 1:
            raise InvalidInput(f"seal_threshold_margin must be in [0, 1), got {self.seal_threshold_margin}")
        if not 0 <= self.segmentation_superbox_overlap <= 1:
            raise InvalidInput("segmentation_superbox_overlap must be in [0, 1]")
        if self.scale_mode not in SCALE_MODES:
            raise InvalidInput(f"scale_mode must be one of {SCALE_MODES}, got {self.scale_mode}")
        if self.reading_order not in READING_ORDERS:
            raise InvalidInput(f"reading_order must be one of {READING_ORDERS}, got {self.reading_order}")
        if self.min_region_crop < 1 or self.workers < 1:
            raise InvalidInput("min_region_crop and workers must be >= 1")
        if not self.grid:
            raise InvalidInput("the selective search grid is empty")

    @classmethod
    def from_dict(cls, d: Dict) -> StageConfig:
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInput(f"unknown stage settings: {sorted(unknown)}")
        try:
            if 'grouping' in d:
                d['grouping'] = GroupingParams.from_dict(d['grouping'])
            if 'textbox' in d:
                d['textbox'] = TextBoxParams.from_dict(d['textbox'])
            if 'grid' in d:
                d['grid'] = tuple(SegmentationParams.from_dict(p) for p in d['grid'])
            return cls(**d)
        except (TypeError, ValueError) as err:
            raise InvalidInput(f"invalid stage settings: {err}") from err

    def to_dict(self) -> Dict:
        return {
            'seal_blur_sigma': self.seal_blur_sigma,
            'seal_second_blur_kernel': self.seal_second_blur_kernel,
            'seal_frame_frac': self.seal_frame_frac,
            'seal_threshold_margin': self.seal_threshold_margin,
            'segmentation_blur_sigma': self.segmentation_blur_sigma,
            'grouping': self.grouping.to_dict(),
            'textbox': self.textbox.to_dict(),
            'segmentation_superbox_overlap': self.segmentation_superbox_overlap,
            'scale_mode': self.scale_mode,
            'reading_order': self.reading_order,
            'min_region_crop': self.min_region_crop,
            'record_timings': self.record_timings,
            'grid': [p.to_dict() for p in self.grid],
            'workers': self.workers,
        }


def frame_strips(width: int, height: int, frac: float) -> List[Box]:
    """The outer `frac` border of an image as four strips"""
    fw = min(width, max(1, round_half_up(frac * width)))
    fh = min(height, max(1, round_half_up(frac * height)))
    return [
        Box(0, 0, width, fh),
        Box(0, height - fh, width, fh),
        Box(0, 0, fw, height),
        Box(width - fw, 0, fw, height),
    ]


def mask_bbox(bits: np.ndarray) -> Optional[Box]:
    """Tight box of the set pixels, None for an empty mask"""
    rows = np.flatnonzero(bits.any(axis=1))
    cols = np.flatnonzero(bits.any(axis=0))
    if len(rows) == 0:
        return None
    return Box.from_edges(cols[0], rows[0], cols[-1] + 1, rows[-1] + 1)


def seal_mask(blurred: RasterImage, frame: Sequence[Box], margin: float) -> BinaryImage:
    """Pixels brighter than the frame mean, with the level then moved
    `margin` of the way toward the mean of those pixels

    On a flat background the blur halo is only just brighter than the
    frame; the raised level puts the mask edge back on the seal edge.
    """
    coarse = mean_threshold(blurred, frame)
    if margin == 0 or not coarse.bits.any():
        return coarse
    background = region_mean(blurred, frame)
    values = blurred.data.astype(np.float64)
    level = background + margin * (values[coarse.bits].mean() - background)
    return BinaryImage(values > level)


def extract_seal(img: RasterImage, cfg: StageConfig = StageConfig()) -> Tuple[Box, RasterImage]:
    """Locate the seal on its background

    The blurred gray image is thresholded against the outer frame (see
    `seal_mask`); the blurred mask's edges bound the seal. An image without
    edges is all seal.
    """
    gray = to_grayscale(img)
    blurred = gaussian_blur(gray, GaussianSpec(cfg.seal_blur_sigma))
    frame = frame_strips(img.width, img.height, cfg.seal_frame_frac)
    mask = seal_mask(blurred, frame, cfg.seal_threshold_margin)
    softened = gaussian_blur(mask.to_raster(), GaussianSpec.from_kernel_size(cfg.seal_second_blur_kernel))
    edges = canny_auto(softened)
    box = mask_bbox(edges.bits)
    if box is None:
        logger.debug("no seal edges, using the whole image")
        return img.frame, img
    return box, crop(img, box)


def scale_factor(width: int, height: int, scale_mode: str) -> float:
    if scale_mode == 'none':
        return 1.0
    return int(scale_mode) / max(width, height)


def propose_regions(seal: RasterImage, cfg: StageConfig = StageConfig()) -> List[Box]:
    """Selective search on the scaled seal and the four-level grouping,
    returned in seal coordinates sorted by (y, x, w, h)"""
    factor = scale_factor(seal.width, seal.height, cfg.scale_mode)
    width = max(1, round_half_up(seal.width * factor))
    height = max(1, round_half_up(seal.height * factor))
    scaled = resize(seal, width, height)

    boxes = selective_search(scaled, cfg.grid, workers=cfg.workers)
    raw = len(boxes)
    p = cfg.grouping
    boxes = merge_concentric(boxes, p)
    boxes = remove_contained(boxes, p.containment_frac)
    boxes = draw_super_box(boxes, p.superbox_overlap_frac)
    boxes = draw_extended_super_box(boxes, p.extension_offset_frac)

    fx, fy = seal.width / width, seal.height / height
    mapped = []
    for box in boxes:
        back = box.scaled(fx, fy).clip(seal.width, seal.height)
        if back is not None:
            mapped.append(back)
    mapped = sorted(set(mapped), key=lambda b: b.sort_key)
    logger.debug(f"{raw} raw proposals grouped into {len(mapped)}")
    return mapped


def classify_proposals(
    seal: RasterImage,
    proposals: Sequence[Box],
    h: ClassifierHandle,
    cfg: StageConfig = StageConfig(),
    warnings: List[str] = None,
) -> List[LabeledRegion]:
    regions = []
    for box in proposals:
        label, confidence = classify_region(h, crop(seal, box), warnings=warnings, min_side=cfg.min_region_crop)
        regions.append(LabeledRegion(box, label, confidence))
    return regions


def formulate_text_boxes(
    regions: Sequence[LabeledRegion], cfg: StageConfig = StageConfig(), warnings: List[str] = None,
) -> List[Box]:
    """Merge and trim labeled regions, keep the Text ones"""
    merged = draw_text_box(regions, cfg.textbox)
    trimmed = trim_text_box(merged, cfg.textbox, warnings=warnings)
    boxes = [r.box for r in trimmed if r.label is RegionLabel.TEXT]
    boxes = draw_super_box(boxes, cfg.grouping.superbox_overlap_frac)
    return sorted(boxes, key=lambda b: b.sort_key)


def extract_text_regions(
    seal: RasterImage,
    proposals: Sequence[Box],
    h: ClassifierHandle,
    cfg: StageConfig = StageConfig(),
    warnings: List[str] = None,
) -> List[Box]:
    return formulate_text_boxes(classify_proposals(seal, proposals, h, cfg, warnings), cfg, warnings)


def reading_order(boxes: Sequence[Box], region_width: int, region_height: int, order: str = 'lr') -> List[Box]:
    """Order glyph boxes for reading

    Horizontal strips (width >= height) read left to right, or right to left
    for `rl`; vertical strips read top to bottom. `auto` groups boxes into
    lines by vertical overlap and reads lines top to bottom, each left to
    right.
    """
    boxes = list(boxes)
    if order == 'auto':
        lines: List[List[Box]] = []
        for box in sorted(boxes, key=lambda b: (b.y, b.x, b.w, b.h)):
            if lines:
                top = min(b.y for b in lines[-1])
                bottom = max(b.y2 for b in lines[-1])
                if box.y < bottom and box.y2 > top:
                    lines[-1].append(box)
                    continue
            lines.append([box])
        return [b for line in lines for b in sorted(line, key=lambda b: (b.x, b.y, b.w, b.h))]
    if region_width >= region_height:
        if order == 'rl':
            return sorted(boxes, key=lambda b: (-b.x2, b.y, b.w, b.h))
        return sorted(boxes, key=lambda b: (b.x, b.y, b.w, b.h))
    return sorted(boxes, key=lambda b: (b.y, b.x, b.w, b.h))


def foreground_mask(gray: RasterImage, sigma: float) -> BinaryImage:
    """Otsu foreground (minority side), keeping only the components that
    reach above the mean of a blurred copy of the mask

    Components are kept or dropped whole so glyph boxes stay tight.
    """
    _, mask = otsu_threshold(gray)
    bits = mask.bits
    if bits.sum() * 2 > bits.size:
        bits = ~bits
    if not bits.any():
        return BinaryImage(bits)
    blurred = smooth(bits.astype(np.float64), GaussianSpec(sigma))
    return keep_components(BinaryImage(bits), blurred - blurred.mean() > 0)


def segment_symbols(region: RasterImage, cfg: StageConfig = StageConfig()) -> List[Box]:
    """Glyph boxes of a text region, in region coordinates and reading order"""
    gray = to_grayscale(region)
    fg = foreground_mask(gray, cfg.segmentation_blur_sigma)
    boxes = [c.box for c in connected_components(fg)]
    if not boxes:
        return []
    boxes = remove_contained(boxes)
    boxes = draw_super_box(boxes, cfg.segmentation_superbox_overlap)
    boxes = draw_extended_super_box(boxes, 0.0)
    return reading_order(boxes, region.width, region.height, cfg.reading_order)


class PipelineReport(dict):
    """Result of one pipeline run, a JSON-ready dict

    Boxes are in input-image coordinates. Stage failures land in `errors`
    rather than raising.
    """

    def __init__(self, *args, record_timings: bool = False, **kwargs):
        super().__init__(*args, **kwargs)
        self.setdefault('version', REPORT_VERSION)
        self.setdefault('id', '')
        self.setdefault('stage', None)
        self.setdefault('seal', None)
        for key in ('proposals', 'regions', 'text_boxes', 'glyphs', 'errors', 'warnings'):
            self.setdefault(key, [])
        self.setdefault('timings', {})
        self.record_timings = record_timings
        self.logger = get_task_logger(__name__, report=self)

    @classmethod
    def from_file(cls, path: str) -> PipelineReport:
        if path.startswith('s3://'):
            doc = get_s3_session(s3url=path).read_json(path)
        else:
            with open(path) as f:
                doc = json.load(f)
        return cls(doc, record_timings='timings' in doc)

    @property
    def seal_box(self) -> Optional[Box]:
        return Box.from_dict(self['seal']) if self['seal'] else None

    @property
    def text_boxes(self) -> List[Box]:
        return [Box.from_dict(b) for b in self['text_boxes']]

    @property
    def glyph_boxes(self) -> List[Box]:
        return [Box.from_dict(g) for g in self['glyphs']]

    @property
    def glyph_labels(self) -> List[Tuple[Optional[str], Optional[float]]]:
        return [(g.get('label'), g.get('confidence')) for g in self['glyphs']]

    def add_error(self, stage: str, err: Exception):
        self.logger.error(f"stage {stage} failed: {err}", exc_info=True)
        self['errors'].append({'stage': stage, 'error': type(err).__name__, 'message': str(err)})

    def to_dict(self) -> Dict:
        d = {k: v for k, v in self.items()}
        if not self.record_timings:
            d.pop('timings', None)
        return d

    def to_json(self) -> bytes:
        return canonical_json(self.to_dict())

    def validate(self) -> List[str]:
        """Schema errors plus containment violations: glyphs inside their
        text box, text boxes inside the seal, the seal inside the image"""
        problems = validate(self.to_dict(), 'report')
        if problems:
            return problems
        image = self.get('image')
        seal = self.seal_box
        if image and seal and not Box(0, 0, image['width'], image['height']).contains(seal):
            problems.append(f"seal {seal} outside the {image['width']}x{image['height']} image")
        texts = self.text_boxes
        for box in texts:
            if seal and not seal.contains(box):
                problems.append(f"text box {box} outside seal {seal}")
        for i, glyph in enumerate(self['glyphs']):
            box = Box.from_dict(glyph)
            index = glyph.get('text_box')
            if index is None or not 0 <= index < len(texts) or not texts[index].contains(box):
                problems.append(f"glyph {i} {box} outside its text box")
        return problems


def _stage(report: PipelineReport, name: str, fn: Callable):
    start = time.perf_counter()
    try:
        return fn()
    except Exception as err:
        report.add_error(name, err)
        return None
    finally:
        report['timings'][name] = round(time.perf_counter() - start, 6)


def run_pipeline(
    img: RasterImage,
    region_h: Optional[ClassifierHandle],
    glyph_h: Optional[ClassifierHandle],
    cfg: StageConfig = StageConfig(),
    stop_after: str = 'glyphs',
    image_id: str = '',
) -> PipelineReport:
    """Run the stages up to `stop_after`; later stages work with whatever
    earlier ones produced"""
    if stop_after not in STAGES:
        raise InvalidInput(f"unknown stage {stop_after}, expected one of {STAGES}")
    last = STAGES.index(stop_after)
    report = PipelineReport(
        id=image_id, image={'width': img.width, 'height': img.height}, record_timings=cfg.record_timings,
    )
    log = report.logger

    def done(stage: str) -> bool:
        report['stage'] = stage
        log.info(f"finished {stage}")
        return STAGES.index(stage) >= last

    result = _stage(report, 'seal', lambda: extract_seal(img, cfg))
    seal_box, seal = result if result is not None else (img.frame, img)
    report['seal'] = seal_box.to_dict()
    if done('seal'):
        return report

    proposals = _stage(report, 'proposals', lambda: propose_regions(seal, cfg)) or []
    report['proposals'] = [b.translate(seal_box.x, seal_box.y).to_dict() for b in proposals]
    if done('proposals'):
        return report

    def regions_stage():
        if region_h is None:
            raise InvalidInput("no region classifier given")
        return classify_proposals(seal, proposals, region_h, cfg, warnings=report['warnings'])

    regions = _stage(report, 'regions', regions_stage) or []
    report['regions'] = [
        LabeledRegion(r.box.translate(seal_box.x, seal_box.y), r.label, r.confidence).to_dict() for r in regions
    ]
    if done('regions'):
        return report

    texts = _stage(report, 'text', lambda: formulate_text_boxes(regions, cfg, warnings=report['warnings'])) or []
    texts = [b.translate(seal_box.x, seal_box.y) for b in texts]
    report['text_boxes'] = [b.to_dict() for b in texts]
    if done('text'):
        return report

    def symbols_stage():
        glyphs = []
        for index, text in enumerate(texts):
            for box in segment_symbols(crop(img, text), cfg):
                glyphs.append((index, box.translate(text.x, text.y)))
        return glyphs

    glyphs = _stage(report, 'symbols', symbols_stage) or []
    report['glyphs'] = [dict(box.to_dict(), text_box=index, label=None, confidence=None) for index, box in glyphs]
    if done('symbols'):
        return report

    def glyphs_stage():
        if glyph_h is None:
            raise InvalidInput("no glyph classifier given")
        for entry, (_, box) in zip(report['glyphs'], glyphs):
            label, confidence = classify_glyph(glyph_h, crop(img, box))
            entry['label'] = label.value
            entry['confidence'] = round(float(confidence), 6)

    _stage(report, 'glyphs', glyphs_stage)
    done('glyphs')
    return report


LABEL_COLORS = {
    'seal': (255, 255, 255),
    'proposal': (128, 128, 128),
    RegionLabel.TEXT.value: (0, 200, 0),
    RegionLabel.NO_TEXT.value: (220, 0, 0),
    RegionLabel.BOTH.value: (230, 200, 0),
    'glyph': (0, 90, 255),
    GlyphLabel.JAR.value: (230, 0, 230),
}


def render_overlay(img: RasterImage, report: PipelineReport) -> RasterImage:
    """The input with the report's boxes drawn on it, colored by kind"""
    canvas = to_pil(img).convert('RGB')
    draw = ImageDraw.Draw(canvas)

    def outline(d: Dict, color, width: int = 1):
        box = Box.from_dict(d)
        draw.rectangle([box.x, box.y, box.x2 - 1, box.y2 - 1], outline=color, width=width)

    for d in report['proposals']:
        outline(d, LABEL_COLORS['proposal'])
    for d in report['regions']:
        outline(d, LABEL_COLORS[d['label']])
    for d in report['text_boxes']:
        outline(d, LABEL_COLORS[RegionLabel.TEXT.value], width=2)
    for d in report['glyphs']:
        outline(d, LABEL_COLORS.get(d.get('label'), LABEL_COLORS['glyph']))
    if report['seal']:
        outline(report['seal'], LABEL_COLORS['seal'], width=2)
    return RasterImage(np.asarray(canvas))
