"""Procedural seal images with ground truth

A seal is a bright, lightly textured rectangle on a dark plain ground with a
row (or column) of dark stroke glyphs and an optional icon block. Noise only
touches the seal surface.
"""
from __future__ import annotations

import io
import logging
import os

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from PIL import Image, ImageDraw

from glyphline.errors import InvalidInput
from glyphline.geometry import Box, union_all
from glyphline.imaging import RasterImage
from glyphline.utils import atomic_write, canonical_json

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

# unit-square polylines; shared points keep every glyph one connected stroke
GLYPHS: Dict[str, List[List[Point]]] = {
    'jar': [
        [(0.3, 0.05), (0.3, 0.35), (0.15, 0.6), (0.3, 0.95), (0.7, 0.95), (0.85, 0.6), (0.7, 0.35), (0.7, 0.05)],
        [(0.3, 0.35), (0.7, 0.35)],
    ],
    'fish': [
        [(0.05, 0.5), (0.45, 0.15), (0.8, 0.5), (0.45, 0.85), (0.05, 0.5)],
        [(0.8, 0.5), (0.95, 0.2)],
        [(0.8, 0.5), (0.95, 0.8)],
    ],
    'man': [
        [(0.5, 0.05), (0.5, 0.6)],
        [(0.1, 0.3), (0.9, 0.3)],
        [(0.5, 0.6), (0.15, 0.95)],
        [(0.5, 0.6), (0.85, 0.95)],
    ],
    'comb': [
        [(0.05, 0.15), (0.95, 0.15)],
        [(0.15, 0.15), (0.15, 0.95)],
        [(0.5, 0.15), (0.5, 0.95)],
        [(0.85, 0.15), (0.85, 0.95)],
    ],
    'ladder': [
        [(0.25, 0.05), (0.25, 0.95)],
        [(0.75, 0.05), (0.75, 0.95)],
        [(0.25, 0.35), (0.75, 0.35)],
        [(0.25, 0.7), (0.75, 0.7)],
    ],
    'arrow': [
        [(0.5, 0.95), (0.5, 0.05)],
        [(0.15, 0.4), (0.5, 0.05), (0.85, 0.4)],
    ],
    'bracket': [
        [(0.8, 0.05), (0.25, 0.05), (0.25, 0.95), (0.8, 0.95)],
        [(0.25, 0.5), (0.65, 0.5)],
    ],
}
JAR = 'jar'
OTHER_GLYPHS = tuple(sorted(k for k in GLYPHS if k != JAR))

BACKGROUND_LEVEL = 40
SEAL_LEVEL = 200
INK_LEVEL = 70
TEXTURE = 4


@dataclass(frozen=True)
class SyntheticSealSpec:
    glyph_count: int = 5
    jar_count: Optional[int] = None
    layout: str = 'horizontal'
    icon: bool = True
    noise: float = 0.0
    glyph_size: int = 28
    stroke: int = 5
    border: int = 40
    seed: int = 0

    def __post_init__(self):
        if self.glyph_count < 1:
            raise InvalidInput("glyph_count must be >= 1")
        if self.jar_count is not None and not 0 <= self.jar_count <= self.glyph_count:
            raise InvalidInput(f"jar_count must be in 0..{self.glyph_count}")
        if self.layout not in ('horizontal', 'vertical'):
            raise InvalidInput(f"layout must be horizontal or vertical, got {self.layout}")
        if not 0.0 <= self.noise <= 1.0:
            raise InvalidInput(f"noise must be in [0, 1], got {self.noise}")
        if self.stroke < 1 or self.glyph_size < 4 * self.stroke:
            raise InvalidInput("glyph_size must be at least four strokes wide")

    @classmethod
    def from_dict(cls, d: Dict) -> SyntheticSealSpec:
        return cls(**d)

    def to_dict(self) -> Dict:
        return asdict(self)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed))


def generate_glyph(kind: str, size: int, rng: np.random.Generator, stroke: int = 5) -> np.ndarray:
    """Boolean mask (size x size) of one jittered stroke glyph"""
    if kind not in GLYPHS:
        raise InvalidInput(f"unknown glyph {kind}, expected one of {sorted(GLYPHS)}")
    points = sorted({p for path in GLYPHS[kind] for p in path})
    jitter = {p: (p[0] + rng.uniform(-0.04, 0.04), p[1] + rng.uniform(-0.04, 0.04)) for p in points}
    canvas = Image.new('L', (size, size), 0)
    draw = ImageDraw.Draw(canvas)
    span = size - stroke
    for path in GLYPHS[kind]:
        pixels = [
            (stroke / 2 + np.clip(jitter[p][0], 0.0, 1.0) * span, stroke / 2 + np.clip(jitter[p][1], 0.0, 1.0) * span)
            for p in path
        ]
        draw.line(pixels, fill=255, width=stroke, joint='curve')
    return np.asarray(canvas) > 127


def _mask_box(mask: np.ndarray, dx: int = 0, dy: int = 0) -> Box:
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return Box.from_edges(cols[0] + dx, rows[0] + dy, cols[-1] + 1 + dx, rows[-1] + 1 + dy)


def _icon_mask(width: int, height: int, stroke: int) -> np.ndarray:
    """A bull-like outline: body, head, horn and legs"""
    canvas = Image.new('L', (width, height), 0)
    draw = ImageDraw.Draw(canvas)
    w, h = width - 1, height - 1
    draw.ellipse([0.15 * w, 0.15 * h, 0.8 * w, 0.65 * h], outline=255, width=stroke)
    draw.ellipse([0.72 * w, 0.05 * h, 0.98 * w, 0.35 * h], fill=255)
    draw.line([(0.3 * w, 0.6 * h), (0.28 * w, 0.98 * h)], fill=255, width=stroke)
    draw.line([(0.65 * w, 0.6 * h), (0.67 * w, 0.98 * h)], fill=255, width=stroke)
    draw.line([(0.2 * w, 0.3 * h), (0.02 * w, 0.1 * h)], fill=255, width=stroke)
    return np.asarray(canvas) > 127


def _apply_noise(pixels: np.ndarray, seal: Box, ink: np.ndarray, level: float, rng: np.random.Generator):
    """Grain, scratches and worn strokes on the seal surface"""
    if level <= 0:
        return
    region = (slice(seal.y, seal.y2), slice(seal.x, seal.x2))
    surface = pixels[region]
    worn = ink[region] & (rng.random(surface.shape) < 0.15 * level)
    surface[worn] = SEAL_LEVEL
    surface += rng.normal(0.0, 18.0 * level, surface.shape)

    canvas = Image.new('L', (seal.w, seal.h), 0)
    draw = ImageDraw.Draw(canvas)
    for _ in range(int(round(6 * level))):
        x0, x1 = rng.uniform(0, seal.w, 2)
        y0, y1 = rng.uniform(0, seal.h, 2)
        draw.line([(x0, y0), (x1, y1)], fill=255, width=int(rng.integers(1, 3)))
    scratches = np.asarray(canvas) > 127
    surface[scratches] = INK_LEVEL + 40
    pixels[region] = surface


def generate_seal(spec: SyntheticSealSpec) -> Tuple[RasterImage, Dict]:
    """Seal image and ground truth (seal, text box, glyph boxes with labels,
    icon box) in image coordinates"""
    rng = _rng(spec.seed)
    n = spec.glyph_count
    jars = spec.jar_count if spec.jar_count is not None else int(rng.integers(0, n + 1))
    kinds = [JAR] * jars + [OTHER_GLYPHS[int(i)] for i in rng.integers(0, len(OTHER_GLYPHS), n - jars)]
    kinds = [kinds[int(i)] for i in rng.permutation(n)]

    gs, pad = spec.glyph_size, spec.glyph_size // 2
    gaps = [int(g) for g in rng.integers(gs // 3, gs // 2 + 1, max(n - 1, 0))]
    row_len = n * gs + sum(gaps)
    icon_long, icon_short = max(row_len, 3 * gs), 2 * gs
    horizontal = spec.layout == 'horizontal'
    if horizontal:
        seal_w, seal_h = row_len + 2 * pad, 3 * pad + gs + (icon_short if spec.icon else 0)
        seal_w = max(seal_w, icon_long + 2 * pad) if spec.icon else seal_w
    else:
        seal_w, seal_h = 3 * pad + gs + (icon_short if spec.icon else 0), row_len + 2 * pad
        seal_h = max(seal_h, icon_long + 2 * pad) if spec.icon else seal_h
    border = spec.border
    width, height = seal_w + 2 * border, seal_h + 2 * border
    seal = Box(border, border, seal_w, seal_h)

    pixels = np.full((height, width), float(BACKGROUND_LEVEL))
    pixels[seal.y:seal.y2, seal.x:seal.x2] = SEAL_LEVEL + rng.integers(-TEXTURE, TEXTURE + 1, (seal.h, seal.w))
    ink = np.zeros((height, width), dtype=bool)

    glyphs = []
    offset = 0
    for i, kind in enumerate(kinds):
        mask = generate_glyph(kind, gs, rng, spec.stroke)
        if horizontal:
            gx, gy = seal.x + pad + offset, seal.y + pad
        else:
            gx, gy = seal.x + pad, seal.y + pad + offset
        ink[gy:gy + gs, gx:gx + gs] |= mask
        box = _mask_box(mask, gx, gy)
        glyphs.append(dict(box.to_dict(), kind=kind, label='jar' if kind == JAR else 'no-jar'))
        offset += gs + (gaps[i] if i < len(gaps) else 0)

    icon_box = None
    if spec.icon:
        if horizontal:
            iw, ih, ix, iy = seal_w - 2 * pad, icon_short, seal.x + pad, seal.y + 2 * pad + gs
        else:
            iw, ih, ix, iy = icon_short, seal_h - 2 * pad, seal.x + 2 * pad + gs, seal.y + pad
        icon = _icon_mask(iw, ih, spec.stroke)
        ink[iy:iy + ih, ix:ix + iw] |= icon
        icon_box = _mask_box(icon, ix, iy)

    pixels[ink] = INK_LEVEL
    _apply_noise(pixels, seal, ink, spec.noise, rng)
    img = RasterImage(np.clip(np.floor(pixels + 0.5), 0, 255).astype(np.uint8))

    text = union_all(Box.from_dict(g) for g in glyphs)
    text_margin = spec.stroke
    text = Box.from_edges(
        max(seal.x, text.x - text_margin), max(seal.y, text.y - text_margin),
        min(seal.x2, text.x2 + text_margin), min(seal.y2, text.y2 + text_margin),
    )
    truth = {
        'image': {'width': width, 'height': height},
        'seal': seal.to_dict(),
        'text_box': text.to_dict(),
        'glyphs': glyphs,
        'icon': icon_box.to_dict() if icon_box else None,
        'spec': spec.to_dict(),
    }
    return img, truth


def glyph_sample(kind: str, size: int, rng: np.random.Generator, noise: float = 0.0, stroke: int = 5) -> RasterImage:
    """A glyph on seal ground, cropped to its box plus a small random margin"""
    mask = generate_glyph(kind, size, rng, stroke)
    margin = int(rng.integers(1, 5))
    box = _mask_box(mask)
    canvas = np.full((size + 2 * margin, size + 2 * margin), float(SEAL_LEVEL))
    canvas += rng.integers(-TEXTURE, TEXTURE + 1, canvas.shape)
    ink = np.zeros(canvas.shape, dtype=bool)
    ink[margin:margin + size, margin:margin + size] = mask
    canvas[ink] = INK_LEVEL
    whole = Box(0, 0, canvas.shape[1], canvas.shape[0])
    _apply_noise(canvas, whole, ink, noise, rng)
    crop = box.translate(margin, margin)
    x1, y1 = crop.x - margin, crop.y - margin
    x2, y2 = crop.x2 + margin, crop.y2 + margin
    data = np.clip(np.floor(canvas[y1:y2, x1:x2] + 0.5), 0, 255).astype(np.uint8)
    return RasterImage(data)


def strip_image(kinds: Sequence[str], gap: int = 3, size: int = 28, stroke: int = 5, seed: int = 0,
                margin: int = 6) -> Tuple[RasterImage, List[Box]]:
    """A clean horizontal text strip and its glyph boxes"""
    rng = _rng(seed)
    masks = [generate_glyph(k, size, rng, stroke) for k in kinds]
    boxes_local = [_mask_box(m) for m in masks]
    width = 2 * margin + sum(b.w for b in boxes_local) + gap * (len(kinds) - 1)
    height = 2 * margin + size
    pixels = np.full((height, width), SEAL_LEVEL, dtype=np.uint8)
    boxes = []
    x = margin
    for mask, local in zip(masks, boxes_local):
        cut = mask[local.y:local.y2, local.x:local.x2]
        y = margin + local.y
        pixels[y:y + local.h, x:x + local.w][cut] = INK_LEVEL
        boxes.append(Box(x, y, local.w, local.h))
        x += local.w + gap
    return RasterImage(pixels), boxes


def _png_bytes(img: RasterImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(img.data)).save(buf, format='PNG')
    return buf.getvalue()


def _jittered(box: Box, rng: np.random.Generator, amount: int, width: int, height: int) -> Box:
    d = rng.integers(-amount, amount + 1, 4)
    return Box.from_edges(
        max(0, box.x + int(d[0])), max(0, box.y + int(d[1])),
        min(width, box.x2 + int(d[2])), min(height, box.y2 + int(d[3])),
    ).clip(width, height)


def _region_samples(img: RasterImage, truth: Dict, rng: np.random.Generator) -> List[Tuple[RasterImage, str]]:
    text = Box.from_dict(truth['text_box'])
    seal = Box.from_dict(truth['seal'])
    samples = []
    box = _jittered(text, rng, 3, img.width, img.height)
    samples.append((RasterImage(img.data[box.y:box.y2, box.x:box.x2]), 'text'))
    if truth['icon']:
        icon = Box.from_dict(truth['icon'])
        box = _jittered(icon, rng, 3, img.width, img.height)
        samples.append((RasterImage(img.data[box.y:box.y2, box.x:box.x2]), 'no-text'))
        both = _jittered(text.union(icon), rng, 3, img.width, img.height)
        samples.append((RasterImage(img.data[both.y:both.y2, both.x:both.x2]), 'both'))
    else:
        # a glyph-free slab of seal below or beside the text
        if text.y2 + 8 < seal.y2:
            box = Box.from_edges(seal.x, text.y2 + 2, seal.x2, seal.y2)
        else:
            box = Box.from_edges(text.x2 + 2, seal.y, seal.x2, seal.y2)
        samples.append((RasterImage(img.data[box.y:box.y2, box.x:box.x2]), 'no-text'))
    return samples


def generate_corpus(spec: SyntheticSealSpec, count: int, out: str, kind: str = 'seals') -> List[str]:
    """Write a seeded corpus under `out`

    `seals` writes seal_NNNN.png with seal_NNNN.json ground truth; `glyphs`
    and `regions` write labeled crops and a manifest.csv of `path,label`.

    Returns:
        List[str]: Written image paths
    """
    if count < 1:
        raise InvalidInput("count must be >= 1")
    if kind not in ('seals', 'glyphs', 'regions'):
        raise InvalidInput(f"corpus kind must be seals, glyphs or regions, got {kind}")
    os.makedirs(out, exist_ok=True)
    written, rows = [], []
    for i in range(count):
        item_seed = [spec.seed, i]
        if kind == 'seals':
            seal_seed = int(np.random.SeedSequence(item_seed).generate_state(1)[0])
            item = SyntheticSealSpec(**dict(spec.to_dict(), seed=seal_seed))
            img, truth = generate_seal(item)
            name = f"seal_{i:04d}"
            truth['id'] = name
            atomic_write(os.path.join(out, f"{name}.json"), canonical_json(truth))
            written.append(atomic_write(os.path.join(out, f"{name}.png"), _png_bytes(img)))
        elif kind == 'glyphs':
            rng = _rng(item_seed)
            # alternate so the corpus is balanced
            glyph = JAR if i % 2 == 0 else OTHER_GLYPHS[int(rng.integers(0, len(OTHER_GLYPHS)))]
            sample = glyph_sample(glyph, spec.glyph_size, rng, spec.noise, spec.stroke)
            name = f"glyph_{i:04d}.png"
            written.append(atomic_write(os.path.join(out, name), _png_bytes(sample)))
            rows.append((name, 'jar' if glyph == JAR else 'no-jar'))
        else:
            rng = _rng(item_seed)
            item = SyntheticSealSpec(**dict(
                spec.to_dict(),
                seed=int(np.random.SeedSequence(item_seed).generate_state(1)[0]),
                icon=bool(i % 3 != 2) and spec.icon,
            ))
            img, truth = generate_seal(item)
            for j, (sample, label) in enumerate(_region_samples(img, truth, rng)):
                name = f"region_{i:04d}_{j}.png"
                written.append(atomic_write(os.path.join(out, name), _png_bytes(sample)))
                rows.append((name, label))
    if rows:
        lines = ['path,label'] + [f"{name},{label}" for name, label in rows]
        atomic_write(os.path.join(out, 'manifest.csv'), '\n'.join(lines) + '\n')
    logger.info(f"wrote {len(written)} {kind} images to {out}")
    return written
