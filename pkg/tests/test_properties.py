"""Full-count property checks and synthetic benchmarks, run with --runslow"""
import json
import os

from fractions import Fraction

import numpy as np
import pytest

from glyphline import cli
from glyphline.classifiers import DatasetManifest, train_classifier
from glyphline.evaluation import recovered
from glyphline.geometry import (
    Box, draw_extended_super_box, draw_super_box, iou, merge_concentric, remove_contained,
)
from glyphline.imaging import BinaryImage, RasterImage, connected_components, crop, otsu_threshold
from glyphline.neuralnet import SolverConfig
from glyphline.pipeline import StageConfig, run_pipeline, segment_symbols
from glyphline.selective_search import SegmentationParams, felzenszwalb
from glyphline.synth import SyntheticSealSpec, generate_corpus, generate_seal

from .test_geometry import random_boxes
from .test_imaging import flood_fill_components

pytestmark = pytest.mark.slow


def otsu_oracle(gray):
    hist = np.bincount(gray.ravel(), minlength=256).tolist()
    total_n, total_s = sum(hist), sum(i * c for i, c in enumerate(hist))
    n0 = s0 = 0
    best_t, best = None, None
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1, s1 = total_n - n0, total_s - s0
        if n0 == 0 or n1 == 0:
            continue
        score = Fraction((s0 * n1 - s1 * n0) ** 2, n0 * n1)
        if best is None or score > best:
            best_t, best = t, score
    return best_t


def test_otsu_oracle():
    rng = np.random.default_rng(100)
    for _ in range(1000):
        gray = rng.integers(0, 256, (32, 32)).astype(np.uint8)
        t, _ = otsu_threshold(RasterImage(gray))
        assert t == otsu_oracle(gray)


def test_components_oracle():
    rng = np.random.default_rng(101)
    for _ in range(1000):
        bits = rng.random((16, 16)) < rng.uniform(0.2, 0.6)
        found = [(c.box, c.pixel_count) for c in connected_components(BinaryImage(bits))]
        assert found == flood_fill_components(bits)


def test_box_algebra():
    rng = np.random.default_rng(102)
    for seed in range(10000):
        boxes = random_boxes(seed, count=int(rng.integers(1, 21)))
        shuffled = [boxes[i] for i in rng.permutation(len(boxes))]

        kept = remove_contained(boxes)
        assert not any(a.contains(b) for i, a in enumerate(kept) for j, b in enumerate(kept) if i != j)
        assert set(kept) == set(remove_contained(shuffled))

        supers = draw_super_box(boxes)
        assert draw_super_box(supers) == supers
        assert supers == draw_super_box(shuffled)

        extended = draw_extended_super_box(boxes)
        assert draw_extended_super_box(extended) == extended
        assert extended == draw_extended_super_box(shuffled)

        merged = merge_concentric(boxes)
        assert merge_concentric(merged) == merged
        assert merged == merge_concentric(shuffled)


def test_felzenszwalb_properties():
    rng = np.random.default_rng(103)
    for _ in range(100):
        img = RasterImage(rng.integers(0, 256, (64, 64)).astype(np.uint8))
        min_size = int(rng.integers(10, 80))
        seg = felzenszwalb(img, SegmentationParams(scale=float(rng.uniform(100, 500)), min_size=min_size))
        assert set(np.unique(seg.labels)) == set(range(seg.segment_count))
        assert seg.sizes().min() >= min_size


def test_symbol_segmentation_on_synthetic_seals():
    found = total = 0
    for seed in range(50):
        img, truth = generate_seal(SyntheticSealSpec(seed=seed))
        text = Box.from_dict(truth['text_box'])
        boxes = [b.translate(text.x, text.y) for b in segment_symbols(crop(img, text))]
        glyphs = [Box.from_dict(g) for g in truth['glyphs']]
        found += recovered(boxes, glyphs)
        total += len(glyphs)
    assert found / total >= 0.95


def test_glyph_classifier_training_reaches_target(tmp_path, capsys):
    data = str(tmp_path / 'glyphs')
    assert cli.main(['synth', '--out', data, '--count', '1000', '--kind', 'glyphs', '--seed', '8']) == 0
    ckpt = str(tmp_path / 'glyph2.json')
    assert cli.main([
        'train', 'glyph2', os.path.join(data, 'manifest.csv'), '--out', ckpt, '--seed', '0',
        '--target-accuracy', '0.9', '--set', 'solver.glyph2.val_interval=100',
    ]) == 0
    result = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert result['best_val_accuracy'] >= 0.9
    assert result['iterations'] <= 10000


@pytest.fixture(scope='module')
def region_model(tmp_path_factory):
    out = str(tmp_path_factory.mktemp('regions'))
    generate_corpus(SyntheticSealSpec(seed=1000, noise=0.2), 150, out, kind='regions')
    manifest = DatasetManifest.from_csv(os.path.join(out, 'manifest.csv'))
    solver = SolverConfig.region(max_iter=3000, val_interval=100, target_accuracy=0.95)
    handle, _ = train_classifier('region3', manifest, solver)
    return handle


@pytest.mark.parametrize('noise, required', [(0.0, 45), (0.3, 40)])
def test_text_box_rate_on_synthetic_seals(region_model, noise, required):
    cfg = StageConfig(scale_mode='256')
    full = 0
    for seed in range(50):
        img, truth = generate_seal(SyntheticSealSpec(seed=seed, noise=noise))
        report = run_pipeline(img, region_model, None, cfg, stop_after='text')
        boxes = report.text_boxes
        full += len(boxes) == 1 and iou(boxes[0], Box.from_dict(truth['text_box'])) >= 0.8
    assert full >= required
