import json

import boto3
import numpy as np
import pytest

from glyphline import transfer
from glyphline.errors import InvalidInput
from glyphline.geometry import Box, LabeledRegion, RegionLabel, iou
from glyphline.imaging import GaussianSpec, RasterImage, gaussian_blur, to_grayscale
from glyphline.pipeline import (
    STAGES, PipelineReport, StageConfig, extract_seal, foreground_mask, formulate_text_boxes, frame_strips,
    mask_bbox, propose_regions, reading_order, render_overlay, run_pipeline, scale_factor, seal_mask,
    segment_symbols,
)
from glyphline.selective_search import SegmentationParams
from glyphline.synth import GLYPHS, SyntheticSealSpec, generate_seal, strip_image


FAST = StageConfig(scale_mode='256', grid=(SegmentationParams(scale=300, min_size=60, min_area=300),))


@pytest.fixture
def seal():
    return generate_seal(SyntheticSealSpec(glyph_count=3, seed=4))


def edges(box):
    return (box.x, box.y, box.x2, box.y2)


def test_stage_config_round_trip():
    cfg = StageConfig(scale_mode=256, reading_order='auto')
    assert cfg.scale_mode == '256'
    assert StageConfig.from_dict(cfg.to_dict()) == cfg
    assert len(StageConfig().grid) == 9


@pytest.mark.parametrize('settings', [
    {'scale_mode': '1024'},
    {'reading_order': 'up'},
    {'seal_second_blur_kernel': 6},
    {'seal_frame_frac': 0.5},
    {'seal_threshold_margin': 1.0},
    {'workers': 0},
    {'grid': []},
    {'colour': 'red'},
    {'grouping': {'concentric_frac': 2.0}},
])
def test_stage_config_rejects(settings):
    with pytest.raises(InvalidInput):
        StageConfig.from_dict(settings)


def test_frame_strips():
    assert frame_strips(100, 50, 0.05) == [
        Box(0, 0, 100, 3), Box(0, 47, 100, 3), Box(0, 0, 5, 50), Box(95, 0, 5, 50),
    ]


def test_scale_factor():
    assert scale_factor(1024, 300, '512') == 0.5
    assert scale_factor(100, 200, '256') == 1.28
    assert scale_factor(1024, 300, 'none') == 1.0


@pytest.mark.parametrize('spec', [
    SyntheticSealSpec(glyph_count=4, seed=0),
    SyntheticSealSpec(glyph_count=6, seed=1, layout='vertical'),
    SyntheticSealSpec(glyph_count=3, seed=2, icon=False, border=60),
])
def test_extract_seal_on_synthetic(spec):
    img, truth = generate_seal(spec)
    box, crop = extract_seal(img)
    expected = Box.from_dict(truth['seal'])
    for got, want in zip(edges(box), edges(expected)):
        assert abs(got - want) <= 5
    assert (crop.width, crop.height) == (box.w, box.h)


def test_extract_seal_rate_on_synthetic_seals():
    within = 0
    for seed in range(50):
        img, truth = generate_seal(SyntheticSealSpec(seed=seed))
        box, _ = extract_seal(img)
        expected = Box.from_dict(truth['seal'])
        within += all(abs(got - want) <= 5 for got, want in zip(edges(box), edges(expected)))
    assert within >= 48


def test_seal_mask_excludes_blur_halo():
    pixels = np.full((80, 80), 40, dtype=np.uint8)
    pixels[20:60, 20:60] = 200
    blurred = gaussian_blur(RasterImage(pixels), GaussianSpec(3.0))
    frame = frame_strips(80, 80, 0.05)

    halo = mask_bbox(seal_mask(blurred, frame, 0.0).bits)
    assert halo.x <= 16 and halo.x2 >= 64

    tight = mask_bbox(seal_mask(blurred, frame, 0.5).bits)
    for got, want in zip(edges(tight), (20, 20, 60, 60)):
        assert abs(got - want) <= 3


def test_extract_seal_blank_image():
    img = RasterImage(np.full((60, 80), 128, dtype=np.uint8))
    box, crop = extract_seal(img)
    assert box == Box(0, 0, 80, 60)
    assert crop is img


def test_propose_regions(seal):
    img, truth = seal
    box, crop = extract_seal(img)
    proposals = propose_regions(crop, FAST)
    assert proposals
    assert proposals == sorted(set(proposals), key=lambda b: b.sort_key)
    frame = Box(0, 0, crop.width, crop.height)
    assert all(frame.contains(p) for p in proposals)


def test_formulate_text_boxes():
    regions = [
        LabeledRegion(Box(10, 10, 20, 20), RegionLabel.TEXT),
        LabeledRegion(Box(34, 10, 20, 20), RegionLabel.TEXT),
        LabeledRegion(Box(10, 60, 80, 30), RegionLabel.NO_TEXT),
    ]
    assert formulate_text_boxes(regions) == [Box(10, 10, 44, 20)]
    assert formulate_text_boxes([LabeledRegion(Box(0, 0, 5, 5), RegionLabel.BOTH)]) == []


def test_reading_order():
    boxes = [Box(40, 0, 10, 10), Box(0, 2, 10, 10), Box(20, 1, 10, 10)]
    assert reading_order(boxes, 60, 12, 'lr') == [Box(0, 2, 10, 10), Box(20, 1, 10, 10), Box(40, 0, 10, 10)]
    assert reading_order(boxes, 60, 12, 'rl') == [Box(40, 0, 10, 10), Box(20, 1, 10, 10), Box(0, 2, 10, 10)]
    column = [Box(0, 40, 10, 10), Box(1, 0, 10, 10)]
    assert reading_order(column, 12, 60, 'lr') == [Box(1, 0, 10, 10), Box(0, 40, 10, 10)]


def test_reading_order_auto_lines():
    boxes = [Box(30, 2, 10, 10), Box(0, 30, 10, 10), Box(0, 0, 10, 10), Box(30, 31, 10, 10)]
    assert reading_order(boxes, 50, 50, 'auto') == [
        Box(0, 0, 10, 10), Box(30, 2, 10, 10), Box(0, 30, 10, 10), Box(30, 31, 10, 10),
    ]


def test_foreground_mask_takes_minority():
    img, boxes = strip_image(['jar', 'fish'])
    mask = foreground_mask(to_grayscale(img), 3.5).bits
    assert 0 < mask.sum() < mask.size / 2
    # ink is darker than the ground
    assert img.data[mask].mean() < img.data[~mask].mean()


def test_segment_symbols_strip():
    img, truth = strip_image(['jar', 'fish', 'comb', 'ladder'], gap=3)
    found = segment_symbols(img)
    assert len(found) == 4
    for box, expected in zip(found, truth):
        assert iou(box, expected) >= 0.7


@pytest.mark.parametrize('kind', sorted(GLYPHS))
@pytest.mark.parametrize('seed', range(3))
def test_segment_symbols_single_glyph_is_tight(kind, seed):
    img, truth = strip_image([kind], seed=seed)
    assert segment_symbols(img) == truth


def test_segment_symbols_right_to_left():
    img, truth = strip_image(['jar', 'fish', 'comb', 'ladder'], gap=3)
    found = segment_symbols(img, StageConfig(reading_order='rl'))
    assert found == list(reversed(segment_symbols(img)))


def test_segment_symbols_blank():
    assert segment_symbols(RasterImage(np.full((30, 90), 200, dtype=np.uint8))) == []


def test_run_pipeline_unknown_stage(seal):
    with pytest.raises(InvalidInput):
        run_pipeline(seal[0], None, None, FAST, stop_after='ocr')


def test_run_pipeline_seal_only(seal):
    img, truth = seal
    report = run_pipeline(img, None, None, FAST, stop_after='seal', image_id='s')
    assert report['stage'] == 'seal'
    assert report['id'] == 's'
    assert report['proposals'] == [] and report['glyphs'] == []
    assert report.validate() == []
    assert 'timings' not in report.to_dict()


def test_run_pipeline_full(seal, region_stub, glyph_stub):
    img, truth = seal
    report = run_pipeline(img, region_stub, glyph_stub, FAST, image_id='seal_0004')
    assert report['stage'] == 'glyphs'
    assert report['errors'] == []
    assert report.validate() == []
    assert report['proposals'] and report['regions'] and report['text_boxes'] and report['glyphs']
    assert all(label in ('jar', 'no-jar') for label, _ in report.glyph_labels)
    assert all(0 < confidence <= 1 for _, confidence in report.glyph_labels)
    seal_box = report.seal_box
    assert all(seal_box.contains(Box.from_dict(p)) for p in report['proposals'])


def test_run_pipeline_blank_image(region_stub, glyph_stub):
    img = RasterImage(np.full((90, 120), 200, dtype=np.uint8))
    report = run_pipeline(img, region_stub, glyph_stub, FAST, image_id='blank')
    assert report.seal_box == Box(0, 0, 120, 90)
    assert report['text_boxes'] == [] and report['glyphs'] == []
    assert report['errors'] == []
    assert report['stage'] == 'glyphs'
    assert report.validate() == []


def test_run_pipeline_is_deterministic(seal, region_stub, glyph_stub):
    img, _ = seal
    first = run_pipeline(img, region_stub, glyph_stub, FAST, image_id='a').to_json()
    second = run_pipeline(img, region_stub, glyph_stub, FAST, image_id='a').to_json()
    assert first == second


def test_run_pipeline_records_stage_failure(seal, glyph_stub):
    img, _ = seal
    report = run_pipeline(img, None, glyph_stub, FAST)
    assert [e['stage'] for e in report['errors']] == ['regions']
    assert report['errors'][0]['error'] == 'InvalidInput'
    assert report['regions'] == [] and report['text_boxes'] == [] and report['glyphs'] == []
    assert report['stage'] == 'glyphs'
    assert report.validate() == []


def test_run_pipeline_timings(seal, region_stub):
    img, _ = seal
    cfg = StageConfig(scale_mode='256', grid=FAST.grid, record_timings=True)
    report = run_pipeline(img, region_stub, None, cfg, stop_after='text')
    timings = report.to_dict()['timings']
    assert list(timings) == list(STAGES[:STAGES.index('text') + 1])
    assert all(t >= 0 for t in timings.values())
    assert report.validate() == []


def test_report_fixture(report_fixture):
    report = PipelineReport(report_fixture)
    assert report.validate() == []
    assert report.seal_box == Box(40, 40, 180, 150)
    assert report.glyph_labels == [('jar', 0.91), ('no-jar', 0.77)]


def test_report_containment_violations(report_fixture):
    report_fixture['glyphs'][0]['x'] = 10
    report_fixture['text_boxes'][0]['y'] = 5
    problems = PipelineReport(report_fixture).validate()
    assert any('glyph 0' in p for p in problems)
    assert any('outside seal' in p for p in problems)


def test_report_schema_violation(report_fixture):
    report_fixture['glyphs'][0]['label'] = 'pot'
    assert PipelineReport(report_fixture).validate()


def test_report_from_file(tmp_path, report_fixture):
    path = tmp_path / 'r.json'
    path.write_text(json.dumps(report_fixture))
    report = PipelineReport.from_file(str(path))
    assert report.to_dict() == report_fixture
    assert json.loads(report.to_json()) == report_fixture


def test_report_from_s3(boto3utils_s3, report_fixture):
    transfer.s3_sessions.clear()
    client = boto3.client('s3', region_name='us-east-1')
    client.create_bucket(Bucket='reports')
    client.put_object(Bucket='reports', Key='a/seal_0000.json', Body=json.dumps(report_fixture))
    report = PipelineReport.from_file('s3://reports/a/seal_0000.json')
    assert report['id'] == 'seal_0000'
    transfer.s3_sessions.clear()


def test_render_overlay(seal, region_stub, glyph_stub):
    img, _ = seal
    report = run_pipeline(img, region_stub, glyph_stub, FAST)
    overlay = render_overlay(img, report)
    assert (overlay.width, overlay.height, overlay.channels) == (img.width, img.height, 3)
    s = report.seal_box
    assert tuple(overlay.data[s.y, s.x]) == (255, 255, 255)
    assert overlay != img
