from collections import deque
from fractions import Fraction

import numpy as np
import pytest

from PIL import Image

from glyphline.errors import InvalidInput
from glyphline.geometry import Box
from glyphline.imaging import (
    BinaryImage, GaussianSpec, RasterImage, canny_auto, connected_components, crop, from_array,
    gaussian_blur, keep_components, mean_threshold, otsu_threshold, read_image, region_mean, resize,
    to_grayscale, write_image,
)


def brute_force_otsu(gray):
    """Lowest t maximizing n0 * n1 * (mean0 - mean1)**2, in fractions"""
    values = gray.ravel().tolist()
    best_t, best = None, None
    for t in range(256):
        low = [v for v in values if v <= t]
        high = [v for v in values if v > t]
        if not low or not high:
            continue
        diff = Fraction(sum(low), len(low)) - Fraction(sum(high), len(high))
        score = len(low) * len(high) * diff * diff
        if best is None or score > best:
            best_t, best = t, score
    return best_t


def flood_fill_components(bits):
    """(box, pixel count) of 8-connected components in raster order"""
    h, w = bits.shape
    seen = np.zeros_like(bits)
    found = []
    for y in range(h):
        for x in range(w):
            if not bits[y, x] or seen[y, x]:
                continue
            queue = deque([(y, x)])
            seen[y, x] = True
            pixels = []
            while queue:
                cy, cx = queue.popleft()
                pixels.append((cy, cx))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = cy + dy, cx + dx
                        if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            queue.append((ny, nx))
            ys = [p[0] for p in pixels]
            xs = [p[1] for p in pixels]
            found.append((Box.from_edges(min(xs), min(ys), max(xs) + 1, max(ys) + 1), len(pixels)))
    return found


def test_raster_image_checks():
    with pytest.raises(InvalidInput):
        RasterImage(np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(InvalidInput):
        RasterImage(np.zeros((4, 4, 2), dtype=np.uint8))
    img = RasterImage(np.zeros((4, 5, 1), dtype=np.uint8))
    assert (img.width, img.height, img.channels) == (5, 4, 1)
    assert img.frame == Box(0, 0, 5, 4)
    with pytest.raises(ValueError):
        img.data[0, 0] = 1


def test_raster_image_equality():
    a = RasterImage(np.arange(12, dtype=np.uint8).reshape(3, 4))
    assert a == RasterImage(np.arange(12, dtype=np.uint8).reshape(3, 4))
    assert a != RasterImage(np.zeros((3, 4), dtype=np.uint8))


def test_from_array_rounds_and_clips():
    img = from_array(np.array([[0.5, 254.6], [-3.0, 300.0]]))
    assert img.data.tolist() == [[1, 255], [0, 255]]


def test_to_grayscale_luma():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]]], dtype=np.uint8)
    gray = to_grayscale(RasterImage(rgb))
    assert gray.data.tolist() == [[76, 150, 29, 255]]
    assert to_grayscale(gray) is gray


def test_read_write_png(tmp_path):
    data = np.random.default_rng(0).integers(0, 256, (9, 7, 3)).astype(np.uint8)
    path = write_image(RasterImage(data), str(tmp_path / 'x.png'))
    assert read_image(path) == RasterImage(data)


def test_read_rgba_and_gray(tmp_path):
    Image.new('RGBA', (3, 2), (10, 20, 30, 40)).save(tmp_path / 'rgba.png')
    Image.new('L', (3, 2), 77).save(tmp_path / 'gray.png')
    assert read_image(str(tmp_path / 'rgba.png')).channels == 3
    gray = read_image(str(tmp_path / 'gray.png'))
    assert gray.channels == 1 and int(gray.data[0, 0]) == 77


def test_read_corrupt_image(tmp_path):
    bad = tmp_path / 'bad.png'
    bad.write_bytes(b'not a png at all')
    with pytest.raises(InvalidInput):
        read_image(str(bad))


def test_resize_and_crop():
    img = RasterImage(np.zeros((10, 20), dtype=np.uint8))
    assert resize(img, 20, 10) is img
    assert (resize(img, 5, 7).width, resize(img, 5, 7).height) == (5, 7)
    assert crop(img, Box(15, 5, 10, 10)).data.shape == (5, 5)
    with pytest.raises(InvalidInput):
        crop(img, Box(30, 0, 5, 5))


def test_gaussian_spec_from_kernel_size():
    spec = GaussianSpec.from_kernel_size(7)
    assert spec.sigma == pytest.approx(1.4)
    assert spec.radius == 3
    kernel = spec.kernel()
    assert kernel.sum() == pytest.approx(1.0)
    assert np.allclose(kernel, kernel[::-1])
    assert GaussianSpec(3.0).radius == 12


def test_gaussian_spec_validation():
    with pytest.raises(ValueError):
        GaussianSpec(0.0)
    with pytest.raises(ValueError):
        GaussianSpec(1.0, kernel_size=4)


def test_gaussian_blur_keeps_constant_image():
    img = RasterImage(np.full((12, 9), 131, dtype=np.uint8))
    assert gaussian_blur(img, GaussianSpec(2.0)) == img


def test_gaussian_blur_smooths_step():
    data = np.zeros((20, 20), dtype=np.uint8)
    data[:, 10:] = 200
    blurred = gaussian_blur(RasterImage(data), GaussianSpec(1.5)).data
    assert 0 < blurred[5, 9] < 200
    assert blurred[5, 0] == 0 and blurred[5, 19] == 200


@pytest.mark.parametrize('seed', range(4))
def test_otsu_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    gray = np.concatenate([rng.normal(70, 15, 150), rng.normal(180, 20, 250)])
    gray = np.clip(gray, 0, 255).astype(np.uint8).reshape(20, 20)
    t, mask = otsu_threshold(RasterImage(gray))
    assert t == brute_force_otsu(gray)
    assert np.array_equal(mask.bits, gray > t)


def test_otsu_two_levels_lowest_threshold():
    gray = np.full((4, 8), 50, dtype=np.uint8)
    gray[:, 4:] = 200
    t, mask = otsu_threshold(RasterImage(gray))
    assert t == 50
    assert mask.bits[:, 4:].all() and not mask.bits[:, :4].any()


def test_otsu_constant_image():
    t, mask = otsu_threshold(RasterImage(np.full((5, 5), 9, dtype=np.uint8)))
    assert t == 9
    assert not mask.bits.any()


def test_otsu_needs_gray():
    with pytest.raises(InvalidInput):
        otsu_threshold(RasterImage(np.zeros((3, 3, 3), dtype=np.uint8)))


def test_mean_threshold():
    img = RasterImage(np.array([[10, 20], [30, 40]], dtype=np.uint8))
    expected = [[False, True], [True, True]]
    assert mean_threshold(img, Box(0, 0, 2, 1)).bits.tolist() == expected
    # overlapping sample boxes count each pixel once
    assert mean_threshold(img, [Box(0, 0, 2, 1), Box(0, 0, 1, 1)]).bits.tolist() == expected


def test_mean_threshold_is_strict():
    img = RasterImage(np.array([[10, 20, 15]], dtype=np.uint8))
    assert mean_threshold(img, Box(0, 0, 2, 1)).bits.tolist() == [[False, True, False]]


def test_mean_threshold_empty_region():
    img = RasterImage(np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(InvalidInput):
        mean_threshold(img, Box(10, 10, 2, 2))


def test_region_mean():
    img = RasterImage(np.array([[10, 20], [30, 40]], dtype=np.uint8))
    assert region_mean(img, Box(0, 0, 2, 1)) == 15.0
    assert region_mean(img, [Box(0, 0, 1, 2), Box(0, 0, 2, 1)]) == 20.0
    with pytest.raises(InvalidInput):
        region_mean(img, Box(5, 5, 1, 1))


@pytest.mark.parametrize('seed', range(4))
def test_components_match_flood_fill(seed):
    bits = np.random.default_rng(seed).random((30, 30)) < 0.4
    components = connected_components(BinaryImage(bits))
    assert [(c.box, c.pixel_count) for c in components] == flood_fill_components(bits)
    assert [c.component_id for c in components] == list(range(1, len(components) + 1))


def test_components_diagonal_connectivity():
    bits = np.eye(5, dtype=bool)
    components = connected_components(BinaryImage(bits))
    assert len(components) == 1
    assert components[0].box == Box(0, 0, 5, 5)
    assert components[0].pixel_count == 5


def test_components_empty():
    assert connected_components(BinaryImage(np.zeros((3, 3), dtype=bool))) == []


@pytest.mark.parametrize('level', [0, 255])
def test_canny_square(level):
    data = np.full((40, 40), level, dtype=np.uint8)
    data[8:32, 8:32] = 255 - level
    edges = canny_auto(RasterImage(data)).bits
    assert edges.any()
    ys, xs = np.nonzero(edges)
    assert 6 <= xs.min() <= 9 and 30 <= xs.max() <= 33
    assert 6 <= ys.min() <= 9 and 30 <= ys.max() <= 33
    # nothing in the flat interior
    assert not edges[12:28, 12:28].any()


def test_canny_constant_image():
    assert not canny_auto(RasterImage(np.full((10, 10), 80, dtype=np.uint8))).bits.any()


def test_keep_components_keeps_seeded_components_whole():
    bits = np.zeros((6, 8), dtype=bool)
    bits[0:3, 0:3] = True
    bits[4, 6:8] = True
    seeds = np.zeros_like(bits)
    seeds[1, 1] = True
    kept = keep_components(BinaryImage(bits), seeds).bits
    assert kept[0:3, 0:3].all()
    assert kept.sum() == 9
    assert not keep_components(BinaryImage(bits), np.zeros_like(bits)).bits.any()
    empty = BinaryImage(np.zeros((2, 2), dtype=bool))
    assert keep_components(empty, np.ones((2, 2), dtype=bool)) == empty
