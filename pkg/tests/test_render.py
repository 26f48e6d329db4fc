import numpy as np
import pytest

from xai_triage.lrp import Heatmap
from xai_triage.render import OVERLAY_WEIGHT, render_heatmap


def test_all_zero_heatmap_renders_plain_grayscale(rng):
    gray_u8 = rng.integers(0, 256, (4, 5), dtype=np.uint8)
    image = gray_u8.astype(np.float64) / 255.0
    out = render_heatmap(Heatmap(np.zeros((4, 5))), image)
    assert out.dtype == np.uint8
    for ch in range(3):
        assert np.array_equal(out[:, :, ch], gray_u8)


def test_peak_pixel_hits_full_red_end():
    h = np.zeros((3, 3))
    h[1, 1] = 2.5
    gray = np.full((3, 3), 0.5)
    out = render_heatmap(Heatmap(h), gray)
    expected_peak = np.round(
        (OVERLAY_WEIGHT * np.array([1.0, 0.0, 0.0]) + (1 - OVERLAY_WEIGHT) * 0.5) * 255
    ).astype(np.uint8)
    assert np.array_equal(out[1, 1], expected_peak)
    # Zero-relevance pixels blend white over gray.
    expected_rest = np.round(
        (OVERLAY_WEIGHT * 1.0 + (1 - OVERLAY_WEIGHT) * 0.5) * 255
    ).astype(np.uint8)
    assert np.all(out[0, 0] == expected_rest)


def test_negative_relevance_maps_to_blue():
    h = np.zeros((2, 2))
    h[0, 0] = -1.0
    h[1, 1] = 1.0
    out = render_heatmap(Heatmap(h), np.full((2, 2), 0.5))
    b = out[0, 0]
    r = out[1, 1]
    assert b[2] > b[0] and b[2] > b[1]  # blue end
    assert r[0] > r[1] and r[0] > r[2]  # red end


def test_render_is_deterministic(rng):
    h = Heatmap(rng.normal(size=(6, 6)))
    img = rng.uniform(0, 1, (6, 6))
    a = render_heatmap(h, img)
    b = render_heatmap(h, img)
    assert a.tobytes() == b.tobytes()


def test_rgb_image_collapses_to_luminance_base():
    img = np.zeros((2, 2, 3))
    img[:, :, 1] = 1.0  # pure green
    out = render_heatmap(Heatmap(np.zeros((2, 2))), img)
    assert np.all(out == round(0.587 * 255))


def test_channel_first_image_accepted():
    img = np.full((3, 2, 2), 0.25)
    out = render_heatmap(Heatmap(np.zeros((2, 2))), img)
    assert out.shape == (2, 2, 3)


def test_dimension_mismatch_is_an_error():
    with pytest.raises(ValueError):
        render_heatmap(Heatmap(np.zeros((2, 2))), np.zeros((3, 3)))
