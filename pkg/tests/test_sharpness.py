import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xai_triage.nn import Conv2D, Dense, Flatten, Network, ReLU
from xai_triage.rebalance import per_class_accuracy
from xai_triage.sharpness import (
    LAPLACIAN_KERNEL,
    box_blur,
    gate,
    laplacian_filter,
    sharpness_score,
    sweep_thresholds,
    to_luminance,
)


def sharpness_oracle(gray):
    """Direct implementation: explicit kernel loops, |L| mean, squared sum."""
    k = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]) / 6.0
    h, w = gray.shape
    filtered = np.zeros((h - 2, w - 2))
    for y in range(1, h - 1):
        for x in range(1, w - 1):
            acc = 0.0
            for i in range(3):
                for j in range(3):
                    acc += gray[y + i - 1, x + j - 1] * k[i, j]
            filtered[y - 1, x - 1] = acc
    mu = np.abs(filtered).mean()
    v = float(((filtered - mu) ** 2).sum())
    return filtered, v, v / filtered.size


# ------------------------------------------------------------- luminance

def test_luminance_white_is_one():
    assert np.all(to_luminance(np.ones((2, 2, 3))) == 1.0)


def test_luminance_green_coefficient():
    img = np.zeros((2, 2, 3))
    img[:, :, 1] = 1.0
    np.testing.assert_allclose(to_luminance(img), 0.587)


def test_luminance_gray_unchanged(rng):
    g = rng.uniform(0, 1, (3, 4))
    img = np.repeat(g[:, :, None], 3, axis=2)
    np.testing.assert_allclose(to_luminance(img), g, rtol=1e-12)


# ------------------------------------------------------------- laplacian

def test_kernel_values_exact():
    np.testing.assert_array_equal(
        LAPLACIAN_KERNEL,
        np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]]) / 6.0,
    )


def test_constant_image_filters_to_exact_zero():
    out = laplacian_filter(np.full((5, 7), 0.3))
    assert out.shape == (3, 5)
    assert np.all(out == 0.0)


def test_linear_ramp_filters_to_exact_zero():
    w = 16  # power of two keeps the ramp values dyadic, so zeros are exact
    ramp = np.tile(np.arange(w) / w, (6, 1))
    assert np.all(laplacian_filter(ramp) == 0.0)
    assert np.all(laplacian_filter(ramp.T) == 0.0)


def test_unit_impulse_matches_direct_oracle():
    img = np.zeros((5, 5))
    img[2, 2] = 1.0
    got = laplacian_filter(img)
    expected, _, _ = sharpness_oracle(img)
    np.testing.assert_allclose(got, expected, atol=1e-15)
    assert got[1, 1] == 4.0 / 6.0
    for dy, dx in ((0, 1), (1, 0), (1, 2), (2, 1)):
        assert got[dy, dx] == -1.0 / 6.0
    assert got[0, 0] == 0.0 and got[2, 2] == 0.0


def test_too_small_image_is_an_error():
    with pytest.raises(ValueError):
        laplacian_filter(np.zeros((2, 5)))


# ------------------------------------------------------------- score

def test_constant_image_scores_zero():
    assert sharpness_score(np.full((4, 4), 0.9)) == (0.0, 0.0)


def test_checkerboard_matches_brute_force_oracle():
    board = np.indices((4, 4)).sum(axis=0) % 2
    board = board.astype(np.float64)
    v, v_norm = sharpness_score(board)
    _, ov, ov_norm = sharpness_oracle(board)
    assert v == pytest.approx(ov, abs=1e-12)
    assert v_norm == pytest.approx(ov_norm, abs=1e-12)
    # Closed form: filtered field is +-2/3, mu = 2/3, V = 2 * (4/3)^2.
    assert v == pytest.approx(32.0 / 9.0, abs=1e-12)
    assert v_norm == pytest.approx(8.0 / 9.0, abs=1e-12)


def test_blur_lowers_score_fixed_texture():
    rng = np.random.default_rng(99)
    img = rng.uniform(0, 1, (12, 12))
    _, v_img, _ = sharpness_oracle(img)
    _, v_blur, _ = sharpness_oracle(box_blur(img))
    assert v_blur < v_img  # oracle agrees with the claim itself
    assert sharpness_score(box_blur(img))[0] < sharpness_score(img)[0]


def test_score_strictly_decreases_over_three_blurs():
    rng = np.random.default_rng(7)
    img = rng.uniform(0, 1, (16, 16))
    scores = [sharpness_score(box_blur(img, p))[0] for p in range(4)]
    assert scores[0] > scores[1] > scores[2] > scores[3]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 10), st.integers(3, 10))
def test_score_nonnegative(seed, h, w):
    img = np.random.default_rng(seed).uniform(0, 1, (h, w))
    v, v_norm = sharpness_score(img)
    assert v >= 0.0 and v_norm >= 0.0


def test_transposition_invariance_square_images(rng):
    img = rng.uniform(0, 1, (9, 9))
    np.testing.assert_allclose(
        sharpness_score(img)[0], sharpness_score(img.T.copy())[0], rtol=1e-12
    )


# ------------------------------------------------------------- gate

def test_gate_threshold_zero_keeps_everything(rng):
    imgs = [rng.uniform(0, 1, (5, 5)) for _ in range(4)]
    kept, discarded = gate(imgs, 0.0)
    assert kept == imgs and discarded == []


def test_gate_above_max_discards_everything(rng):
    imgs = [rng.uniform(0, 1, (5, 5)) for _ in range(4)]
    top = max(sharpness_score(i)[1] for i in imgs)
    kept, discarded = gate(imgs, top + 1.0)
    assert kept == [] and discarded == imgs


def test_gate_partition_matches_scores(rng):
    imgs = [rng.uniform(0, 1, (6, 6)) for _ in range(8)] + [np.full((6, 6), 0.5)]
    threshold = 0.01
    kept, discarded = gate(imgs, threshold, variant="raw")
    for img in imgs:  # oracle: recompute each score independently
        _, v, _ = sharpness_oracle(img)
        assert any(img is k for k in (kept if v >= threshold else discarded))
    assert len(kept) + len(discarded) == len(imgs)


def test_gate_monotone_subsets(rng):
    imgs = [rng.uniform(0, 1, (5, 5)) for _ in range(10)]
    k1, _ = gate(imgs, 0.001, variant="raw")
    k2, _ = gate(imgs, 0.01, variant="raw")
    assert all(any(i is j for j in k1) for i in k2)  # kept(t2) subset of kept(t1)


def test_gate_validation():
    with pytest.raises(ValueError):
        gate([], -1.0)
    with pytest.raises(ValueError):
        gate([], 0.0, variant="weird")


# ------------------------------------------------------------- sweep

def stripe_detector_net(size=8):
    """Classifies vertical-stripe textures as class 0, everything flat as 1."""
    kernel = np.array([[[[-1.0, 2.0, -1.0]]]])  # horizontal second difference
    conv = Conv2D(kernel, np.zeros(1))
    feat = size * (size - 2)
    head = Dense(np.vstack([np.ones(feat), np.zeros(feat)]), np.array([0.0, 5.0]))
    return Network([conv, ReLU(), Flatten(), head], (1, size, size), 2)


def stripe_corpus(n_each=6, blurred=2, size=8):
    vert = np.tile(np.arange(size) % 2, (size, 1)).astype(float)
    horz = vert.T.copy()
    samples, flags = [], []
    for i in range(n_each):
        samples.append((vert[None].copy(), 0))
        flags.append(False)
    for i in range(blurred):
        samples.append((box_blur(vert, 2)[None], 0))
        flags.append(True)
    for i in range(n_each):
        samples.append((horz[None].copy(), 1))
        flags.append(False)
    return samples, flags


def test_sweep_single_zero_threshold_equals_ungated_accuracy():
    net = stripe_detector_net()
    samples, _ = stripe_corpus()
    points = sweep_thresholds(net, samples, [0.0])
    per_class, macro = per_class_accuracy(net, samples)
    assert points[0].kept_count == len(samples)
    assert points[0].per_class == per_class
    assert points[0].macro == macro


def test_sweep_dropping_blurred_restores_perfect_accuracy():
    net = stripe_detector_net()
    samples, flags = stripe_corpus()
    # The blurred stripe images are known-misclassified; sharp ones are not.
    for (x, y), blurred in zip(samples, flags):
        pred = int(np.argmax(net.layers[-1].forward(net.layers[2].forward(
            net.layers[1].forward(net.layers[0].forward(x))))))
        assert (pred != y) == blurred
    blurred_scores = [sharpness_score(x[0])[1] for (x, _), b in zip(samples, flags) if b]
    sharp_scores = [sharpness_score(x[0])[1] for (x, _), b in zip(samples, flags) if not b]
    cut = (max(blurred_scores) + min(sharp_scores)) / 2.0
    points = sweep_thresholds(net, samples, [0.0, cut])
    assert points[1].kept_count == len(samples) - sum(flags)
    assert points[1].macro == 1.0
    assert set(points[1].per_class) == {0, 1}


def test_sweep_kept_count_non_increasing():
    net = stripe_detector_net()
    samples, _ = stripe_corpus()
    scores = sorted(sharpness_score(x[0])[1] for x, _ in samples)
    thresholds = [0.0] + [s + 1e-9 for s in scores]
    points = sweep_thresholds(net, samples, thresholds)
    counts = [p.kept_count for p in points]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] == 0
    assert points[-1].macro is None and points[-1].per_class == {}


def test_sweep_requires_sorted_thresholds():
    net = stripe_detector_net()
    samples, _ = stripe_corpus(2, 0)
    with pytest.raises(ValueError):
        sweep_thresholds(net, samples, [1.0, 0.5])


def test_sweep_csv_row_count(tmp_path):
    from xai_triage.sharpness import sweep_to_csv

    net = stripe_detector_net()
    samples, _ = stripe_corpus(2, 1)
    points = sweep_thresholds(net, samples, [float(t) for t in range(0, 55, 5)])
    out = tmp_path / "sweep.csv"
    sweep_to_csv(points, ("broken", "flash", "healthy"), out)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 12  # header + 11 thresholds
    assert lines[0].startswith("threshold,kept_count,acc_broken")
