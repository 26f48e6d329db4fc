import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xai_triage.locmetrics import default_k, mean_tki, tki, top_k_mask
from xai_triage.lrp import Heatmap


def brute_force_top_k(values: np.ndarray, k: int) -> np.ndarray:
    """Full-sort enumeration with explicit row-major tie-breaking."""
    flat = values.ravel()
    ranked = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    mask = np.zeros(flat.size, dtype=bool)
    for i in ranked[:k]:
        mask[i] = True
    return mask.reshape(values.shape)


def test_top_k_distinct_values():
    h = Heatmap(np.array([[4.0, 3.0], [2.0, 1.0]]))
    mask = top_k_mask(h, 2)
    assert np.array_equal(mask, [[True, True], [False, False]])


def test_top_k_full_image():
    h = Heatmap(np.zeros((3, 3)))
    assert top_k_mask(h, 9).all()


def test_top_k_all_equal_row_major_tiebreak():
    h = Heatmap(np.ones((2, 3)))
    mask = top_k_mask(h, 3)
    assert np.array_equal(mask, [[True, True, True], [False, False, False]])


def test_top_k_range_validation():
    h = Heatmap(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        top_k_mask(h, 0)
    with pytest.raises(ValueError):
        top_k_mask(h, 5)


def test_tki_containment_and_disjoint():
    m = np.zeros((4, 4), dtype=bool)
    m[:2, :] = True
    e_in = np.zeros((4, 4), dtype=bool)
    e_in[0, :2] = True
    assert tki(m, e_in, 2) == 1.0
    e_out = np.zeros((4, 4), dtype=bool)
    e_out[3, :2] = True
    assert tki(m, e_out, 2) == 0.0


def test_tki_half_overlap_enumerated():
    m = np.array([[True, False], [True, False]])
    e = np.array([[True, True], [False, False]])
    assert tki(m, e, 2) == 0.5


def test_tki_validation():
    m = np.zeros((2, 2), dtype=bool)
    with pytest.raises(ValueError, match="shape"):
        tki(m, np.zeros((3, 3), dtype=bool), 1)
    with pytest.raises(ValueError, match="true pixels"):
        tki(m, np.zeros((2, 2), dtype=bool), 1)


def test_tki_all_true_mask_is_one(rng):
    for _ in range(10):
        values = rng.normal(size=(5, 5))
        k = int(rng.integers(1, 26))
        e = top_k_mask(Heatmap(values), k)
        assert tki(np.ones((5, 5), dtype=bool), e, k) == 1.0


def test_tki_monotone_in_mask(rng):
    values = rng.normal(size=(6, 6))
    k = 7
    e = top_k_mask(Heatmap(values), k)
    m = rng.random((6, 6)) < 0.3
    base = tki(m, e, k)
    m2 = m.copy()
    m2[rng.integers(6), rng.integers(6)] = True
    assert tki(m2, e, k) >= base


def test_mean_tki_trivial_and_oracle(rng):
    h = Heatmap(np.array([[2.0, 1.0], [0.0, -1.0]]))
    m = np.array([[True, False], [False, False]])
    assert mean_tki([(h, m)], 1) == tki(m, top_k_mask(h, 1), 1)

    pair_hi = (Heatmap(np.eye(3)), np.eye(3, dtype=bool))
    pair_lo = (Heatmap(np.eye(3)), ~np.eye(3, dtype=bool))
    assert mean_tki([pair_hi, pair_lo], 3) == 0.5

    pairs = []
    for _ in range(10):
        pairs.append((Heatmap(rng.normal(size=(4, 4))), rng.random((4, 4)) < 0.4))
    k = 5
    expected = sum(tki(m, brute_force_top_k(h.values, k), k) for h, m in pairs) / len(pairs)
    assert mean_tki(pairs, k) == pytest.approx(expected, abs=1e-15)


def test_mean_tki_empty_corpus_is_an_error():
    with pytest.raises(ValueError):
        mean_tki([], 1)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.integers(-3, 3), min_size=16, max_size=16),
    st.integers(1, 16),
    st.floats(0.001, 1000.0),
)
def test_positive_scale_invariance_including_ties(values, k, scale):
    h = Heatmap(np.array(values, dtype=float).reshape(4, 4))
    scaled = Heatmap(h.values * scale)
    assert np.array_equal(top_k_mask(h, k), top_k_mask(scaled, k))


def test_brute_force_equivalence_8x8(rng):
    for _ in range(100):
        # Quantized values force plenty of ties.
        values = np.round(rng.normal(size=(8, 8)) * 3) / 3.0
        k = int(rng.integers(1, 65))
        assert np.array_equal(
            top_k_mask(Heatmap(values), k), brute_force_top_k(values, k)
        )


def test_default_k_rule():
    assert default_k(16, 16) == 12  # 5% of 256
    assert default_k(100, 100) == 100  # capped
    assert default_k(2, 2) == 1  # floor at one pixel
