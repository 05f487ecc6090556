import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from episeg.core_model import Segmentation
from episeg.metrics import (
    ari,
    contingency,
    f_measure,
    labels_from_indicator,
    mutual_information,
    nvi,
    pair_counts,
)
from oracles import (
    brute_ari,
    brute_f,
    brute_mi,
    brute_nvi,
    brute_pairs,
    random_segmentation_labels,
)


# --- examples ------------------------------------------------------------------


def test_identical_partitions_score_perfectly():
    z = [1, 1, 2, 2, 2, 3]
    assert ari(z, z) == 1.0
    assert f_measure(z, z) == pytest.approx(1.0)
    assert nvi(z, z) == pytest.approx(0.0, abs=1e-15)


def test_ari_against_exhaustive_pair_count():
    z, zh = [1, 1, 2, 2], [1, 1, 1, 1]
    # pairs: (0,1) same/same, (2,3) same/same, other 4 split/same -> a=2, b=0, c=4, d=0
    assert pair_counts(z, zh) == (2, 0, 4, 0)
    n = 6
    expected = (n * 2 - (2 * 6 + 4 * 0)) / (n * n - (2 * 6 + 4 * 0))
    assert ari(z, zh) == pytest.approx(expected)
    assert expected == 0.0


def test_mi_two_equal_segments_is_log2():
    z = [1, 1, 2, 2]
    assert mutual_information(z, z) == pytest.approx(math.log(2))


def test_mi_single_clusters_is_zero():
    assert mutual_information([1, 1, 1], [1, 1, 1]) == 0.0


def test_f_measure_hand_value():
    # 2x1 table: n = (2, 2), nhat = (4); each row max = 2/(2+4)
    assert f_measure([1, 1, 2, 2], [1, 1, 1, 1]) == pytest.approx(2 / 4 * (2 * 2 / 6 + 2 * 2 / 6))


def test_nvi_single_point_is_zero():
    assert nvi([1], [1]) == 0.0


def test_length_mismatch_raises():
    for fn in (ari, mutual_information, nvi, f_measure):
        with pytest.raises(ValueError):
            fn([1, 1, 2], [1, 1])


def test_indicator_conversion():
    np.testing.assert_array_equal(labels_from_indicator([1, 0, 0, 1, 0, 1]), [1, 1, 1, 2, 2, 3])
    with pytest.raises(ValueError):
        labels_from_indicator([0, 1, 0])


def test_segmentation_objects_accepted():
    s = Segmentation.from_changepoints(10, [4])
    assert ari(s, s.labels) == 1.0


# --- oracle agreement and properties --------------------------------------------


def test_oracle_agreement_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        T = int(rng.integers(1, 201))
        z = random_segmentation_labels(rng, T)
        zh = random_segmentation_labels(rng, T)
        assert sum(pair_counts(z, zh)) == math.comb(T, 2)
        assert pair_counts(z, zh) == brute_pairs(z, zh)
        assert abs(ari(z, zh) - brute_ari(z, zh)) <= 1e-12
        assert abs(mutual_information(z, zh) - brute_mi(z, zh)) <= 1e-12
        assert abs(nvi(z, zh) - brute_nvi(z, zh)) <= 1e-12
        assert abs(f_measure(z, zh) - brute_f(z, zh)) <= 1e-12


labels = st.lists(st.integers(1, 5), min_size=1, max_size=40)


@given(st.data())
@settings(max_examples=300, deadline=None)
def test_symmetry_range_and_relabelling(data):
    z = data.draw(labels)
    zh = data.draw(st.lists(st.integers(1, 5), min_size=len(z), max_size=len(z)))
    assert ari(z, zh) == pytest.approx(ari(zh, z), abs=1e-12)
    assert nvi(z, zh) == pytest.approx(nvi(zh, z), abs=1e-12)
    assert mutual_information(z, zh) >= 0.0
    assert 0.0 <= nvi(z, zh) <= 1.0
    assert 0.0 <= f_measure(z, zh) <= 1.0 + 1e-12
    perm = {k: 10 - k for k in range(1, 6)}
    zr = [perm[k] for k in z]
    assert ari(zr, zh) == pytest.approx(ari(z, zh), abs=1e-12)
    assert f_measure(zr, zh) == pytest.approx(f_measure(z, zh), abs=1e-12)
    assert mutual_information(zr, zh) == pytest.approx(mutual_information(z, zh), abs=1e-12)


def test_mi_nonnegative_sweep():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        T = int(rng.integers(1, 30))
        z = rng.integers(1, 4, size=T)
        zh = rng.integers(1, 4, size=T)
        assert mutual_information(z, zh) >= 0.0
        assert 0.0 <= nvi(z, zh) <= 1.0


def _coarsenings(cps):
    for r in range(len(cps)):
        for subset in itertools.combinations(cps, r):
            yield list(subset)


def test_f_measure_truth_beats_coarsenings_exhaustively():
    for T in range(2, 9):
        for r in range(T):
            for cps in itertools.combinations(range(1, T), r):
                truth = Segmentation.from_changepoints(T, cps)
                best = f_measure(truth, truth)
                for sub in _coarsenings(list(cps)):
                    assert f_measure(truth, Segmentation.from_changepoints(T, sub)) <= best + 1e-12


def test_contingency_margins():
    tab = contingency([1, 1, 2, 2, 2], [1, 2, 2, 2, 3])
    np.testing.assert_array_equal(tab.joint.sum(axis=1), tab.truth_sizes)
    np.testing.assert_array_equal(tab.joint.sum(axis=0), tab.estimate_sizes)
    assert tab.total == 5
