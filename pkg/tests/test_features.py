import math
import warnings

import numpy as np
import pytest
import scipy.special
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from somno import features
from somno.errors import AllZeroScores
from somno.features import (
    FEATURE_NAMES,
    digamma,
    feature_matrix,
    mi_continuous_discrete,
    mmd,
    mutual_info,
    relative_importance,
    stat_features,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def mmd_oracle(x, win):
    total = 0.0
    for w in range(len(x) // win):
        seg = list(x[w * win : (w + 1) * win])
        i_min = seg.index(min(seg))
        i_max = seg.index(max(seg))
        total += math.hypot(i_max - i_min, seg[i_max] - seg[i_min])
    return total


def brute_force_mi(x, labels, k):
    """O(N^2) transcription of the k-NN estimator."""
    n = len(x)
    psi = scipy.special.digamma
    m, nc = [], []
    for i in range(n):
        same = [abs(x[i] - x[j]) for j in range(n) if j != i and labels[j] == labels[i]]
        r = sorted(same)[k - 1]
        m.append(sum(1 for j in range(n) if abs(x[i] - x[j]) < r))
        nc.append(sum(1 for j in range(n) if labels[j] == labels[i]))
    return max(0.0, psi(n) - np.mean(psi(nc)) + psi(k) - np.mean(psi(np.maximum(m, 1))))


# -- statistical features ----------------------------------------------------


def test_constant_epoch():
    f = stat_features(np.full(3000, 3.5))
    assert f["mean"] == 3.5
    for name in ("std", "peak_to_peak", "zero_crossing_rate", "skewness", "kurtosis", "mmd"):
        assert f[name] == 0.0
    assert f.zero_variance


def test_toy_moments():
    f = stat_features([2.0, 4.0, 6.0])
    assert f["mean"] == 4.0
    assert f["std"] == pytest.approx(1.632993161855452, rel=1e-14)
    assert f["median"] == 4.0
    assert not f.zero_variance


def test_against_scipy():
    x = np.random.default_rng(3).gamma(2.0, size=3000)
    f = stat_features(x)
    assert f["skewness"] == pytest.approx(scipy.stats.skew(x), rel=1e-10)
    assert f["kurtosis"] == pytest.approx(scipy.stats.kurtosis(x, fisher=False), rel=1e-10)
    assert f["std"] == pytest.approx(np.std(x), rel=1e-12)


def test_zero_crossing_rate():
    x = np.array([1.0, -1.0, 1.0, -1.0, 1.0])  # mean 0.2, all four steps cross
    assert stat_features(x)["zero_crossing_rate"] == pytest.approx(1.0)
    assert stat_features([0.0, 1.0, 2.0, 3.0])["zero_crossing_rate"] == pytest.approx(1 / 3)


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, st.integers(2, 400), elements=finite))
def test_feature_invariants(x):
    f = stat_features(x)
    assert np.all(np.isfinite(f.values))
    assert f["std"] >= 0 and f["mmd"] >= 0
    assert f["peak_to_peak"] == f["max"] - f["min"] >= 0
    g = stat_features(-x)
    assert g["std"] == pytest.approx(f["std"], rel=1e-12, abs=1e-12)
    assert g["peak_to_peak"] == pytest.approx(f["peak_to_peak"])
    assert g["skewness"] == pytest.approx(-f["skewness"], rel=1e-7, abs=1e-7)


def test_feature_matrix_rows_match_single():
    x = np.random.default_rng(2).standard_normal((4, 3000))
    m = feature_matrix(x)
    assert m.shape == (4, len(FEATURE_NAMES))
    np.testing.assert_array_equal(m[2], stat_features(x[2]).values)


# -- MMD ---------------------------------------------------------------------


def test_mmd_ramp():
    assert mmd(np.arange(100.0)) == pytest.approx(99 * math.sqrt(2), abs=1e-9)


def test_mmd_constant():
    assert mmd(np.full(3000, -4.0)) == 0.0


def test_mmd_additive_over_windows():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(100)
    assert mmd(np.concatenate([w, w])) == pytest.approx(2 * mmd(w), rel=1e-14)


def test_mmd_drops_partial_window_and_needs_two_samples():
    assert mmd(np.arange(150.0)) == pytest.approx(99 * math.sqrt(2))
    with pytest.raises(ValueError):
        mmd(np.arange(10.0), window_s=0.01)


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, st.integers(0, 700), elements=finite), st.sampled_from([2, 3, 50, 100]))
def test_mmd_matches_oracle(x, win):
    assert mmd(x, window_s=win / 100) == pytest.approx(mmd_oracle(x, win), rel=1e-12, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=5), st.floats(0.01, 100))
def test_mmd_scales_with_amplitude_when_time_term_zero(levels, a):
    # a window holding one level reaches min and max at the same sample
    x = np.repeat(np.asarray(levels), 100)
    assert mmd(a * x) == pytest.approx(a * mmd(x), abs=1e-9)


# -- digamma -----------------------------------------------------------------


def test_digamma_against_scipy():
    x = np.concatenate([np.linspace(1e-3, 1, 200), np.linspace(1, 50, 500), np.arange(1, 5001.0),
                        [1e5, 1e7, 1e9]])
    ref = scipy.special.digamma(x)
    assert np.all(np.abs(digamma(x) - ref) <= 1e-10 * np.maximum(1, np.abs(ref)))
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)


@given(st.floats(1e-3, 1e6))
def test_digamma_property(x):
    assert abs(digamma(x) - scipy.special.digamma(x)) < 1e-10 * max(1.0, abs(scipy.special.digamma(x)))


def test_digamma_domain():
    with pytest.raises(ValueError):
        digamma(0.0)


# -- mutual information ------------------------------------------------------


def test_mi_constant_feature_is_zero():
    labels = np.repeat(np.arange(5), 50)
    assert mutual_info(np.ones((250, 1)), labels)[0] == 0.0


def test_mi_feature_equals_label():
    labels = np.repeat(np.arange(5), 200)
    score = mutual_info(labels[:, None].astype(float), labels, k=3, seed=0)[0]
    assert abs(score - math.log(5)) < 0.1 * math.log(5)


def test_mi_independent_feature():
    rng = np.random.default_rng(42)
    labels = np.repeat(np.arange(5), 200)
    x = rng.standard_normal(1000)
    assert mutual_info(x[:, None], labels, seed=1)[0] < 0.05


def test_mi_matches_brute_force():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 3, 120)
    x = rng.standard_normal(120) + 0.7 * labels
    assert mi_continuous_discrete(x, labels, 3) == pytest.approx(brute_force_mi(x, labels, 3), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 5), st.integers(2, 4))
def test_mi_matches_brute_force_property(seed, k, n_classes):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_classes), k + 3 + rng.integers(0, 10, n_classes))
    x = rng.standard_normal(len(labels)) * (1 + labels)
    assert mi_continuous_discrete(x, labels, k) == pytest.approx(brute_force_mi(x, labels, k), abs=1e-10)


def test_mi_matches_sklearn_estimator():
    skl = pytest.importorskip("sklearn.feature_selection._mutual_info")
    rng = np.random.default_rng(11)
    labels = rng.integers(0, 5, 600)
    x = rng.standard_normal(600) * (1 + 0.3 * labels)
    ours = mi_continuous_discrete(x, labels, 3)
    theirs = skl._compute_mi_cd(x, labels, 3)
    assert ours == pytest.approx(theirs, abs=1e-10)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([np.exp, np.cbrt, lambda v: 3 * v - 7, np.arctan]))
def test_mi_invariant_under_monotone_transform(seed, f):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 4, 200)
    x = rng.standard_normal(200) + labels
    a = mutual_info(x[:, None], labels, seed=5)
    b = mutual_info(f(x)[:, None], labels, seed=5)
    np.testing.assert_array_equal(a, b)


def test_mi_deterministic_given_seed():
    rng = np.random.default_rng(1)
    feats = rng.integers(0, 4, (300, 3)).astype(float)
    labels = rng.integers(0, 3, 300)
    np.testing.assert_array_equal(mutual_info(feats, labels, seed=3), mutual_info(feats, labels, seed=3))


def test_mi_drops_small_classes():
    rng = np.random.default_rng(2)
    labels = np.r_[np.zeros(50, int), np.ones(50, int), [2, 2, 2]]
    x = rng.standard_normal(len(labels))
    with pytest.warns(UserWarning, match="dropping"):
        with_small = mutual_info(x[:, None], labels, seed=0)
    assert with_small[0] == mutual_info(x[:100, None], labels[:100], seed=0)[0]


def test_mi_scores_nonnegative():
    rng = np.random.default_rng(9)
    s = mutual_info(rng.standard_normal((200, 6)), rng.integers(0, 5, 200))
    assert np.all(s >= 0)


# -- relative importance -----------------------------------------------------


def test_relative_importance_examples():
    r = relative_importance([[1, 1, 2]], names=("a", "b", "c"))
    np.testing.assert_allclose(r.relative, [25, 25, 50])
    r2 = relative_importance([[1, 1, 2], [1, 1, 2]], names=("a", "b", "c"))
    np.testing.assert_allclose(r2.relative, r.relative)
    assert r.rank_of("c") == 1


def test_relative_importance_all_zero():
    with pytest.raises(AllZeroScores):
        relative_importance([[0, 0, 0]], names=("a", "b", "c"))


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 10)),
                  elements=st.floats(0.01, 10)), st.randoms(use_true_random=False))
def test_relative_importance_sums_and_permutes(scores, rnd):
    names = tuple(f"f{i}" for i in range(scores.shape[1]))
    r = relative_importance(scores, names)
    assert abs(r.relative.sum() - 100) < 1e-6
    perm = list(range(scores.shape[1]))
    rnd.shuffle(perm)
    rp = relative_importance(scores[:, perm], tuple(names[i] for i in perm))
    np.testing.assert_allclose(rp.relative, r.relative[perm], rtol=1e-12)


def test_csv_outputs(tmp_path):
    x = np.random.default_rng(0).standard_normal((3, 3000))
    features.write_features_csv(tmp_path / "f.csv", feature_matrix(x), [0, 1, 2])
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert lines[0].split(",") == list(FEATURE_NAMES) + ["label"]
    assert len(lines) == 4
    r = relative_importance([[1.0] * 10])
    features.write_mi_csv(tmp_path / "mi.csv", r)
    assert (tmp_path / "mi.csv").read_text().splitlines()[0] == "feature,score_nats,relative_importance_pct"


def test_backend_independent_features():
    from somno import use_backend

    x = np.random.default_rng(4).standard_normal((3, 3000))
    labels = np.repeat(np.arange(3), 20)
    y = np.random.default_rng(5).standard_normal(60) + labels
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with use_backend("numpy"):
            a, ma = feature_matrix(x), mutual_info(y[:, None], labels)
        with use_backend("numba"):
            b, mb = feature_matrix(x), mutual_info(y[:, None], labels)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    np.testing.assert_allclose(ma, mb, rtol=1e-12)
