"""Per-epoch statistical features and k-NN mutual-information ranking."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import _kernels
from .errors import AllZeroScores

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "mean",
    "std",
    "min",
    "max",
    "median",
    "skewness",
    "kurtosis",
    "peak_to_peak",
    "zero_crossing_rate",
    "mmd",
)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    zero_variance: bool = False

    def __getitem__(self, name: str) -> float:
        return float(self.values[FEATURE_NAMES.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(FEATURE_NAMES, self.values)}


def mmd(epoch, window_s: float = 1.0, sample_rate_hz: float = 100) -> float:
    """Min-max distance: sum over 1 s windows of the distance between the
    window's minimum and maximum points.

    Time is measured in samples, amplitude in signal units. Ties resolve to
    the first occurrence, so a flat window contributes 0.
    """
    win = int(round(window_s * sample_rate_hz))
    if win < 2:
        raise ValueError(f"window must hold at least 2 samples, got {win}")
    return _kernels.mmd_sum(np.asarray(epoch, dtype=np.float64), win)


def feature_matrix(samples: np.ndarray, sample_rate_hz: float = 100) -> np.ndarray:
    """Features for a batch of epochs, shape (n, 10), in ``FEATURE_NAMES`` order."""
    x = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n, length = x.shape
    if length == 0:
        raise ValueError("empty epoch")
    mean = x.mean(axis=1)
    centred = x - mean[:, None]
    var = (centred**2).mean(axis=1)
    std = np.sqrt(var)
    # standardize before raising to powers so tiny variances do not underflow
    z = centred / np.where(std > 0, std, 1.0)[:, None]
    skew = np.where(std > 0, (z**3).mean(axis=1), 0.0)
    kurt = np.where(std > 0, (z**4).mean(axis=1), 0.0)
    lo = x.min(axis=1)
    hi = x.max(axis=1)
    crossings = (centred[:, :-1] * centred[:, 1:] < 0).sum(axis=1)
    zcr = crossings / (length - 1) if length > 1 else np.zeros(n)
    mmds = np.array([mmd(row, sample_rate_hz=sample_rate_hz) for row in x])
    out = np.column_stack([mean, std, lo, hi, np.median(x, axis=1), skew, kurt, hi - lo, zcr, mmds])
    return out


def stat_features(epoch, sample_rate_hz: float = 100) -> FeatureVector:
    x = np.asarray(epoch, dtype=np.float64)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise ValueError("epoch must be non-empty and finite")
    values = feature_matrix(x[None, :], sample_rate_hz)[0]
    return FeatureVector(values, zero_variance=bool(values[1] == 0))


# --------------------------------------------------------------------------
# digamma
# --------------------------------------------------------------------------

# Bernoulli-number coefficients of the asymptotic series in 1/x^2
_PSI_SERIES = (1 / 12, -1 / 120, 1 / 252, -1 / 240, 1 / 132, -691 / 32760, 1 / 12)


def digamma(x):
    """Digamma for positive arguments: upward recurrence to x >= 10, then the asymptotic series."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma implemented for x > 0 only")
    acc = np.zeros_like(x)
    x = x.copy()
    small = x < 10
    while np.any(small):
        acc[small] -= 1.0 / x[small]
        x[small] += 1.0
        small = x < 10
    inv2 = 1.0 / (x * x)
    series = np.zeros_like(x)
    for c in reversed(_PSI_SERIES):
        series = (series + c) * inv2
    out = acc + np.log(x) - 0.5 / x - series
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# mutual information between a continuous feature and the stage label
# --------------------------------------------------------------------------


def _prepare_feature(x: np.ndarray, rng: np.random.Generator, rank_scale: bool) -> np.ndarray:
    n = len(x)
    if rank_scale:
        x = (rankdata(x) - 1.0) / (n - 1)
        jitter = 1e-10
    else:
        x = x / x.std()
        jitter = 1e-10 * max(1.0, float(np.mean(np.abs(x))))
    return x + jitter * rng.standard_normal(n)


def mi_continuous_discrete(x: np.ndarray, labels: np.ndarray, k: int = 3) -> float:
    """k-NN estimate (nats) of I(x; label) for one prepared 1-D feature.

    For sample ``i`` of class ``c``: ``r_i`` is the distance to its k-th
    nearest same-class neighbour and ``m_i`` the number of samples (itself
    included) strictly closer than ``r_i``. The estimate is
    ``psi(N) - <psi(N_c)> + psi(k) - <psi(m_i)>``, clamped at 0.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    n = len(x)
    radius = np.empty(n)
    class_count = np.empty(n)
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        order = np.argsort(x[members], kind="stable")
        sorted_vals = x[members][order]
        r = np.empty(len(members))
        r[order] = _kernels.kth_neighbor_distance(sorted_vals, k)
        radius[members] = r
        class_count[members] = len(members)
    m = _kernels.count_within(np.sort(x), x, radius)
    m = np.maximum(m, 1)
    score = digamma(n) - np.mean(digamma(class_count)) + digamma(k) - np.mean(digamma(m))
    return max(0.0, float(score))


def mutual_info(features, labels, k: int = 3, seed: int = 0, rank_scale: bool = True) -> np.ndarray:
    """Mutual information (nats) between each feature column and the labels.

    Classes with ``k`` or fewer members are dropped with a warning. Each
    column is rank-scaled to [0, 1] (or std-scaled with ``rank_scale=False``)
    and given 1e-10 seeded jitter to break ties; the jitter stream for column
    ``j`` depends only on ``(seed, j)``.
    """
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[:, None]
    labels = np.asarray(labels).astype(np.int64)
    if len(labels) != feats.shape[0]:
        raise ValueError("features and labels differ in length")
    classes, counts = np.unique(labels, return_counts=True)
    small = classes[counts <= k]
    if len(small):
        warnings.warn(f"dropping classes with <= {k} samples: {small.tolist()}", stacklevel=2)
        keep = ~np.isin(labels, small)
        feats, labels = feats[keep], labels[keep]
    n = len(labels)
    if n <= k + 1:
        raise ValueError(f"need more than k+1={k + 1} samples, got {n}")
    scores = np.zeros(feats.shape[1])
    for j in range(feats.shape[1]):
        col = feats[:, j]
        if np.all(col == col[0]):
            continue
        rng = np.random.default_rng([seed, j])
        scores[j] = mi_continuous_discrete(_prepare_feature(col, rng, rank_scale), labels, k)
    return scores


@dataclass(frozen=True)
class MiRanking:
    names: tuple[str, ...]
    scores: np.ndarray  # mean nats across nights
    relative: np.ndarray  # mean percentage across nights

    def order(self) -> np.ndarray:
        """Feature indices by decreasing relative importance."""
        return np.argsort(-self.relative, kind="stable")

    def rank_of(self, name: str) -> int:
        """1-based rank of ``name``."""
        return int(np.flatnonzero(self.order() == self.names.index(name))[0]) + 1


def relative_importance(scores_per_night, names=FEATURE_NAMES) -> MiRanking:
    """Average, over nights, of each feature's share of that night's total MI."""
    s = np.atleast_2d(np.asarray(scores_per_night, dtype=np.float64))
    if s.shape[0] == 0:
        raise ValueError("need at least one night")
    totals = s.sum(axis=1)
    if np.any(totals <= 0):
        raise AllZeroScores("a night has all-zero mutual information scores")
    pct = 100.0 * s / totals[:, None]
    return MiRanking(tuple(names), s.mean(axis=0), pct.mean(axis=0))


def write_features_csv(path, feats: np.ndarray, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(FEATURE_NAMES) + ["label"])
        for row, lab in zip(feats, labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def write_mi_csv(path, ranking: MiRanking) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "score_nats", "relative_importance_pct"])
        for i in ranking.order():
            w.writerow([ranking.names[i], f"{ranking.scores[i]:.6f}", f"{ranking.relative[i]:.4f}"])
