"""Ground-truth-free rank metrics for uncertainty scores.

``uq_auc`` is the probability that a correctly classified sample scores lower
than a misclassified one. ``uq_c_index`` is the concordance between scores and
the softmax mass withheld from the true label. Both give half credit to score
ties. The pair counts run in ``O(n log n)``: the AUC through rank sums, the
C-index and Kendall's tau-b through a merge-sort inversion count.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm, rankdata

from .core import as_scores
from .errors import InvalidParameter, MetricUndefined


def _tie_pairs(values) -> int:
    """Number of unordered pairs with exactly equal values."""
    _, counts = np.unique(values, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _joint_tie_pairs(a, b) -> int:
    _, counts = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def count_inversions(seq) -> int:
    """Pairs ``i < j`` with ``seq[i] > seq[j]``, by bottom-up merge sort.

    Each merge level is vectorized: values are offset by their block index so a
    single ``searchsorted`` counts, for every right-half element, the left-half
    elements of the same block that exceed it.
    """
    _, ranks = np.unique(np.asarray(seq), return_inverse=True)
    a = ranks.astype(np.int64).reshape(-1)
    n = len(a)
    if n < 2:
        return 0
    base = int(a.max()) + 1
    pos = np.arange(n)
    total = 0
    width = 1
    while width < n:
        block = pos // (2 * width)
        right = (pos % (2 * width)) >= width
        keys = block * base + a
        left_keys = keys[~right]
        left_upto = np.searchsorted(block[~right], block[right], side="right")
        total += int(np.sum(left_upto - np.searchsorted(left_keys, keys[right], side="right")))
        a = np.sort(keys, kind="stable") - block * base
        width *= 2
    return total


def _check_pair(a, b):
    a = as_scores(a)
    b = as_scores(b)
    if len(a) != len(b):
        raise InvalidParameter(f"length mismatch: {len(a)} vs {len(b)}")
    return a, b


def _labels(mis) -> np.ndarray:
    mis = np.asarray(mis).reshape(-1)
    if not np.all((mis == 0) | (mis == 1)):
        raise InvalidParameter("misclassification indicators must be 0 or 1")
    return mis.astype(np.int64)


def uq_auc(scores, mis) -> float:
    """Mann-Whitney estimate of P(score of a correct sample < score of a wrong one)."""
    s = as_scores(scores)
    mis = _labels(mis)
    if len(mis) != len(s):
        raise InvalidParameter(f"length mismatch: {len(s)} scores vs {len(mis)} labels")
    n_wrong = int(mis.sum())
    n_right = len(mis) - n_wrong
    if n_wrong == 0 or n_right == 0:
        raise MetricUndefined("uq_auc")
    ranks = rankdata(s)
    u = ranks[mis == 1].sum() - n_wrong * (n_wrong + 1) / 2.0
    return float(u / (n_right * n_wrong))


@dataclass(frozen=True)
class _PairCounts:
    comparable: int
    concordant: int
    discordant: int
    score_ties: int


def _concordance_counts(scores, target) -> _PairCounts:
    """Pair counts over pairs with distinct ``target``, oriented by the target."""
    order = np.lexsort((scores, target))
    discordant = count_inversions(scores[order])
    n = len(scores)
    comparable = n * (n - 1) // 2 - _tie_pairs(target)
    score_ties = _tie_pairs(scores) - _joint_tie_pairs(scores, target)
    concordant = comparable - discordant - score_ties
    return _PairCounts(comparable, concordant, discordant, score_ties)


def uq_c_index(scores, deltas) -> float:
    """Concordance between scores and misclassification gaps.

    Pairs with equal gaps are not comparable; pairs with equal scores earn half
    credit.
    """
    s, d = _check_pair(scores, deltas)
    counts = _concordance_counts(s, d)
    if counts.comparable == 0:
        raise MetricUndefined("uq_c_index")
    return (counts.concordant + 0.5 * counts.score_ties) / counts.comparable


def comparable_pairs(deltas) -> int:
    d = as_scores(deltas)
    return len(d) * (len(d) - 1) // 2 - _tie_pairs(d)


def kendall_tau(a, b) -> float:
    """Kendall's tau-b with tie corrections."""
    a, b = _check_pair(a, b)
    if len(a) < 2:
        raise InvalidParameter("kendall_tau needs at least two observations")
    n0 = len(a) * (len(a) - 1) // 2
    ties_a = _tie_pairs(a)
    ties_b = _tie_pairs(b)
    if ties_a == n0 or ties_b == n0:
        raise MetricUndefined("kendall_tau")
    order = np.lexsort((b, a))
    discordant = count_inversions(b[order])
    concordant = n0 - ties_a - ties_b + _joint_tie_pairs(a, b) - discordant
    return float((concordant - discordant) / math.sqrt((n0 - ties_a) * (n0 - ties_b)))


def _score_order(scores, ids=None) -> np.ndarray:
    s = as_scores(scores)
    if ids is None:
        ids = getattr(scores, "ids", None)
    if ids is None:
        return np.argsort(s, kind="stable")
    return np.lexsort((np.asarray(ids, dtype=str), s))


def risk_coverage(scores, mis, ids=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample risk-coverage points: coverage ``k/n`` and the error rate among
    the ``k`` lowest scores, ties ordered by sample id."""
    mis = _labels(mis)
    order = _score_order(scores, ids)
    k = np.arange(1, len(mis) + 1)
    return k / len(mis), np.cumsum(mis[order]) / k


def g_auc_direct(scores, mis, ids=None) -> float:
    """Area under the risk-coverage curve, averaged over the per-sample grid."""
    mis = _labels(mis)
    if mis.sum() in (0, len(mis)):
        raise MetricUndefined("g_auc")
    _, risk = risk_coverage(scores, mis, ids)
    return float(risk.mean())


def h_auc_direct(scores, mis) -> float:
    """Area under the curve tracing the covered correct mass against the
    covered misclassified mass as the threshold rises (trapezoidal, so tied
    scores split their credit)."""
    s = as_scores(scores)
    mis = _labels(mis)
    if mis.sum() in (0, len(mis)):
        raise MetricUndefined("h_auc")
    n = len(s)
    values, inverse = np.unique(s, return_inverse=True)
    wrong = np.bincount(inverse, weights=mis, minlength=len(values))
    right = np.bincount(inverse, weights=1 - mis, minlength=len(values))
    x = np.concatenate([[0.0], np.cumsum(wrong)]) / n
    y = np.concatenate([[0.0], np.cumsum(right)]) / n
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise InvalidParameter(f"{name} must lie in [0, 1], got {v}")


def g_auc_from_lemma(uq_auc_value: float, acc: float) -> float:
    _check_unit("uq_auc", uq_auc_value)
    _check_unit("acc", acc)
    return (1.0 - acc) ** 2 + 2.0 * (1.0 - uq_auc_value) * (1.0 - acc) * acc


def h_auc_from_lemma(uq_auc_value: float, acc: float) -> float:
    _check_unit("uq_auc", uq_auc_value)
    _check_unit("acc", acc)
    return uq_auc_value * (1.0 - acc) * acc


@dataclass
class MetricReport:
    uq_auc: float
    uq_c_index: float
    g_auc_direct: float
    g_auc_lemma: float
    h_auc_lemma: float
    acc: float
    n: int
    comparable_pairs: int
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


def metric_report(scores, mis, deltas, provenance: dict | None = None, ids=None) -> MetricReport:
    mis = _labels(mis)
    auc = uq_auc(scores, mis)
    acc = float(1.0 - mis.mean())
    return MetricReport(
        uq_auc=auc,
        uq_c_index=uq_c_index(scores, deltas),
        g_auc_direct=g_auc_direct(scores, mis, ids),
        g_auc_lemma=g_auc_from_lemma(auc, acc),
        h_auc_lemma=h_auc_from_lemma(auc, acc),
        acc=acc,
        n=len(mis),
        comparable_pairs=comparable_pairs(deltas),
        provenance=dict(provenance or {}),
    )


@dataclass
class CorrelationReport:
    kendall_tau: float | None
    pearson_r: float
    pearson_ci_low: float
    pearson_ci_high: float
    alpha: float

    def to_dict(self) -> dict:
        return asdict(self)


def pearson_fisher(a, b, alpha: float = 0.95, with_kendall: bool = True) -> CorrelationReport:
    """Pearson correlation with a Fisher z-transform confidence interval.

    ``alpha`` is the confidence level. A correlation within 1e-12 of +-1 has a
    degenerate interval collapsed onto the point estimate.
    """
    a, b = _check_pair(a, b)
    if not 0 < alpha < 1:
        raise InvalidParameter(f"alpha must lie in (0, 1), got {alpha}")
    n = len(a)
    if n < 4:
        raise MetricUndefined("pearson_ci")
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float(np.dot(da, da)) * float(np.dot(db, db)))
    if denom == 0.0:
        raise MetricUndefined("pearson_r")
    r = float(np.clip(np.dot(da, db) / denom, -1.0, 1.0))
    if abs(r) >= 1.0 - 1e-12:
        low = high = r
    else:
        half = norm.ppf(0.5 + alpha / 2.0) / math.sqrt(n - 3)
        z = math.atanh(r)
        low, high = math.tanh(z - half), math.tanh(z + half)
    tau = kendall_tau(a, b) if with_kendall else None
    return CorrelationReport(tau, r, low, high, alpha)
