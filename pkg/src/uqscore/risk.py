"""Risk control over score sub-level sets.

For a threshold ``beta`` the trusted region is ``{x : s(x) <= beta}``. The
risk curve records, at every distinct observed score, the rate of an error
indicator inside that region (misclassification for ``mce``, disagreement
with the Bayes classifier for ``mbc``) together with its coverage.
Calibration inverts the curve: the largest threshold whose empirical risk
stays within a budget ``gamma``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import beta as beta_dist

from .core import as_scores
from .errors import InfeasibleBudget, InvalidParameter

CURVE_KINDS = ("mce", "mbc")
# 0.010, 0.015, ..., 0.100
DEFAULT_GAMMA_GRID = tuple(round(0.01 + 0.005 * k, 3) for k in range(19))


@dataclass(frozen=True)
class RiskCurve:
    kind: str
    beta: np.ndarray
    risk: np.ndarray
    coverage: np.ndarray
    n_covered: np.ndarray
    n_errors: np.ndarray

    def __len__(self) -> int:
        return len(self.beta)

    @property
    def n(self) -> int:
        return int(self.n_covered[-1]) if len(self) else 0

    def at(self, beta: float) -> int:
        """Index of the last curve point with threshold ``<= beta`` (-1 if none)."""
        return int(np.searchsorted(self.beta, beta, side="right")) - 1

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["beta", "risk", "coverage", "n_covered"])
        for b, r, c, k in zip(self.beta, self.risk, self.coverage, self.n_covered):
            writer.writerow([repr(float(b)), repr(float(r)), repr(float(c)), int(k)])
        return buf.getvalue()


def risk_curve(scores, indicators, kind: str = "mce") -> RiskCurve:
    """Empirical conditional error rate inside each sub-level set.

    ``indicators`` are misclassification flags for ``mce`` and
    ``1 - bayes_agree`` for ``mbc``.
    """
    if kind not in CURVE_KINDS:
        raise InvalidParameter(f"unknown curve kind {kind!r}")
    s = as_scores(scores)
    ind = np.asarray(indicators).reshape(-1)
    if len(s) == 0:
        raise InvalidParameter("empty score series")
    if len(ind) != len(s):
        raise InvalidParameter(f"length mismatch: {len(s)} scores vs {len(ind)} indicators")
    if not np.all((ind == 0) | (ind == 1)):
        raise InvalidParameter("indicators must be 0 or 1")
    values, inverse = np.unique(s, return_inverse=True)
    n_cov = np.cumsum(np.bincount(inverse, minlength=len(values)))
    n_err = np.cumsum(np.bincount(inverse, weights=ind.astype(float), minlength=len(values))).astype(np.int64)
    return RiskCurve(kind, values, n_err / n_cov, n_cov / len(s), n_cov, n_err)


@dataclass
class CalibratedGate:
    gamma_target: float
    beta_hat: float
    achieved_risk: float
    coverage: float
    expected_set_size: float
    n_covered: int = 0
    n_errors: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def calibrate_gate(curve: RiskCurve, gamma: float) -> CalibratedGate:
    """Largest threshold whose empirical risk is within ``gamma``.

    Picking the largest feasible threshold maximizes coverage under the budget.
    The empirical curve need not be monotone, so every point is checked.
    """
    if not gamma >= 0:
        raise InvalidParameter(f"gamma must be non-negative, got {gamma}")
    if len(curve) == 0:
        raise InvalidParameter("empty risk curve")
    feasible = np.flatnonzero(curve.risk <= gamma)
    if len(feasible) == 0:
        raise InfeasibleBudget(f"no threshold reaches risk <= {gamma} (smallest set has {curve.risk[0]:.6g})")
    i = int(feasible[-1])
    cov = float(curve.coverage[i])
    return CalibratedGate(
        gamma_target=float(gamma),
        beta_hat=float(curve.beta[i]),
        achieved_risk=float(curve.risk[i]),
        coverage=cov,
        expected_set_size=cov * 1 + (1.0 - cov) * 2,
        n_covered=int(curve.n_covered[i]),
        n_errors=int(curve.n_errors[i]),
    )


def gate_outcome(scores, indicators, beta: float) -> tuple[int, int]:
    """``(n_covered, n_errors)`` for a fixed threshold on another sample."""
    s = as_scores(scores)
    ind = np.asarray(indicators).reshape(-1)
    inside = s <= beta
    return int(inside.sum()), int(ind[inside].sum())


def set_valued_coverage(scores, y, y_hat, beta: float) -> float:
    """Fraction of samples whose label lies in the set-valued prediction.

    Inside the trusted region the set is ``{y_hat}``; outside it is the full
    label set, which always contains ``y``.
    """
    s = as_scores(scores)
    y = np.asarray(y).reshape(-1)
    y_hat = np.asarray(y_hat).reshape(-1)
    inside = s <= beta
    return float(np.mean(np.where(inside, y == y_hat, True)))


def clopper_pearson(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval for ``k`` successes in ``n`` trials."""
    if n <= 0 or not 0 <= k <= n:
        raise InvalidParameter(f"invalid binomial counts k={k}, n={n}")
    a = 1.0 - level
    low = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    high = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return low, high


@dataclass
class DominanceEntry:
    gamma: float
    status: str
    coverage_1: float | None = None
    coverage_2: float | None = None
    se_1: float | None = None
    se_2: float | None = None
    gap: float | None = None
    sign: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def dominance_profile(s1, s2, indicators, correct_mask, gamma_grid=DEFAULT_GAMMA_GRID,
                      kind: str = "mce") -> list[DominanceEntry]:
    """Compare two scorings at matched risk budgets.

    At each ``gamma`` both scorings are calibrated on the same sample and the
    fraction of correct samples (``correct_mask``) kept inside each calibrated
    region is reported with its binomial standard error. ``gap`` is
    ``coverage_1 - coverage_2``.
    """
    a = as_scores(s1)
    b = as_scores(s2)
    if len(a) != len(b):
        raise InvalidParameter("both scorings must cover the same samples")
    correct = np.asarray(correct_mask, dtype=bool).reshape(-1)
    n_correct = int(correct.sum())
    if n_correct == 0:
        raise InvalidParameter("no correct samples to condition on")
    curves = (risk_curve(a, indicators, kind), risk_curve(b, indicators, kind))
    out = []
    for gamma in gamma_grid:
        try:
            gates = [calibrate_gate(c, gamma) for c in curves]
        except InfeasibleBudget:
            out.append(DominanceEntry(float(gamma), "skipped"))
            continue
        covs = [float(np.mean(s[correct] <= g.beta_hat)) for s, g in zip((a, b), gates)]
        ses = [math.sqrt(c * (1 - c) / n_correct) for c in covs]
        gap = covs[0] - covs[1]
        out.append(DominanceEntry(float(gamma), "ok", covs[0], covs[1], ses[0], ses[1], gap,
                                  int(np.sign(gap))))
    return out
