"""Domain types shared by every other module.

Probabilities are stored as ``(p0, p1)`` pairs for binary labels. A predictor
may produce several member softmax vectors for the same input (deep ensembles,
MC-Dropout); the record keeps all of them together with their mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidParameter

# sums within EXACT_TOL are kept verbatim, within RENORM_TOL they are rescaled
EXACT_TOL = 1e-12
RENORM_TOL = 1e-9


def _check_label(y, name="label") -> int:
    if y not in (0, 1) or isinstance(y, bool):
        raise InvalidParameter(f"{name} must be 0 or 1, got {y!r}")
    return int(y)


@dataclass(frozen=True)
class ProbVector:
    p0: float
    p1: float

    def __post_init__(self):
        p0, p1 = float(self.p0), float(self.p1)
        if not (np.isfinite(p0) and np.isfinite(p1)):
            raise InvalidParameter(f"non-finite probabilities ({p0}, {p1})")
        if p0 < -RENORM_TOL or p1 < -RENORM_TOL:
            raise InvalidParameter(f"negative probability in ({p0}, {p1})")
        total = p0 + p1
        if abs(total - 1.0) > RENORM_TOL:
            raise InvalidParameter(f"probabilities ({p0}, {p1}) sum to {total!r}")
        p0, p1 = max(p0, 0.0), max(p1, 0.0)
        if abs(p0 + p1 - 1.0) > EXACT_TOL:
            p0, p1 = p0 / (p0 + p1), p1 / (p0 + p1)
        object.__setattr__(self, "p0", min(p0, 1.0))
        object.__setattr__(self, "p1", min(p1, 1.0))

    def __getitem__(self, label: int) -> float:
        if label == 0:
            return self.p0
        if label == 1:
            return self.p1
        raise IndexError(label)

    def as_tuple(self) -> tuple[float, float]:
        return (self.p0, self.p1)

    @property
    def argmax(self) -> int:
        """Predicted label; an exact 0.5 tie resolves to label 0."""
        return 1 if self.p1 > self.p0 else 0


@dataclass(frozen=True)
class LabeledSample:
    id: str
    x: tuple[float, float]
    y: int

    def __post_init__(self):
        _check_label(self.y, "y")
        if len(self.x) != 2 or not all(np.isfinite(v) for v in self.x):
            raise InvalidParameter(f"sample {self.id}: x must be a finite 2-vector")


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    members: tuple[ProbVector, ...]
    logits: tuple[tuple[float, float], ...] | None = None
    mean_prob: ProbVector = field(init=False)
    y_hat: int = field(init=False)

    def __post_init__(self):
        members = tuple(m if isinstance(m, ProbVector) else ProbVector(*m) for m in self.members)
        if not members:
            raise InvalidParameter(f"record {self.sample_id}: no members")
        object.__setattr__(self, "members", members)
        if self.logits is not None:
            logits = tuple((float(a), float(b)) for a, b in self.logits)
            if len(logits) != len(members):
                raise InvalidParameter(
                    f"record {self.sample_id}: {len(logits)} logit rows for {len(members)} members")
            object.__setattr__(self, "logits", logits)
        # left-to-right summation so the mean is reproducible
        s0 = s1 = 0.0
        for m in members:
            s0 += m.p0
            s1 += m.p1
        mean = ProbVector(s0 / len(members), s1 / len(members))
        object.__setattr__(self, "mean_prob", mean)
        object.__setattr__(self, "y_hat", mean.argmax)

    @classmethod
    def from_arrays(cls, sample_id, members, logits=None) -> "PredictionRecord":
        members = np.asarray(members, dtype=float).reshape(-1, 2)
        rows = tuple(ProbVector(float(a), float(b)) for a, b in members)
        if logits is not None:
            logits = tuple(tuple(map(float, row)) for row in np.asarray(logits, float).reshape(-1, 2))
        return cls(str(sample_id), rows, logits)

    def member_array(self) -> np.ndarray:
        return np.array([m.as_tuple() for m in self.members])

    def logit_array(self) -> np.ndarray | None:
        return None if self.logits is None else np.array(self.logits)


@dataclass(frozen=True)
class OracleAnnotation:
    sample_id: str
    posterior: ProbVector
    bayes_label: int
    phi: float
    varphi: float
    mis: int
    delta: float
    bayes_agree: int


@dataclass(frozen=True)
class ScoreSeries:
    name: str
    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != len(values):
            raise InvalidParameter(f"score series {self.name}: {len(ids)} ids for {len(values)} values")
        if len(set(ids)) != len(ids):
            raise InvalidParameter(f"score series {self.name}: duplicate sample ids")
        if not np.all(np.isfinite(values)):
            raise InvalidParameter(f"score series {self.name}: non-finite scores")
        values.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_values(cls, name: str, values: Sequence[float], ids=None) -> "ScoreSeries":
        values = np.asarray(values, dtype=float)
        if ids is None:
            ids = [str(i) for i in range(len(values))]
        return cls(name, tuple(ids), values)

    def __len__(self) -> int:
        return len(self.values)

    def items(self):
        return zip(self.ids, self.values.tolist())


def mis_indicator(y: int, y_hat: int) -> int:
    return int(_check_label(y) != _check_label(y_hat))


def gap_delta(probs: ProbVector, y: int) -> float:
    """Softmax mass withheld from the observed label, ``1 - probs[y]``."""
    return 1.0 - probs[_check_label(y)]


def varphi_of(probs: ProbVector, bayes_label: int) -> float:
    """Softmax mass withheld from the Bayes-optimal label."""
    return 1.0 - probs[_check_label(bayes_label)]


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Vectorized argmax over ``(..., 2)`` arrays with ties going to label 0."""
    probs = np.asarray(probs)
    return (probs[..., 1] > probs[..., 0]).astype(np.int64)


def as_scores(scores) -> np.ndarray:
    if isinstance(scores, ScoreSeries):
        return np.asarray(scores.values, dtype=float)
    return np.asarray(scores, dtype=float).reshape(-1)
