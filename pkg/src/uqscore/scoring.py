"""Uncertainty scores computed from one or several predicted softmax vectors.

Kernels work on arrays so the experiment grid can score a whole test set at
once: probabilities have shape ``(..., 2)`` and member stacks ``(..., m, 2)``.
Higher score means a less trustworthy prediction. Entropies are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import entr, logsumexp

from .core import PredictionRecord
from .errors import InvalidParameter

SCORING_KINDS = ("entropy", "gap", "variance", "total_entropy", "aleatoric_entropy",
                 "mutual_information", "free_energy")
ENSEMBLE_ONLY = frozenset({"total_entropy", "aleatoric_entropy", "mutual_information"})
MI_CLAMP = 1e-12


@dataclass(frozen=True)
class ScoringSpec:
    kind: str
    temperature: float = 1.0

    def __post_init__(self):
        if self.kind not in SCORING_KINDS:
            raise InvalidParameter(f"unknown scoring {self.kind!r}; expected one of {', '.join(SCORING_KINDS)}")
        if not self.temperature > 0:
            raise InvalidParameter(f"temperature must be positive, got {self.temperature}")

    def check_capability(self, n_members: int, has_logits: bool) -> None:
        """Reject scorings a backbone cannot support."""
        if self.kind in ENSEMBLE_ONLY and n_members < 2:
            raise InvalidParameter(f"{self.kind} needs at least two members")
        if self.kind == "free_energy" and not has_logits:
            raise InvalidParameter("free_energy needs logits")


def entropy(probs) -> np.ndarray | float:
    out = entr(np.asarray(probs, dtype=float)).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def total_entropy(members) -> np.ndarray | float:
    return entropy(np.asarray(members, float).mean(axis=-2))


def aleatoric_entropy(members) -> np.ndarray | float:
    out = np.asarray(entropy(members)).mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def mutual_information(members, clamp: bool = True) -> np.ndarray | float:
    """Total minus aleatoric entropy.

    Round-off can push the difference slightly below zero; values in
    ``(-1e-12, 0)`` are clamped to 0 when ``clamp`` is set.
    """
    mi = np.asarray(total_entropy(members)) - np.asarray(aleatoric_entropy(members))
    if clamp:
        mi = np.where((mi < 0) & (mi > -MI_CLAMP), 0.0, mi)
    return float(mi) if np.ndim(mi) == 0 else mi


def free_energy(logits, temperature: float = 1.0) -> np.ndarray | float:
    if not temperature > 0:
        raise InvalidParameter(f"temperature must be positive, got {temperature}")
    logits = np.asarray(logits, dtype=float)
    out = -temperature * logsumexp(logits / temperature, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def ensemble_free_energy(member_logits, temperature: float = 1.0):
    """Free energy of the member-averaged logits."""
    return free_energy(np.asarray(member_logits, float).mean(axis=-2), temperature)


def _predicted(members) -> np.ndarray:
    mean = members.mean(axis=-2)
    return (mean[..., 1] > mean[..., 0]).astype(np.int64)


def variance_score(members) -> np.ndarray | float:
    """Bernoulli variance for one member, spread of the predicted class otherwise.

    With several members this is the population variance, across members, of
    the probability each assigns to the ensemble's predicted label.
    """
    members = np.asarray(members, dtype=float)
    if members.shape[-2] == 1:
        p1 = members[..., 0, 1]
        out = p1 * (1.0 - p1)
    else:
        y_hat = _predicted(members)
        picked = np.where(y_hat[..., None] == 1, members[..., 1], members[..., 0])
        out = picked.var(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def gap_score(members) -> np.ndarray | float:
    members = np.asarray(members, dtype=float)
    mean = members.mean(axis=-2)
    out = 1.0 - mean.max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def score_arrays(spec: ScoringSpec | str, members, logits=None) -> np.ndarray:
    """Score a stack of predictions shaped ``(n, m, 2)``."""
    if isinstance(spec, str):
        spec = ScoringSpec(spec)
    members = np.asarray(members, dtype=float)
    if members.ndim == 2:
        members = members[:, None, :]
    kind = spec.kind
    if kind in ("entropy", "total_entropy"):
        return np.asarray(total_entropy(members))
    if kind == "aleatoric_entropy":
        return np.asarray(aleatoric_entropy(members))
    if kind == "mutual_information":
        return np.asarray(mutual_information(members))
    if kind == "variance":
        return np.asarray(variance_score(members))
    if kind == "gap":
        return np.asarray(gap_score(members))
    if logits is None:
        raise InvalidParameter("free_energy needs logits")
    logits = np.asarray(logits, dtype=float)
    if logits.ndim == 2:
        logits = logits[:, None, :]
    return np.asarray(ensemble_free_energy(logits, spec.temperature))


def score_record(spec: ScoringSpec | str, record: PredictionRecord) -> float:
    if isinstance(spec, str):
        spec = ScoringSpec(spec)
    logits = record.logit_array()
    out = score_arrays(spec, record.member_array()[None], None if logits is None else logits[None])
    return float(out[0])
