"""Two-Gaussian toy distribution with exact posteriors.

Class means are drawn once from ``N(0, tau^2 I)``; samples are then drawn from
``N(mu_y, sigma^2 I)`` with ``P(Y=1) = p``. Because the generative model is
known, the posterior, the Bayes classifier and both uncertainty ground truths
(misclassification probability and Bayes-misalignment gap) are available in
closed form for any predictor.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .core import LabeledSample, OracleAnnotation, PredictionRecord, ProbVector
from .errors import InvalidParameter, JoinFailure
from .rng import derive_rng

SPLITS = ("train", "test", "calibration")


@dataclass(frozen=True)
class MixtureSpec:
    mu0: tuple[float, float]
    mu1: tuple[float, float]
    sigma: float = 1.0
    p: float = 0.5
    tau: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameter(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.p < 1:
            raise InvalidParameter(f"p must lie in (0, 1), got {self.p}")
        if not self.tau > 0:
            raise InvalidParameter(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "mu0", tuple(float(v) for v in self.mu0))
        object.__setattr__(self, "mu1", tuple(float(v) for v in self.mu1))

    def to_dict(self) -> dict:
        return {"mu0": list(self.mu0), "mu1": list(self.mu1), "sigma": self.sigma,
                "p": self.p, "tau": self.tau}

    @classmethod
    def from_dict(cls, d: dict) -> "MixtureSpec":
        return cls(tuple(d["mu0"]), tuple(d["mu1"]), float(d["sigma"]), float(d["p"]),
                   float(d.get("tau", 1.0)))


@dataclass(frozen=True)
class SampleSet:
    samples: tuple[LabeledSample, ...]
    split_tag: str = "train"
    _x: np.ndarray = field(init=False, repr=False, compare=False)
    _y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.split_tag not in SPLITS:
            raise InvalidParameter(f"unknown split {self.split_tag!r}")
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        x = np.array([s.x for s in samples], dtype=float).reshape(-1, 2)
        y = np.array([s.y for s in samples], dtype=np.int64)
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "_x", x)
        object.__setattr__(self, "_y", y)

    @classmethod
    def from_arrays(cls, ids, x, y, split_tag="train") -> "SampleSet":
        samples = tuple(LabeledSample(str(i), (float(a), float(b)), int(c))
                        for i, (a, b), c in zip(ids, np.asarray(x), np.asarray(y)))
        return cls(samples, split_tag)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, index, split_tag=None) -> "SampleSet":
        return SampleSet(tuple(self.samples[i] for i in index), split_tag or self.split_tag)


def sample_spec(seed: int, tau: float = 1.0, sigma: float = 1.0, p: float = 0.5) -> MixtureSpec:
    """Draw the two class means i.i.d. from ``N(0, tau^2 I)``."""
    if not tau > 0:
        raise InvalidParameter(f"tau must be positive, got {tau}")
    rng = derive_rng(seed, "mixture-spec")
    mu = rng.standard_normal((2, 2)) * tau
    return MixtureSpec(tuple(mu[0]), tuple(mu[1]), sigma=sigma, p=p, tau=tau)


def sample_dataset(spec: MixtureSpec, n: int, seed: int, stratify: bool = True,
                   split_tag: str = "train", id_prefix: str = "s") -> SampleSet:
    """Draw ``n`` labelled points.

    With ``stratify`` the class counts are fixed to ``floor(n p)`` ones and
    ``n - floor(n p)`` zeros (in shuffled order) instead of Bernoulli draws.
    """
    if n < 2:
        raise InvalidParameter(f"n must be at least 2, got {n}")
    rng = derive_rng(seed, "dataset", n)
    if stratify:
        n1 = int(np.floor(n * spec.p))
        y = np.zeros(n, dtype=np.int64)
        y[:n1] = 1
        y = rng.permutation(y)
    else:
        y = (rng.random(n) < spec.p).astype(np.int64)
    means = np.where(y[:, None] == 1, np.asarray(spec.mu1), np.asarray(spec.mu0))
    x = means + spec.sigma * rng.standard_normal((n, 2))
    width = len(str(n - 1))
    ids = [f"{id_prefix}{i:0{width}d}" for i in range(n)]
    return SampleSet.from_arrays(ids, x, y, split_tag)


def stratified_split(dataset: SampleSet, first_size: int, seed: int,
                     tags=("train", "test")) -> tuple[SampleSet, SampleSet]:
    """Split into two sets whose label proportions match the parent's."""
    n = len(dataset)
    if not 0 < first_size < n:
        raise InvalidParameter(f"split size {first_size} out of range for {n} samples")
    rng = derive_rng(seed, "split", tags[0], tags[1], n, first_size)
    y = dataset.y
    first = []
    remaining = first_size
    labels = [lab for lab in (0, 1) if np.any(y == lab)]
    for k, lab in enumerate(labels):
        idx = np.flatnonzero(y == lab)
        take = remaining if k == len(labels) - 1 else int(round(first_size * len(idx) / n))
        take = min(take, len(idx))
        first.extend(rng.permutation(idx)[:take].tolist())
        remaining -= take
    first = sorted(first)
    chosen = set(first)
    second = [i for i in range(n) if i not in chosen]
    return dataset.subset(first, tags[0]), dataset.subset(second, tags[1])


def default_splits(spec: MixtureSpec, seed: int, n: int = 1000, train_size: int = 600,
                   calibration: bool = False) -> dict[str, SampleSet]:
    """The 600/400 stratified toy split, optionally halving test into calibration."""
    full = sample_dataset(spec, n, seed, stratify=True)
    train, test = stratified_split(full, train_size, seed, ("train", "test"))
    out = {"train": train, "test": test}
    if calibration:
        cal, held = stratified_split(test, len(test) // 2, seed, ("calibration", "test"))
        out["calibration"], out["test"] = cal, held
    return out


def log_odds(spec: MixtureSpec, x) -> np.ndarray:
    """``log pi_1(x) - log pi_0(x)`` for one point or an ``(n, 2)`` array."""
    x = np.asarray(x, dtype=float)
    d1 = np.sum((x - np.asarray(spec.mu1)) ** 2, axis=-1)
    d0 = np.sum((x - np.asarray(spec.mu0)) ** 2, axis=-1)
    return np.log(spec.p) - np.log1p(-spec.p) + (d0 - d1) / (2.0 * spec.sigma ** 2)


def posterior_array(spec: MixtureSpec, x) -> np.ndarray:
    lo = log_odds(spec, x)
    return np.stack([expit(-lo), expit(lo)], axis=-1)


def posterior(spec: MixtureSpec, x) -> ProbVector:
    p0, p1 = posterior_array(spec, np.asarray(x, dtype=float).reshape(2))
    return ProbVector(float(p0), float(p1))


def bayes_label(spec: MixtureSpec, x) -> int:
    return posterior(spec, x).argmax


def annotate(spec: MixtureSpec, samples: SampleSet | Iterable[LabeledSample],
             predictions: Sequence[PredictionRecord]) -> list[OracleAnnotation]:
    """Ground-truth quantities for each prediction, joined on sample id."""
    by_id = {s.id: s for s in (samples.samples if isinstance(samples, SampleSet) else samples)}
    missing = [r.sample_id for r in predictions if r.sample_id not in by_id]
    if missing:
        raise JoinFailure(missing)
    out = []
    for rec in predictions:
        sample = by_id[rec.sample_id]
        post = posterior(spec, sample.x)
        b = post.argmax
        out.append(OracleAnnotation(
            sample_id=rec.sample_id,
            posterior=post,
            bayes_label=b,
            phi=1.0 - post[rec.y_hat],
            varphi=1.0 - rec.mean_prob[b],
            mis=int(sample.y != rec.y_hat),
            delta=1.0 - rec.mean_prob[sample.y],
            bayes_agree=int(rec.y_hat == b),
        ))
    return out


@dataclass
class OracleArrays:
    """Column view of a batch of annotations, aligned with the prediction order."""
    ids: list[str]
    y: np.ndarray
    y_hat: np.ndarray
    posterior: np.ndarray
    bayes_label: np.ndarray
    phi: np.ndarray
    varphi: np.ndarray
    mis: np.ndarray
    delta: np.ndarray
    bayes_agree: np.ndarray


def annotate_arrays(spec: MixtureSpec, x: np.ndarray, y: np.ndarray, mean_prob: np.ndarray,
                    ids=None) -> OracleArrays:
    """Vectorized twin of :func:`annotate` for aligned arrays."""
    x = np.asarray(x, float)
    y = np.asarray(y, np.int64)
    mean_prob = np.asarray(mean_prob, float)
    post = posterior_array(spec, x)
    b = (post[:, 1] > post[:, 0]).astype(np.int64)
    y_hat = (mean_prob[:, 1] > mean_prob[:, 0]).astype(np.int64)
    rows = np.arange(len(y))
    return OracleArrays(
        ids=list(ids) if ids is not None else [str(i) for i in rows],
        y=y,
        y_hat=y_hat,
        posterior=post,
        bayes_label=b,
        phi=1.0 - post[rows, y_hat],
        varphi=1.0 - mean_prob[rows, b],
        mis=(y != y_hat).astype(np.int64),
        delta=1.0 - mean_prob[rows, y],
        bayes_agree=(y_hat == b).astype(np.int64),
    )


CSV_HEADER = ("id", "x1", "x2", "y", "split")


def write_csv(sets: Iterable[SampleSet], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for ss in sets:
        for s in ss.samples:
            writer.writerow([s.id, f"{s.x[0]:.17g}", f"{s.x[1]:.17g}", s.y, ss.split_tag])


def dumps_csv(sets: Iterable[SampleSet]) -> str:
    buf = io.StringIO()
    write_csv(sets, buf)
    return buf.getvalue()


def read_csv(fh) -> dict[str, SampleSet]:
    """Parse a dataset CSV into one :class:`SampleSet` per split, in file order."""
    from .errors import SchemaError

    reader = csv.reader(fh)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise SchemaError(f"expected header {','.join(CSV_HEADER)}", line=1)
    groups: dict[str, list[LabeledSample]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            raise SchemaError(f"expected 5 fields, got {len(row)}", line=lineno)
        try:
            sample = LabeledSample(row[0], (float(row[1]), float(row[2])), int(row[3]))
        except (ValueError, InvalidParameter) as exc:
            raise SchemaError(str(exc), line=lineno) from None
        if row[4] not in SPLITS:
            raise SchemaError(f"unknown split {row[4]!r}", line=lineno)
        groups.setdefault(row[4], []).append(sample)
    return {tag: SampleSet(tuple(samples), tag) for tag, samples in groups.items()}
