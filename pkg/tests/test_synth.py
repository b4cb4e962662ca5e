import io
import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal

from uqscore.core import PredictionRecord
from uqscore.errors import InvalidParameter, JoinFailure
from uqscore.risk import risk_curve
from uqscore.synth import (MixtureSpec, annotate, annotate_arrays, bayes_label, default_splits, dumps_csv,
                           posterior, posterior_array, read_csv, sample_dataset, sample_spec,
                           stratified_split)


def test_sample_spec_is_deterministic():
    assert sample_spec(11, 1.0) == sample_spec(11, 1.0)
    assert sample_spec(11, 1.0) != sample_spec(12, 1.0)


def test_sample_spec_small_tau_collapses_means():
    spec = sample_spec(3, tau=1e-300)
    assert np.allclose(spec.mu0, 0.0, atol=1e-290) and np.allclose(spec.mu1, 0.0, atol=1e-290)


def test_sample_spec_coordinates_look_standard_normal():
    coords = np.array([c for s in range(500) for c in (*sample_spec(s).mu0, *sample_spec(s).mu1)])
    assert np.all(np.isfinite(coords)) and np.abs(coords).max() < 5.5
    # 2000 draws: mean within 4 standard errors of 0, std within 5% of 1
    assert abs(coords.mean()) < 4 / math.sqrt(len(coords))
    assert abs(coords.std() - 1.0) < 0.05


def test_sample_spec_rejects_bad_tau():
    with pytest.raises(InvalidParameter):
        sample_spec(0, tau=0.0)


def test_mixture_spec_validation():
    with pytest.raises(InvalidParameter):
        MixtureSpec((0, 0), (1, 1), sigma=0)
    with pytest.raises(InvalidParameter):
        MixtureSpec((0, 0), (1, 1), p=1.0)


def test_stratified_dataset_counts():
    ds = sample_dataset(sample_spec(0), 1000, seed=5, stratify=True)
    assert len(ds) == 1000 and int(ds.y.sum()) == 500


def test_stratified_counts_follow_floor_rule():
    spec = MixtureSpec((0, 0), (1, 1), p=0.3)
    ds = sample_dataset(spec, 101, seed=1, stratify=True)
    assert int(ds.y.sum()) == math.floor(101 * 0.3)


def test_dataset_is_deterministic():
    spec = sample_spec(0)
    a = dumps_csv([sample_dataset(spec, 50, seed=9)])
    b = dumps_csv([sample_dataset(spec, 50, seed=9)])
    assert a == b


def test_bernoulli_labels_law_of_large_numbers():
    ds = sample_dataset(sample_spec(0), 100_000, seed=2, stratify=False)
    assert abs(ds.y.mean() - 0.5) < 0.01


def test_dataset_rejects_tiny_n():
    with pytest.raises(InvalidParameter):
        sample_dataset(sample_spec(0), 1, seed=0)


def test_default_split_sizes_and_strata():
    splits = default_splits(sample_spec(0), seed=0)
    assert len(splits["train"]) == 600 and len(splits["test"]) == 400
    assert int(splits["train"].y.sum()) == 300 and int(splits["test"].y.sum()) == 200
    assert not set(splits["train"].ids) & set(splits["test"].ids)
    cal = default_splits(sample_spec(0), seed=0, calibration=True)
    assert len(cal["calibration"]) == 200 and len(cal["test"]) == 200
    assert int(cal["calibration"].y.sum()) == 100


def test_csv_round_trip_is_exact():
    splits = default_splits(sample_spec(4), seed=4)
    text = dumps_csv([splits["train"], splits["test"]])
    assert text.splitlines()[0] == "id,x1,x2,y,split"
    back = read_csv(io.StringIO(text))
    assert back["train"].samples == splits["train"].samples
    assert np.array_equal(back["test"].x, splits["test"].x)


def _density_posterior(spec, x):
    l0 = multivariate_normal(spec.mu0, spec.sigma ** 2 * np.eye(2)).logpdf(x) + np.log(1 - spec.p)
    l1 = multivariate_normal(spec.mu1, spec.sigma ** 2 * np.eye(2)).logpdf(x) + np.log(spec.p)
    # ratio of densities taken in log space; linear densities underflow far from both means
    return 1.0 / (1.0 + np.exp(l0 - l1))


def test_posterior_symmetry():
    spec = MixtureSpec((-1.0, 2.0), (3.0, 0.0))
    mid = (np.asarray(spec.mu0) + np.asarray(spec.mu1)) / 2
    assert posterior(spec, mid).as_tuple() == pytest.approx((0.5, 0.5), abs=1e-15)


def test_posterior_hand_example():
    spec = MixtureSpec((0.0, 0.0), (2.0, 0.0), sigma=1.0, p=0.5)
    expected = math.exp(-2) / (1 + math.exp(-2))
    assert posterior(spec, (0.0, 0.0)).p1 == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.1192, abs=1e-4)
    assert _density_posterior(spec, (0.0, 0.0)) == pytest.approx(expected, rel=1e-12)


def test_posterior_far_along_mean_direction():
    spec = sample_spec(8)
    mu0, mu1 = np.asarray(spec.mu0), np.asarray(spec.mu1)
    x = mu1 + 20 * (mu1 - mu0)
    assert posterior(spec, x).p1 > 1 - 1e-6
    assert _density_posterior(spec, x) > 1 - 1e-6


def test_posterior_matches_density_ratio_on_random_points():
    spec = MixtureSpec((0.3, -0.4), (1.1, 0.9), sigma=0.8, p=0.35)
    x = np.random.default_rng(0).normal(size=(200, 2)) * 2
    assert np.allclose(posterior_array(spec, x)[:, 1], _density_posterior(spec, x), rtol=1e-10, atol=1e-14)


def test_posterior_survives_extreme_inputs():
    spec = MixtureSpec((0.0, 0.0), (1.0, 0.0))
    p = posterior(spec, (1e4, 0.0))
    assert p.p1 == 1.0 and p.p0 == 0.0


def test_posterior_normalization_on_many_points():
    spec = sample_spec(1)
    x = np.random.default_rng(1).normal(size=(100_000, 2)) * 5
    post = posterior_array(spec, x)
    assert np.max(np.abs(post.sum(axis=1) - 1.0)) <= 1e-12


def test_posterior_consistency_with_monte_carlo():
    spec = MixtureSpec((-1.0, 0.0), (1.0, 0.5), sigma=1.0, p=0.5)
    ds = sample_dataset(spec, 1_000_000, seed=3, stratify=False)
    centers = [(0.0, 0.25), (-1.0, 0.0), (1.0, 0.5), (0.5, -0.5), (-0.3, 1.0)]
    radius = 0.05
    for c in centers:
        inside = np.sum((ds.x - np.asarray(c)) ** 2, axis=1) <= radius ** 2
        k = int(inside.sum())
        emp = ds.y[inside].mean()
        target = posterior(spec, c).p1
        se = math.sqrt(target * (1 - target) / k)
        assert abs(emp - target) <= 3 * se, (c, emp, target, k)


@pytest.mark.parametrize("p1, expected", [(0.1, 0), (0.9, 1), (0.5, 0)])
def test_bayes_label_argmax(p1, expected, monkeypatch):
    import uqscore.synth as synth
    from uqscore.core import ProbVector

    monkeypatch.setattr(synth, "posterior", lambda spec, x: ProbVector(1 - p1, p1))
    assert synth.bayes_label(None, (0, 0)) == expected


def test_bayes_label_on_real_posterior():
    spec = MixtureSpec((0.0, 0.0), (2.0, 0.0))
    assert bayes_label(spec, (-1.0, 0.0)) == 0
    assert bayes_label(spec, (3.0, 0.0)) == 1
    assert bayes_label(spec, (1.0, 0.0)) == 0


def _records_from(spec, ds, chooser):
    out = []
    for s in ds.samples:
        post = posterior(spec, s.x)
        label = chooser(post)
        out.append(PredictionRecord.from_arrays(s.id, [[0.9, 0.1] if label == 0 else [0.1, 0.9]]))
    return out


def test_annotate_bayes_and_anti_bayes():
    spec = sample_spec(2)
    ds = sample_dataset(spec, 300, seed=2)
    bayes = annotate(spec, ds, _records_from(spec, ds, lambda p: p.argmax))
    anti = annotate(spec, ds, _records_from(spec, ds, lambda p: 1 - p.argmax))
    for a, b in zip(bayes, anti):
        assert a.phi == pytest.approx(min(a.posterior.as_tuple()), abs=1e-15)
        assert b.phi == pytest.approx(max(b.posterior.as_tuple()), abs=1e-15)
        assert a.bayes_agree == 1 and b.bayes_agree == 0


def test_annotate_hand_example():
    spec = MixtureSpec((0.0, 0.0), (2.0, 0.0))
    ds = sample_dataset(spec, 2, seed=0)
    sample = ds.samples[0]
    # place the point where the posterior is (0.1192, 0.8808) by mirroring x=(0,0) about the midpoint
    from uqscore.synth import SampleSet
    from uqscore.core import LabeledSample
    ss = SampleSet((LabeledSample(sample.id, (2.0, 0.0), 1),))
    rec = PredictionRecord.from_arrays(sample.id, [[0.6, 0.4]])
    (a,) = annotate(spec, ss, [rec])
    assert a.posterior.p1 == pytest.approx(0.8808, abs=1e-4)
    assert a.phi == pytest.approx(1 - math.exp(-2) / (1 + math.exp(-2)), abs=1e-15)
    assert a.mis == 1 and a.delta == pytest.approx(0.6) and a.varphi == pytest.approx(0.6)
    assert a.bayes_label == 1 and a.bayes_agree == 0


def test_annotate_join_failure_lists_offenders():
    spec = sample_spec(0)
    ds = sample_dataset(spec, 5, seed=0)
    recs = [PredictionRecord.from_arrays("nope", [[0.5, 0.5]]), PredictionRecord.from_arrays("zz", [[0.5, 0.5]])]
    with pytest.raises(JoinFailure) as err:
        annotate(spec, ds, recs)
    assert err.value.missing == ["nope", "zz"]


def test_annotate_arrays_matches_record_version():
    spec = sample_spec(6)
    ds = sample_dataset(spec, 200, seed=6)
    rng = np.random.default_rng(6)
    p1 = rng.random(len(ds))
    recs = [PredictionRecord.from_arrays(i, [[1 - p, p]]) for i, p in zip(ds.ids, p1)]
    ann = annotate(spec, ds, recs)
    arr = annotate_arrays(spec, ds.x, ds.y, np.stack([1 - p1, p1], 1), ds.ids)
    assert np.allclose(arr.phi, [a.phi for a in ann], atol=1e-15)
    assert np.allclose(arr.varphi, [a.varphi for a in ann], atol=1e-15)
    assert np.array_equal(arr.mis, [a.mis for a in ann])
    assert np.array_equal(arr.bayes_agree, [a.bayes_agree for a in ann])
    assert np.allclose(arr.delta, [a.delta for a in ann], atol=1e-15)


def test_varphi_below_half_iff_bayes_agreement():
    spec = sample_spec(7)
    ds = sample_dataset(spec, 2000, seed=7)
    p1 = np.random.default_rng(7).random(len(ds))
    arr = annotate_arrays(spec, ds.x, ds.y, np.stack([1 - p1, p1], 1))
    untied = p1 != 0.5
    assert np.array_equal((arr.varphi < 0.5)[untied], (arr.bayes_agree == 1)[untied])


def test_mce_precondition_for_oracle_phi():
    spec = sample_spec(1)
    ds = sample_dataset(spec, 20_000, seed=11)
    # a deliberately poor linear predictor: threshold on the second coordinate
    logit = ds.x[:, 1] - ds.x[:, 1].mean()
    p1 = 1 / (1 + np.exp(-logit))
    arr = annotate_arrays(spec, ds.x, ds.y, np.stack([1 - p1, p1], 1))
    curve = risk_curve(arr.phi, arr.mis)
    se = np.sqrt(np.clip(curve.beta * (1 - curve.beta), 1e-12, None) / curve.n_covered)
    assert np.all(curve.risk <= curve.beta + 3 * se + 1e-12)


def test_stratified_split_rejects_bad_size():
    ds = sample_dataset(sample_spec(0), 10, seed=0)
    with pytest.raises(InvalidParameter):
        stratified_split(ds, 10, seed=0)
