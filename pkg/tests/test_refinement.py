import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noisykd.data import LabeledDataset, generate_synthetic, inject_noise
from noisykd.errors import DegenerateLabelsError, InvalidInputError, NotFittedError
from noisykd.model import MlpModel, init_model
from noisykd.refinement import (
    Discriminator,
    LossFeatures,
    collect_features,
    flag_noisy,
    relabel,
    train_discriminator,
    write_discriminator_dump,
)


def toy_features(n, seed, margin=0.2):
    """Noisy iff student_ce > 1.0, with a gap of ``margin`` on both sides."""
    rng = np.random.default_rng(seed)
    noisy = rng.random(n) < 0.4
    student = np.where(noisy, rng.uniform(1.0 + margin, 4.0, n), rng.uniform(0.0, 1.0 - margin, n))
    teacher = rng.uniform(0.0, 3.0, n)
    return LossFeatures(teacher, student), noisy


def test_collect_features_identical_models():
    ds = generate_synthetic("blobs", 40, 3, 2, 1.0, seed=0)
    m = init_model([3, 5, 2], seed=1)
    f = collect_features(m, m.copy(), ds)
    assert np.array_equal(f.teacher_ce, f.student_ce)
    assert len(f) == 40


def test_collect_features_uniform_model():
    ds = generate_synthetic("blobs", 40, 3, 4, 1.0, seed=0)
    m = init_model([3, 4], seed=1)
    for p in m.parameters():
        p[...] = 0.0
    f = collect_features(m, m, ds)
    np.testing.assert_allclose(f.student_ce, math.log(4))


def test_collect_features_hand_computed():
    teacher = MlpModel([2, 2], [np.array([[1.0, 0.0], [0.0, 1.0]])], [np.zeros(2)])
    student = MlpModel([2, 2], [np.zeros((2, 2))], [np.array([0.0, math.log(3)])])
    ds = LabeledDataset.clean(np.array([[2.0, 0.0], [0.0, 1.0]]), [0, 0], 2)
    f = collect_features(teacher, student, ds)
    # teacher logits [2,0] and [0,1]; student probabilities [1/4, 3/4]
    np.testing.assert_allclose(f.teacher_ce, [math.log(1 + math.exp(-2)), math.log(1 + math.e)])
    np.testing.assert_allclose(f.student_ce, [math.log(4), math.log(4)])


def test_collect_features_dim_mismatch():
    ds = generate_synthetic("blobs", 40, 3, 2, 1.0, seed=0)
    with pytest.raises(InvalidInputError):
        collect_features(init_model([2, 2], 0), init_model([3, 2], 0), ds)


def test_separable_toy_perfect():
    feats, noisy = toy_features(300, seed=0)
    d = train_discriminator(feats, noisy, seed=1)
    flags = flag_noisy(d, feats)
    assert np.mean(flags == noisy) == 1.0
    fresh, fresh_noisy = toy_features(300, seed=7)
    assert np.array_equal(flag_noisy(d, fresh), fresh_noisy)


def test_degenerate_flags():
    feats, _ = toy_features(50, seed=0)
    with pytest.raises(DegenerateLabelsError):
        train_discriminator(feats, np.zeros(50, bool), seed=0)
    with pytest.raises(DegenerateLabelsError):
        train_discriminator(feats, np.arange(50) < 5, seed=0)


def auc(scores, labels):
    pos, neg = scores[labels], scores[~labels]
    greater = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return greater / (len(pos) * len(neg))


def test_random_features_score_range():
    rng = np.random.default_rng(3)
    feats = LossFeatures(rng.exponential(size=200), rng.exponential(size=200))
    flags = rng.random(200) < 0.5
    d = train_discriminator(feats, flags, seed=2)
    s = d.score(feats)
    assert s.min() >= 0.0 and s.max() <= 1.0
    assert 0.35 <= auc(s, flags) <= 1.0


def test_thresholds_extremes():
    feats, noisy = toy_features(100, seed=0)
    d = train_discriminator(feats, noisy, seed=0)
    assert flag_noisy(d, feats, 0.0).all()
    assert not flag_noisy(d, feats, np.nextafter(1.0, 2.0)).any()


@settings(max_examples=25, deadline=None)
@given(t1=st.floats(0, 1), t2=st.floats(0, 1))
def test_threshold_monotone(t1, t2):
    feats, noisy = toy_features(120, seed=5, margin=0.0)
    d = train_discriminator(feats, noisy, seed=0, n_trees=15)
    lo, hi = sorted((t1, t2))
    assert flag_noisy(d, feats, hi).sum() <= flag_noisy(d, feats, lo).sum()


def test_untrained_discriminator():
    with pytest.raises(NotFittedError):
        flag_noisy(Discriminator(), LossFeatures(np.ones(3), np.ones(3)))


def test_discriminator_deterministic():
    feats, noisy = toy_features(150, seed=0, margin=0.0)
    a = train_discriminator(feats, noisy, seed=4, n_trees=20).score(feats)
    b = train_discriminator(feats, noisy, seed=4, n_trees=20).score(feats)
    assert np.array_equal(a, b)


def test_relabel_no_flags_is_identity():
    ds = inject_noise(generate_synthetic("blobs", 50, 2, 2, 2.0, seed=0), 0.2, seed=0)
    out = relabel(ds, np.zeros(50, bool), init_model([2, 2], 0))
    assert np.array_equal(out.observed_labels, ds.observed_labels)


def test_relabel_ideal_teacher_recovers_truth():
    # blobs centred at (+s, 0) and (-s, 0): logits [x0, -x0] pick class 0 on the right
    ds = inject_noise(generate_synthetic("blobs", 200, 2, 2, 6.0, seed=1), 0.3, seed=2)
    teacher = MlpModel([2, 2], [np.array([[1.0, 0.0], [-1.0, 0.0]])], [np.zeros(2)])
    assert np.mean(np.argmax(ds.features @ teacher.weights[0].T, axis=1) == ds.true_labels) == 1.0
    out = relabel(ds, ds.noise_flags, teacher)
    assert np.array_equal(out.observed_labels, ds.true_labels)
    assert not out.noise_flags.any()


def test_relabel_touches_only_flagged():
    ds = inject_noise(generate_synthetic("blobs", 120, 2, 3, 1.0, seed=0), 0.4, seed=1)
    flags = np.random.default_rng(0).random(120) < 0.3
    out = relabel(ds, flags, init_model([2, 8, 3], 5))
    assert np.array_equal(out.observed_labels[~flags], ds.observed_labels[~flags])
    assert np.array_equal(out.features, ds.features)
    assert np.array_equal(out.true_labels, ds.true_labels)
    assert out is not ds


def test_relabel_on_view_and_bad_flags():
    ds = generate_synthetic("blobs", 30, 2, 2, 1.0, seed=0)
    out = relabel(ds.view(), np.ones(30, bool), init_model([2, 2], 1))
    assert out.labels.shape == (30,)
    with pytest.raises(InvalidInputError):
        relabel(ds, np.ones(29, bool), init_model([2, 2], 1))


def test_dump_csv(tmp_path):
    feats, noisy = toy_features(20, seed=0)
    d = train_discriminator(feats, noisy, seed=0, n_trees=5, min_per_class=3)
    s = d.score(feats)
    p = tmp_path / "disc.csv"
    write_discriminator_dump(p, feats, s, s >= 0.5, noisy)
    lines = p.read_text().splitlines()
    assert lines[0] == "teacher_ce,student_ce,score,flag,oracle_flag"
    assert len(lines) == 21
