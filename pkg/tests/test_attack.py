"""Classifier pipeline: features, network, training, persistence."""

import numpy as np
import pytest

from powermask.attack import (BLOCK, Mlp, N_LEVELS, SampleVector, accuracy,
                              confusion, grad_check, init_mlp, load_mlp,
                              predict, preprocess, save_mlp, stratified_split,
                              train)


class _Trace:
    def __init__(self, measured, app_id=0):
        self.measured_w = np.asarray(measured, dtype=float)
        self.app_id = app_id


def test_preprocess_hand_example():
    # two 5-sample blocks averaging 10 and 95 W; on a 0..100 scale with 10
    # levels those quantize to levels 1 and 9, i.e. one-hot columns 1 and 19
    tr = _Trace([10.0] * 5 + [95.0] * 5, app_id=4)
    samples = preprocess(tr, segment_length=10, quant_min=0.0,
                         quant_max=100.0)
    assert len(samples) == 1
    sv = samples[0]
    assert sv.label == 4
    assert sv.features.size == 2 * N_LEVELS
    assert np.nonzero(sv.features)[0].tolist() == [1, 19]
    assert set(np.unique(sv.features)) == {0.0, 1.0}


def test_preprocess_segments_and_remainder():
    tr = _Trace(np.arange(55, dtype=float))
    # 55 samples -> two full 20-sample segments, trailing 15 dropped
    samples = preprocess(tr, segment_length=20, quant_min=0.0, quant_max=60.0)
    assert len(samples) == 2
    assert all(s.features.size == 4 * N_LEVELS for s in samples)


def test_preprocess_clamps_out_of_range_power():
    tr = _Trace([-5.0] * BLOCK + [900.0] * BLOCK)
    samples = preprocess(tr, segment_length=2 * BLOCK, quant_min=0.0,
                         quant_max=100.0)
    idx = np.nonzero(samples[0].features)[0].tolist()
    assert idx == [0, N_LEVELS + N_LEVELS - 1]


def test_preprocess_validation():
    tr = _Trace(np.zeros(20))
    with pytest.raises(ValueError):
        preprocess(tr, segment_length=7, quant_min=0.0, quant_max=1.0)
    with pytest.raises(ValueError):
        preprocess(tr, segment_length=10, quant_min=5.0, quant_max=5.0)


def test_init_mlp_shapes_and_validation():
    mlp = init_mlp(40, labels=[0, 1, 2], seed=0)
    assert mlp.w1.shape == (64, 40)
    assert mlp.w3.shape == (3, 32)
    assert list(mlp.labels) == [0, 1, 2]
    with pytest.raises(ValueError):
        init_mlp(40, labels=[7])


def test_forward_is_a_distribution():
    from powermask.attack import forward
    mlp = init_mlp(12, labels=[0, 1], seed=1)
    x = np.random.default_rng(0).random((3, 12))
    p = np.exp(forward(mlp, x))
    assert p.shape == (3, 2)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_grad_check_small_error():
    rng = np.random.default_rng(3)
    mlp = init_mlp(30, labels=[0, 1, 2, 3], seed=3)
    sample = SampleVector(features=rng.random(30), label=2)
    assert grad_check(mlp, sample) < 1e-4


def test_grad_check_epsilon_guard():
    mlp = init_mlp(10, labels=[0, 1], seed=0)
    sample = SampleVector(features=np.zeros(10), label=0)
    with pytest.raises(ValueError):
        grad_check(mlp, sample, epsilon=1e-2)


def _toy_samples(n_per_class=60, n_features=20, seed=0, scramble=False):
    """Two classes with disjoint active feature halves plus noise."""
    rng = np.random.default_rng(seed)
    out = []
    for label in (0, 1):
        for _ in range(n_per_class):
            f = rng.random(n_features) * 0.1
            lo = 0 if label == 0 else n_features // 2
            f[lo:lo + n_features // 2] += 1.0
            out.append(SampleVector(features=f, label=label))
    if scramble:
        labels = [s.label for s in out]
        rng.shuffle(labels)
        out = [SampleVector(features=s.features, label=l)
               for s, l in zip(out, labels)]
    return out


def test_training_learns_separable_data():
    samples = _toy_samples()
    mlp = init_mlp(20, labels=[0, 1], seed=5)
    mlp, report = train(mlp, samples, epochs=30, seed=7)
    assert report.test_accuracy >= 0.9
    assert report.epoch_losses[-1] < report.epoch_losses[0]
    assert len(report.test_samples) == 24


def test_training_on_shuffled_labels_stays_near_chance():
    samples = _toy_samples(scramble=True, seed=11)
    mlp = init_mlp(20, labels=[0, 1], seed=5)
    mlp, report = train(mlp, samples, epochs=30, seed=7)
    assert report.test_accuracy <= 0.75


def test_train_requires_all_classes():
    samples = [s for s in _toy_samples() if s.label == 0]
    mlp = init_mlp(20, labels=[0, 1], seed=0)
    with pytest.raises(ValueError):
        train(mlp, samples, epochs=2)


def test_stratified_split_proportions():
    samples = _toy_samples(n_per_class=50)
    tr, va, te = stratified_split(samples, seed=3)
    assert (len(tr), len(va), len(te)) == (60, 20, 20)
    for part, want in ((tr, 30), (va, 10), (te, 10)):
        assert sum(1 for s in part if s.label == 0) == want
    # same seed, same split; different seed, different order
    tr2, _, _ = stratified_split(samples, seed=3)
    assert [id(s) for s in tr] == [id(s) for s in tr2]
    with pytest.raises(ValueError):
        stratified_split(samples, fractions=(0.5, 0.2, 0.2))


def test_accuracy_and_confusion_agree():
    samples = _toy_samples(n_per_class=40, seed=2)
    mlp = init_mlp(20, labels=[0, 1], seed=9)
    mlp, _ = train(mlp, samples, epochs=25, seed=1)
    mat = confusion(mlp, samples)
    assert mat.shape == (2, 2)
    # rows are per-class fractions; diagonal mean is accuracy when the
    # testset is class-balanced, which this one is
    assert np.allclose(mat.sum(axis=1), 1.0, atol=1e-12)
    assert np.trace(mat) / 2 == pytest.approx(accuracy(mlp, samples),
                                              abs=1e-12)


def test_confusion_validation():
    mlp = init_mlp(20, labels=[0, 1], seed=0)
    with pytest.raises(ValueError):
        confusion(mlp, [])
    only_zero = [s for s in _toy_samples() if s.label == 0]
    with pytest.raises(ValueError):
        confusion(mlp, only_zero)


def test_save_load_roundtrip(tmp_path):
    samples = _toy_samples(seed=4)
    mlp = init_mlp(20, labels=[0, 1], seed=2)
    mlp, _ = train(mlp, samples, epochs=10, seed=2)
    path = tmp_path / "net.npz"
    save_mlp(mlp, path)
    clone = load_mlp(path)
    feats = [s for s in samples[:10]]
    assert np.array_equal(predict(mlp, feats), predict(clone, feats))
    assert list(clone.labels) == list(mlp.labels)
