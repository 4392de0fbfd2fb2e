import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import separable_by_line
from voxcluster.errors import ConfigError, DimensionError, FormatError
from voxcluster.identify import LinearSvmPair, SvmEnsemble, identify, train_ensemble, train_svm_pair


def separable_set(rng, n_per=20, dim=6, k=2, margin=1.0):
    """K classes of nonnegative points, class c shifted along axis c."""
    X = np.abs(rng.normal(0, 0.2, (n_per * k, dim)))
    y = np.repeat(np.arange(k), n_per)
    X[np.arange(len(X)), y % dim] += 1.0 + margin
    return X, y


def test_two_points_on_a_line():
    pair = train_svm_pair(np.array([[-1.0], [1.0]]), np.array([-1.0, 1.0]), C=10.0, epochs=200, class_pair=(0, 1))
    assert pair.predict(np.array([[1.0], [-1.0]])).tolist() == [0, 1]
    assert pair.decision(np.array([[0.5]]))[0] > 0 > pair.decision(np.array([[-0.5]]))[0]


def test_c_zero_gives_zero_weights():
    X, y = separable_set(np.random.default_rng(0))
    pair = train_svm_pair(X, np.where(y == 0, 1.0, -1.0), C=0.0)
    assert np.all(pair.weights == 0) and pair.bias == 0.0


def test_single_class_rejected():
    with pytest.raises(ConfigError):
        train_svm_pair(np.ones((3, 2)), np.ones(3))
    with pytest.raises(ConfigError):
        train_ensemble(np.ones((3, 2)), [0, 0, 0])


def test_tie_score_goes_to_lower_id():
    pair = LinearSvmPair(np.zeros(2), 0.0, (3, 5), 1.0)
    assert pair.predict(np.ones((1, 2))).tolist() == [3]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 5), st.integers(2, 8))
def test_separable_training_accuracy(seed, k, dim):
    rng = np.random.default_rng(seed)
    X, y = separable_set(rng, n_per=15, dim=max(dim, k), k=k)
    ens = train_ensemble(X, y, C=10.0, epochs=100, seed=seed % 1000)
    assert len(ens.pairs) == k * (k - 1) // 2
    assert np.array_equal(ens.predict(X), y)
    assert np.all(ens.votes(X).sum(axis=1) == k * (k - 1) // 2)


def test_separable_2d_checked_by_exhaustive_search():
    rng = np.random.default_rng(4)
    for _ in range(10):
        centres = rng.uniform(-5, 5, (2, 2))
        X = np.vstack([centres[0] + rng.normal(0, 0.3, (12, 2)), centres[1] + rng.normal(0, 0.3, (12, 2))])
        y = np.repeat([0, 1], 12)
        if not separable_by_line(X, y):
            continue
        pair = train_svm_pair(X, np.where(y == 0, 1.0, -1.0), C=100.0, epochs=300)
        assert np.array_equal(pair.predict(X), y)


@pytest.mark.parametrize("k,expected", [(2, 1), (4, 6)])
def test_ensemble_size(k, expected):
    X, y = separable_set(np.random.default_rng(1), n_per=5, k=k)
    assert len(train_ensemble(X, y).pairs) == expected


def test_identify_deep_inside_class0():
    X, y = separable_set(np.random.default_rng(2))
    ens = train_ensemble(X, y)
    point = np.zeros(6)
    point[0] = 5.0
    cls, votes = identify(ens, point)
    assert cls == 0 and votes.tolist() == [1, 0]


def test_three_way_tie_lowest_id():
    # each class wins exactly one of its two duels
    pairs = [LinearSvmPair(np.array([1.0]), 0.0, (0, 1), 1.0),     # votes 0
             LinearSvmPair(np.array([-1.0]), 0.0, (0, 2), 1.0),    # votes 2
             LinearSvmPair(np.array([1.0]), 0.0, (1, 2), 1.0)]     # votes 1
    cls, votes = identify(SvmEnsemble(pairs, 3, 1), np.array([1.0]))
    assert votes.tolist() == [1, 1, 1] and cls == 0


def test_dimension_mismatch():
    X, y = separable_set(np.random.default_rng(3))
    with pytest.raises(DimensionError):
        identify(train_ensemble(X, y), np.ones(5))


def test_labels_must_be_contiguous():
    with pytest.raises(ConfigError):
        train_ensemble(np.eye(3), [0, 2, 2])


def test_save_load_round_trip(tmp_path):
    X, y = separable_set(np.random.default_rng(5), k=3)
    ens = train_ensemble(X, y)
    ens.save(tmp_path / "e.voxsvm")
    back = SvmEnsemble.load(tmp_path / "e.voxsvm")
    assert back.num_classes == 3 and back.dim == 6 and len(back.pairs) == 3
    np.testing.assert_array_equal(back.predict(X), ens.predict(X))
    for a, b in zip(back.pairs, ens.pairs):
        assert a.class_pair == b.class_pair
        np.testing.assert_array_equal(a.weights, b.weights.astype(np.float32))
    blob = bytearray((tmp_path / "e.voxsvm").read_bytes())
    blob[0:8] = b"VOXCNN01"
    (tmp_path / "bad").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        SvmEnsemble.load(tmp_path / "bad")


def test_deterministic_per_seed():
    X, y = separable_set(np.random.default_rng(6), k=3)
    a, b = train_ensemble(X, y, seed=3), train_ensemble(X, y, seed=3)
    for p, q in zip(a.pairs, b.pairs):
        assert p.weights.tobytes() == q.weights.tobytes() and p.bias == q.bias


def test_three_speaker_heldout(trained):
    idx_tr = np.isin(trained.train.y, [0, 1, 2])
    idx_va = np.isin(trained.val.y, [0, 1, 2])
    emb_tr = trained.model.embed(trained.train.x[idx_tr])
    emb_va = trained.model.embed(trained.val.x[idx_va])
    ens = train_ensemble(emb_tr, trained.train.y[idx_tr])
    assert (ens.predict(emb_tr) == trained.train.y[idx_tr]).mean() >= 0.99
    assert (ens.predict(emb_va) == trained.val.y[idx_va]).mean() >= 0.9
