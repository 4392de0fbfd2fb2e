import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv, window_max
from voxcluster.cnn import (PAPER_ARCH, PARAM_NAMES, REDUCED_ARCH, Architecture, CnnModel, TrainConfig,
                            conv2d_forward, dense_forward, dropout_forward, extract_embedding, load_model,
                            maxpool_forward, save_model, scaled_arch, sgd_train, softmax, softmax_cross_entropy)
from voxcluster.errors import ConfigError, DimensionError, FormatError, StateError, TrainingDivergedError

TINY = Architecture(input_shape=(1, 26, 26), conv1=2, conv2=3, dense1=8, dense2=6, num_classes=3)


# ---------------------------------------------------------------- conv / pool / dense

def test_conv_delta_kernel():
    x = np.arange(9.0).reshape(1, 3, 3)
    f = np.zeros((1, 1, 3, 3))
    f[0, 0, 1, 1] = 1
    assert conv2d_forward(x, f, np.zeros(1)).tolist() == [[[4.0]]]


def test_conv_all_ones():
    y = conv2d_forward(np.ones((1, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert y.shape == (1, 2, 2) and np.all(y == 9)


def test_conv_random_matches_loops(rng):
    x, f, b = rng.standard_normal((1, 5, 5)), rng.standard_normal((1, 1, 3, 3)), rng.standard_normal(1)
    np.testing.assert_allclose(conv2d_forward(x, f, b), naive_conv(x, f, b), atol=1e-12)


def test_conv_shape_errors():
    with pytest.raises(DimensionError):
        conv2d_forward(np.ones((2, 4, 4)), np.ones((1, 1, 3, 3)), np.zeros(1))
    with pytest.raises(DimensionError):
        conv2d_forward(np.ones((1, 2, 2)), np.ones((1, 1, 3, 3)), np.zeros(1))


def test_pool_constant():
    y, _ = maxpool_forward(np.full((2, 8, 8), 3.5), 4)
    assert y.shape == (2, 2, 2) and np.all(y == 3.5)


def test_pool_arange():
    y, _ = maxpool_forward(np.arange(16.0).reshape(1, 4, 4), 4)
    assert y.tolist() == [[[15.0]]]


def test_pool_random_9x10(rng):
    x = rng.standard_normal((1, 9, 10))
    y, _ = maxpool_forward(x, 4)
    assert y.shape == (1, 2, 2)
    np.testing.assert_array_equal(y, window_max(x, 4))


def test_dense_examples(rng):
    assert dense_forward(np.array([1.0, -1.0]), np.eye(2), np.zeros(2)).tolist() == [1.0, 0.0]
    assert np.all(dense_forward(np.zeros(4), rng.standard_normal((3, 4)), np.zeros(3)) == 0)
    W, b, x = rng.standard_normal((5, 7)), rng.standard_normal(5), rng.standard_normal(7)
    expected = [max(0.0, sum(W[i, j] * x[j] for j in range(7)) + b[i]) for i in range(5)]
    np.testing.assert_allclose(dense_forward(x, W, b), expected, atol=1e-12)
    with pytest.raises(DimensionError):
        dense_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


# ---------------------------------------------------------------- dropout / softmax

def test_dropout_infer_and_zero_rate(rng):
    x = rng.standard_normal(100)
    assert np.array_equal(dropout_forward(x, 0.2, "infer")[0], x)
    assert np.array_equal(dropout_forward(x, 0.0, "train", rng)[0], x)


def test_dropout_statistics():
    out, _ = dropout_forward(np.ones(100_000), 0.2, "train", np.random.default_rng(0))
    assert abs(out.mean() - 1.0) <= 0.01
    assert abs((out == 0).mean() - 0.2) <= 0.01


def test_dropout_bad_rate():
    with pytest.raises(ConfigError):
        dropout_forward(np.ones(3), 1.0)


def test_softmax_uniform():
    loss, probs = softmax_cross_entropy(np.zeros(7), 3)
    np.testing.assert_allclose(probs, 1 / 7)
    assert loss == pytest.approx(np.log(7))


def test_softmax_stable():
    loss, probs = softmax_cross_entropy(np.array([1000.0, 0.0]), 0)
    assert np.all(np.isfinite(probs)) and probs[0] == pytest.approx(1.0) and loss == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=10), st.data())
def test_softmax_gradient_is_probs_minus_onehot(logits, data):
    z = np.array(logits)
    label = data.draw(st.integers(0, len(z) - 1))
    _, probs = softmax_cross_entropy(z, label)
    assert probs.sum() == pytest.approx(1.0, abs=1e-9) and np.all(probs > 0)
    expected = probs.copy()
    expected[label] -= 1
    h = 1e-6
    for i in range(len(z)):
        zp, zm = z.copy(), z.copy()
        zp[i] += h
        zm[i] -= h
        num = (softmax_cross_entropy(zp, label)[0] - softmax_cross_entropy(zm, label)[0]) / (2 * h)
        assert num == pytest.approx(expected[i], abs=1e-6)


# ---------------------------------------------------------------- architecture

def test_paper_shape_trace():
    trace = PAPER_ARCH.shape_trace()
    assert trace == {"conv1": (32, 126, 98), "pool1": (32, 31, 24), "conv2": (64, 29, 22), "pool2": (64, 7, 5),
                     "flatten": 2240, "dense1": 5000, "dense2": 2500, "out": 550}


def test_scaled_arch():
    arch = scaled_arch(8, 5)
    assert (arch.conv1, arch.conv2, arch.dense1, arch.dense2, arch.num_classes) == (4, 8, 625, 312, 5)
    with pytest.raises(ConfigError):
        scaled_arch(0.5, 5)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ConfigError):
        TrainConfig(dropout_rate=1.0)


def test_model_input_shape_error():
    with pytest.raises(DimensionError):
        CnnModel(TINY).forward(np.zeros((2, 1, 27, 26)))


# ---------------------------------------------------------------- backward

def test_backward_before_forward():
    with pytest.raises(StateError):
        CnnModel(TINY).backward([0])


def test_zero_input_gives_zero_conv_filter_grads():
    model = CnnModel(TINY, dtype=np.float64)
    _, g = model.loss_and_grads(np.zeros((3, 1, 26, 26)), np.array([0, 1, 2]), rng=np.random.default_rng(0))
    assert np.all(g["conv1.w"] == 0)
    # conv2 sees pool1 = max over conv1 = bias = 0
    assert np.all(g["conv2.w"] == 0)


def test_grads_match_finite_differences_tiny():
    from oracles import finite_difference_check

    model = CnnModel(TINY, seed=3, dtype=np.float64)
    x = np.random.default_rng(5).standard_normal((2, 1, 26, 26))
    worst, _, checked, skipped = finite_difference_check(model, x, np.array([0, 2]))
    assert checked + skipped == sum(v.size for v in model.params.values())
    # sample 0 has every dense1 unit dropped, so its dense2 pre-activations equal the
    # (zero) biases: those 6 bias coordinates sit on a ReLU kink and have no derivative
    assert skipped <= TINY.dense2
    assert worst < 1e-4


# ---------------------------------------------------------------- training

def _toy_data(n=12, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    x = rng.standard_normal((n, 1, 26, 26)) * 0.1
    x[:, 0, :, :] += (y[:, None, None] - 1.0)
    return x, y


def test_lr_zero_leaves_parameters():
    model = CnnModel(TINY)
    before = {k: v.copy() for k, v in model.params.items()}
    sgd_train(model, *_toy_data(), TrainConfig(learning_rate=0.0, epochs=3, batch_size=4))
    for k in PARAM_NAMES:
        assert np.array_equal(before[k], model.params[k])


def test_overfit_single_sample():
    model = CnnModel(TINY, seed=1)
    x, y = _toy_data(1)
    hist = sgd_train(model, x, y, TrainConfig(learning_rate=0.01, epochs=200, batch_size=1, dropout_rate=0.0))
    assert hist.losses[-1] < np.log(3) / 10


def test_same_seed_bit_identical():
    x, y = _toy_data()
    runs = []
    for _ in range(2):
        model = CnnModel(TINY, seed=9)
        hist = sgd_train(model, x, y, TrainConfig(epochs=4, batch_size=5, seed=13))
        runs.append((model, hist.losses))
    assert runs[0][1] == runs[1][1]
    for k in PARAM_NAMES:
        assert runs[0][0].params[k].tobytes() == runs[1][0].params[k].tobytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    x, y = _toy_data()
    x = x * 1e6
    with pytest.raises(TrainingDivergedError):
        sgd_train(CnnModel(TINY), x, y, TrainConfig(learning_rate=1e6, epochs=5, batch_size=4))


def test_bad_labels():
    x, _ = _toy_data()
    with pytest.raises(ConfigError):
        sgd_train(CnnModel(TINY), x, np.full(len(x), 7), TrainConfig(epochs=1))


# ---------------------------------------------------------------- embeddings and persistence

def test_embedding_nonnegative_and_deterministic(rng):
    model = CnnModel(REDUCED_ARCH)
    snippet = np.abs(rng.standard_normal((128, 100)))
    e1, e2 = extract_embedding(model, snippet), extract_embedding(model, snippet)
    assert e1.shape == (16,) and np.all(e1 >= 0) and np.array_equal(e1, e2)
    with pytest.raises(DimensionError):
        extract_embedding(model, np.zeros((128, 99)))


def test_embeddings_separate_speakers(trained):
    from voxcluster.clustering import cosine_distance

    emb = trained.model.embed(trained.val.x)
    labels = trained.val.y
    same, diff = [], []
    for i in range(len(emb)):
        for j in range(i + 1, len(emb)):
            (same if labels[i] == labels[j] else diff).append(cosine_distance(emb[i], emb[j]))
    assert np.mean(diff) > np.mean(same)


def test_save_load_round_trip(tmp_path):
    model = CnnModel(REDUCED_ARCH, seed=5)
    save_model(model, tmp_path / "m.voxcnn")
    back = load_model(tmp_path / "m.voxcnn")
    assert back.arch == model.arch
    for k in PARAM_NAMES:
        assert back.params[k].tobytes() == model.params[k].tobytes()


def test_corrupted_magic(tmp_path):
    path = tmp_path / "m.voxcnn"
    CnnModel(TINY).save(path)
    blob = bytearray(path.read_bytes())
    blob[:8] = b"XXXXXXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_model(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "m.voxcnn"
    CnnModel(TINY).save(path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(FormatError):
        load_model(path)


@pytest.mark.slow
def test_paper_model_round_trip_550_logits(tmp_path):
    model = CnnModel(PAPER_ARCH, seed=0)
    save_model(model, tmp_path / "paper.voxcnn")
    back = load_model(tmp_path / "paper.voxcnn")
    logits = back.forward(np.zeros((1, 1, 128, 100)))["logits"]
    assert logits.shape == (1, 550)
    assert back.embed(np.zeros((1, 128, 100))).shape == (1, 2500)


def test_softmax_sums_to_one(rng):
    p = softmax(rng.standard_normal((4, 9)) * 30)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
