import numpy as np
import pytest

from covforecast.data import Scaler, WindowedSamples, dataset_from_daily, window_samples
from covforecast.model import (
    CheckpointError, ModelConfig, NotFittedError, TrainingDivergedError, build_model,
    checkpoint_bytes, denormalize, evaluate, expected_param_count, load_model,
    masked_weighted_mse, masked_weighted_mse_grad, model_from_bytes, predict, predict_city,
    save_model, train, with_config,
)
from oracles import central_differences, max_relative_error

TABLE_CELLS = {
    0: {"dense": 96, "lstm": 3136, "lstm_1": 2112, "dense_1": 544, "dense_2": 990},
    1: {"dense": 128, "lstm": 3136, "lstm_1": 2112, "dense_1": 544, "dense_2": 990},
    33: {"dense": 1152, "lstm": 3136, "lstm_1": 2112, "dense_1": 544, "dense_2": 990},
    37: {"dense": 1280, "lstm": 3136, "lstm_1": 2112, "dense_1": 544, "dense_2": 990},
}
TOTALS = {0: 6878, 1: 6910, 33: 7934, 37: 8062}

TINY = dict(dense1_units=2, lstm_units=2, dense2_units=2, dropout=0.0, recurrent_dropout=0.0)


def random_batch(rng, B, L, k=0, p_mask=0.4):
    X = rng.uniform(0, 1, size=(B, L, 2 + k))
    Y = rng.uniform(0, 1, size=(B, 30))
    M = rng.uniform(size=(B, 30)) > p_mask
    M[:, :2] = True
    return X, Y, M


def as_samples(X, Y, M, scalers=None):
    scalers = scalers or (Scaler("sqrt_minmax", 0.0, 10.0), Scaler("sqrt_minmax", 0.0, 2.0))
    n = len(X)
    return WindowedSamples(X, Y, M, np.zeros(n, dtype=int), np.arange(n), X.shape[1],
                           value_scalers=scalers)


# ---------------------------------------------------------------- parameter counts

@pytest.mark.parametrize("k", sorted(TOTALS))
def test_parameter_counts_match_table(k):
    model = build_model(ModelConfig(n_covariates=k))
    assert model.layer_param_counts() == TABLE_CELLS[k]
    assert model.n_params == TOTALS[k]


def test_count_formula_for_all_k():
    for k in range(41):
        model = build_model(ModelConfig(n_covariates=k))
        assert model.n_params == expected_param_count(k) == (2 + k) * 32 + 32 + 3136 + 2112 + 544 + 990


def test_layer_activations():
    model = build_model(ModelConfig())
    assert [getattr(layer.activation, "kind", None) for layer in model.layers] == \
        ["relu", "relu", "relu", "relu", "linear"]
    assert model.layers[1].return_sequences and not model.layers[2].return_sequences


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        ModelConfig(output_units=10)
    with pytest.raises(ValueError):
        ModelConfig(batch_size=0)
    with pytest.raises(ValueError):
        ModelConfig(dropout=1.0)


# ---------------------------------------------------------------- loss

def test_loss_examples():
    t = np.zeros((1, 30))
    m = np.ones((1, 30), dtype=bool)
    assert masked_weighted_mse(t, t, m) == 0.0
    p = t.copy()
    p[0, :2] = 1.0
    assert masked_weighted_mse(p, t, m) == 0.5
    p = t.copy()
    p[0, 2:] = 2.0
    assert masked_weighted_mse(p, t, m) == 2.0


def test_loss_without_future_slots():
    p = np.ones((2, 30))
    m = np.zeros((2, 30), dtype=bool)
    m[:, :2] = True
    assert masked_weighted_mse(p, np.zeros((2, 30)), m) == 0.5


def test_all_false_row_is_an_error():
    m = np.ones((2, 30), dtype=bool)
    m[1] = False
    with pytest.raises(ValueError, match="masked"):
        masked_weighted_mse(np.zeros((2, 30)), np.zeros((2, 30)), m)


def test_loss_gradient_matches_finite_differences(rng):
    P, T, M = rng.normal(size=(3, 30)), rng.normal(size=(3, 30)), rng.uniform(size=(3, 30)) > 0.5
    M[:, :2] = True
    _, g = masked_weighted_mse_grad(P, T, M)
    (num,) = central_differences(lambda: masked_weighted_mse(P, T, M), [P])
    np.testing.assert_allclose(g, num, atol=1e-8)
    assert not g[~M].any()


def test_masked_slots_do_not_affect_loss_or_gradients(rng):
    model = build_model(ModelConfig(**TINY, activation="tanh", seed=3))
    X, Y, M = random_batch(rng, 6, 3)
    loss1, g1 = model.loss_and_grads(X, Y, M)
    Y2 = np.where(M, Y, rng.normal(scale=100.0, size=Y.shape))
    loss2, g2 = model.loss_and_grads(X, Y2, M)
    assert loss1 == loss2
    for a, b in zip(g1, g2):
        assert np.array_equal(a, b)


def test_masked_slots_do_not_affect_training(rng):
    X, Y, M = random_batch(rng, 20, 3)
    Y2 = np.where(M, Y, 1e6)
    cfg = ModelConfig(**TINY, epochs=3, batch_size=4, seed=5)
    a, b = build_model(cfg), build_model(cfg)
    ra = train(a, as_samples(X, Y, M))
    rb = train(b, as_samples(X, Y2, M))
    assert ra == rb
    assert a.snapshot_id() == b.snapshot_id()


def test_full_model_gradient_check(rng):
    cfg = ModelConfig(**TINY, activation="tanh", seed=11)
    model = build_model(cfg)
    assert model.n_params == 182
    for arr in model.param_arrays():
        arr[...] = rng.normal(scale=0.5, size=arr.shape)
    X, Y, M = random_batch(rng, 2, 3)
    _, grads = model.loss_and_grads(X, Y, M)
    numeric = central_differences(lambda: masked_weighted_mse(model.forward(X), Y, M),
                                  model.param_arrays())
    assert max_relative_error(grads, numeric) < 1e-4


# ---------------------------------------------------------------- train

def test_zero_epochs_leaves_parameters(rng):
    model = build_model(ModelConfig(**TINY, epochs=0))
    before = [a.copy() for a in model.param_arrays()]
    report = train(model, as_samples(*random_batch(rng, 10, 3)))
    assert report.train_loss == [] and report.val_loss == []
    for a, b in zip(before, model.param_arrays()):
        assert np.array_equal(a, b)


def test_training_is_deterministic(rng):
    samples = as_samples(*random_batch(rng, 30, 3))
    cfg = ModelConfig(dense1_units=4, lstm_units=3, dense2_units=4, epochs=4, batch_size=8, seed=9)
    r1 = train(build_model(cfg), samples)
    r2 = train(build_model(cfg), samples)
    assert r1 == r2
    assert r1.train_loss == r2.train_loss


def test_split_is_eighty_twenty(rng):
    samples = as_samples(*random_batch(rng, 50, 3))
    report = train(build_model(ModelConfig(**TINY, epochs=1)), samples)
    assert len(report.val_indices) == 10 and len(report.train_indices) == 40
    assert set(report.val_indices).isdisjoint(report.train_indices)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch(rng):
    X, Y, M = random_batch(rng, 10, 3)
    Y[0, 0] = np.inf
    with pytest.raises(TrainingDivergedError) as err:
        train(build_model(ModelConfig(**TINY, epochs=2, validation_fraction=0.0)), as_samples(X, Y, M))
    assert err.value.epoch == 0


def test_wrong_sample_shape(rng):
    model = build_model(ModelConfig(**TINY, input_len=4))
    with pytest.raises(ValueError, match="input length"):
        train(model, as_samples(*random_batch(rng, 5, 3)))


@pytest.mark.slow
def test_logistic_training_loss_drops(logistic_dataset):
    report = train(build_model(ModelConfig(seed=0)), window_samples(logistic_dataset, 3))
    assert report.train_loss[-1] < 0.1 * report.train_loss[0]


@pytest.mark.slow
def test_smoothed_loss_never_rises(logistic_dataset):
    # dropout noise makes single epochs jitter; without it the 10-epoch means fall steadily
    cfg = ModelConfig(seed=0, dropout=0.0, recurrent_dropout=0.0)
    report = train(build_model(cfg), window_samples(logistic_dataset, 3))
    blocks = np.asarray(report.train_loss).reshape(-1, 10).mean(axis=1)
    assert np.all(np.diff(blocks) <= 0)


# ---------------------------------------------------------------- predict

def test_predict_requires_fit():
    model = build_model(ModelConfig(**TINY))
    with pytest.raises(NotFittedError):
        predict(model, np.zeros((5, 2)))


def test_denormalize_example():
    s = Scaler("sqrt_minmax", 0.0, 10.0)
    out = denormalize(np.full(30, 0.7), (s, s))
    np.testing.assert_allclose(out, 49.0, rtol=1e-12)


def test_denormalize_clamps_negative():
    s = Scaler("sqrt_minmax", 1.0, 10.0)
    assert denormalize(np.full(30, -0.5), (s, s)).min() == 0.0


def test_short_history(rng):
    model = build_model(ModelConfig(**TINY, epochs=1))
    train(model, as_samples(*random_batch(rng, 10, 3)))
    with pytest.raises(ValueError, match="at least 3"):
        predict(model, np.zeros((2, 2)))
    assert predict(model, np.zeros((7, 2))).shape == (30,)


@pytest.mark.slow
def test_constant_series_are_reproduced():
    levels = np.array([10.0, 40.0, 90.0, 160.0])
    daily = np.repeat(np.stack([levels, levels / 10], axis=1)[:, None, :], 40, axis=1)
    ds = dataset_from_daily(daily)
    cfg = ModelConfig(dropout=0.0, recurrent_dropout=0.0, learning_rate=0.005, batch_size=32, seed=1)
    model = build_model(cfg)
    train(model, window_samples(ds, 3))
    for c, v in enumerate(levels):
        out = predict_city(model, ds, c)
        np.testing.assert_allclose(out[0::2], v, rtol=0.05)
        np.testing.assert_allclose(out[1::2], v / 10, rtol=0.05)


# ---------------------------------------------------------------- evaluate

def zero_output_model():
    model = build_model(ModelConfig(**TINY))
    for arr in model.layers[-1].params.values():
        arr[...] = 0.0
    model.fitted = True
    return model


def test_evaluate_arithmetic():
    X = np.zeros((2, 3, 2))
    Y = np.zeros((2, 30))
    M = np.zeros((2, 30), dtype=bool)
    Y[0, 0], Y[1, 4] = 3.0, -4.0
    M[0, 0] = M[1, 4] = True
    M[:, 1] = True
    rep = evaluate(zero_output_model(), as_samples(X, Y, M))
    assert rep.rmse_cases == pytest.approx(np.sqrt(12.5), abs=1e-15)
    assert rep.cum_error_cases == 7.0
    assert rep.rmse_deaths == 0.0 and rep.cum_error_deaths == 0.0


def test_evaluate_perfect():
    X = np.zeros((3, 3, 2))
    rep = evaluate(zero_output_model(), as_samples(X, np.zeros((3, 30)), np.ones((3, 30), dtype=bool)))
    assert (rep.rmse_cases, rep.rmse_deaths, rep.cum_error_cases, rep.cum_error_deaths) == (0, 0, 0, 0)


# ---------------------------------------------------------------- checkpoint

@pytest.fixture
def fitted(rng):
    model = build_model(ModelConfig(dense1_units=4, lstm_units=3, dense2_units=4, n_covariates=1,
                                    epochs=2, batch_size=8))
    samples = as_samples(*random_batch(rng, 20, 3, k=1))
    samples = WindowedSamples(samples.inputs, samples.targets, samples.mask, samples.city,
                              samples.start, 3, ("DIABETES",), "a", samples.value_scalers)
    train(model, samples)
    return model


def test_checkpoint_round_trip(fitted, tmp_path, rng):
    path = tmp_path / "m.covf"
    save_model(fitted, path)
    loaded = load_model(path)
    assert loaded.fitted and loaded.factors == ("DIABETES",)
    hist = rng.uniform(size=(5, 2))
    assert np.array_equal(predict(fitted, hist, [0.3]), predict(loaded, hist, [0.3]))
    assert checkpoint_bytes(loaded) == path.read_bytes()


def test_checkpoint_layout(fitted):
    blob = checkpoint_bytes(fitted)
    assert blob[:5] == b"COVF1"
    n = int.from_bytes(blob[5:9], "little")
    assert len(blob) == 9 + n + 8 * fitted.n_params
    last = fitted.param_arrays()[-1].reshape(-1)
    assert np.frombuffer(blob[-8 * last.size:], dtype="<f8").tolist() == last.tolist()


def test_checkpoint_bad_magic(fitted):
    with pytest.raises(CheckpointError, match="magic"):
        model_from_bytes(b"XXXXX" + checkpoint_bytes(fitted)[5:])
    with pytest.raises(CheckpointError):
        model_from_bytes(checkpoint_bytes(fitted)[:-3])


def test_with_config():
    cfg = with_config(ModelConfig(), input_len=5)
    assert cfg.input_len == 5 and cfg.epochs == 200
