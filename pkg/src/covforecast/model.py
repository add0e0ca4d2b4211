"""The forecasting network: Dense -> LSTM -> LSTM -> Dense -> Dense(30).

Training uses a masked loss that weights the next-day pair and the
14-day horizon equally, mini-batch Adam and a seeded 80/20 split.
"""
from __future__ import annotations

import hashlib
import json
import struct
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import N_TARGETS, Scaler, step_features
from .nn import LSTM, Adam, Dense, Sequential

MAGIC = b"COVF1"
FORMAT_VERSION = 1


class NotFittedError(RuntimeError):
    pass


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch):
        super().__init__(f"non-finite loss in epoch {epoch}")
        self.epoch = epoch


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_len: int = 3
    n_covariates: int = 0
    dense1_units: int = 32
    lstm_units: int = 16
    dense2_units: int = 32
    output_units: int = N_TARGETS
    activation: str = "relu"
    recurrent_activation: str = "sigmoid"
    dropout: float = 0.2
    recurrent_dropout: float = 0.2
    epochs: int = 200
    batch_size: int = 110
    learning_rate: float = 0.001
    validation_fraction: float = 0.2
    seed: int = 0
    fusion_mode: str = "a"

    def __post_init__(self):
        if self.output_units != N_TARGETS:
            raise ValueError(f"output_units must be {N_TARGETS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.dropout < 1.0 and 0.0 <= self.recurrent_dropout < 1.0):
            raise ValueError("dropout fractions must lie in [0, 1)")
        if self.recurrent_activation != "sigmoid":
            raise ValueError("the recurrent (gate) activation is fixed to sigmoid")
        if self.n_covariates < 0 or self.input_len < 1:
            raise ValueError("n_covariates must be >= 0 and input_len >= 1")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.fusion_mode not in ("a", "b"):
            raise ValueError("fusion_mode must be 'a' or 'b'")

    @property
    def n_features(self):
        return 2 + self.n_covariates

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def expected_param_count(n_covariates, dense1=32, lstm=16, dense2=32, out=N_TARGETS):
    d = 2 + n_covariates
    return ((d * dense1 + dense1) + 4 * (lstm * dense1 + lstm * lstm + lstm)
            + 4 * (lstm * lstm + lstm * lstm + lstm) + (lstm * dense2 + dense2) + (dense2 * out + out))


@dataclass(frozen=True)
class EvalReport:
    rmse_cases: float
    rmse_deaths: float
    cum_error_cases: float
    cum_error_deaths: float


@dataclass
class TrainReport:
    train_loss: list
    val_loss: list
    wall_time: float = field(default=0.0, compare=False)
    snapshot_id: str = ""
    train_indices: np.ndarray = field(default=None, repr=False, compare=False)
    val_indices: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def epochs(self):
        return len(self.train_loss)


class ForecastModel:
    """Layer stack plus config, fitted flag and the value scalers used to denormalize."""

    LAYER_NAMES = ("dense", "lstm", "lstm_1", "dense_1", "dense_2")

    def __init__(self, config, net):
        self.config = config
        self.net = net
        self.fitted = False
        self.value_scalers = ()
        self.factors = ()

    @property
    def layers(self):
        return self.net.layers

    @property
    def n_params(self):
        return self.net.n_params

    def layer_param_counts(self):
        return dict(zip(self.LAYER_NAMES, (layer.n_params for layer in self.layers)))

    def param_arrays(self):
        return [arr for _, _, arr in self.net.named_params()]

    def param_names(self):
        return [f"{self.LAYER_NAMES[k]}/{name}" for k, name, _ in self.net.named_params()]

    def snapshot_id(self):
        h = hashlib.sha256()
        for arr in self.param_arrays():
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]

    def forward(self, inputs, training=False, rng=None):
        return self.net.forward(inputs, training=training, rng=rng, record=False)

    def loss_and_grads(self, inputs, targets, mask, training=False, rng=None):
        pred = self.net.forward(inputs, training=training, rng=rng)
        loss, dpred = masked_weighted_mse_grad(pred, targets, mask)
        grads = self.net.backward(dpred)
        flat = [g[name] for g, layer in zip(grads, self.layers) for name in layer.params]
        return loss, flat


def build_model(config):
    c = config
    act = c.activation
    net = Sequential([
        Dense(c.dense1_units, c.n_features, act),
        LSTM(c.lstm_units, c.dense1_units, act, c.dropout, c.recurrent_dropout, return_sequences=True),
        LSTM(c.lstm_units, c.lstm_units, act, c.dropout, c.recurrent_dropout, return_sequences=False),
        Dense(c.dense2_units, c.lstm_units, act),
        Dense(c.output_units, c.dense2_units, "linear"),
    ])
    net.init_weights(c.seed)
    return ForecastModel(c, net)


def _split_columns(mask):
    mask = np.asarray(mask, dtype=bool)
    head = np.zeros_like(mask)
    head[:, :2] = mask[:, :2]
    tail = np.zeros_like(mask)
    tail[:, 2:] = mask[:, 2:]
    return head, tail


def masked_weighted_mse_grad(pred, target, mask):
    """Loss and d(loss)/d(pred) for :func:`masked_weighted_mse`."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape}, target {target.shape}, mask {mask.shape}")
    if np.any(~mask.any(axis=1)):
        raise ValueError("a sample has every target slot masked; drop it before computing the loss")
    head, tail = _split_columns(mask)
    err = np.where(mask, pred - np.where(mask, target, 0.0), 0.0)
    sq = err * err
    n_head = head.sum()
    n_tail = tail.sum()
    loss = 0.0
    grad = np.zeros_like(pred)
    if n_head:
        loss += 0.5 * sq[head].sum() / n_head
        grad += np.where(head, err / n_head, 0.0)
    if n_tail:
        loss += 0.5 * sq[tail].sum() / n_tail
        grad += np.where(tail, err / n_tail, 0.0)
    return float(loss), grad


def masked_weighted_mse(pred, target, mask):
    """Half the mean squared next-day error plus half the mean squared error
    over the unmasked horizon slots (columns 2..29) of the batch.
    """
    return masked_weighted_mse_grad(pred, target, mask)[0]


def _check_samples(model, samples):
    c = model.config
    if len(samples) == 0:
        raise ValueError("no samples to train on")
    if samples.inputs.shape[1] != c.input_len:
        raise ValueError(f"samples have input length {samples.inputs.shape[1]}, model expects {c.input_len}")
    if samples.inputs.shape[2] != c.n_features:
        raise ValueError(f"samples have {samples.inputs.shape[2]} features, model expects {c.n_features}")


def train(model, samples, config=None):
    """Fit ``model`` for exactly ``config.epochs`` epochs (no early stopping)."""
    c = config or model.config
    _check_samples(model, samples)
    t0 = time.perf_counter()
    split_seq, shuffle_seq, dropout_seq = np.random.SeedSequence(int(c.seed)).spawn(3)
    n = len(samples)
    n_val = int(round(c.validation_fraction * n))
    if n_val >= n:
        n_val = n - 1
    perm = np.random.default_rng(split_seq).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    opt = Adam(lr=c.learning_rate)
    params = model.param_arrays()
    names = model.param_names()
    X, Y, M = samples.inputs, samples.targets, samples.mask
    train_loss, val_loss = [], []
    for epoch in range(c.epochs):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        total = 0.0
        for s in range(0, len(order), c.batch_size):
            b = order[s:s + c.batch_size]
            loss, grads = model.loss_and_grads(X[b], Y[b], M[b], training=True, rng=dropout_rng)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            opt.step(params, grads, names)
            total += loss * len(b)
        epoch_loss = total / len(order)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(epoch)
        train_loss.append(epoch_loss)
        if n_val:
            pred = model.net.forward(X[val_idx], record=False)
            val_loss.append(masked_weighted_mse(pred, Y[val_idx], M[val_idx]))
    model.fitted = True
    model.value_scalers = tuple(samples.value_scalers)
    model.factors = tuple(samples.factors)
    return TrainReport(train_loss, val_loss, time.perf_counter() - t0, model.snapshot_id(),
                       train_idx, val_idx)


def _require_fitted(model):
    if not model.fitted:
        raise NotFittedError("model has not been trained or loaded")


def predict_normalized(model, history, covariates=()):
    """30 normalized outputs from the last ``input_len`` rows of a ``(days, 2)`` history."""
    _require_fitted(model)
    history = np.asarray(history, dtype=float)
    L = model.config.input_len
    if history.ndim != 2 or history.shape[1] != 2:
        raise ValueError("history must be a (days, 2) array of normalized cases and deaths")
    if history.shape[0] < L:
        raise ValueError(f"history has {history.shape[0]} days, the model needs at least {L}")
    cov = np.asarray(covariates, dtype=float).reshape(-1)
    if cov.size != model.config.n_covariates:
        raise ValueError(f"expected {model.config.n_covariates} covariates, got {cov.size}")
    x = step_features(history[-L:], cov, model.config.fusion_mode)[None]
    return model.net.forward(x, record=False)[0]


def denormalize(outputs, value_scalers):
    """Interleaved normalized 30-vector to non-negative daily counts."""
    out = np.asarray(outputs, dtype=float).reshape(-1, 2)
    counts = np.stack([value_scalers[0].invert(out[:, 0]), value_scalers[1].invert(out[:, 1])], axis=1)
    return np.maximum(counts, 0.0).reshape(-1)


def predict(model, history, covariates=()):
    """Denormalized 15-day forecast ``[cases_t+1, deaths_t+1, ..., cases_t+15, deaths_t+15]``."""
    y = predict_normalized(model, history, covariates)
    if not model.value_scalers:
        raise NotFittedError("model carries no value scalers")
    return denormalize(y, model.value_scalers)


def predict_city(model, dataset, city, end=None):
    """Forecast for one dataset city from the window ending before day ``end`` (default: last day)."""
    k = city if isinstance(city, (int, np.integer)) else dataset.city_ids.index(city)
    cols = dataset.factor_columns(model.factors)
    hist = dataset.values[k, :end]
    return predict(model, hist, dataset.covariates[k, cols])


def evaluate(model, samples, subset=None):
    """Normalized-space RMSE and summed absolute error over unmasked slots."""
    _require_fitted(model)
    if subset is not None:
        samples = samples.subset(subset)
    if len(samples) == 0:
        return EvalReport(0.0, 0.0, 0.0, 0.0)
    pred = model.net.forward(samples.inputs, record=False)
    err = np.where(samples.mask, pred - samples.targets, 0.0)
    out = []
    for ch in (0, 1):
        e = err[:, ch::2]
        m = samples.mask[:, ch::2]
        count = m.sum()
        rmse = float(np.sqrt((e[m] ** 2).mean())) if count else 0.0
        out.append((rmse, float(np.abs(e[m]).sum())))
    return EvalReport(out[0][0], out[1][0], out[0][1], out[1][1])


# ------------------------------------------------------------------ checkpoint
#
# Layout (all integers little-endian):
#   5 bytes   magic "COVF1"
#   uint32    length N of the config block
#   N bytes   UTF-8 JSON: config, fitted flag, value scalers, factors, and per
#             layer the ordered list of (parameter name, shape)
#   ...       every parameter array, layer by layer in listed order,
#             row-major little-endian float64

def _header(model):
    layers = []
    for name, layer in zip(ForecastModel.LAYER_NAMES, model.layers):
        layers.append({
            "name": name,
            "type": type(layer).__name__,
            "params": [[p, list(arr.shape)] for p, arr in layer.params.items()],
        })
    return {
        "version": FORMAT_VERSION,
        "config": asdict(model.config),
        "fitted": model.fitted,
        "factors": list(model.factors),
        "value_scalers": [s.to_dict() for s in model.value_scalers],
        "layers": layers,
    }


def checkpoint_bytes(model):
    header = json.dumps(_header(model), sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", len(header)), header]
    for arr in model.param_arrays():
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def model_from_bytes(blob):
    if blob[:5] != MAGIC:
        raise CheckpointError("not a model checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", blob, 5)
    header = json.loads(blob[9:9 + n].decode("utf-8"))
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
    model = build_model(ModelConfig.from_dict(header["config"]))
    offset = 9 + n
    for spec, layer in zip(header["layers"], model.layers):
        for name, shape in spec["params"]:
            arr = layer.params[name]
            if list(arr.shape) != shape:
                raise CheckpointError(f"{spec['name']}/{name}: shape {shape} != {list(arr.shape)}")
            size = arr.size * 8
            if offset + size > len(blob):
                raise CheckpointError("checkpoint is truncated")
            arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
            offset += size
    if offset != len(blob):
        raise CheckpointError("trailing bytes after parameter data")
    model.fitted = bool(header["fitted"])
    model.factors = tuple(header.get("factors", ()))
    model.value_scalers = tuple(Scaler.from_dict(s) for s in header["value_scalers"])
    return model


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def with_config(config, **changes):
    return replace(config, **changes)
