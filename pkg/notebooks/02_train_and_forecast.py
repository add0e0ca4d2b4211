"""
Training the forecaster on smooth epidemic curves
=================================================

Eight synthetic cities follow logistic cumulative curves. The network
sees three days and predicts the next fifteen.
"""

# %%
import numpy as np

from covforecast.data import dataset_from_daily, window_samples
from covforecast.model import ModelConfig, build_model, evaluate, predict_city, train

t = np.arange(100)
curves = []
for c in range(8):
    cum = 2000.0 * (1 + c) / (1 + np.exp(-(0.08 + 0.02 * c) * (t - 40 - 3 * c)))
    d = np.diff(cum, prepend=0.0)
    curves.append(np.stack([d, 0.06 * d], axis=-1))
dataset = dataset_from_daily(np.array(curves))
samples = window_samples(dataset, input_len=3)
print(len(samples), "windows")

# %%
# The architecture has the 6878 parameters of the covariate-free model.
cfg = ModelConfig(input_len=3, epochs=200, dropout=0.0, recurrent_dropout=0.0, seed=0)
model = build_model(cfg)
print(model.layer_param_counts(), model.n_params)

report = train(model, samples)
print(f"loss {report.train_loss[0]:.4f} -> {report.train_loss[-1]:.5f} in {report.wall_time:.1f} s")

# %%
# Errors are reported in normalized space.
ev = evaluate(model, samples)
print(f"rmse cases {ev.rmse_cases:.4f}, deaths {ev.rmse_deaths:.4f}")

# %%
# A forecast is denormalized back to daily counts.
day = 45
forecast = predict_city(model, dataset, 2, end=day).reshape(-1, 2)
for k in range(0, 15, 3):
    print(f"day {day + k}: predicted {forecast[k, 0]:8.1f}   observed {dataset.daily[2, day + k, 0]:8.1f}")
