"""
Covariates, peaks and period correlations
=========================================

Three analyses that sit next to the model: covariate correlation,
peak-per-capita extraction and the Past/Now/Future table.
"""

# %%
import numpy as np

from covforecast.analysis import (
    PeriodSpec, as_table, correlation_views, dataset_bivariate, period_correlation,
)
from covforecast.data import dataset_from_daily, window_samples
from covforecast.model import ModelConfig, build_model, train

rng = np.random.default_rng(1)
n = 30
obesity = rng.uniform(20, 40, n)
diabetes = 0.3 * obesity + rng.normal(0, 1.0, n)
pvi = rng.uniform(0.3, 0.7, n)
population = rng.uniform(5e4, 2e6, n)

t = np.arange(60)
size = population * (0.002 + 0.0001 * obesity) * rng.lognormal(0, 0.4, n)
cum = size[:, None] / (1 + np.exp(-0.12 * (t - 35)))
daily = np.diff(cum, prepend=0.0, axis=1)
dataset = dataset_from_daily(np.stack([daily, 0.04 * daily], -1),
                             np.column_stack([obesity, diabetes, pvi]),
                             ("OBESITY", "DIABETES", "PVI"), populations=population)

# %%
# Health factors correlate strongly with each other by construction.
views = correlation_views(as_table(dataset))
print(np.round(views["full"].values, 3))

# %%
# Peak daily cases per capita against obesity.
pts = dataset_bivariate(dataset, "OBESITY")
for p in pts[:5]:
    print(f"{p.fips}  obesity {p.covariate:5.1f}  peak cases per 100k {p.peak_cases_pc * 1e5:6.1f}")

# %%
# The Future column needs a model; a quick one is enough here.
model = build_model(ModelConfig(n_covariates=0, epochs=30))
train(model, window_samples(dataset, 3))
table = period_correlation(model, dataset, PeriodSpec.for_dataset(dataset))
for name, row in zip(table.factors, np.round(table.values, 3)):
    print(f"{name:9s}", row)
