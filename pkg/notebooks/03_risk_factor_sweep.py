"""
Ranking risk factors with a repeated sweep
==========================================

Every factor (plus the no-covariate baseline) is trained several times
at several window lengths. Runs are ranked by their best cumulative
error.
"""

# %%
import numpy as np

from covforecast.data import dataset_from_daily
from covforecast.model import ModelConfig
from covforecast.sweep import SweepSpec, boxplot_stats, rank_factors, run_sweep, topk_curve

rng = np.random.default_rng(0)
n = 24
x = rng.uniform(size=n)           # drives the growth rate
unrelated = rng.uniform(size=n)   # does not
t = np.arange(80)
rate = 0.05 + 0.15 * x
cum = 5000 / (1 + np.exp(-rate[:, None] * (t - 40)))
daily = np.diff(cum, prepend=0.0, axis=1) * rng.lognormal(0, 0.3, size=cum.shape)
dataset = dataset_from_daily(np.stack([daily, 0.05 * daily], -1),
                             np.column_stack([x, unrelated]), ("X", "NOISE"))

# %%
# A short sweep; raise epochs and repetitions for real use.
spec = SweepSpec(factors=("X", "NOISE"), input_lens=(3, 4), repetitions=3)
results = run_sweep(spec, dataset, ModelConfig(epochs=60))

for row in rank_factors(results):
    print(f"{row.place}  {row.risk:6s} cum_error_cases={row.cum_error_cases:8.2f}  days_in={row.days_in}")

# %%
# Distribution of each factor's runs, and the pooled best-k curve.
for b in boxplot_stats(results):
    print(f"{b.factor:6s} min {b.min:7.1f}  median {b.median:7.1f}  max {b.max:7.1f}")
print("top-1 curve:", np.round(topk_curve(results, 1), 1))
