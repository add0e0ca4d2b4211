"""
From county records to model-ready windows
==========================================

Build a tiny dataset by hand: three counties, two metro areas, a
handful of covariates. Then watch each pipeline stage.
"""

# %%
# Raw cumulative counts. County 36061 reports a decrease on its fourth
# day, which the validator will flag.
import datetime as dt

import numpy as np

from covforecast.data import (
    CovariateTable, MetroArea, TimeSeriesRecord, build_dataset, cumulative_to_daily,
    validate_monotonic, window_samples,
)
from covforecast.registry import FactorRegistry

start = dt.date(2020, 3, 1)
series = {
    "01001": ([0, 3, 8, 15, 25, 40, 58, 80, 104, 130], [0, 0, 0, 1, 1, 2, 3, 4, 5, 6]),
    "01003": ([1, 4, 9, 17, 28, 41, 60, 79, 101, 126], [0, 0, 1, 1, 2, 2, 3, 4, 4, 5]),
    "36061": ([5, 20, 45, 40, 110, 160, 230, 300, 390, 480], [0, 1, 2, 3, 5, 7, 9, 12, 15, 19]),
}
records = [TimeSeriesRecord(f, start + dt.timedelta(days=k), c, d)
           for f, (cases, deaths) in series.items() for k, (c, d) in enumerate(zip(cases, deaths))]

report = validate_monotonic(records)
for v in report.violations:
    print(f"decrease: {v.fips} {v.field} on {v.date} (index {v.index})")

# %%
# Daily counts are first differences; a prefix sum recovers the input.
daily = cumulative_to_daily(series["01001"][0])
print("daily cases 01001:", daily.tolist())
assert np.cumsum(daily).tolist() == series["01001"][0]

# %%
# Covariates are aggregated per metro. Prevalences get a population
# weighted mean, hospital counts are summed.
covariates = CovariateTable.from_dict({
    "01001": {"DIABETES": 10.0, "Nhosp": 2.0},
    "01003": {"DIABETES": 20.0, "Nhosp": 3.0},
    "36061": {"DIABETES": 9.0, "Nhosp": 60.0},
})
metros = [
    MetroArea("mobile", "Mobile-Daphne", ("01001", "01003"), (100_000, 300_000)),
    MetroArea("nyc", "New York", ("36061",), (1_600_000,)),
]
dataset, ingest = build_dataset(records, covariates, metros, FactorRegistry.default())
print("kept:", ingest.kept, "rejected:", ingest.rejected)
print("raw metro covariates:", dict(zip(dataset.factors, dataset.covariates_raw[0].tolist())))

# %%
# Only the Mobile metro survives. Values are sqrt-transformed and
# min-max scaled jointly; each window carries L input days and a
# 30-slot target with a mask for days past the data end.
samples = window_samples(dataset, input_len=3, covariates=("DIABETES",))
print("inputs", samples.inputs.shape, "targets", samples.targets.shape)
print("unmasked slots per window:", samples.mask.sum(axis=1).tolist())
