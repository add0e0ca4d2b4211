"""Risk-factor vocabulary and the factor registry (class + aggregation policy)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources

# Factors used one at a time in the sweep, in the order of the published ranking table.
SWEEP_FACTORS = (
    "pop_density_2010", "PHLTH", "Insurance", "Percentblacks", "Percenthispanics",
    "Nhosp", "INSURANCE", "CHOLSCREEN", "DIABETES", "STROKE", "CHD", "CHECKUP",
    "Nbeds", "svi_overall", "KIDNEY", "CASTHMA", "black_percent", "BPMED", "LPA",
    "CSMOKING", "ARTHRITIS", "poverty_percent", "Estbeds", "MHLTH", "senior_percent",
    "COPD", "CANCER", "Nbeds_per1000", "BPHIGH", "HIGHCHOL", "BINGE", "OBESITY",
    "svi_minority",
)

# Only used by the correlation analyses.
ANALYSIS_FACTORS = ("PVI", "norm_pop")

# Name of the no-covariate configuration in sweeps and rankings.
NONE_FACTOR = "None"

HEALTH_FACTORS = (
    "ARTHRITIS", "BINGE", "BPHIGH", "BPMED", "CANCER", "CASTHMA", "CHD", "CHECKUP",
    "CHOLSCREEN", "COPD", "CSMOKING", "DIABETES", "HIGHCHOL", "KIDNEY", "LPA",
    "MHLTH", "OBESITY", "PHLTH", "STROKE",
)

CLASSES = ("extensive", "intensive", "population")
AGGREGATES = ("sum", "mean", "median")


class RegistryError(ValueError):
    pass


@dataclass(frozen=True)
class FactorInfo:
    name: str
    kind: str
    aggregate: str


class FactorRegistry:
    """Maps factor names to their normalization class and metro aggregation policy.

    ``extensive`` factors scale with population (divided by it before
    rescaling, summed across counties); ``intensive`` factors are rescaled
    directly and aggregated by population-weighted mean; ``population`` is
    log-transformed.
    """

    def __init__(self, entries):
        self._entries = {}
        for e in entries:
            if e.kind not in CLASSES:
                raise RegistryError(f"factor {e.name!r}: unknown class {e.kind!r}")
            if e.aggregate not in AGGREGATES:
                raise RegistryError(f"factor {e.name!r}: unknown aggregate {e.aggregate!r}")
            self._entries[e.name] = e

    def __contains__(self, name):
        return name in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, name):
        try:
            return self._entries[name]
        except KeyError:
            raise RegistryError(f"factor {name!r} is not classified in the factor registry") from None

    def kind(self, name):
        return self[name].kind

    def aggregate(self, name):
        return self[name].aggregate

    def with_overrides(self, **aggregates):
        entries = [FactorInfo(e.name, e.kind, aggregates.get(e.name, e.aggregate))
                   for e in self._entries.values()]
        return FactorRegistry(entries)

    @classmethod
    def from_csv(cls, text):
        """Parse ``factor,class[,aggregate]`` CSV text."""
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or not {"factor", "class"} <= set(reader.fieldnames):
            raise RegistryError("factor registry needs header 'factor,class'")
        entries = []
        for row in reader:
            kind = row["class"].strip()
            agg = (row.get("aggregate") or "").strip() or ("sum" if kind != "intensive" else "mean")
            entries.append(FactorInfo(row["factor"].strip(), kind, agg))
        return cls(entries)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8", newline="") as fh:
            return cls.from_csv(fh.read())

    @classmethod
    def default(cls):
        text = resources.files("covforecast").joinpath("data/factor_registry.csv").read_text("utf-8")
        return cls.from_csv(text)

    def to_csv(self):
        lines = ["factor,class,aggregate"]
        lines += [f"{e.name},{e.kind},{e.aggregate}" for e in self._entries.values()]
        return "\n".join(lines) + "\n"
