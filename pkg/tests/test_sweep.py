import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from covforecast.data import dataset_from_daily
from covforecast.model import ModelConfig
from covforecast.sweep import (
    RANK_COLUMNS, RESULT_COLUMNS, SweepError, SweepResult, SweepSpec, boxplot_stats, five_number,
    rank_factors, read_results_csv, run_seed, run_sweep, topk_curve, write_rank_csv,
    write_results_csv,
)
from conftest import logistic_daily

QUICK = ModelConfig(dense1_units=4, lstm_units=3, dense2_units=4, epochs=2, batch_size=16)


@pytest.fixture(scope="module")
def small_dataset():
    rng = np.random.default_rng(7)
    return dataset_from_daily(logistic_daily(30, 4), rng.uniform(1, 20, size=(4, 2)),
                              ("DIABETES", "CHD"))


def result(factor, value, rep=0, L=3, **kw):
    return SweepResult(factor, L, rep, 0, 0.1, 0.2, value, value / 10, 1.0, **kw)


# ---------------------------------------------------------------- spec and seeds

def test_none_is_always_included():
    spec = SweepSpec(factors=("DIABETES",), input_lens=(3,), repetitions=1)
    assert spec.factors == ("None", "DIABETES")
    with pytest.raises(ValueError):
        SweepSpec(factors=("A", "A"))
    with pytest.raises(ValueError):
        SweepSpec(repetitions=0)


def test_default_grid_size():
    assert len(SweepSpec().grid()) == 34 * 3 * 10


def test_run_seed_is_stable():
    assert run_seed(0, "CHD", 3, 1) == run_seed(0, "CHD", 3, 1)
    seeds = {run_seed(0, f, L, r) for f in ("CHD", "None") for L in (3, 4) for r in range(5)}
    assert len(seeds) == 20
    assert 0 <= run_seed(2**40, "x", 5, 9) < 2**64


# ---------------------------------------------------------------- run_sweep

def test_grid_arithmetic_and_determinism(small_dataset):
    spec = SweepSpec(factors=("DIABETES", "CHD"), input_lens=(3,), repetitions=2, base_seed=4)
    a = run_sweep(spec, small_dataset, QUICK)
    assert len(a) == 6
    assert [r.coord for r in a] == spec.grid()
    assert all(r.ok for r in a)
    assert all(r.seed == run_seed(4, r.factor, r.input_len, r.repetition) for r in a)
    b = run_sweep(spec, small_dataset, QUICK)
    strip = [(r.coord, r.seed, r.rmse_cases, r.rmse_death, r.cum_error_cases, r.cum_error_death)
             for r in a]
    assert strip == [(r.coord, r.seed, r.rmse_cases, r.rmse_death, r.cum_error_cases,
                      r.cum_error_death) for r in b]


def test_unknown_factor(small_dataset):
    with pytest.raises(KeyError, match="OBESITY"):
        run_sweep(SweepSpec(factors=("OBESITY",), repetitions=1), small_dataset, QUICK)


def test_failed_runs_are_recorded(small_dataset):
    # 30-day series cannot feed a 40-day window, so those runs fail
    spec = SweepSpec(factors=("CHD",), input_lens=(3, 40), repetitions=1)
    res = run_sweep(spec, small_dataset, QUICK)
    assert [r.ok for r in res] == [True, False, True, False]
    assert math.isnan(res[1].cum_error_cases) and res[1].error
    assert {r.risk for r in rank_factors(res)} == {"CHD", "None"}
    assert all(r.days_in == 3 for r in rank_factors(res))


def test_all_runs_failing_is_an_error(small_dataset):
    with pytest.raises(SweepError, match="None"):
        run_sweep(SweepSpec(factors=(), input_lens=(40,), repetitions=1), small_dataset, QUICK)


def test_resume_from_run_dir(small_dataset, tmp_path):
    spec = SweepSpec(factors=("CHD",), input_lens=(3,), repetitions=2)
    first = run_sweep(spec, small_dataset, QUICK, run_dir=tmp_path)
    assert len(list(tmp_path.glob("*.json"))) == 4
    (tmp_path / "CHD__L3__r1.json").unlink()
    again = run_sweep(spec, small_dataset, QUICK, run_dir=tmp_path)
    assert [r.cum_error_cases for r in again] == [r.cum_error_cases for r in first]
    assert again[0].wall_ms == first[0].wall_ms  # reused, not recomputed


# ---------------------------------------------------------------- ranking

def test_rank_example():
    res = [result("A", 7.9), result("A", 8.5, rep=1), result("None", 9.2), result("B", 9.5)]
    table = rank_factors(res)
    assert [(r.risk, r.place, r.cum_error_cases) for r in table] == \
        [("A", 0, 7.9), ("None", 1, 9.2), ("B", 2, 9.5)]


def test_rank_single_factor_and_ties():
    assert rank_factors([result("None", 3.0)])[0].place == 0
    table = rank_factors([result("b", 1.0), result("a", 1.0)])
    assert [r.risk for r in table] == ["a", "b"]


def test_rank_by_death_and_days_in():
    res = [result("A", 5.0, L=3), result("A", 9.0, L=5, rep=1)]
    res[1] = SweepResult("A", 5, 1, 0, 0.1, 0.2, 9.0, 0.01, 1.0)
    assert rank_factors(res, "cum_error_death")[0].days_in == 5
    assert rank_factors(res)[0].days_in == 3
    with pytest.raises(ValueError):
        rank_factors(res, "wall_ms")


@given(st.dictionaries(st.sampled_from("ABCDEFG"), st.lists(st.floats(0, 100), min_size=1, max_size=5),
                       min_size=1))
def test_rank_places_and_minimum(groups):
    res = [result(f, v, rep=k) for f, vals in groups.items() for k, v in enumerate(vals)]
    table = rank_factors(res)
    assert [r.place for r in table] == list(range(len(groups)))
    for row in table:
        assert row.cum_error_cases == min(groups[row.risk])
    assert [r.cum_error_cases for r in table] == sorted(r.cum_error_cases for r in table)


# ---------------------------------------------------------------- box plots and top-k

def test_five_number_examples():
    assert five_number([1, 2, 3, 4, 5]) == (1, 2, 3, 4, 5)
    assert five_number([4.2]) == (4.2,) * 5
    assert five_number([1, 2, 3, 3, 4, 5])[2] == 3


def test_boxplot_ordered_by_minimum():
    res = [result("A", v, rep=k) for k, v in enumerate([3, 4, 5])] + \
          [result("B", v, rep=k) for k, v in enumerate([1, 9])]
    stats = boxplot_stats(res)
    assert [b.factor for b in stats] == ["B", "A"]
    assert (stats[1].min, stats[1].median, stats[1].max, stats[1].n) == (3, 4, 5, 3)


def test_topk_examples():
    res = [result(f, float(v + 10 * (f == "B")), rep=v) for f in "AB" for v in range(10)]
    assert topk_curve(res, 1).tolist() == [r.cum_error_cases for r in rank_factors(res)]
    ten = topk_curve(res, 10)
    assert len(ten) == 20 and np.all(np.diff(ten) >= 0)
    assert len(topk_curve(res, 5)) == 10
    assert len(topk_curve(res[:3], 10)) == 3


def test_failed_runs_excluded_from_stats():
    res = [result("A", 2.0), result("A", math.nan, rep=1, error="boom")]
    assert boxplot_stats(res)[0].n == 1
    assert topk_curve(res, 5).tolist() == [2.0]


# ---------------------------------------------------------------- CSV

def test_results_csv_round_trip(tmp_path):
    res = [result("A", 1 / 3), SweepResult("B", 4, 2, 2**63 + 5, 0.1, 0.2, math.nan, math.nan, 12.4, "x")]
    path = tmp_path / "sweep_results.csv"
    write_results_csv(res, path)
    assert path.read_text().splitlines()[0] == ",".join(RESULT_COLUMNS)
    back = read_results_csv(path)
    assert back[0].cum_error_cases == 1 / 3 and back[0].ok
    assert back[1].seed == 2**63 + 5 and not back[1].ok and back[1].wall_ms == 12.0


def test_rank_csv_columns(tmp_path):
    path = tmp_path / "rank_table.csv"
    write_rank_csv(rank_factors([result("A", 1.0), result("None", 2.0)]), path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(RANK_COLUMNS) == \
        "rmse_cases,rmse_death,cum_error_cases,cum_error_death,days_in,risk,place"
    assert [ln.split(",")[-1] for ln in lines[1:]] == ["0", "1"]
