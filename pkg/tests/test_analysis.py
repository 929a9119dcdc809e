import csv
import math

import numpy as np
import pytest

from relbias import analysis
from relbias.agents import AgentConfig
from relbias.cogmodel import ModelParams, ModelVariant
from relbias.fitting import FitResult
from relbias.runner import simulate_records
from relbias.taskdef import TASK_NAMES, get_task

IDEAL = {"B2018": 0.625, "V2023": 0.75, "HW2023a": 0.625, "BP2023": 0.969, "HW2023b": 0.5}


def rec(run, options, choice, phase="transfer", valid=True, trial=0, context=None, style="standard"):
    return {"run": run, "phase": phase, "options": list(options), "choice": choice if valid else None,
            "valid": valid, "trial": trial, "context": context, "style": style}


@pytest.mark.parametrize("name", TASK_NAMES)
def test_ideal_rates(name):
    assert analysis.ideal_choice_rate(get_task(name)) == pytest.approx(IDEAL[name], abs=1e-3)


@pytest.mark.parametrize("name", TASK_NAMES)
def test_ideal_rate_matches_simulated_ideal_agent(name):
    # independent route: the ideal agent through the runner, coin-flipping EV ties
    task = get_task(name)
    records = simulate_records(task, AgentConfig("ideal"), 200, 1)
    rates = analysis.higher_relative_choice_rate(records, task)
    exact = analysis.ideal_choice_rate(task)
    mean = np.mean(list(rates.values()))
    assert mean == pytest.approx(exact, abs=0.01)


def test_higher_relative_rate_hand_records():
    task = get_task("HW2023a")
    records = [
        rec(0, ("1H", "3L"), "1H"),  # 1H higher relative value, chosen
        rec(0, ("2L", "4H"), "2L"),  # 4H higher, not chosen
        rec(0, ("1H", "2H"), "1H"),  # tie, excluded
        rec(0, ("3H", "1L"), "3H", valid=False),  # invalid, excluded
        rec(1, ("1L", "2L"), "1L"),  # tie only -> None
        rec(0, ("2L", "4H"), "1L", phase="training"),
    ]
    rates = analysis.higher_relative_choice_rate(records, task)
    assert rates == {0: 0.5, 1: None}


def test_choice_accuracy():
    task = get_task("BP2023")
    records = [
        rec(0, ("1L", "1H"), "1H", phase="training"),
        rec(0, ("3L", "3M", "3H"), "3M", phase="training"),
        rec(0, ("1L", "2L"), "1L", phase="transfer"),  # equal EV, skipped
        rec(0, ("2H", "1H"), "2H", phase="transfer"),
        rec(1, ("1L", "1H"), "1H", phase="training", valid=False),
    ]
    assert analysis.choice_accuracy(records, task, "training") == {0: 0.5, 1: pytest.approx(math.nan, nan_ok=True)}
    assert analysis.choice_accuracy(records, task, "transfer") == {0: 1.0}


def test_bias_flag():
    assert analysis.bias_flag(0.8, (0.7, 0.9), 0.625)
    assert not analysis.bias_flag(0.65, (0.6, 0.7), 0.625)
    assert not analysis.bias_flag(0.8, (math.nan, math.nan), 0.625)


def test_describe_and_contrasts():
    n, mean, se, lo, hi = analysis.describe([1.0, 2.0, 3.0, None, math.nan])
    assert (n, mean) == (3, 2.0)
    assert se == pytest.approx(1 / math.sqrt(3))
    assert hi - mean == pytest.approx(1.96 * se)
    assert analysis.describe([4.0])[2:] == pytest.approx((math.nan,) * 3, nan_ok=True)
    row = analysis.paired_contrast([1, 2, 3], [0, 0, 1])
    assert row.mean == pytest.approx(5 / 3) and row.n == 3
    with pytest.raises(ValueError):
        analysis.paired_contrast([1], [1, 2])
    diff = analysis.independent_contrast([1, 2, 3], [1, 1, 1])
    assert diff.mean == pytest.approx(1.0)
    rows = analysis.summarize({"x": [1.0], "y": [1.0, 3.0]})
    assert rows[0].note == "ci_undefined" and rows[1].mean == 2.0


def test_bias_table_flags_relative_agent():
    task = get_task("HW2023a")
    agent = AgentConfig("rl_simulated", params=ModelParams(0.9, 0.5, 0.17, 15.0, 15.0, 0.0),
                        variant=ModelVariant.from_name("REL-full"))
    rows = analysis.bias_table(simulate_records(task, agent, 30, 0), task)
    assert rows[0]["n_runs"] == 30 and rows[0]["ideal"] == 0.625 and rows[0]["bias"]


def test_accuracy_table_and_csv(tmp_path):
    task = get_task("V2023")
    records = simulate_records(task, AgentConfig("ideal"), 3, 0)
    rows = analysis.accuracy_table(records, task)
    assert [r["phase"] for r in rows] == ["training", "transfer"]
    assert all(r["mean"] == 1.0 for r in rows)
    path = analysis.write_csv(rows, tmp_path / "acc.csv")
    with open(path) as fh:
        back = list(csv.DictReader(fh))
    assert len(back) == 2 and back[0]["phase"] == "training"


def test_learning_curves_and_transfer_rates():
    task = get_task("HW2023a")
    records = simulate_records(task, AgentConfig("ideal"), 2, 0)
    curves = analysis.learning_curves(records, task)
    assert set(curves) == {1, 2, 3, 4} and all(len(c) == 15 for c in curves.values())
    assert all((c == 1.0).all() for c in curves.values())
    rates = analysis.transfer_choice_rates(records, task)
    assert rates["4H"] == 1.0 and rates["1L"] == 0.0


def test_posterior_predictive_shapes():
    task = get_task("HW2023a")
    params = ModelParams(0.6, 0.5, 0.17, 10.0, 10.0, 1.2)
    v = ModelVariant.from_name("REL-full")
    fit = FitResult(v, params, 0.0, 1, v.k, 0.0, 1, 0)
    pred = analysis.posterior_predictive(fit, task, n_sims=10, seed=3)
    assert pred.n_sims == 10 and 0 <= pred.higher_relative_rate <= 1
    kinds = {r["kind"] for r in pred.rows()}
    assert kinds == {"learning_curve", "transfer_rate", "higher_relative_rate"}
