"""Release acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line (shown in the pytest terminal
summary) and fails if its criterion is not met.
"""

import math
import time

import numpy as np
import pytest

from golden_scenarios import GOLDEN, SCENARIOS, render_scenario
from relbias import analysis, probe, seeding
from relbias.agents import AgentConfig
from relbias.cogmodel import (
    EncodingState, ModelParams, ModelVariant, build_replay, choice_probabilities,
    negative_log_likelihood, subjective_value, update_expectancies,
)
from relbias.fitting import OptimizerConfig, compare_models, fit_all, recovery_report
from relbias.promptgen import LETTERS, forced_reply, parse_choice
from relbias.runner import simulate_records
from relbias.taskdef import TASK_NAMES, enumerate_transfer_pairs, get_task

IDEAL = {"B2018": 0.625, "V2023": 0.750, "HW2023a": 0.625, "BP2023": 0.969, "HW2023b": 0.500}
TRAINING = {"B2018": 48, "V2023": 60, "HW2023a": 60, "BP2023": 60, "HW2023b": 60}
TRANSFER = {"B2018": 28, "V2023": 12, "HW2023a": 28, "BP2023": 45, "HW2023b": 28}

RECOVERY_TRUTH = ModelParams(0.6, 0.5, 0.17, 10.0, 10.0, 1.2)
FULL = ModelVariant.from_name("REL-full")


def test_criterion_1_ideal_rates(acceptance_report):
    t0 = time.perf_counter()
    rates = {name: analysis.ideal_choice_rate(get_task(name)) for name in TASK_NAMES}
    elapsed = time.perf_counter() - t0
    ok = all(abs(rates[n] - IDEAL[n]) <= 0.001 for n in TASK_NAMES) and elapsed < 1.0
    detail = ", ".join(f"{n}={rates[n]:.4f}" for n in TASK_NAMES) + f"; {elapsed:.3f}s"
    acceptance_report(1, "ideal-agent oracle", ok, detail)


def test_criterion_2_structure_counts(acceptance_report):
    got = {}
    for name in TASK_NAMES:
        task = get_task(name)
        records = simulate_records(task, AgentConfig("ideal"), 1, 0)
        got[name] = (sum(r["phase"] == "training" for r in records),
                     sum(r["phase"] == "transfer" for r in records),
                     len(enumerate_transfer_pairs(task)))
    ok = all(got[n] == (TRAINING[n], TRANSFER[n], TRANSFER[n]) for n in TASK_NAMES)
    detail = ", ".join(f"{n}={got[n][0]}/{got[n][1]}" for n in TASK_NAMES)
    acceptance_report(2, "training/transfer trial counts", ok, detail)


def test_criterion_3_equation_suite(acceptance_report):
    checks = {}
    checks["encoding 0.7857"] = abs(
        subjective_value(27, (27, 18), EncodingState({}, 15, 36), 0.5) - (0.5 * 12 / 21 + 0.5)) <= 1e-9
    checks["omega=0 is x_abs"] = abs(subjective_value(27, (27, 18), EncodingState({}, 15, 36), 0.0) - 12 / 21) <= 1e-9
    checks["omega=1 endpoints"] = (subjective_value(27, (27, 18), EncodingState({}, 15, 36), 1.0) == 1.0
                                   and subjective_value(18, (27, 18), EncodingState({}, 15, 36), 1.0) == 0.0)
    s = update_expectancies(EncodingState(), "A", {"A": 0.9, "B": 0.2}, 0.4, 0.1)
    checks["confirmatory 0.66"] = abs(s.q["A"] - 0.66) <= 1e-9
    s = update_expectancies(EncodingState(), "B", {"A": 0.9, "B": 0.2}, 0.4, 0.1)
    checks["disconfirmatory 0.54"] = abs(s.q["A"] - 0.54) <= 1e-9
    for a in (0.1, 0.7):
        s = update_expectancies(EncodingState(), "A", {"A": 1.0}, a, a)
        checks[f"single rate {a}"] = abs(s.q["A"] - (0.5 + 0.5 * a)) <= 1e-9
    checks["softmax 0.9975"] = abs(choice_probabilities([0.8, 0.2], 10, 0)[0]
                                   - math.exp(8) / (math.exp(8) + math.exp(2))) <= 1e-9
    checks["position bias 0.764"] = abs(choice_probabilities([0.4, 0.4], 3, 1.176)[0]
                                        - math.exp(1.176) / (math.exp(1.176) + 1)) <= 1e-9
    checks["beta=0 uniform"] = np.allclose(choice_probabilities([0.9, 0.1], 0, 0), 0.5, atol=1e-12)

    rng = np.random.default_rng(20240601)
    n_cases = 10_000
    norm_ok = shift_ok = bound_ok = True
    for _ in range(n_cases):
        k = int(rng.integers(2, 4))
        q = rng.random(k)
        beta, b, shift = rng.uniform(0, 100), rng.uniform(-5, 5), rng.uniform(-3, 3)
        p = choice_probabilities(q, beta, b)
        norm_ok &= bool(np.all(p >= 0) and abs(p.sum() - 1) <= 1e-12)
        shift_ok &= bool(np.allclose(p, choice_probabilities(q + shift, beta, b), atol=1e-9))
        v = {"A": rng.random(), "B": rng.random()}
        st = update_expectancies(EncodingState({"A": q[0], "B": q[1]}), rng.choice(["A", "B", None]),
                                 v, rng.random(), rng.random())
        bound_ok &= all(0.0 <= x <= 1.0 for x in st.q.values())
    checks["normalisation x1e4"] = norm_ok
    checks["shift invariance x1e4"] = shift_ok
    checks["Q bounded x1e4"] = bound_ok
    failed = [name for name, ok in checks.items() if not ok]
    acceptance_report(3, "equation unit suite", not failed,
                      f"{len(checks) - len(failed)}/{len(checks)} checks" + (f"; failed {failed}" if failed else ""))


@pytest.mark.slow
def test_criterion_4_parameter_recovery(acceptance_report):
    t0 = time.perf_counter()
    report = recovery_report(RECOVERY_TRUTH, 10, get_task("HW2023a"), variant=FULL, n_runs=30, seed=4,
                             cfg=OptimizerConfig(n_starts=20))
    elapsed = time.perf_counter() - t0
    omegas = [e.omega for e in report.estimates]
    hits = sum(abs(w - 0.6) <= 0.1 for w in omegas)
    ok = hits >= 8 and elapsed < 600
    acceptance_report(4, "parameter recovery", ok,
                      f"omega within 0.1 in {hits}/10 (estimates {', '.join(f'{w:.3f}' for w in omegas)}); "
                      f"{elapsed:.0f}s")


@pytest.mark.slow
def test_criterion_5_model_selection(acceptance_report):
    task = get_task("HW2023a")
    wins = {}
    for omega, family in ((0.0, "ABS"), (0.6, "REL")):
        truth = ModelParams(omega, 0.5, 0.17, 10.0, 10.0, 1.2)
        best = []
        for rep in range(10):
            rep_seed = seeding.derive_seed(5_000 + int(omega * 10), rep)
            agent = AgentConfig("rl_simulated", params=truth, variant=FULL, seed=rep_seed)
            data = build_replay(simulate_records(task, agent, 30, rep_seed), task.option_ids)
            fits = fit_all(data, OptimizerConfig(n_starts=10, seed=rep_seed))
            best.append(compare_models(fits).best.variant)
        wins[family] = sum(v.encoding == family for v in best)
    ok = wins["ABS"] >= 8 and wins["REL"] >= 8
    acceptance_report(5, "model selection", ok,
                      f"ABS family wins {wins['ABS']}/10 on omega=0 data, REL family wins {wins['REL']}/10 on omega=0.6 data")


def test_criterion_6_directional_bias(acceptance_report):
    high_omega = AgentConfig("rl_simulated", params=ModelParams(0.8, 0.5, 0.17, 10.0, 10.0, 1.2), variant=FULL)
    control = AgentConfig("rl_simulated", params=ModelParams(0.0, 0.3, 0.3, 30.0, 30.0, 0.0), variant=FULL)
    parts = []
    ok = True
    for name in ("B2018", "HW2023a", "HW2023b"):
        task = get_task(name)
        rel = analysis.bias_table(simulate_records(task, high_omega, 30, 6), task)[0]
        ctl = analysis.bias_table(simulate_records(task, control, 30, 6), task)[0]
        ok &= rel["bias"] and not ctl["bias"]
        parts.append(f"{name}: high-omega CI low {rel['ci_low']:.3f}, control CI low {ctl['ci_low']:.3f}, "
                     f"ideal {rel['ideal']:.3f}")
    acceptance_report(6, "directional bias reproduction", ok, "; ".join(parts))


def _planted_design(n_rep=100, seed=7):
    task = get_task("HW2023a")
    rng = np.random.default_rng(seed)
    trials = [(a, b) if rng.random() < 0.5 else (b, a) for a, b in enumerate_transfer_pairs(task) * n_rep]
    return probe.value_difference_predictors(trials, task), rng


def test_criterion_7_probe_calibration(acceptance_report):
    t0 = time.perf_counter()
    X, rng = _planted_design()
    n, m = X.shape[0], 3072
    p_crit = probe.critical_p(m)

    noise = rng.standard_normal((n, m)).astype(np.float32)
    null_counts = probe.classification_counts(probe.unit_regressions(noise, X))
    false_pos = null_counts["abs_only"] + null_counts["rel_only"] + 2 * null_counts["both"]

    # planted proportions: neither / abs_only / rel_only / both
    planted = {"neither": 0.30, "abs_only": 0.10, "rel_only": 0.35, "both": 0.25}
    sizes = {k: round(v * m) for k, v in planted.items()}
    sizes["neither"] += m - sum(sizes.values())
    labels = np.repeat(list(sizes), list(sizes.values()))
    slopes = rng.uniform(0.5, 1.5, size=(2, m)) * rng.choice([-1, 1], size=(2, m))
    slopes[0, np.isin(labels, ["neither", "rel_only"])] = 0.0
    slopes[1, np.isin(labels, ["neither", "abs_only"])] = 0.0
    acts = X @ slopes + rng.standard_normal((n, m))
    counts = probe.classification_counts(probe.unit_regressions(acts, X))
    recovered = {k: counts[k] / m for k in planted}
    max_err = max(abs(recovered[k] - planted[k]) for k in planted)
    elapsed = time.perf_counter() - t0
    ok = p_crit == pytest.approx(1.628e-7, rel=1e-3) and false_pos <= 1 and max_err <= 0.02 and elapsed < 120
    acceptance_report(7, "probe null calibration and planted recovery", ok,
                      f"p_crit={p_crit:.4g}, null false positives {false_pos}, max proportion error "
                      f"{max_err:.4f}, {elapsed:.1f}s")


def test_criterion_8_uniform_likelihood(acceptance_report):
    worst = 0.0
    n_logs = 0
    for name in ("B2018", "V2023", "HW2023a", "HW2023b"):
        task = get_task(name)
        for agent in (AgentConfig("uniform_random"),
                      AgentConfig("rl_simulated", params=RECOVERY_TRUTH, variant=FULL)):
            records = simulate_records(task, agent, 5, n_logs)
            data = build_replay(records, task.option_ids)
            for omega in (0.0, 0.3, 1.0):
                params = ModelParams(omega, 0.5, 0.17, 0.0, 0.0, 0.0)
                diff = abs(negative_log_likelihood(params, None, data) - data.n_choices * math.log(2))
                worst = max(worst, diff)
            n_logs += 1
    acceptance_report(8, "uniform-likelihood identity", worst <= 1e-9,
                      f"max |NLL - N ln 2| = {worst:.2e} over {n_logs} binary logs")


def test_criterion_9_prompt_golden(acceptance_report):
    mismatched = [f"{s[0]}_{v}" for s in SCENARIOS for v in ("standard", "comparisons")
                  if render_scenario(s, v).encode("utf-8") != (GOLDEN / f"{s[0]}_{v}.txt").read_bytes()]
    round_trip = all(parse_choice(forced_reply(x), LETTERS).letter == x for x in LETTERS)
    ok = not mismatched and round_trip
    acceptance_report(9, "prompt golden files and parse round-trip", ok,
                      f"{2 * len(SCENARIOS) - len(mismatched)}/{2 * len(SCENARIOS)} goldens match, "
                      f"A-J round-trip {'ok' if round_trip else 'broken'}")
