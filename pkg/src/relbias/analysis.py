"""Behavioural metrics: accuracy, relative-value bias, predictive checks."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agents import AgentConfig
from .fitting import FitResult
from .promptgen import PromptStyle
from .runner import simulate_records
from .taskdef import TIE_TOL, TaskSpec, enumerate_transfer_pairs, relative_value_ranks

Z95 = 1.96


def _by_run(records: Iterable[dict], phase: str | None = None) -> dict:
    runs = defaultdict(list)
    for r in records:
        if phase is None or r["phase"] == phase:
            runs[r["run"]].append(r)
    return dict(runs)


def _best_options(options, evs) -> set:
    best = max(evs[o] for o in options)
    return {o for o in options if evs[o] >= best - TIE_TOL}


def choice_accuracy(records: Iterable[dict], task: TaskSpec, phase: str) -> dict:
    """Per-run proportion of reward-maximising choices in ``phase``.

    Invalid replies are dropped, and so are trials where every offered option
    has the same expected value. Runs with nothing left map to nan.
    """
    evs = task.expected_values()
    out = {}
    for run, trials in sorted(_by_run(records, phase).items()):
        hits = n = 0
        for r in trials:
            if not r["valid"]:
                continue
            best = _best_options(r["options"], evs)
            if len(best) == len(r["options"]):
                continue
            n += 1
            hits += r["choice"] in best
        out[run] = hits / n if n else math.nan
    return out


def higher_relative_choice_rate(records: Iterable[dict], task: TaskSpec,
                                ranks: dict[str, float] | None = None) -> dict:
    """Per-run rate of choosing the higher-relative-value option in transfer.

    Pairs tied in relative value and invalid replies are excluded; a run with
    no usable trial maps to None.
    """
    ranks = ranks if ranks is not None else relative_value_ranks(task)
    out = {}
    for run, trials in sorted(_by_run(records, "transfer").items()):
        hits = n = 0
        for r in trials:
            a, b = r["options"][:2]
            if not r["valid"] or abs(ranks[a] - ranks[b]) <= TIE_TOL:
                continue
            n += 1
            hi = a if ranks[a] > ranks[b] else b
            hits += r["choice"] == hi
        out[run] = hits / n if n else None
    return out


def ideal_choice_rate(task: TaskSpec) -> float:
    """Higher-relative choice rate of an expected-value maximiser.

    Enumerates the transfer pairs exactly; equal-EV pairs earn half credit.
    """
    ranks = relative_value_ranks(task)
    evs = task.expected_values()
    credit = n = 0.0
    for a, b in enumerate_transfer_pairs(task):
        if abs(ranks[a] - ranks[b]) <= TIE_TOL:
            continue
        n += 1
        hi, lo = (a, b) if ranks[a] > ranks[b] else (b, a)
        if abs(evs[hi] - evs[lo]) <= TIE_TOL:
            credit += 0.5
        elif evs[hi] > evs[lo]:
            credit += 1.0
    return credit / n


def bias_flag(mean: float, ci95: tuple[float, float], ideal: float) -> bool:
    """Relative-value bias: the whole 95% CI sits above the ideal rate."""
    lo, _ = ci95
    return bool(np.isfinite(lo) and lo > ideal)


# --------------------------------------------------------------------------
# descriptive statistics


@dataclass
class MetricRow:
    group: str
    metric: str
    n: int
    mean: float
    se: float
    ci_low: float
    ci_high: float
    note: str = ""


def describe(values: Sequence[float]) -> tuple[int, float, float, float, float]:
    v = np.asarray([x for x in values if x is not None and not math.isnan(x)], dtype=float)
    n = v.size
    if n == 0:
        return 0, math.nan, math.nan, math.nan, math.nan
    mean = float(v.mean())
    if n < 2:
        return n, mean, math.nan, math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(n))
    return n, mean, se, mean - Z95 * se, mean + Z95 * se


def summarize(groups: dict, metric: str = "value") -> list[MetricRow]:
    """Mean, SE and normal-approximation CI95 per group."""
    rows = []
    for key, values in groups.items():
        n, mean, se, lo, hi = describe(list(values))
        note = "ci_undefined" if n < 2 else ""
        rows.append(MetricRow(str(key), metric, n, mean, se, lo, hi, note))
    return rows


def paired_contrast(a: Sequence[float], b: Sequence[float], label: str = "a-b") -> MetricRow:
    if len(a) != len(b):
        raise ValueError("paired contrast needs equal-length samples")
    diffs = [x - y for x, y in zip(a, b)
             if x is not None and y is not None and not (math.isnan(x) or math.isnan(y))]
    n, mean, se, lo, hi = describe(diffs)
    return MetricRow(label, "paired_difference", n, mean, se, lo, hi, "ci_undefined" if n < 2 else "")


def independent_contrast(a: Sequence[float], b: Sequence[float], label: str = "a-b") -> MetricRow:
    na, ma, sa, _, _ = describe(a)
    nb, mb, sb, _, _ = describe(b)
    se = math.hypot(sa, sb)
    diff = ma - mb
    return MetricRow(label, "difference", min(na, nb), diff, se, diff - Z95 * se, diff + Z95 * se)


def bias_table(records: Iterable[dict], task: TaskSpec) -> list[dict]:
    """Bias summary per prompt style: ideal rate, mean, SE, CI95 and the bias flag."""
    ideal = ideal_choice_rate(task)
    by_style = defaultdict(list)
    for r in records:
        by_style[r.get("style", "standard")].append(r)
    rows = []
    for style in sorted(by_style):
        rates = higher_relative_choice_rate(by_style[style], task)
        n, mean, se, lo, hi = describe(list(rates.values()))
        rows.append({"prompt": style, "task": task.name, "ideal": round(ideal, 3), "n_runs": n,
                     "mean": mean, "se": se, "ci_low": lo, "ci_high": hi,
                     "bias": bias_flag(mean, (lo, hi), ideal)})
    return rows


def accuracy_table(records: Iterable[dict], task: TaskSpec) -> list[dict]:
    records = list(records)
    rows = []
    by_style = defaultdict(list)
    for r in records:
        by_style[r.get("style", "standard")].append(r)
    for style in sorted(by_style):
        for phase in ("training", "transfer"):
            acc = choice_accuracy(by_style[style], task, phase)
            n, mean, se, lo, hi = describe(list(acc.values()))
            rows.append({"prompt": style, "task": task.name, "phase": phase, "n_runs": n,
                         "mean": mean, "se": se, "ci_low": lo, "ci_high": hi})
    return rows


# --------------------------------------------------------------------------
# choice patterns and predictive fit


def learning_curves(records: Iterable[dict], task: TaskSpec) -> dict[int, np.ndarray]:
    """Proportion correct at each presentation of each context, across runs."""
    evs = task.expected_values()
    hits = defaultdict(lambda: defaultdict(list))
    for run, trials in _by_run(records, "training").items():
        seen = defaultdict(int)
        for r in sorted(trials, key=lambda r: r["trial"]):
            k = seen[r["context"]]
            seen[r["context"]] += 1
            if r["valid"]:
                best = _best_options(r["options"], evs)
                hits[r["context"]][k].append(float(r["choice"] in best))
    return {
        c.id: np.array([np.mean(hits[c.id][k]) if hits[c.id][k] else np.nan
                        for k in range(task.training_reps)])
        for c in task.contexts
    }


def transfer_choice_rates(records: Iterable[dict], task: TaskSpec) -> dict[str, float]:
    """Times an option was chosen over times it was available (valid trials)."""
    chosen = defaultdict(int)
    available = defaultdict(int)
    for r in records:
        if r["phase"] != "transfer" or not r["valid"]:
            continue
        for o in r["options"]:
            available[o] += 1
        chosen[r["choice"]] += 1
    return {o: chosen[o] / available[o] if available[o] else math.nan for o in task.option_ids}


@dataclass
class PredictiveFit:
    learning_curves: dict[int, np.ndarray]
    transfer_rates: dict[str, float]
    higher_relative_rate: float
    n_sims: int

    def rows(self) -> list[dict]:
        out = []
        for cid, curve in self.learning_curves.items():
            for k, p in enumerate(curve):
                out.append({"kind": "learning_curve", "context": cid, "index": k + 1, "value": p})
        for oid, p in self.transfer_rates.items():
            out.append({"kind": "transfer_rate", "option": oid, "value": p})
        out.append({"kind": "higher_relative_rate", "value": self.higher_relative_rate})
        return out


def posterior_predictive(fit: FitResult, task: TaskSpec, style: PromptStyle | None = None,
                         n_sims: int = 100, seed: int = 0) -> PredictiveFit:
    """Simulate ``n_sims`` runs from the fitted parameters through the runner."""
    agent = AgentConfig("rl_simulated", params=fit.params, variant=fit.variant, seed=seed)
    records = simulate_records(task, agent, n_sims, seed, style)
    rates = [x for x in higher_relative_choice_rate(records, task).values() if x is not None]
    return PredictiveFit(learning_curves(records, task), transfer_choice_rates(records, task),
                         float(np.mean(rates)) if rates else math.nan, n_sims)


def write_csv(rows: Sequence[dict | MetricRow], path: str | Path) -> Path:
    path = Path(path)
    rows = [asdict(r) if isinstance(r, MetricRow) else r for r in rows]
    fields: list[str] = []
    for r in rows:
        fields += [k for k in r if k not in fields]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return path
