"""Per-unit regressions of hidden activations on value-difference predictors.

Activation files: one ASCII header line
``RBACT1 rows=<n> cols=<m> dtype=<f4`` terminated by ``\\n``, followed by
n*m little-endian float32 values in row-major order (row = trial,
column = hidden unit). Trial metadata lives in a JSONL sidecar with one
``{"first": <option id>, "second": <option id>}`` object per row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .taskdef import TaskSpec, relative_value_ranks

MAGIC = "RBACT1"
CATEGORIES = ("neither", "abs_only", "rel_only", "both")
PREDICTORS = ("delta_abs", "delta_rel")


class ActivationFormatError(ValueError):
    pass


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class UnitRegressionResult:
    unit: int
    intercept: float
    slope_abs: float
    slope_rel: float
    t_abs: float
    t_rel: float
    p_abs: float
    p_rel: float
    classification: str


def write_activations(path: str | Path, acts: np.ndarray) -> Path:
    acts = np.ascontiguousarray(acts, dtype="<f4")
    if acts.ndim != 2:
        raise ValueError("activations must be a 2-D matrix")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} rows={acts.shape[0]} cols={acts.shape[1]} dtype=<f4\n".encode("ascii"))
        fh.write(acts.tobytes(order="C"))
    return path


def read_activations(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii", errors="replace").split()
        if not header or header[0] != MAGIC:
            raise ActivationFormatError(f"{path}: not an activation file (missing {MAGIC} header)")
        fields = dict(item.split("=", 1) for item in header[1:])
        if fields.get("dtype") != "<f4":
            raise ActivationFormatError(f"{path}: unsupported dtype {fields.get('dtype')}")
        rows, cols = int(fields["rows"]), int(fields["cols"])
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != rows * cols:
        raise ActivationFormatError(f"{path}: header announces {rows}x{cols}, found {data.size} values")
    acts = data.reshape(rows, cols).astype(np.float64)
    if not np.isfinite(acts).all():
        raise ActivationFormatError(f"{path}: non-finite activation values")
    return acts


def read_trials(path: str | Path) -> list[tuple[str, str]]:
    with open(path, encoding="utf-8") as fh:
        return [(r["first"], r["second"]) for r in map(json.loads, filter(str.strip, fh))]


def write_trials(path: str | Path, trials: Sequence[tuple[str, str]]) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in trials:
            fh.write(json.dumps({"first": a, "second": b}) + "\n")
    return path


def value_difference_predictors(trials: Sequence[tuple[str, str]], task: TaskSpec) -> np.ndarray:
    """(n, 2) array of first-minus-second absolute and relative value differences.

    Absolute values are option EVs range-normalised over the task's options;
    relative values are within-context ranks scaled to [0, 1].
    """
    evs = task.expected_values()
    ranks = relative_value_ranks(task)
    lo, hi = min(evs.values()), max(evs.values())
    out = np.empty((len(trials), 2))
    for i, (a, b) in enumerate(trials):
        for o in (a, b):
            if o not in evs:
                raise KeyError(f"unknown option {o!r} for task {task.name}")
        out[i, 0] = (evs[a] - evs[b]) / (hi - lo)
        out[i, 1] = ranks[a] - ranks[b]
    return out


def critical_p(n_units: int, alpha: float = 0.001) -> float:
    return alpha / (2 * n_units)


def _classify(sig_abs: np.ndarray, sig_rel: np.ndarray) -> np.ndarray:
    return np.array(CATEGORIES)[sig_abs.astype(int) + 2 * sig_rel.astype(int)]


def unit_regressions(acts: np.ndarray, predictors: np.ndarray, alpha: float = 0.001) -> list[UnitRegressionResult]:
    """OLS of every activation column on [1, delta_abs, delta_rel].

    Slopes are tested two-sided against ``alpha / (2 * n_units)``.
    """
    acts = np.asarray(acts, dtype=float)
    predictors = np.asarray(predictors, dtype=float)
    n, m = acts.shape
    if predictors.shape != (n, 2):
        raise DesignError(f"predictors shape {predictors.shape} does not match {n} activation rows")
    if n < 4:
        raise DesignError("need at least 4 rows")
    for j, name in enumerate(PREDICTORS):
        if np.ptp(predictors[:, j]) == 0:
            raise DesignError(f"predictor {name} is constant")
    X = np.column_stack([np.ones(n), predictors])
    if np.linalg.matrix_rank(X) < 3:
        raise DesignError("predictors delta_abs and delta_rel are collinear")
    coef, _, _, _ = np.linalg.lstsq(X, acts, rcond=None)
    resid = acts - X @ coef
    df = n - 3
    s2 = (resid ** 2).sum(axis=0) / df
    xtx_inv = np.linalg.inv(X.T @ X)
    se = np.sqrt(np.outer(np.diag(xtx_inv), s2))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, np.where(coef == 0, 0.0, np.inf))
    p = 2 * stats.t.sf(np.abs(t), df)
    p_crit = critical_p(m, alpha)
    labels = _classify(p[1] < p_crit, p[2] < p_crit)
    return [
        UnitRegressionResult(u, coef[0, u], coef[1, u], coef[2, u], t[1, u], t[2, u], p[1, u], p[2, u], labels[u])
        for u in range(m)
    ]


def classification_counts(results: Sequence[UnitRegressionResult]) -> dict[str, int]:
    counts = dict.fromkeys(CATEGORIES, 0)
    for r in results:
        counts[r.classification] += 1
    return counts


def effect_size_summary(results: Sequence[UnitRegressionResult]) -> dict:
    """Mean unsigned slopes per predictor and their paired difference (rel - abs)."""
    if not results:
        raise ValueError("no regression results")
    a = np.abs([r.slope_abs for r in results])
    r_ = np.abs([r.slope_rel for r in results])
    n = len(results)
    out = {"n_units": n, "mean_abs_slope_abs": float(a.mean()), "mean_abs_slope_rel": float(r_.mean())}
    d = r_ - a
    out["mean_difference"] = float(d.mean())
    if n < 2:
        out.update(se_abs=math.nan, se_rel=math.nan, se_difference=math.nan, t_difference=math.nan,
                   note="se_undefined")
        return out
    out["se_abs"] = float(a.std(ddof=1) / math.sqrt(n))
    out["se_rel"] = float(r_.std(ddof=1) / math.sqrt(n))
    sd = d.std(ddof=1)
    out["se_difference"] = float(sd / math.sqrt(n))
    out["t_difference"] = float(d.mean() / (sd / math.sqrt(n))) if sd > 0 else math.nan
    out["note"] = ""
    return out


def counts_table(results: Sequence[UnitRegressionResult]) -> list[dict]:
    counts = classification_counts(results)
    total = sum(counts.values())
    return [{"category": c, "count": counts[c], "percent": 100.0 * counts[c] / total} for c in CATEGORIES]
