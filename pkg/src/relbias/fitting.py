"""Maximum-likelihood fits, BIC and model comparison.

Parameters are optimised in an unconstrained space: logit for the [0, 1]
parameters, softplus for inverse temperatures, identity for the position
bias. Each fit runs Nelder-Mead from several Latin-hypercube starts.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logit
from scipy.stats import chi2, qmc

from . import seeding
from .agents import AgentConfig
from .cogmodel import (
    ALL_VARIANTS, PARAM_NAMES, ModelParams, ModelVariant, ReplayData,
    _nll_kernel, build_replay, negative_log_likelihood,
)
from .runner import simulate_records

log = logging.getLogger(__name__)

FIT_SCHEMA_VERSION = 1
UNIT_PARAMS = {"omega", "alpha", "alpha_con", "alpha_dis"}
BETA_PARAMS = {"beta", "beta_train", "beta_transfer"}
START_RANGES = {"unit": (0.02, 0.98), "beta": (0.5, 30.0), "b": (-3.0, 3.0)}
_EPS = 1e-9


class FitError(RuntimeError):
    def __init__(self, message: str, traces=None):
        super().__init__(message)
        self.traces = traces or []


@dataclass
class OptimizerConfig:
    n_starts: int = 20
    seed: int = 0
    maxiter: int = 4000
    xatol: float = 1e-5
    fatol: float = 1e-7
    include_current: bool = True


@dataclass
class FitResult:
    variant: ModelVariant
    params: ModelParams
    nll: float
    n_choices: int
    k: int
    bic: float
    n_starts: int
    best_start: int
    converged: list[bool] = field(default_factory=list)
    start_nlls: list[float] = field(default_factory=list)
    data_digest: str = ""

    def to_dict(self) -> dict:
        return {
            "schema": FIT_SCHEMA_VERSION,
            "variant": self.variant.name,
            "params": self.params.to_dict(),
            "free_parameters": list(self.variant.free_parameters),
            "nll": float(self.nll),
            "n_choices": int(self.n_choices),
            "k": int(self.k),
            "bic": float(self.bic),
            "n_starts": int(self.n_starts),
            "best_start": int(self.best_start),
            "converged": [bool(c) for c in self.converged],
            "start_nlls": [float(x) for x in self.start_nlls],
            "data_digest": self.data_digest,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        if d.get("schema") != FIT_SCHEMA_VERSION:
            raise ValueError(
                f"fit result schema {d.get('schema')} != {FIT_SCHEMA_VERSION}; refit with this release"
            )
        return cls(
            ModelVariant.from_name(d["variant"]), ModelParams(**d["params"]), d["nll"],
            d["n_choices"], d["k"], d["bic"], d["n_starts"], d["best_start"],
            list(d.get("converged", [])), list(d.get("start_nlls", [])), d.get("data_digest", ""),
        )


def compute_bic(nll: float, k: int, n: int) -> float:
    if n < 1:
        raise ValueError("BIC needs n >= 1 observations")
    if k < 1:
        raise ValueError("BIC needs k >= 1 parameters")
    return k * math.log(n) + 2.0 * nll


# --------------------------------------------------------------------------
# parameter transforms


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softplus_inv(y):
    y = np.maximum(y, 1e-12)
    return y + np.log(-np.expm1(-y))


def to_unconstrained(variant: ModelVariant, values: Sequence[float]) -> np.ndarray:
    out = []
    for name, v in zip(variant.free_parameters, values):
        if name in UNIT_PARAMS:
            out.append(logit(np.clip(v, _EPS, 1 - _EPS)))
        elif name in BETA_PARAMS:
            out.append(_softplus_inv(v))
        else:
            out.append(v)
    return np.array(out, dtype=float)


def from_unconstrained(variant: ModelVariant, z: Sequence[float]) -> np.ndarray:
    out = []
    for name, v in zip(variant.free_parameters, z):
        if name in UNIT_PARAMS:
            out.append(expit(v))
        elif name in BETA_PARAMS:
            out.append(_softplus(v))
        else:
            out.append(v)
    return np.array(out, dtype=float)


def start_points(variant: ModelVariant, n: int, seed: int) -> np.ndarray:
    """Latin-hypercube starts in natural parameter space."""
    lo, hi = [], []
    for name in variant.free_parameters:
        key = "unit" if name in UNIT_PARAMS else "beta" if name in BETA_PARAMS else "b"
        lo.append(START_RANGES[key][0])
        hi.append(START_RANGES[key][1])
    sample = qmc.LatinHypercube(d=variant.k, seed=seed).random(n)
    return qmc.scale(sample, lo, hi)


# --------------------------------------------------------------------------
# fitting


def _objective(variant: ModelVariant, data: ReplayData, include_current: bool):
    """NLL as a function of the unconstrained free-parameter vector."""
    names = variant.free_parameters
    # column of the free vector feeding each of the six full parameters (-1: fixed omega=0)
    source = [names.index(n) if n in names else -1 for n in PARAM_NAMES]
    for full, tied in ((1, "alpha"), (2, "alpha"), (3, "beta"), (4, "beta")):
        if tied in names:
            source[full] = names.index(tied)
    kind = np.array([0 if n in UNIT_PARAMS else 1 if n in BETA_PARAMS else 2 for n in names])
    n_opt = len(data.option_ids)

    def objective(z):
        x = np.where(kind == 0, expit(z), np.where(kind == 1, _softplus(z), z))
        full = [x[j] if j >= 0 else 0.0 for j in source]
        val = _nll_kernel(full[0], full[1], full[2], full[3], full[4], full[5],
                          data.start, data.phase, data.n_offered, data.offered,
                          data.outcomes, data.choice, n_opt, include_current)
        return val if np.isfinite(val) else 1e12

    return objective


def fit_model(
    variant: ModelVariant,
    data: ReplayData,
    cfg: OptimizerConfig | None = None,
    extra_starts: Sequence[Sequence[float]] = (),
) -> FitResult:
    """Best of ``cfg.n_starts`` Nelder-Mead runs (plus any ``extra_starts``,
    given as free-parameter vectors in natural space)."""
    cfg = cfg or OptimizerConfig()
    if data.n_trials == 0 or data.n_choices == 0:
        raise FitError("no valid choices to fit")

    objective = _objective(variant, data, cfg.include_current)

    starts = list(start_points(variant, cfg.n_starts, cfg.seed)) + [np.asarray(s, float) for s in extra_starts]
    best = None
    traces = []
    converged = []
    start_nlls = []
    for i, x0 in enumerate(starts):
        z0 = to_unconstrained(variant, x0)
        try:
            res = minimize(objective, z0, method="Nelder-Mead",
                           options={"maxiter": cfg.maxiter, "maxfev": 2 * cfg.maxiter,
                                    "xatol": cfg.xatol, "fatol": cfg.fatol, "adaptive": True})
        except (FloatingPointError, ValueError) as exc:
            traces.append({"start": i, "x0": list(map(float, x0)), "error": repr(exc)})
            converged.append(False)
            start_nlls.append(float("nan"))
            continue
        ok = bool(res.success) and np.isfinite(res.fun) and res.fun < 1e12
        converged.append(ok)
        start_nlls.append(float(res.fun))
        traces.append({"start": i, "x0": list(map(float, x0)), "nll": float(res.fun),
                       "message": str(res.message), "nfev": int(res.nfev)})
        if np.isfinite(res.fun) and res.fun < 1e12 and (best is None or res.fun < best[1]):
            best = (i, float(res.fun), res.x)
    if best is None:
        raise FitError(f"{variant.name}: every start failed", traces)
    if not any(converged):
        # typically an inverse temperature running off along a flat ridge
        log.warning("%s: no start met the tolerances; keeping best NLL %.4f", variant.name, best[1])
    i, nll, z = best
    params = ModelParams.from_free(variant, from_unconstrained(variant, z))
    n = data.n_choices
    return FitResult(variant, params, nll, n, variant.k, compute_bic(nll, variant.k, n),
                     len(starts), i, converged, start_nlls, data.digest)


def _abs_counterpart(variant: ModelVariant) -> ModelVariant:
    return ModelVariant("ABS", variant.learning, variant.response)


def _fit_job(job) -> FitResult:
    variant, data, cfg, extra = job
    return fit_model(variant, data, cfg, extra)


def fit_all(data: ReplayData, cfg: OptimizerConfig | None = None,
            variants: Sequence[ModelVariant] = ALL_VARIANTS, mapper=map) -> dict[str, FitResult]:
    """Fit every variant. REL fits also start from their ABS counterpart's
    optimum (omega near 0), so a REL fit can never end worse than its nested
    ABS model.

    ``mapper`` runs each wave of independent fits (ABS first, then REL), e.g.
    ``ProcessPoolExecutor.map``; results do not depend on it.
    """
    cfg = cfg or OptimizerConfig()
    abs_jobs = [(v, data, cfg, ()) for v in variants if v.encoding == "ABS"]
    fits = {f.variant.name: f for f in mapper(_fit_job, abs_jobs)}
    rel_jobs = []
    for v in variants:
        if v.encoding != "REL":
            continue
        extra = []
        base = fits.get(_abs_counterpart(v).name)
        if base is not None:
            p = base.params
            extra.append(ModelParams(1e-6, p.alpha_con, p.alpha_dis, p.beta_train,
                                     p.beta_transfer, p.b).free_values(v))
        rel_jobs.append((v, data, cfg, extra))
    fits.update((f.variant.name, f) for f in mapper(_fit_job, rel_jobs))
    return {v.name: fits[v.name] for v in variants}


@dataclass
class Comparison:
    ranking: list[FitResult]
    delta_bic: dict[str, float]

    @property
    def best(self) -> FitResult:
        return self.ranking[0]

    def table(self) -> list[dict]:
        return [
            {"variant": f.variant.name, "k": f.k, "nll": f.nll, "bic": f.bic,
             "delta_bic": self.delta_bic[f.variant.name], "best": i == 0}
            for i, f in enumerate(self.ranking)
        ]


def compare_models(fits: Sequence[FitResult] | dict[str, FitResult], tie_tol: float = 1e-6) -> Comparison:
    """Rank by BIC; fits within ``tie_tol`` of each other rank fewer-parameter first."""
    fits = list(fits.values()) if isinstance(fits, dict) else list(fits)
    if not fits:
        raise ValueError("nothing to compare")
    digests = {f.data_digest for f in fits}
    if len(digests) > 1:
        raise ValueError("fits were computed on different logs")
    ns = {f.n_choices for f in fits}
    if len(ns) > 1:
        raise ValueError("fits have different numbers of choices")
    remaining = sorted(fits, key=lambda f: f.bic)
    ranking = []
    while remaining:
        lead = remaining[0].bic
        group = [f for f in remaining if f.bic - lead < tie_tol]
        group.sort(key=lambda f: (f.k, f.bic))
        ranking.append(group[0])
        remaining.remove(group[0])
    best = ranking[0].bic
    return Comparison(ranking, {f.variant.name: f.bic - best for f in ranking})


# --------------------------------------------------------------------------
# parameter recovery


@dataclass
class RecoveryReport:
    variant: ModelVariant
    truth: ModelParams
    estimates: list[ModelParams]
    rows: list[dict]
    flags: dict[str, str]


def omega_unidentifiable(fit: FitResult, data: ReplayData, level: float = 0.95) -> bool:
    """True when the data carry no usable information about omega.

    Either the fit is not significantly better than uniform choice (a
    likelihood-ratio test with ``fit.k`` degrees of freedom), in which case
    every omega predicts the same behaviour, or sweeping omega over [0, 1]
    with the other parameters held at the fit moves the NLL by less than the
    one-parameter likelihood-ratio threshold.
    """
    p = fit.params
    uniform = negative_log_likelihood(ModelParams(p.omega, p.alpha_con, p.alpha_dis, 0.0, 0.0, 0.0), None, data)
    if uniform - fit.nll < 0.5 * chi2.ppf(level, fit.k):
        return True
    nlls = [negative_log_likelihood(ModelParams(w, p.alpha_con, p.alpha_dis, p.beta_train, p.beta_transfer, p.b),
                                    None, data) for w in np.linspace(0.0, 1.0, 11)]
    return max(nlls) - min(nlls) < 0.5 * chi2.ppf(level, 1)


def recovery_report(
    truth: ModelParams,
    n_reps: int,
    task,
    style=None,
    variant: ModelVariant | None = None,
    n_runs: int = 30,
    seed: int = 0,
    cfg: OptimizerConfig | None = None,
) -> RecoveryReport:
    """Simulate ``n_reps`` batches from ``truth``, refit each, tabulate error."""
    if n_reps < 2:
        raise ValueError("recovery needs n_reps >= 2")
    variant = variant or ModelVariant()
    cfg = cfg or OptimizerConfig()
    estimates = []
    flat = 0
    for rep in range(n_reps):
        rep_seed = seeding.derive_seed(seed, rep)
        agent = AgentConfig("rl_simulated", params=truth, variant=variant, seed=rep_seed)
        records = simulate_records(task, agent, n_runs, rep_seed, style)
        data = build_replay(records, task.option_ids)
        fit = fit_model(variant, data, OptimizerConfig(**{**cfg.__dict__, "seed": rep_seed}))
        estimates.append(fit.params)
        if variant.encoding == "REL" and omega_unidentifiable(fit, data):
            flat += 1
    rows = []
    free = set(variant.free_parameters)
    for name in PARAM_NAMES:
        key_in_free = name in free or (name.startswith("alpha") and "alpha" in free) or \
            (name.startswith("beta") and "beta" in free)
        if not key_in_free:
            continue
        est = np.array([getattr(e, name) for e in estimates])
        err = est - getattr(truth, name)
        rows.append({"parameter": name, "truth": getattr(truth, name), "mean_estimate": float(est.mean()),
                     "bias": float(err.mean()), "rmse": float(np.sqrt((err ** 2).mean())),
                     "sd": float(est.std(ddof=1))})
    flags = {}
    if variant.encoding == "REL" and flat > n_reps // 2:
        flags["omega"] = "unidentifiable: fits no better than uniform choice or flat in omega"
    return RecoveryReport(variant, truth, estimates, rows, flags)
