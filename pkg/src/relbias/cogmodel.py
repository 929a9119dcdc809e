"""Range-normalised delta-rule learner with a first-position softmax.

Outcome encoding mixes a running-range (absolute) and a within-trial-range
(relative) normalisation weighted by ``omega``; expectancies follow a delta
rule with separate confirmatory/disconfirmatory learning rates; choices
follow a softmax with an additive bonus ``b`` for the first-listed option.

Two implementations of the trial-by-trial replay live here: a plain Python
reference built from the single-step functions, and a numba kernel used by
the optimiser. Tests hold them to each other.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numba import njit

Q0 = 0.5
PARAM_NAMES = ("omega", "alpha_con", "alpha_dis", "beta_train", "beta_transfer", "b")


class ReplayDataError(ValueError):
    pass


# --------------------------------------------------------------------------
# model family


@dataclass(frozen=True)
class ModelVariant:
    encoding: str = "REL"  # ABS | REL
    learning: str = "two_alpha"  # one_alpha | two_alpha
    response: str = "two_beta"  # one_beta | two_beta

    def __post_init__(self):
        if self.encoding not in ("ABS", "REL"):
            raise ValueError(f"encoding must be ABS or REL, not {self.encoding!r}")
        if self.learning not in ("one_alpha", "two_alpha"):
            raise ValueError(f"bad learning component {self.learning!r}")
        if self.response not in ("one_beta", "two_beta"):
            raise ValueError(f"bad response component {self.response!r}")

    @property
    def name(self) -> str:
        two_a = self.learning == "two_alpha"
        two_b = self.response == "two_beta"
        suffix = {(False, False): "", (True, False): "-2a", (False, True): "-2b", (True, True): "-full"}
        return self.encoding + suffix[(two_a, two_b)]

    @classmethod
    def from_name(cls, name: str) -> "ModelVariant":
        norm = name.replace("α", "a").replace("β", "b").replace("_", "-").strip()
        enc, _, rest = norm.partition("-")
        enc = enc.upper()
        rest = rest.lower()
        table = {
            "": ("one_alpha", "one_beta"),
            "2a": ("two_alpha", "one_beta"),
            "2b": ("one_alpha", "two_beta"),
            "full": ("two_alpha", "two_beta"),
        }
        if enc not in ("ABS", "REL") or rest not in table:
            raise ValueError(f"unknown model variant {name!r}")
        return cls(enc, *table[rest])

    @property
    def free_parameters(self) -> tuple[str, ...]:
        names = []
        if self.encoding == "REL":
            names.append("omega")
        names += ["alpha_con", "alpha_dis"] if self.learning == "two_alpha" else ["alpha"]
        names += ["beta_train", "beta_transfer"] if self.response == "two_beta" else ["beta"]
        names.append("b")
        return tuple(names)

    @property
    def k(self) -> int:
        return len(self.free_parameters)


ALL_VARIANTS = tuple(
    ModelVariant(e, l, r)
    for e in ("ABS", "REL")
    for l in ("one_alpha", "two_alpha")
    for r in ("one_beta", "two_beta")
)


@dataclass(frozen=True)
class ModelParams:
    omega: float = 0.0
    alpha_con: float = 0.5
    alpha_dis: float = 0.5
    beta_train: float = 10.0
    beta_transfer: float = 10.0
    b: float = 0.0

    def __post_init__(self):
        for name in ("omega", "alpha_con", "alpha_dis"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("beta_train", "beta_transfer"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_free(cls, variant: ModelVariant, values: Sequence[float]) -> "ModelParams":
        """Expand a free-parameter vector of ``variant`` to the full 6-vector."""
        free = dict(zip(variant.free_parameters, (float(v) for v in values)))
        alpha_con = free.get("alpha_con", free.get("alpha"))
        alpha_dis = free.get("alpha_dis", free.get("alpha"))
        beta_train = free.get("beta_train", free.get("beta"))
        beta_transfer = free.get("beta_transfer", free.get("beta"))
        return cls(free.get("omega", 0.0), alpha_con, alpha_dis, beta_train, beta_transfer, free["b"])

    def free_values(self, variant: ModelVariant) -> np.ndarray:
        lookup = self.to_dict()
        lookup["alpha"] = self.alpha_con
        lookup["beta"] = self.beta_train
        return np.array([lookup[n] for n in variant.free_parameters])

    def restricted(self, variant: ModelVariant) -> "ModelParams":
        """Project onto ``variant``'s constraints (omega=0 for ABS, tied rates)."""
        return ModelParams.from_free(variant, self.free_values(variant))


# --------------------------------------------------------------------------
# single-step functions


@dataclass
class EncodingState:
    q: dict[str, float] = field(default_factory=dict)
    running_min: float = math.inf
    running_max: float = -math.inf

    def expectancy(self, option: str) -> float:
        return self.q.get(option, Q0)

    def observe_range(self, outcomes: Iterable[float]) -> None:
        outcomes = list(outcomes)
        self.running_min = min(self.running_min, *outcomes)
        self.running_max = max(self.running_max, *outcomes)


def _range_norm(x: float, lo: float, hi: float) -> float:
    if not (hi > lo):
        return 0.5
    return min(1.0, max(0.0, (x - lo) / (hi - lo)))


def subjective_value(x: float, trial_outcomes: Sequence[float], state: EncodingState, omega: float) -> float:
    """v = (1 - omega) * x_abs + omega * x_rel.

    ``state``'s running range must already include ``trial_outcomes`` when the
    default range-update-before-encoding convention is used.
    """
    x_abs = _range_norm(x, state.running_min, state.running_max)
    x_rel = _range_norm(x, min(trial_outcomes), max(trial_outcomes))
    return (1.0 - omega) * x_abs + omega * x_rel


def update_expectancies(
    state: EncodingState,
    chosen: str | None,
    values: dict[str, float],
    alpha_con: float,
    alpha_dis: float,
) -> EncodingState:
    """Delta-rule update of every option in ``values``; returns a new state.

    Confirmatory: chosen option better than expected, or an unchosen option
    worse than expected. A zero prediction error counts as disconfirmatory.
    ``chosen=None`` (invalid reply) treats every option as unchosen.
    """
    if not values:
        raise ValueError("no values to learn from")
    q = dict(state.q)
    for option, v in values.items():
        if v is None:
            raise ValueError(f"missing subjective value for offered option {option!r}")
        old = q.get(option, Q0)
        pe = v - old
        confirm = (option == chosen and pe > 0) or (option != chosen and pe < 0)
        q[option] = old + (alpha_con if confirm else alpha_dis) * pe
    return EncodingState(q, state.running_min, state.running_max)


def choice_probabilities(q_values: Sequence[float], beta: float, b: float) -> np.ndarray:
    """Softmax over expectancies in listed order; the first entry gets bonus ``b``."""
    logits = beta * np.asarray(q_values, dtype=float)
    logits[0] += b
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


# --------------------------------------------------------------------------
# replay data


@dataclass(frozen=True)
class ReplayData:
    """Trial logs packed into flat arrays for replay.

    Rows are trials of all runs back to back, each run's training phase before
    its transfer phase. ``offered`` holds option indices in listed order
    (-1 padded), ``choice`` the listed position chosen (-1 when invalid).
    """

    option_ids: tuple[str, ...]
    run_ids: tuple
    start: np.ndarray
    phase: np.ndarray
    n_offered: np.ndarray
    offered: np.ndarray
    outcomes: np.ndarray
    choice: np.ndarray
    digest: str

    @property
    def n_trials(self) -> int:
        return int(self.start.shape[0])

    @property
    def n_choices(self) -> int:
        return int((self.choice >= 0).sum())

    def subset_runs(self, runs: Iterable) -> "ReplayData":
        wanted = set(runs)
        run_of = np.cumsum(self.start) - 1
        keep_idx = [i for i, r in enumerate(self.run_ids) if r in wanted]
        mask = np.isin(run_of, keep_idx)
        return ReplayData(
            self.option_ids, tuple(r for r in self.run_ids if r in wanted),
            self.start[mask], self.phase[mask], self.n_offered[mask], self.offered[mask],
            self.outcomes[mask], self.choice[mask], self.digest + ":" + ",".join(map(str, sorted(wanted))),
        )


def records_digest(records: Sequence[dict]) -> str:
    h = hashlib.sha256()
    for r in records:
        key = {k: r.get(k) for k in ("run", "phase", "trial", "options", "choice", "outcomes")}
        h.update(json.dumps(key, sort_keys=True).encode())
    return h.hexdigest()


def build_replay(records: Sequence[dict], option_ids: Sequence[str] | None = None) -> ReplayData:
    """Pack trial records (runner log format) for likelihood evaluation."""
    if not records:
        raise ReplayDataError("no trial records")
    if option_ids is None:
        option_ids = sorted({o for r in records for o in r["options"]})
    index = {o: i for i, o in enumerate(option_ids)}
    by_run: dict = {}
    for r in records:
        by_run.setdefault(r["run"], []).append(r)
    phase_order = {"training": 0, "transfer": 1}
    rows = []
    starts = []
    run_ids = []
    for run in sorted(by_run):
        trials = sorted(by_run[run], key=lambda r: (phase_order[r["phase"]], r["trial"]))
        run_ids.append(run)
        for j, r in enumerate(trials):
            rows.append(r)
            starts.append(j == 0)
    n = len(rows)
    offered = np.full((n, 3), -1, dtype=np.int64)
    outcomes = np.zeros((n, 3))
    n_off = np.zeros(n, dtype=np.int64)
    phase = np.zeros(n, dtype=np.int64)
    choice = np.full(n, -1, dtype=np.int64)
    for t, r in enumerate(rows):
        opts = r["options"]
        if not 2 <= len(opts) <= 3:
            raise ReplayDataError(f"run {r['run']} trial {r['trial']}: {len(opts)} options offered")
        try:
            offered[t, : len(opts)] = [index[o] for o in opts]
        except KeyError as exc:
            raise ReplayDataError(f"option {exc.args[0]!r} not in model option set") from None
        n_off[t] = len(opts)
        phase[t] = phase_order[r["phase"]]
        if phase[t] == 0:
            outs = r.get("outcomes")
            if outs is None:
                raise ReplayDataError(f"run {r['run']} training trial {r['trial']} has no outcomes")
            outcomes[t, : len(opts)] = [outs[o] for o in opts]
        if r.get("valid", r.get("choice") is not None) and r.get("choice") is not None:
            choice[t] = opts.index(r["choice"])
    return ReplayData(
        tuple(option_ids), tuple(run_ids), np.array(starts, dtype=np.bool_), phase, n_off,
        offered, outcomes, choice, records_digest(records),
    )


# --------------------------------------------------------------------------
# likelihood


@njit(cache=True)
def _nll_kernel(omega, a_con, a_dis, beta_train, beta_transfer, bias,
                start, phase, n_off, offered, outcomes, choice, n_options, include_current):
    q = np.empty(n_options)
    logits = np.empty(3)
    rmin = np.inf
    rmax = -np.inf
    total = 0.0
    for t in range(start.shape[0]):
        if start[t]:
            q[:] = 0.5
            rmin = np.inf
            rmax = -np.inf
        k = n_off[t]
        c = choice[t]
        if c >= 0:
            beta = beta_train if phase[t] == 0 else beta_transfer
            m = -np.inf
            for i in range(k):
                logits[i] = beta * q[offered[t, i]]
                if i == 0:
                    logits[i] += bias
                if logits[i] > m:
                    m = logits[i]
            s = 0.0
            for i in range(k):
                s += math.exp(logits[i] - m)
            total -= logits[c] - m - math.log(s)
        if phase[t] != 0:
            continue
        tmin = np.inf
        tmax = -np.inf
        for i in range(k):
            x = outcomes[t, i]
            tmin = min(tmin, x)
            tmax = max(tmax, x)
        if include_current:
            rmin = min(rmin, tmin)
            rmax = max(rmax, tmax)
        for i in range(k):
            x = outcomes[t, i]
            if rmax > rmin:
                x_abs = min(1.0, max(0.0, (x - rmin) / (rmax - rmin)))
            else:
                x_abs = 0.5
            if tmax > tmin:
                x_rel = (x - tmin) / (tmax - tmin)
            else:
                x_rel = 0.5
            v = (1.0 - omega) * x_abs + omega * x_rel
            o = offered[t, i]
            pe = v - q[o]
            if (i == c and pe > 0) or (i != c and pe < 0):
                q[o] += a_con * pe
            else:
                q[o] += a_dis * pe
        if not include_current:
            rmin = min(rmin, tmin)
            rmax = max(rmax, tmax)
    return total


def negative_log_likelihood(
    params: ModelParams,
    variant: ModelVariant | None,
    data: ReplayData,
    include_current: bool = True,
) -> float:
    """Summed -ln p(choice) over valid choices of all runs in ``data``.

    Invalid trials contribute no likelihood term but their feedback is still
    learned from. Transfer trials contribute likelihood but no learning.
    """
    if data.n_choices == 0:
        raise ReplayDataError("no valid choices to evaluate")
    if variant is not None:
        params = params.restricted(variant)
    return float(_nll_kernel(
        params.omega, params.alpha_con, params.alpha_dis, params.beta_train,
        params.beta_transfer, params.b, data.start, data.phase, data.n_offered,
        data.offered, data.outcomes, data.choice, len(data.option_ids), include_current,
    ))


def replay_reference(params: ModelParams, data: ReplayData, include_current: bool = True) -> np.ndarray:
    """Per-trial probability of the observed choice (nan for invalid trials).

    Plain-Python replay assembled from :func:`subjective_value`,
    :func:`update_expectancies` and :func:`choice_probabilities`.
    """
    ids = data.option_ids
    probs = np.full(data.n_trials, np.nan)
    state = EncodingState()
    for t in range(data.n_trials):
        if data.start[t]:
            state = EncodingState()
        k = int(data.n_offered[t])
        opts = [ids[j] for j in data.offered[t, :k]]
        c = int(data.choice[t])
        if c >= 0:
            beta = params.beta_train if data.phase[t] == 0 else params.beta_transfer
            p = choice_probabilities([state.expectancy(o) for o in opts], beta, params.b)
            probs[t] = p[c]
        if data.phase[t] != 0:
            continue
        outs = [float(x) for x in data.outcomes[t, :k]]
        if include_current:
            state.observe_range(outs)
        values = {o: subjective_value(x, outs, state, params.omega) for o, x in zip(opts, outs)}
        state = update_expectancies(state, opts[c] if c >= 0 else None, values,
                                    params.alpha_con, params.alpha_dis)
        if not include_current:
            state.observe_range(outs)
    return probs


class RLLearner:
    """Stateful learner used by the simulated agent (one run at a time)."""

    def __init__(self, params: ModelParams, include_current: bool = True):
        self.params = params
        self.include_current = include_current
        self.state = EncodingState()

    def reset(self) -> None:
        self.state = EncodingState()

    def probabilities(self, listed: Sequence[str], phase: str) -> np.ndarray:
        beta = self.params.beta_train if phase == "training" else self.params.beta_transfer
        return choice_probabilities([self.state.expectancy(o) for o in listed], beta, self.params.b)

    def learn(self, outcomes: dict[str, float], chosen: str | None) -> None:
        outs = list(outcomes.values())
        if self.include_current:
            self.state.observe_range(outs)
        values = {o: subjective_value(x, outs, self.state, self.params.omega) for o, x in outcomes.items()}
        self.state = update_expectancies(self.state, chosen, values,
                                         self.params.alpha_con, self.params.alpha_dis)
        if not self.include_current:
            self.state.observe_range(outs)
