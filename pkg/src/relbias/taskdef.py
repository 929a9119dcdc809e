"""Bandit task definitions, reward schedules and relative-value labels."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml
from scipy.stats import norm

SCHEMA_VERSION = 1
TASK_NAMES = ("B2018", "V2023", "HW2023a", "BP2023", "HW2023b")
ROLES = ("L", "M", "H")
CURRENCIES = ("euros", "dollars", "points")
TIE_TOL = 1e-9


class TaskSchemaError(ValueError):
    """Raised when a task catalog document does not match the schema."""


class RoundingPolicyError(ValueError):
    """Raised when p * reps is not integral and no rounding policy was given."""


@dataclass(frozen=True)
class RewardDist:
    kind: str
    high: float = 0.0
    p: float = 0.0
    low: float = 0.0
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.kind == "bernoulli":
            if not 0.0 <= self.p <= 1.0:
                raise TaskSchemaError(f"bernoulli p={self.p} outside [0, 1]")
            if self.high == self.low:
                raise TaskSchemaError("bernoulli needs two distinct support points")
        elif self.kind == "gaussian":
            if not self.sd > 0:
                raise TaskSchemaError(f"gaussian sd={self.sd} must be > 0")
        else:
            raise TaskSchemaError(f"unknown distribution kind {self.kind!r}")

    @property
    def expected_value(self) -> float:
        if self.kind == "bernoulli":
            return self.p * self.high + (1.0 - self.p) * self.low
        return self.mean

    def support(self) -> list[tuple[float, float]]:
        """(value, probability) pairs; bernoulli only."""
        return [(self.high, self.p), (self.low, 1.0 - self.p)]


@dataclass(frozen=True)
class TrainingContext:
    id: int
    members: tuple[tuple[str, str], ...]  # (option id, role), listed L..H

    @property
    def options(self) -> tuple[str, ...]:
        return tuple(opt for opt, _ in self.members)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    currency: str
    options: tuple[tuple[str, RewardDist], ...]
    contexts: tuple[TrainingContext, ...]
    training_reps: int
    transfer_reps: int

    @property
    def option_ids(self) -> tuple[str, ...]:
        return tuple(oid for oid, _ in self.options)

    def dist(self, option: str) -> RewardDist:
        for oid, d in self.options:
            if oid == option:
                return d
        raise KeyError(f"{self.name} has no option {option!r}")

    def expected_values(self) -> dict[str, float]:
        return {oid: d.expected_value for oid, d in self.options}

    def context(self, context_id: int) -> TrainingContext:
        for ctx in self.contexts:
            if ctx.id == context_id:
                return ctx
        raise KeyError(f"{self.name} has no context {context_id!r}")

    def context_of(self, option: str) -> TrainingContext:
        for ctx in self.contexts:
            if option in ctx.options:
                return ctx
        raise KeyError(f"{self.name} has no option {option!r}")

    @property
    def n_training_trials(self) -> int:
        return self.training_reps * len(self.contexts)

    @property
    def n_transfer_trials(self) -> int:
        n = len(self.options)
        return self.transfer_reps * n * (n - 1) // 2

    @property
    def is_gaussian(self) -> bool:
        return all(d.kind == "gaussian" for _, d in self.options)


@dataclass(frozen=True)
class RewardSchedule:
    outcomes: dict[str, tuple[float, ...]]
    seed: int


# --------------------------------------------------------------------------
# catalog loading


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise TaskSchemaError(f"{where}: missing field {key!r}")
    return doc[key]


def _parse_dist(raw: dict, where: str) -> RewardDist:
    kind = _require(raw, "kind", where)
    try:
        if kind == "bernoulli":
            return RewardDist(
                kind, high=float(_require(raw, "high", where)),
                p=float(_require(raw, "p", where)), low=float(_require(raw, "low", where)),
            )
        if kind == "gaussian":
            return RewardDist(
                kind, mean=float(_require(raw, "mean", where)), sd=float(_require(raw, "sd", where))
            )
    except TaskSchemaError as exc:
        raise TaskSchemaError(f"{where}: {exc}") from None
    raise TaskSchemaError(f"{where}.kind: unknown distribution kind {kind!r}")


def parse_task(doc: dict) -> TaskSpec:
    """Build and validate one TaskSpec from a parsed catalog document."""
    if not isinstance(doc, dict):
        raise TaskSchemaError("task document must be a mapping")
    name = _require(doc, "name", "task")
    where = f"task {name}"
    version = _require(doc, "schema_version", where)
    if version != SCHEMA_VERSION:
        raise TaskSchemaError(
            f"{where}.schema_version: got {version}, expected {SCHEMA_VERSION}"
        )
    currency = _require(doc, "currency", where)
    if currency not in CURRENCIES:
        raise TaskSchemaError(f"{where}.currency: {currency!r} not in {CURRENCIES}")

    options = []
    seen = set()
    for i, raw in enumerate(_require(doc, "options", where)):
        oid = str(_require(raw, "id", f"{where}.options[{i}]"))
        if oid in seen:
            raise TaskSchemaError(f"{where}.options[{i}].id: duplicate option {oid!r}")
        seen.add(oid)
        options.append((oid, _parse_dist(_require(raw, "dist", f"{where}.options[{i}]"),
                                         f"{where}.options[{i}].dist")))
    if len(options) not in (4, 8, 10):
        raise TaskSchemaError(f"{where}.options: {len(options)} options, expected 4, 8 or 10")
    dists = dict(options)

    contexts = []
    owner: dict[str, int] = {}
    for i, raw in enumerate(_require(doc, "contexts", where)):
        cwhere = f"{where}.contexts[{i}]"
        cid = int(_require(raw, "id", cwhere))
        members = tuple((str(m[0]), str(m[1])) for m in _require(raw, "members", cwhere))
        if len(members) not in (2, 3):
            raise TaskSchemaError(f"{cwhere}.members: context size {len(members)} not 2 or 3")
        roles = [r for _, r in members]
        if len(set(roles)) != len(roles) or any(r not in ROLES for r in roles):
            raise TaskSchemaError(f"{cwhere}.members: roles {roles} must be distinct L/M/H")
        for oid, _ in members:
            if oid not in dists:
                raise TaskSchemaError(f"{cwhere}.members: unknown option {oid!r}")
            if oid in owner:
                raise TaskSchemaError(
                    f"{cwhere}.members: option {oid!r} already belongs to context {owner[oid]}"
                )
            owner[oid] = cid
        ordered = sorted(members, key=lambda m: ROLES.index(m[1]))
        evs = [dists[oid].expected_value for oid, _ in ordered]
        if any(a >= b for a, b in zip(evs, evs[1:])):
            raise TaskSchemaError(
                f"{cwhere}: role order violated, expected values {evs} must increase L < M < H"
            )
        contexts.append(TrainingContext(cid, tuple(ordered)))
    missing = set(dists) - set(owner)
    if missing:
        raise TaskSchemaError(f"{where}.contexts: options {sorted(missing)} belong to no context")

    training_reps = int(_require(doc, "training_reps", where))
    transfer_reps = int(_require(doc, "transfer_reps", where))
    if training_reps < 1:
        raise TaskSchemaError(f"{where}.training_reps must be >= 1")
    if transfer_reps not in (1, 2):
        raise TaskSchemaError(f"{where}.transfer_reps must be 1 or 2")
    return TaskSpec(name, currency, tuple(options), tuple(contexts), training_reps, transfer_reps)


def default_catalog_path() -> Path:
    return Path(str(resources.files("relbias") / "data" / "tasks.yaml"))


def load_task_catalog(path: str | Path | None = None) -> list[TaskSpec]:
    path = Path(path) if path is not None else default_catalog_path()
    if not path.exists():
        raise FileNotFoundError(f"task catalog not found: {path}")
    with open(path, encoding="utf-8") as fh:
        docs = [d for d in yaml.safe_load_all(fh) if d is not None]
    tasks = [parse_task(d) for d in docs]
    names = [t.name for t in tasks]
    if len(set(names)) != len(names):
        raise TaskSchemaError(f"duplicate task names in {path}: {names}")
    return tasks


def get_task(name: str, path: str | Path | None = None) -> TaskSpec:
    for task in load_task_catalog(path):
        if task.name == name:
            return task
    raise KeyError(f"unknown task {name!r}")


# --------------------------------------------------------------------------
# schedules and sequences


def _exact_count(p: float, reps: int, rounding: str | None) -> int:
    target = p * reps
    nearest = round(target)
    if abs(target - nearest) < 1e-9:
        return int(nearest)
    if rounding == "round":
        return int(nearest)
    if rounding == "floor":
        return math.floor(target)
    if rounding == "ceil":
        return math.ceil(target)
    raise RoundingPolicyError(
        f"p={p} x reps={reps} = {target} is not an integer; pass rounding='round'|'floor'|'ceil'"
    )


def build_reward_schedule(task: TaskSpec, seed: int, rounding: str | None = None) -> RewardSchedule:
    """Per-option reward sequences of length ``training_reps``.

    Bernoulli options get exactly ``p * reps`` high outcomes in shuffled order;
    gaussian options get plain i.i.d. draws.
    """
    rng = np.random.default_rng(seed)
    reps = task.training_reps
    outcomes = {}
    for oid, d in task.options:
        if d.kind == "bernoulli":
            n_high = _exact_count(d.p, reps, rounding)
            draws = np.array([d.high] * n_high + [d.low] * (reps - n_high))
            rng.shuffle(draws)
        else:
            draws = rng.normal(d.mean, d.sd, size=reps)
        outcomes[oid] = tuple(float(x) for x in draws)
    return RewardSchedule(outcomes, seed)


def training_sequence(task: TaskSpec, seed: int) -> list[int]:
    seq = np.repeat([c.id for c in task.contexts], task.training_reps)
    np.random.default_rng(seed).shuffle(seq)
    return [int(c) for c in seq]


def enumerate_transfer_pairs(task: TaskSpec) -> list[tuple[str, str]]:
    """All unordered option pairs, each repeated ``transfer_reps`` times (unshuffled)."""
    pairs = list(itertools.combinations(task.option_ids, 2))
    return [pair for pair in pairs for _ in range(task.transfer_reps)]


def shuffled_transfer_pairs(task: TaskSpec, seed: int) -> list[tuple[str, str]]:
    pairs = enumerate_transfer_pairs(task)
    order = np.random.default_rng(seed).permutation(len(pairs))
    return [pairs[i] for i in order]


# --------------------------------------------------------------------------
# relative value


def prob_exceeds(x: RewardDist, y: RewardDist) -> float:
    """P(X > Y) for independent draws, strict inequality."""
    if x.kind == "gaussian" and y.kind == "gaussian":
        return float(norm.cdf((x.mean - y.mean) / math.hypot(x.sd, y.sd)))
    if x.kind == "bernoulli" and y.kind == "bernoulli":
        return sum(px * py for vx, px in x.support() for vy, py in y.support() if vx > vy)
    if x.kind == "bernoulli":
        return sum(px * float(norm.cdf((vx - y.mean) / y.sd)) for vx, px in x.support())
    return sum(py * float(norm.sf((vy - x.mean) / x.sd)) for vy, py in y.support())


def relative_value_labels(task: TaskSpec) -> dict[str, float]:
    """Mean probability that an option's outcome beats each same-context partner."""
    scores = {}
    for ctx in task.contexts:
        for oid in ctx.options:
            partners = [o for o in ctx.options if o != oid]
            scores[oid] = float(np.mean([prob_exceeds(task.dist(oid), task.dist(o)) for o in partners]))
    return scores


def relative_value_ranks(task: TaskSpec, tol: float = TIE_TOL) -> dict[str, float]:
    """Within-context rank of each option's relative-value score, scaled to [0, 1].

    The worst option of a context gets 0, the best 1, the middle option of a
    ternary context 0.5. Options whose scores agree within ``tol`` share the
    mean of their ranks. Two options (from any contexts) are tied in relative
    value iff their ranks are equal.
    """
    labels = relative_value_labels(task)
    ranks = {}
    for ctx in task.contexts:
        opts = ctx.options
        n = len(opts)
        for oid in opts:
            below = sum(1 for o in opts if labels[o] < labels[oid] - tol)
            tied = sum(1 for o in opts if abs(labels[o] - labels[oid]) <= tol)
            ranks[oid] = (below + (tied - 1) / 2) / (n - 1)
    return ranks


def relative_order(task: TaskSpec, a: str, b: str, ranks: dict[str, float] | None = None) -> int:
    """+1 if ``a`` has higher relative value than ``b``, -1 if lower, 0 if tied."""
    ranks = ranks if ranks is not None else relative_value_ranks(task)
    diff = ranks[a] - ranks[b]
    if abs(diff) <= TIE_TOL:
        return 0
    return 1 if diff > 0 else -1


def equal_ev_pairs(task: TaskSpec, pairs: Iterable[tuple[str, str]] | None = None) -> list[tuple[str, str]]:
    evs = task.expected_values()
    pairs = pairs if pairs is not None else itertools.combinations(task.option_ids, 2)
    return [(a, b) for a, b in pairs if abs(evs[a] - evs[b]) <= TIE_TOL]
