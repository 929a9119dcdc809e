"""Prompt rendering and reply parsing.

A prompt is three blocks separated by blank lines: the task instructions,
the outcome history (omitted while empty) and the choice query. Standard and
comparisons prompts differ only in the relational sentence appended to each
history round.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field

import numpy as np

from .taskdef import TaskSpec

LETTERS = tuple(string.ascii_uppercase[:10])  # A-J
STYLES = ("standard", "comparisons")
MODES = ("chat", "completion")

RESPONSE_FORMAT = (
    "Which slot machine do you choose? Give your answer like this: "
    "I would choose slot machine _. Do not explain why."
)
COMPLETION_TAIL = "Q: Which slot machine do you choose?\nA: I would choose slot machine"
GOAL_REMINDER = "Remember that your goal is to maximize your total payoff."
HISTORY_HEADER = "Outcomes from previous rounds:"

INSTRUCTIONS = {
    "B2018": (
        "The aim of this task is to maximize your payoffs.\n"
        "There are several slot machines that deliver wins and losses with different probabilities.\n"
        "On each round, you will be asked which of two slot machines you wish to play.\n"
        "Seeking monetary rewards and avoiding monetary losses are equally important.\n"
        "Your total payoff will be the cumulative sum of the money you win across all rounds of the game."
    ),
    "V2023": (
        "You are playing a game that involves choosing between different slot machines.\n"
        "Each slot machine gives 1 point with a particular probability, otherwise 0 points.\n"
        "Some slot machines have a higher probability of reward than others.\n"
        "The goal is to maximize your total payoff over the course of several rounds.\n"
        "Your total payoff will be the cumulative sum of the points you win across all rounds of the game."
    ),
    "HW2023a": (
        "You are playing a game with the goal of winning as much money as possible over the course of several rounds.\n"
        "In each round, you will be asked which of two slot machines you wish to play.\n"
        "Some slot machines win more money than others on average.\n"
        "Your total payoff will be the cumulative sum of the money you win across all rounds of the game.\n"
        "Remember that your goal is to maximize your total payoff."
    ),
    "BP2023": (
        "In this task, you will be given information about several slot machines in order to decide which ones you want to play.\n"
        "Some slot machines win more money than others on average.\n"
        "On each trial, you will be asked to choose between two or three different slot machines.\n"
        "Your goal is to make choices that maximize your total payoffs. In other words, you should try to win as much money as possible.\n"
        "Your total payoff will be the cumulative sum of the money you win across all rounds of the game."
    ),
    "HW2023b": (
        "In this task, you will be given information about several slot machines in order to decide which ones you want to play.\n"
        "Some slot machines win more money than others on average.\n"
        "Your goal is to make choices that maximize your total payoffs. In other words, you should try to win as much money as possible.\n"
        "Your total payoff will be the cumulative sum of the money you win across all rounds of the game."
    ),
}

_SYMBOLS = {"dollars": "$", "euros": "€"}


@dataclass(frozen=True)
class PromptStyle:
    variant: str = "standard"
    mode: str = "chat"

    def __post_init__(self):
        if self.variant not in STYLES:
            raise ValueError(f"unknown prompt variant {self.variant!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown prompt mode {self.mode!r}")


@dataclass
class OutcomeHistory:
    """Rounds of (letter, reward) pairs plus the run's option-to-letter map."""

    letters: dict[str, str]
    currency: str
    rounds: list[tuple[int, tuple[tuple[str, float], ...]]] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.letters.values())) != len(self.letters):
            raise ValueError("letter assignment must be one-to-one")

    def append(self, context_id: int, outcomes: dict[str, float]) -> None:
        pairs = tuple(sorted((self.letters[oid], float(x)) for oid, x in outcomes.items()))
        self.rounds.append((context_id, pairs))


@dataclass(frozen=True)
class ChoiceQuery:
    text: str
    listed: tuple[str, ...]

    @property
    def first(self) -> str:
        return self.listed[0]


@dataclass(frozen=True)
class ParsedChoice:
    raw: str
    letter: str | None

    @property
    def valid(self) -> bool:
        return self.letter is not None


def assign_letters(option_ids, rng: np.random.Generator) -> dict[str, str]:
    """Random one-to-one map from option ids onto the first n letters A-J."""
    option_ids = list(option_ids)
    if len(option_ids) > len(LETTERS):
        raise ValueError("at most 10 options can be lettered")
    perm = rng.permutation(len(option_ids))
    return {oid: LETTERS[i] for oid, i in zip(option_ids, perm)}


def format_reward(x: float, currency: str) -> str:
    if currency == "points":
        n = int(round(x))
        return f"{n} point" if abs(n) == 1 else f"{n} points"
    sign = "-" if x < 0 else ""
    return f"{sign}{_SYMBOLS[currency]}{abs(x):.2f}"


def render_instructions(task: TaskSpec | str) -> str:
    name = task if isinstance(task, str) else task.name
    try:
        return INSTRUCTIONS[name]
    except KeyError:
        raise KeyError(f"no instructions for task {name!r}") from None


def _comparison_sentence(pairs: tuple[tuple[str, float], ...]) -> str:
    # pairs are sorted by letter; a stable sort keeps letter order inside ties
    ranked = sorted(pairs, key=lambda p: -p[1])
    if len(ranked) == 2 and ranked[0][1] == ranked[1][1]:
        return f"Slot machines {ranked[0][0]} and {ranked[1][0]} delivered the same payoff."
    clauses = []
    for (la, xa), (lb, xb) in zip(ranked, ranked[1:]):
        relation = "the same payoff as" if xa == xb else "a higher payoff than"
        clauses.append(f"slot machine {la} delivered {relation} slot machine {lb}")
    text = ", and ".join(clauses)
    return text[0].upper() + text[1:] + "."


def render_round(index: int, pairs: tuple[tuple[str, float], ...], currency: str, variant: str) -> str:
    parts = [f"Slot machine {letter} delivered {format_reward(x, currency)}." for letter, x in pairs]
    if variant == "comparisons":
        parts.append(_comparison_sentence(pairs))
    return f"Round {index}: " + " ".join(parts)


def render_history(history: OutcomeHistory, style: PromptStyle) -> str:
    if not history.rounds:
        return ""
    lines = [HISTORY_HEADER]
    for i, (_, pairs) in enumerate(history.rounds, start=1):
        lines.append(render_round(i, pairs, history.currency, style.variant))
    return "\n".join(lines)


def _list_machines(letters) -> str:
    names = [f"slot machine {x}" for x in letters]
    if len(names) == 2:
        return f"{names[0]} and {names[1]}"
    return ", ".join(names[:-1]) + f", and {names[-1]}"


def render_choice_query(letters, order_seed: int | None = None, mode: str = "chat") -> ChoiceQuery:
    """Choice question with the options listed in a seeded random order.

    ``order_seed=None`` keeps the given order.
    """
    letters = tuple(letters)
    if len(letters) not in (2, 3):
        raise ValueError(f"a choice needs 2 or 3 options, got {len(letters)}")
    if len(set(letters)) != len(letters):
        raise ValueError(f"duplicate letters in {letters}")
    if order_seed is not None:
        perm = np.random.default_rng(order_seed).permutation(len(letters))
        letters = tuple(letters[i] for i in perm)
    tail = RESPONSE_FORMAT if mode == "chat" else COMPLETION_TAIL
    text = f"You now face a choice between {_list_machines(letters)}.\n{GOAL_REMINDER}\n{tail}"
    return ChoiceQuery(text, letters)


def render_prompt(task: TaskSpec | str, history_text: str, query: ChoiceQuery) -> str:
    blocks = [render_instructions(task)]
    if history_text:
        blocks.append(history_text)
    blocks.append(query.text)
    return "\n\n".join(blocks)


_CHOICE_RE = re.compile(
    r"i\s+would\s+choose\s+slot\s*machine\s*[:#\-]?\s*[\"'*\[(]*\s*([a-j])(?![a-z])",
    re.IGNORECASE,
)


def parse_choice(raw: str, offered, mode: str = "chat") -> ParsedChoice:
    """Strict-format parse of a reply; anything else is invalid, never repaired."""
    text = raw if mode == "chat" else "I would choose slot machine" + raw
    m = _CHOICE_RE.search(text or "")
    if m is None:
        return ParsedChoice(raw, None)
    letter = m.group(1).upper()
    if letter not in set(offered):
        return ParsedChoice(raw, None)
    return ParsedChoice(raw, letter)


def forced_reply(letter: str) -> str:
    return f"I would choose slot machine {letter}."
