"""Fixed prompt scenarios whose renderings are stored under fixtures/golden."""

from pathlib import Path

from relbias.promptgen import OutcomeHistory, PromptStyle, render_choice_query, render_history, render_prompt

GOLDEN = Path(__file__).parent / "fixtures" / "golden"

# (task, letters, currency, rounds, offered) -- each renders to <task>_<variant>.txt
SCENARIOS = [
    ("HW2023a", {"1H": "A", "1L": "B", "3L": "C", "3H": "D"}, "dollars",
     [(1, {"1H": 18.02, "1L": 27.15}), (3, {"3L": 26.5, "3H": 31.25}), (1, {"1H": 17.0, "1L": 17.0})],
     ("C", "A")),
    ("BP2023", {"3L": "E", "3M": "F", "3H": "G", "1L": "H", "1H": "J"}, "dollars",
     [(3, {"3L": 14.2, "3M": 33.9, "3H": 48.0}), (1, {"1L": 15.0, "1H": 52.5}),
      (3, {"3L": 30.0, "3M": 30.0, "3H": 12.5})],
     ("G", "E", "F")),
    ("B2018", {"3H": "A", "3L": "B"}, "euros", [(3, {"3H": 0.0, "3L": -1.0})], ("B", "A")),
    ("V2023", {"1H": "C", "1L": "D"}, "points", [(1, {"1H": 1, "1L": 0})], ("D", "C")),
]


def history(letters, currency, rounds):
    h = OutcomeHistory(letters, currency)
    for cid, outcomes in rounds:
        h.append(cid, outcomes)
    return h


def render_scenario(scenario, variant: str) -> str:
    task, letters, currency, rounds, offered = scenario
    h = history(letters, currency, rounds)
    return render_prompt(task, render_history(h, PromptStyle(variant)), render_choice_query(offered))
