import copy

import pytest
import yaml

from relbias.taskdef import default_catalog_path, get_task


@pytest.fixture(scope="session")
def catalog_docs():
    with open(default_catalog_path(), encoding="utf-8") as fh:
        return [d for d in yaml.safe_load_all(fh) if d]


@pytest.fixture
def task_doc(catalog_docs):
    """A mutable copy of the HW2023a catalog document."""
    return copy.deepcopy(next(d for d in catalog_docs if d["name"] == "HW2023a"))


@pytest.fixture(scope="session")
def hw2023a():
    return get_task("HW2023a")


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record the one-line verdict of an acceptance criterion, then assert it."""

    def report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
