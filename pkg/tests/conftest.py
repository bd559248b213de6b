from __future__ import annotations

import copy
import shutil
from pathlib import Path

import pytest
import yaml

from repotrans.cli import demo_paths
from repotrans.config import load_config

TESTS = Path(__file__).parent
FIXTURES = TESTS / "fixtures"
GOLDEN = TESTS / "golden"


@pytest.fixture(scope="session")
def config():
    return load_config()


@pytest.fixture
def fixture_copy(tmp_path):
    """Copy a fixture directory into tmp so builds and edits never touch the tree."""

    def make(name: str, dest: str | None = None) -> Path:
        target = tmp_path / (dest or name)
        shutil.copytree(FIXTURES / name, target)
        return target

    return make


def demo_turns() -> list[dict]:
    _, script, _ = demo_paths()
    return yaml.safe_load(script.read_text())["turns"]


def split_demo() -> dict[str, list[dict]]:
    """The demo script cut into analyzer, planner, A1 and B1 turn groups."""
    turns = demo_turns()
    groups = {"analyzer": turns[0:3], "planner": turns[3:5],
              "A1": turns[5:7], "B1": turns[7:9]}
    assert sum(len(v) for v in groups.values()) == len(turns)
    return copy.deepcopy(groups)


def write_turn(agent: str, path: str, content: str, text: str = "Editing.") -> dict:
    return {"agent": agent, "text": text,
            "tool_calls": [{"tool": "write_file", "args": {"path": path, "content": content}}]}


def done(agent: str, text: str = "Done.") -> dict:
    return {"agent": agent, "text": text}


def stats_source(mean_body: str = "return sum(values) / len(values)") -> str:
    """The demo's translated stats.py with a replaceable ``mean`` body."""
    return (
        '"""Small text statistics helpers."""\n\nimport re\n\n'
        'SEPARATOR = re.compile(r"\\s+")\n\n\n'
        "def words(text):\n    return [w for w in SEPARATOR.split(text) if len(w) > 0]\n\n\n"
        "def wordCount(text):\n    return len(words(text))\n\n\n"
        "def mean(values):\n    if len(values) == 0:\n"
        '        raise ValueError("mean of empty list")\n'
        f"    {mean_body}\n\n\n"
        "def longestWord(text):\n    best = \"\"\n    for w in words(text):\n"
        "        if len(w) > len(best):\n            best = w\n    return best\n"
    )


def scenario(kind: str, max_iterations: int = 5) -> list[dict]:
    """Scripted turns for the orchestrator scenarios.

    ``success1`` is the demo unchanged. ``success3`` ships a wrong ``mean``
    that one repair fails to fix and the next repair fixes. ``exhausted``
    never fixes it, with every repair still producing a nonempty diff.
    """
    g = split_demo()
    turns = g["analyzer"] + g["planner"]
    if kind == "success1":
        return turns + g["A1"] + g["B1"]
    bad = [f"return sum(values) / len(values) + {k}" for k in range(1, max_iterations + 1)]
    turns += [write_turn("translator", "target/stats.py", stats_source(bad[0])),
              done("translator")]
    turns += g["B1"]
    if kind == "success3":
        turns += [write_turn("translator", "target/stats.py", stats_source(bad[1])),
                  done("translator"),
                  write_turn("translator", "target/stats.py", stats_source()),
                  done("translator")]
        return turns
    if kind == "exhausted":
        for k in range(1, max_iterations):
            turns += [write_turn("translator", "target/stats.py", stats_source(bad[k])),
                      done("translator")]
        return turns
    raise ValueError(kind)


def has_pyright() -> bool:
    return shutil.which("pyright-langserver") is not None


# -- acceptance criterion reporting ----------------------------------------------------------

_CRITERIA: dict[int, tuple[str, list[str]]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    _, outcomes = _CRITERIA.setdefault(number, (title, []))
    if call.excinfo is None:
        if call.when == "call":
            outcomes.append("passed")
    elif call.excinfo.errisinstance(pytest.skip.Exception):
        outcomes.append("skipped")
    else:
        outcomes.append("failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif outcomes and all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS" if outcomes else "NOT RUN"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {title}")
