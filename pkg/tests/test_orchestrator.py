from __future__ import annotations

import json
import time

import pytest

from conftest import done, scenario, split_demo, write_turn
from repotrans.cli import demo_paths
from repotrans.llm.gateway import AgentTurn, PhaseMarker, ScriptedBackend, read_log
from repotrans.model import RunBudget, discover_project
from repotrans.pipeline.orchestrator import check_phase_sequence, orchestrate


@pytest.fixture(scope="module")
def demo_source(config):
    src, _, _ = demo_paths()
    return discover_project(src, config.profile("javascript"), config.conventions_for("javascript"))


def run(tmp_path, config, source, turns, max_iterations=5, agent_timeout=5000.0):
    return orchestrate(source, "python", RunBudget(agent_timeout, max_iterations), config=config,
                       backend=ScriptedBackend(turns), out_dir=tmp_path / "run", run_id="t")


def markers(result):
    _, events = read_log(result.run_dir / "trajectory.log")
    return events, [(m.phase, m.iteration) for m in events if isinstance(m, PhaseMarker)]


def test_success_at_first_iteration(tmp_path, config, demo_source):
    result = run(tmp_path, config, demo_source, scenario("success1"))
    assert (result.status, result.iterations) == ("success", 1)
    events, phases = markers(result)
    assert phases == [("analyzer", None), ("planner", None), ("translator", 1),
                      ("validator", 1), ("end", 1)]
    assert check_phase_sequence(events, 5) == []
    assert result.report.all_success and result.report.counts["failed"] == 0
    assert json.loads((result.run_dir / "report.json").read_text())["all_success"] is True


def test_success_at_third_iteration(tmp_path, config, demo_source):
    result = run(tmp_path, config, demo_source, scenario("success3"))
    assert (result.status, result.iterations) == ("success", 3)
    events, phases = markers(result)
    assert [p for p, _ in phases].count("translator") == 3
    assert check_phase_sequence(events, 5) == []
    assert [d.mode for d in result.deltas] == ["fresh", "repair", "repair"]
    # Repairs touch only the implicated file and stay inside their scope.
    for delta in result.deltas[1:]:
        assert delta.changed == ["stats.py"]
        assert "stats.py" in delta.scope and set(delta.changed) <= set(delta.scope)
        assert delta.reverted == []


def test_exhausted_after_max_iterations(tmp_path, config, demo_source):
    result = run(tmp_path, config, demo_source, scenario("exhausted", 5), max_iterations=5)
    assert (result.status, result.iterations) == ("exhausted", 5)
    events, phases = markers(result)
    assert phases[-1] == ("end", 5)
    assert check_phase_sequence(events, 5) == []
    assert not result.report.all_success and result.report.counts["failed"] > 0
    assert result.report.failing_outcomes()


def test_repair_writes_outside_scope_are_undone(tmp_path, config, demo_source):
    turns = scenario("exhausted", 2)[:-2]
    fixed = scenario("success1")[-4:-2]  # A1: the correct stats.py
    stray = write_turn("translator", "target/extra.py", "X = 1\n")
    turns += [stray] + fixed[:1] + [done("translator")]
    result = run(tmp_path, config, demo_source, turns, max_iterations=2)
    assert result.status == "success"
    assert not (result.run_dir / "target/extra.py").exists()
    assert "extra.py" not in result.deltas[-1].changed


def test_timeout_aborts_within_budget(tmp_path, config, demo_source):
    turns = split_demo()["analyzer"]
    turns[1] = dict(turns[1], sleep=60)
    start = time.monotonic()
    result = run(tmp_path, config, demo_source, turns, agent_timeout=2.0)
    elapsed = time.monotonic() - start
    assert result.status == "timeout"
    assert elapsed < 2.0 + 5
    events, phases = markers(result)
    assert phases[-1] == ("end", None)
    assert events[-1].status == "timeout"
    assert check_phase_sequence(events, 5) == []


def test_script_running_dry_is_an_error_with_a_closed_log(tmp_path, config, demo_source):
    result = run(tmp_path, config, demo_source, split_demo()["analyzer"])
    assert result.status == "error" and "ScriptExhausted" in result.detail
    events, phases = markers(result)
    assert phases == [("analyzer", None), ("planner", None), ("end", None)]
    assert check_phase_sequence(events, 5) == []
    ledger = json.loads((result.run_dir / "ledger.json").read_text())
    turns = [e for e in events if isinstance(e, AgentTurn)]
    assert ledger["input_tokens"] == sum(t.usage["input_tokens"] for t in turns)


def test_invalid_analyzer_documents_fail_the_run(tmp_path, config, demo_source):
    turns = [done("analyzer", "Nothing to write."), done("analyzer", "Still nothing.")]
    result = run(tmp_path, config, demo_source, turns)
    assert result.status == "failed" and "research.md is missing" in result.detail
    assert check_phase_sequence(markers(result)[0], 5) == []


def test_nonempty_out_dir_is_rejected(tmp_path, config, demo_source):
    (tmp_path / "run").mkdir()
    (tmp_path / "run" / "keep.txt").write_text("x")
    with pytest.raises(Exception, match="not empty"):
        run(tmp_path, config, demo_source, [])


# -- the phase checker itself ------------------------------------------------------------------


def _log(*spec):
    return [PhaseMarker(i, p, it, st) for i, (p, it, st) in enumerate(spec, 1)]


def test_phase_checker_rejects_bad_sequences():
    good = _log(("analyzer", None, None), ("planner", None, None), ("translator", 1, None),
                ("validator", 1, None), ("end", 1, "success"))
    assert check_phase_sequence(good, 3) == []
    assert check_phase_sequence(good[:-1], 3)                      # no end marker
    swapped = [good[0], good[2], good[1], *good[3:]]
    assert check_phase_sequence(swapped, 3)
    early = _log(("analyzer", None, None), ("planner", None, None), ("translator", 1, None),
                 ("validator", 1, None), ("end", 1, "exhausted"))
    assert check_phase_sequence(early, 3)                          # exhausted after one round
    mid = _log(("analyzer", None, None), ("planner", None, None), ("translator", 1, None),
               ("end", 1, "success"))
    assert check_phase_sequence(mid, 3)                            # success mid-round
    wrong_iter = _log(("analyzer", None, None), ("planner", None, None), ("translator", 2, None),
                      ("validator", 2, None), ("end", 2, "success"))
    assert check_phase_sequence(wrong_iter, 3)
