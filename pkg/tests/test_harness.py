from __future__ import annotations

import dis
import importlib.util
import json
import shutil
import sys
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from repotrans.model import Fragment, discover_project
from repotrans.pipeline.deps import project_fragments
from repotrans.validation import coverage as cov
from repotrans.validation import harness

needs_cargo = pytest.mark.skipif(shutil.which("cargo") is None, reason="cargo not installed")


def python_project(root, config, tests=None):
    overrides = None if tests is None else {"test_files": tests}
    return discover_project(root, config.profile("python"), config.conventions_for("python"),
                            overrides=overrides)


def validate(project, config, **kw):
    frags = project_fragments(project, project.source_files)
    return harness.validate(project, config.profile("python"), frags, timeout=120, **kw)


# -- an independent coverage oracle ------------------------------------------------------------


def _code_lines(code) -> set[int]:
    lines = {line for _, line in dis.findlinestarts(code) if line}
    for const in code.co_consts:
        if hasattr(const, "co_code"):
            lines |= _code_lines(const)
    return lines


def line_coverage_oracle(root: Path, module: str, test_module: str) -> tuple[set[int], set[int]]:
    """Executable and executed lines of ``module`` when ``test_module``'s tests run.

    Uses only the compiler's line table and ``sys.settrace``. The module
    docstring line is not counted as executable.
    """
    path = root / f"{module}.py"
    source = path.read_text()
    code = compile(source, str(path), "exec")
    executable = _code_lines(code) - {1}
    hit: set[int] = set()

    def tracer(frame, event, arg):
        if frame.f_code.co_filename == str(path):
            hit.add(frame.f_lineno)
        return tracer

    saved = dict(sys.modules)
    sys.path.insert(0, str(root))
    sys.settrace(tracer)
    try:
        spec = importlib.util.spec_from_file_location(test_module, root / f"{test_module}.py")
        mod = importlib.util.module_from_spec(spec)
        spec.loader.exec_module(mod)
        for name in sorted(dir(mod)):
            if name.startswith("test_"):
                getattr(mod, name)()
    finally:
        sys.settrace(None)
        sys.path.remove(str(root))
        sys.modules.clear()
        sys.modules.update(saved)
    return executable, hit & executable


def test_pycalc_counts_coverage_and_gap(fixture_copy, config):
    root = fixture_copy("pycalc")
    report = validate(python_project(root, config), config)
    assert report.compile_ok
    assert (report.counts["executed"], report.counts["passed"], report.counts["failed"]) == (2, 2, 0)
    assert report.uncovered_fragments == ["calc.py:div"]
    executable, hit = line_coverage_oracle(root, "calc", "test_calc")
    assert report.coverage["available"] is True
    assert report.coverage["percent_after"] == pytest.approx(100 * len(hit) / len(executable), abs=0.01)
    assert report.coverage["percent_after"] == 70.0
    assert report.all_success


def test_pyfail_reports_failure_with_trace(fixture_copy, config):
    report = validate(python_project(fixture_copy("pyfail"), config), config)
    assert report.counts["failed"] == 1
    (bad,) = report.failing_outcomes()
    assert bad.test_id == "test_wordy::test_whisper" and bad.status == "fail"
    assert "assert" in bad.failure_payload and "test_wordy.py" in bad.failure_payload
    assert not report.all_success
    assert harness.implicated_files(report, python_project(fixture_copy("pyfail", "again"), config)) \
        == ["test_wordy.py"]


def test_generated_test_closes_the_gap(fixture_copy, config):
    root = fixture_copy("pycalc")
    (root / "test_gen_div.py").write_text("from calc import div\n\n\n"
                                          "def test_div():\n    assert div(7, 2) == 3\n")
    project = python_project(root, config, ["test_calc.py", "test_gen_div.py"])
    report = validate(project, config, generated_tests=["test_gen_div.py"])
    assert report.uncovered_fragments == []
    assert report.coverage["percent_before"] == 70.0
    assert report.coverage["percent_after"] > report.coverage["percent_before"]
    assert report.generated_tests == ["test_gen_div.py"]


def test_failing_generated_test_and_policy(fixture_copy, config):
    root = fixture_copy("pycalc")
    (root / "test_gen_div.py").write_text("from calc import div\n\n\n"
                                          "def test_div():\n    assert div(7, 2) == 4\n")
    project = python_project(root, config, ["test_calc.py", "test_gen_div.py"])
    inclusive = validate(project, config, generated_tests=["test_gen_div.py"])
    exclusive = validate(project, config, generated_tests=["test_gen_div.py"], policy="exclusive")
    assert inclusive.counts["failed"] == exclusive.counts["failed"] == 1
    assert inclusive.all_success is False
    assert exclusive.all_success is True
    with pytest.raises(harness.HarnessError):
        harness.compute_all_success(True, [], [], "lenient")


def test_empty_suite(fixture_copy, config):
    root = fixture_copy("pycalc")
    (root / "test_calc.py").unlink()
    report = validate(python_project(root, config), config)
    assert report.empty_suite and report.counts["executed"] == 0
    assert report.coverage["available"] is False


def test_syntax_error_is_a_compile_failure(fixture_copy, config):
    root = fixture_copy("pycalc")
    (root / "calc.py").write_text("def add(a, b)\n    return a + b\n")
    report = validate(python_project(root, config), config)
    assert report.compile_ok is False and not report.all_success
    assert any(d["file"] == "calc.py" and d["severity"] == "error" for d in report.build_diagnostics)
    assert "tests not run: build failed" in report.notes


@needs_cargo
def test_rust_type_error_fails_the_build(fixture_copy, config):
    root = fixture_copy("rust_typeerror")
    project = discover_project(root, config.profile("rust"), config.conventions_for("rust"))
    built = harness.build(project, config.profile("rust"), timeout=300)
    assert not built.ok
    errors = [d for d in built.diagnostics if d["severity"] == "error"]
    assert [(d["file"], d["line"], d["column"]) for d in errors] == [("src/lib.rs", 2, 25)]
    report = harness.validate(project, config.profile("rust"), timeout=300)
    assert report.compile_ok is False and report.counts["executed"] == 0


def test_missing_coverage_adapter_is_a_note(fixture_copy, config):
    from dataclasses import replace

    root = fixture_copy("pycalc")
    profile = replace(config.profile("python"), coverage_command=())
    project = python_project(root, config)
    report = harness.validate(project, profile, project_fragments(project), timeout=120)
    assert report.coverage == {"available": False, "percent_before": None, "percent_after": None,
                               "note": "capability unavailable: no coverage adapter for python"}
    assert report.counts["passed"] == 2 and report.all_success


def test_parity_check(fixture_copy, config):
    calc = python_project(fixture_copy("pycalc"), config)
    wordy = python_project(fixture_copy("pyfail"), config)
    profiles = (config.profile("python"), config.profile("python"))
    frag = Fragment("calc.py", "add", "function", (4, 5))
    ok = harness.function_parity_check(frag, "test_calc.py", "test_calc.py", calc, calc,
                                       profiles, timeout=120)
    assert ok["status"] == "success" and ok["fragment"] == "calc.py:add"
    bad = harness.function_parity_check(frag, "test_calc.py", "test_wordy.py", calc, wordy,
                                        profiles, timeout=120)
    assert bad["status"] == "fail" and "test_whisper" in bad["target"]


def test_report_round_trip(fixture_copy, config):
    report = validate(python_project(fixture_copy("pyfail"), config), config)
    again = harness.ValidationReport.from_dict(json.loads(report.dumps()))
    assert again == report and again.dumps() == report.dumps()


# -- result parsers ----------------------------------------------------------------------------


def test_parse_junit_nested_suites():
    xml = """<testsuites><testsuite name="outer"><testsuite name="inner">
      <testcase name="ok"/><testcase name="bad"><failure message="boom">trace</failure></testcase>
      <testcase name="skip"><skipped/></testcase></testsuite></testsuite></testsuites>"""
    got = [(o.test_id, o.status, o.failure_payload)
           for o in harness.parse_junit(xml, "t.test.js")]
    assert got == [("t.test.js::outer::inner::ok", "pass", None),
                   ("t.test.js::outer::inner::bad", "fail", "boom\ntrace"),
                   ("t.test.js::outer::inner::skip", "skipped", None)]


def test_parse_go_and_libtest_streams():
    go = "\n".join([
        '{"Action":"run","Package":"cd","Test":"TestA"}',
        '{"Action":"output","Package":"cd","Test":"TestA","Output":"cd_test.go:9: want 3\\n"}',
        '{"Action":"fail","Package":"cd","Test":"TestA"}',
        '{"Action":"pass","Package":"cd","Test":"TestB"}', "not json"])
    assert [(o.test_id, o.status, o.failure_payload) for o in harness.parse_go_test_json(go)] == [
        ("cd::TestA", "fail", "cd_test.go:9: want 3\n"), ("cd::TestB", "pass", None)]
    rs = "\n".join(['{"type":"test","event":"started","name":"t::a"}',
                    '{"type":"test","event":"ok","name":"t::a"}',
                    '{"type":"test","event":"failed","name":"t::b","stdout":"panicked"}'])
    assert [(o.test_id, o.status) for o in harness.parse_libtest_json(rs)] == [
        ("t::a", "pass"), ("t::b", "fail")]


# -- coverage interchange and gap --------------------------------------------------------------


def test_coverage_file_round_trip():
    data = cov.CoverageData({"a.py": cov.FileCoverage(frozenset({1, 2, 3, 7}), frozenset({2, 7})),
                             "b/c.py": cov.FileCoverage(frozenset(), frozenset())})
    text = cov.dumps(data)
    assert "exec 1-3,7" in text and "hit 2,7" in text
    assert cov.loads(text) == data
    for bad in ("nope\n", "repotrans-coverage 1\nexec 1\n",
                "repotrans-coverage 1\nfile a\nexec 1\nhit 2\n",
                "repotrans-coverage 1\nfile a\nexec 3-1\n"):
        with pytest.raises(cov.CoverageError):
            cov.loads(bad)


def test_gap_rejects_unknown_files():
    data = cov.CoverageData({"other.py": cov.FileCoverage(frozenset({1}), frozenset({1}))})
    with pytest.raises(cov.CoverageError):
        cov.coverage_gap([Fragment("a.py", "f", "function", (1, 2))], data)


_frag_spans = st.lists(st.tuples(st.integers(1, 40), st.integers(0, 5)), min_size=1, max_size=10)


@given(_frag_spans, st.sets(st.integers(1, 50)), st.sets(st.integers(1, 50)))
def test_gap_shrinks_as_coverage_grows(spans, hit, more):
    frags = [Fragment("m.py", f"f{i}", "function", (a, a + n)) for i, (a, n) in enumerate(spans)]
    lines = frozenset(range(1, 51))

    def gap(covered):
        return set(cov.coverage_gap(frags, cov.CoverageData(
            {"m.py": cov.FileCoverage(lines, frozenset(covered))})))

    small, large = gap(hit), gap(hit | more)
    assert large <= small
    assert gap(set()) == {f.identity for f in frags}
    assert gap(lines) == set()
