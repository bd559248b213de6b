"""Deterministic validation: build, run tests, measure coverage, assemble a report.

Every subprocess goes through :class:`Runner`, which can report each
invocation (argv, exit code, duration) to a listener such as the trajectory
log. Outputs are scrubbed of the project's absolute path, which is replaced
by ``<root>``, so that reports do not depend on where a project lives.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import subprocess
import time
import xml.etree.ElementTree as ET
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from repotrans.model import (
    Fragment,
    LanguageProfile,
    Project,
    render_command,
    walk_files,
)
from repotrans.validation import coverage as covfmt
from repotrans.validation.coverage import CoverageData, coverage_gap

REPORT_VERSION = "1.0.0"
STATUSES = ("pass", "fail", "error", "skipped", "not_collected")
DEFAULT_TIMEOUT = 600.0
PAYLOAD_LIMIT = 20000
RESULTS_DIR = ".repotrans"


class HarnessError(RuntimeError):
    pass


class CommandNotFound(HarnessError):
    pass


class SnapshotMismatch(HarnessError):
    pass


# -- subprocesses ------------------------------------------------------------------


@dataclass
class CommandResult:
    argv: list[str]
    exit_code: int
    stdout: str
    stderr: str
    duration: float
    timed_out: bool = False


class Runner:
    """Runs commands and tells ``listener`` about each one."""

    def __init__(self, listener: Callable[[CommandResult], None] | None = None):
        self.listener = listener

    def run(self, argv: Sequence[str], cwd: Path, env: Mapping[str, str] | None = None,
            timeout: float = DEFAULT_TIMEOUT) -> CommandResult:
        full_env = {**os.environ, "PYTHONDONTWRITEBYTECODE": "1", **(env or {})}
        started = time.monotonic()
        try:
            done = subprocess.run(list(argv), cwd=cwd, env=full_env, capture_output=True,
                                  text=True, errors="replace", timeout=timeout)
            result = CommandResult(list(argv), done.returncode, done.stdout, done.stderr,
                                   time.monotonic() - started)
        except FileNotFoundError:
            raise CommandNotFound(f"command not found: {argv[0]}") from None
        except subprocess.TimeoutExpired as exc:
            result = CommandResult(list(argv), -1, _text(exc.stdout), _text(exc.stderr),
                                   time.monotonic() - started, timed_out=True)
        if self.listener is not None:
            self.listener(result)
        return result


def _text(value) -> str:
    if value is None:
        return ""
    return value.decode("utf-8", "replace") if isinstance(value, bytes) else value


def scrub(text: str, root: Path) -> str:
    for form in {str(root), str(Path(root).resolve())}:
        text = text.replace(form, "<root>")
    if len(text) > PAYLOAD_LIMIT:
        text = text[:PAYLOAD_LIMIT] + "\n[truncated]"
    return text


def snapshot_hash(root: Path) -> str:
    """Content hash of every file under ``root`` (ignored directories excluded)."""
    h = hashlib.sha256()
    for rel in walk_files(root):
        h.update(rel.encode("utf-8") + b"\0")
        h.update(hashlib.sha256((Path(root) / rel).read_bytes()).digest())
    return h.hexdigest()


def _clean_results(root: Path) -> None:
    shutil.rmtree(Path(root) / RESULTS_DIR, ignore_errors=True)


# -- build -------------------------------------------------------------------------


@dataclass
class BuildResult:
    ok: bool
    diagnostics: list[dict]
    payload: str = ""
    snapshot: str = ""


def parse_diagnostics(output: str, profile: LanguageProfile, failed: bool) -> list[dict]:
    pattern = re.compile(profile.diagnostic_pattern)
    out = []
    for line in output.splitlines():
        m = pattern.match(line.strip())
        if not m or not m.group("file") or m.group("file").startswith(("http", "<")):
            continue
        severity = m.group("severity") or ("error" if failed else "warning")
        out.append({"file": m.group("file").removeprefix("./"), "line": int(m.group("line")),
                    "column": int(m.group("column") or 1),
                    "severity": "info" if severity == "note" else severity,
                    "message": m.group("message").strip()})
    return out


def build(project: Project, profile: LanguageProfile, runner: Runner | None = None,
          timeout: float = DEFAULT_TIMEOUT) -> BuildResult:
    runner = runner or Runner()
    root = Path(project.root)
    snap = snapshot_hash(root)
    if not profile.build_command:
        return BuildResult(True, [], "no build command configured", snap)
    argv = render_command(profile.build_command, root=str(root), file=None, filter=None)
    result = runner.run(argv, root, profile.env, timeout)
    output = result.stdout + "\n" + result.stderr
    if result.timed_out:
        return BuildResult(False, [], f"build timed out after {timeout:g}s", snap)
    ok = result.exit_code == 0
    diagnostics = parse_diagnostics(scrub(output, root), profile, not ok)
    if not ok and not any(d["severity"] == "error" for d in diagnostics):
        diagnostics.append({"file": None, "line": None, "column": None, "severity": "error",
                            "message": f"build exited with status {result.exit_code}"})
    return BuildResult(ok, diagnostics, scrub(output.strip(), root), snap)


# -- tests ------------------------------------------------------------------------


@dataclass
class TestOutcome:
    test_id: str
    status: str
    failure_payload: str | None = None
    file: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise HarnessError(f"unknown test status {self.status!r}")
        failing = self.status in ("fail", "error")
        if failing and not self.failure_payload:
            self.failure_payload = f"{self.status} without a message"
        if not failing and self.status != "not_collected":
            self.failure_payload = None


@dataclass
class TestRun:
    outcomes: list[TestOutcome]
    coverage: CoverageData | None
    coverage_note: str | None = None
    snapshot: str = ""
    empty_suite: bool = False


def parse_junit(xml_text: str, default_file: str | None = None) -> list[TestOutcome]:
    root = ET.fromstring(xml_text)
    out: list[TestOutcome] = []

    def visit(node, suites: tuple[str, ...]):
        for child in node:
            if child.tag == "testsuite":
                visit(child, (*suites, child.get("name", "")))
            elif child.tag == "testcase":
                out.append(_junit_case(child, suites, default_file))

    visit(root, ())
    return out


def _junit_case(case, suites: tuple[str, ...], default_file: str | None) -> TestOutcome:
    classname = case.get("classname") or ""
    file = case.get("file") or default_file
    parts = [default_file] if default_file else []
    if classname and classname != "test":
        parts.append(classname)
    else:
        parts.extend(s for s in suites if s)
    parts.append(case.get("name", "?"))
    status, payload = "pass", None
    for tag, kind in (("failure", "fail"), ("error", "error"), ("skipped", "skipped")):
        el = case.find(tag)
        if el is not None:
            status = kind
            payload = "\n".join(x for x in (el.get("message"), (el.text or "").strip()) if x)
            break
    return TestOutcome("::".join(parts), status, payload, file)


def parse_go_test_json(stream: str) -> list[TestOutcome]:
    status: dict[str, str] = {}
    output: dict[str, list[str]] = {}
    for line in stream.splitlines():
        try:
            ev = json.loads(line)
        except ValueError:
            continue
        test = ev.get("Test")
        if not test:
            continue
        key = f"{ev.get('Package', '')}::{test}"
        if ev.get("Action") == "output":
            output.setdefault(key, []).append(ev.get("Output", ""))
        elif ev.get("Action") in ("pass", "fail", "skip"):
            status[key] = {"pass": "pass", "fail": "fail", "skip": "skipped"}[ev["Action"]]
    return [TestOutcome(k, s, "".join(output.get(k, [])) if s == "fail" else None)
            for k, s in status.items()]


def parse_libtest_json(stream: str) -> list[TestOutcome]:
    out = []
    for line in stream.splitlines():
        try:
            ev = json.loads(line)
        except ValueError:
            continue
        if ev.get("type") != "test" or ev.get("event") in ("started", None):
            continue
        status = {"ok": "pass", "failed": "fail", "ignored": "skipped",
                  "timeout": "error"}.get(ev["event"], "error")
        payload = ev.get("stdout") or ev.get("message")
        out.append(TestOutcome(ev["name"], status, payload if status in ("fail", "error") else None))
    return out


def _read_results(root: Path, profile: LanguageProfile, result: CommandResult,
                  default_file: str | None) -> list[TestOutcome] | None:
    if profile.result_format == "go-test-json":
        return parse_go_test_json(result.stdout)
    if profile.result_format == "libtest-json":
        return parse_libtest_json(result.stdout)
    if not profile.results_path:
        raise HarnessError(f"{profile.language}: junit results need results_path")
    path = root / profile.results_path
    files = sorted(path.glob("*.xml")) if path.is_dir() else [path] if path.exists() else []
    if not files:
        return None
    outcomes = []
    for f in files:
        try:
            outcomes += parse_junit(f.read_text(encoding="utf-8", errors="replace"), default_file)
        except ET.ParseError:
            return None
    return outcomes


def _runnable(test_files: Iterable[str]) -> list[str]:
    # conftest-style support files hold fixtures, not tests.
    return [f for f in test_files if Path(f).name != "conftest.py"]


def run_tests(project: Project, profile: LanguageProfile, filter: str | None = None,
              runner: Runner | None = None, timeout: float = DEFAULT_TIMEOUT,
              test_files: Sequence[str] | None = None, with_coverage: bool = True) -> TestRun:
    """Run the suite (or ``test_files``) and collect outcomes plus coverage."""
    runner = runner or Runner()
    root = Path(project.root)
    snap = snapshot_hash(root)
    files = _runnable(project.test_files if test_files is None else test_files)
    if not files:
        return TestRun([], None, "empty test suite", snap, empty_suite=True)
    if not profile.test_command:
        raise HarnessError(f"{profile.language}: no test command configured")
    batches = [[f] for f in files] if profile.test_scope == "file" else [files]
    outcomes: list[TestOutcome] = []
    for batch in batches:
        _clean_results(root)
        if profile.results_path and profile.results_path.startswith(RESULTS_DIR + "/"):
            (root / profile.results_path).parent.mkdir(parents=True, exist_ok=True)
        argv = render_command(profile.test_command, root=str(root), file=batch, filter=filter)
        result = runner.run(argv, root, profile.env, timeout)
        parsed = None if result.timed_out else _read_results(
            root, profile, result, batch[0] if profile.test_scope == "file" else None)
        _clean_results(root)
        if parsed is None or (not parsed and result.exit_code not in (0, 5)):
            why = (f"test runner timed out after {timeout:g}s" if result.timed_out
                   else f"test runner exited with status {result.exit_code} and no results")
            payload = scrub(f"{why}\n{result.stdout}\n{result.stderr}".strip(), root)
            outcomes += [TestOutcome(f, "not_collected", payload, f) for f in batch]
        else:
            for o in parsed:
                if o.failure_payload:
                    o.failure_payload = scrub(o.failure_payload, root)
            outcomes += parsed
    cov, note = (measure_coverage(project, profile, files, runner, timeout)
                 if with_coverage else (None, "coverage not requested"))
    return TestRun(outcomes, cov, note, snap, empty_suite=not outcomes)


def measure_coverage(project: Project, profile: LanguageProfile, test_files: Sequence[str],
                     runner: Runner | None = None,
                     timeout: float = DEFAULT_TIMEOUT) -> tuple[CoverageData | None, str | None]:
    """Run the coverage adapter; on any problem return ``(None, reason)``."""
    runner = runner or Runner()
    root = Path(project.root)
    if not profile.coverage_command:
        return None, f"capability unavailable: no coverage adapter for {profile.language}"
    argv = render_command(profile.coverage_command, root=str(root),
                          file=_runnable(test_files), filter=None)
    try:
        result = runner.run(argv, root, profile.env, timeout)
    except CommandNotFound as exc:
        return None, f"capability unavailable: {exc}"
    if result.exit_code != 0:
        reason = scrub(result.stderr.strip(), root) or f"status {result.exit_code}"
        prefix = "capability unavailable: " if result.exit_code == 3 else "coverage failed: "
        return None, prefix + reason
    try:
        return covfmt.loads(result.stdout), None
    except covfmt.CoverageError as exc:
        return None, f"coverage failed: {exc}"


def counts(outcomes: Iterable[TestOutcome]) -> dict:
    tally = {s: 0 for s in STATUSES}
    for o in outcomes:
        tally[o.status] += 1
    return {"executed": tally["pass"] + tally["fail"] + tally["error"], "passed": tally["pass"],
            "failed": tally["fail"], "errors": tally["error"], "skipped": tally["skipped"],
            "not_collected": tally["not_collected"]}


# -- function parity -----------------------------------------------------------------


@dataclass
class SideResult:
    ok: bool
    payload: str


def _run_side(project: Project, profile: LanguageProfile, test_file: str,
              runner: Runner, timeout: float) -> SideResult:
    try:
        built = build(project, profile, runner, timeout)
    except CommandNotFound as exc:
        return SideResult(False, f"build unavailable: {exc}")
    if not built.ok:
        return SideResult(False, "build failed:\n" + built.payload)
    try:
        run = run_tests(project, profile, None, runner, timeout, [test_file], with_coverage=False)
    except (CommandNotFound, HarnessError) as exc:
        return SideResult(False, f"tests unavailable: {exc}")
    if not run.outcomes:
        return SideResult(False, f"no tests ran from {test_file}")
    bad = [o for o in run.outcomes if o.status != "pass"]
    if bad:
        return SideResult(False, "\n".join(f"{o.test_id}: {o.status}\n{o.failure_payload or ''}"
                                           for o in bad).strip())
    return SideResult(True, f"{len(run.outcomes)} passed")


def function_parity_check(fragment: Fragment, src_test: str, tgt_test: str,
                          source: Project, target: Project,
                          profiles: tuple[LanguageProfile, LanguageProfile],
                          runner: Runner | None = None,
                          timeout: float = DEFAULT_TIMEOUT) -> dict:
    """Run paired tests on both sides; success only when both pass."""
    runner = runner or Runner()
    left = _run_side(source, profiles[0], src_test, runner, timeout)
    right = _run_side(target, profiles[1], tgt_test, runner, timeout)
    status = "success" if left.ok and right.ok else "fail"
    return {"fragment": fragment.identity, "status": status, "source_test": src_test,
            "target_test": tgt_test, "source": left.payload, "target": right.payload}


# -- report ------------------------------------------------------------------------


@dataclass
class ValidationReport:
    compile_ok: bool
    outcomes: list[TestOutcome]
    counts: dict
    build_diagnostics: list[dict] = field(default_factory=list)
    coverage: dict = field(default_factory=dict)
    uncovered_fragments: list[str] = field(default_factory=list)
    function_checks: dict = field(default_factory=dict)
    generated_tests: list[str] = field(default_factory=list)
    policy: str = "inclusive"
    empty_suite: bool = False
    snapshot: str = ""
    notes: list[str] = field(default_factory=list)
    all_success: bool = False
    version: str = REPORT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> ValidationReport:
        data = dict(data)
        data["outcomes"] = [TestOutcome(**o) for o in data["outcomes"]]
        return cls(**data)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def failing_outcomes(self) -> list[TestOutcome]:
        return [o for o in self.outcomes if o.status in ("fail", "error", "not_collected")]


def is_generated(outcome: TestOutcome, generated_files: Iterable[str]) -> bool:
    generated = set(generated_files)
    return (outcome.file in generated
            or any(outcome.test_id.startswith(g + "::") or outcome.test_id == g for g in generated))


def compute_all_success(compile_ok: bool, outcomes: Sequence[TestOutcome],
                        generated_files: Iterable[str], policy: str = "inclusive") -> bool:
    if policy not in ("inclusive", "exclusive"):
        raise HarnessError(f"unknown generated-test policy {policy!r}")
    generated = list(generated_files)
    relevant = [o for o in outcomes if policy == "inclusive" or not is_generated(o, generated)]
    c = counts(relevant)
    return compile_ok and c["failed"] == 0 and c["errors"] == 0 and c["not_collected"] == 0


def assemble_report(build_result: BuildResult, test_run: TestRun | None,
                    fragments: Sequence[Fragment] = (), *,
                    baseline: CoverageData | None = None,
                    known_files: Iterable[str] | None = None,
                    function_checks: Sequence[dict] = (),
                    generated_tests: Sequence[str] = (),
                    policy: str = "inclusive",
                    source_files: Iterable[str] | None = None) -> ValidationReport:
    """Combine the parts of one validation pass into a report.

    ``baseline`` is the coverage of the developer tests alone, before any
    generated test; the final coverage comes from ``test_run``.
    """
    if test_run is not None and test_run.snapshot and build_result.snapshot \
            and test_run.snapshot != build_result.snapshot:
        raise SnapshotMismatch("build and test results come from different project snapshots")
    outcomes = sorted(test_run.outcomes if test_run else [], key=lambda o: o.test_id)
    notes = []
    coverage = {"available": False, "percent_before": None, "percent_after": None, "note": None}
    uncovered: list[str] = []
    cov = test_run.coverage if test_run else None
    if test_run is None:
        notes.append("tests not run: build failed")
    elif cov is None:
        coverage["note"] = test_run.coverage_note
    else:
        measured = sorted(source_files) if source_files is not None else None
        after = cov.percent(measured)
        before = baseline.percent(measured) if baseline is not None else after
        coverage.update(available=True, percent_before=before, percent_after=after)
        uncovered = coverage_gap([f for f in fragments if f.kind in ("function", "method")], cov,
                                 known_files)
    checks = {c["fragment"]: c for c in sorted(function_checks, key=lambda c: c["fragment"])}
    return ValidationReport(
        compile_ok=build_result.ok,
        outcomes=outcomes,
        counts=counts(outcomes),
        build_diagnostics=build_result.diagnostics,
        coverage=coverage,
        uncovered_fragments=uncovered,
        function_checks=checks,
        generated_tests=sorted(generated_tests),
        policy=policy,
        empty_suite=bool(test_run.empty_suite) if test_run else False,
        snapshot=build_result.snapshot,
        notes=notes,
        all_success=compute_all_success(build_result.ok, outcomes, generated_tests, policy),
    )


def validate(project: Project, profile: LanguageProfile, fragments: Sequence[Fragment] = (), *,
             generated_tests: Sequence[str] = (), function_checks: Sequence[dict] = (),
             runner: Runner | None = None, timeout: float = DEFAULT_TIMEOUT,
             policy: str = "inclusive") -> ValidationReport:
    """Build, test and measure coverage, then assemble the report."""
    runner = runner or Runner()
    built = build(project, profile, runner, timeout)
    if not built.ok:
        return assemble_report(built, None, fragments, generated_tests=generated_tests,
                               function_checks=function_checks, policy=policy)
    run = run_tests(project, profile, None, runner, timeout)
    baseline = None
    developer = [t for t in project.test_files if t not in set(generated_tests)]
    if generated_tests and run.coverage is not None and developer:
        baseline, _ = measure_coverage(project, profile, developer, runner, timeout)
    return assemble_report(built, run, fragments, baseline=baseline,
                           known_files=project.files, function_checks=function_checks,
                           generated_tests=generated_tests, policy=policy,
                           source_files=project.source_files)


def implicated_files(report: ValidationReport, project: Project) -> list[str]:
    """Project files named by failures, diagnostics or failed parity checks."""
    hits = set()
    names = sorted(project.files, key=len, reverse=True)
    texts = [o.failure_payload or "" for o in report.failing_outcomes()]
    texts += [o.test_id for o in report.failing_outcomes()]
    hits.update(d["file"] for d in report.build_diagnostics if d.get("file") in project.files)
    for check in report.function_checks.values():
        if check["status"] == "fail":
            hits.add(check["fragment"].rpartition(":")[0])
    for text in texts:
        for name in names:
            if re.search(r"(?<![\w./-])" + re.escape(name) + r"(?![\w])", text) or \
                    f"<root>/{name}" in text:
                hits.add(name)
    for o in report.failing_outcomes():
        if o.file in project.files:
            hits.add(o.file)
    return sorted(h for h in hits if h in project.files)

