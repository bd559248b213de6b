"""The translation loop: analyze, plan, then alternate translation and validation.

A run directory holds everything a run produces::

    docs/            the seven documents (plus generated_tests.json)
    source/          working copy of the source project
    target/          the translated project
    trajectory.log   every model turn, tool call and phase change
    report.json      the last validation report
    ledger.json      token, dollar and wall-clock totals per agent
"""

from __future__ import annotations

import json
import logging
import shutil
import time
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from repotrans.config import Config
from repotrans.llm.gateway import (
    AgentTimeout,
    Event,
    Gateway,
    GatewayError,
    PhaseMarker,
    TrajectoryLog,
    prompt_id,
)
from repotrans.model import (
    IGNORED_DIRS,
    CostLedger,
    EmptyProjectError,
    Fragment,
    ModelError,
    Project,
    RunBudget,
    discover_project,
    parse_identity,
    walk_files,
)
from repotrans.pipeline import documents as docs
from repotrans.pipeline.agents import Session, Toolbox, WriteScope
from repotrans.pipeline.deps import (
    bottom_up_groups,
    dependency_graph,
    neighbours,
    project_fragments,
)
from repotrans.toolserver.server import ToolServer
from repotrans.toolserver.skeleton import file_structure, skeleton_fragments
from repotrans.treesitter import GRAMMARS
from repotrans.validation import harness

log = logging.getLogger(__name__)

ANALYZER_REPAIRS = 1
PLANNER_REPAIRS = 2
STEP_RETRIES = 1
GENERATED_TESTS_DOC = "generated_tests.json"
STATUSES = ("success", "exhausted", "timeout", "failed", "error")


class PipelineError(RuntimeError):
    """An agent's output stayed invalid after its repair budget."""


def load_prompts() -> dict[str, str]:
    base = resources.files("repotrans").joinpath("prompts")
    return {agent: base.joinpath(f"{agent}.md").read_text(encoding="utf-8")
            for agent in ("analyzer", "planner", "translator", "validator")}


# -- outputs ----------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyzerOutput:
    research_doc: str
    library_doc: str
    design_doc: str
    file_map: Mapping[str, str]


@dataclass(frozen=True)
class PlanningOutput:
    fragment_manifest: Mapping[str, Sequence[str]]
    name_mapping: docs.NameMapping
    skeleton_index: tuple[str, ...]
    plan: docs.Plan
    fragments: tuple[Fragment, ...]
    file_deps: Mapping[str, frozenset[str]]
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class AgentContext:
    source: Project
    analysis: AnalyzerOutput
    planning: PlanningOutput
    target_root: Path


@dataclass
class TranslationDelta:
    mode: str  # "fresh" or "repair"
    changed: list[str] = field(default_factory=list)
    reverted: list[str] = field(default_factory=list)
    failed_steps: list[str] = field(default_factory=list)
    scope: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return bool(self.failed_steps) or (self.mode == "repair" and not self.changed)


@dataclass
class RunResult:
    status: str
    iterations: int
    report: harness.ValidationReport | None
    run_dir: Path
    detail: str | None = None
    deltas: list[TranslationDelta] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "success"


@dataclass(frozen=True)
class RunDir:
    root: Path

    @property
    def docs(self) -> Path:
        return self.root / "docs"

    @property
    def source(self) -> Path:
        return self.root / "source"

    @property
    def target(self) -> Path:
        return self.root / "target"

    @property
    def log(self) -> Path:
        return self.root / "trajectory.log"

    @property
    def report(self) -> Path:
        return self.root / "report.json"

    @property
    def ledger(self) -> Path:
        return self.root / "ledger.json"

    @classmethod
    def create(cls, root, source: Project) -> RunDir:
        root = Path(root).resolve()
        if root.exists() and any(root.iterdir()):
            raise ModelError(f"output directory is not empty: {root}")
        run = cls(root)
        for d in (run.docs, run.target):
            d.mkdir(parents=True, exist_ok=True)
        shutil.copytree(source.root, run.source, ignore=shutil.ignore_patterns(*IGNORED_DIRS))
        return run


# -- tree snapshots ------------------------------------------------------------------------


def snapshot(root: Path) -> dict[str, bytes]:
    return {rel: (root / rel).read_bytes() for rel in walk_files(root)}


def changed_files(before: Mapping[str, bytes], root: Path) -> list[str]:
    after = snapshot(root)
    return sorted(f for f in set(before) | set(after) if before.get(f) != after.get(f))


def restore(before: Mapping[str, bytes], root: Path, files: Iterable[str]) -> None:
    for rel in files:
        path = root / rel
        if rel in before:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(before[rel])
        elif path.exists():
            path.unlink()


# -- phase-sequence conformance ------------------------------------------------------------


def phase_sequence(events: Iterable[Event]) -> list[PhaseMarker]:
    return [e for e in events if isinstance(e, PhaseMarker)]


def check_phase_sequence(events: Iterable[Event], max_iterations: int) -> list[str]:
    """Problems with the run's phase markers; empty when they conform.

    A complete run reads ``analyzer planner (translator validator){1,max}
    end``. It may stop before ``max`` rounds only with ``end`` status
    success; a timed-out, failed or errored run may stop anywhere, as long
    as what it did is a prefix of that language.
    """
    markers = phase_sequence(events)
    names = [m.phase for m in markers]
    if not names or names[-1] != "end":
        return ["the log does not end with an end marker"]
    end = markers[-1]
    body = names[:-1]
    expected = ["analyzer", "planner"] + ["translator", "validator"] * max_iterations
    problems = []
    if body != expected[: len(body)]:
        return [f"phase order {body} is not a prefix of {expected}"]
    rounds = max(0, len(body) - 2) / 2
    for m in markers[2:-1]:
        want = (markers.index(m) - 2) // 2 + 1
        if m.iteration != want:
            problems.append(f"{m.phase} marker seq {m.seq} has iteration {m.iteration}, "
                            f"expected {want}")
    if end.status in ("success", "exhausted"):
        if rounds != int(rounds) or rounds < 1:
            problems.append("a finished run must end after a validator phase")
        if end.status == "exhausted" and rounds != max_iterations:
            problems.append(f"exhausted after {rounds:g} rounds instead of {max_iterations}")
    elif end.status not in ("timeout", "failed", "error"):
        problems.append(f"unknown end status {end.status!r}")
    return problems


# -- the pipeline --------------------------------------------------------------------------


class Pipeline:
    """One run: owns the run directory, the tool servers and the gateway's phases."""

    def __init__(self, source: Project, config: Config, source_language: str,
                 target_language: str, gateway: Gateway, run_dir: RunDir, *,
                 budget: RunBudget | None = None, offline: bool = False,
                 fetch: Callable[[str], str] | None = None, policy: str = "inclusive",
                 runner_timeout: float = harness.DEFAULT_TIMEOUT,
                 clock: Callable[[], float] = time.monotonic):
        self.config = config
        self.source_profile = config.profile(source_language)
        self.target_profile = config.profile(target_language)
        self.gateway = gateway
        self.run = run_dir
        self.budget = budget or config.budget
        self.policy = policy
        self.runner_timeout = runner_timeout
        self.clock = clock
        self.prompts = load_prompts()
        self.source = discover_project(run_dir.source, self.source_profile,
                                       overrides={"source_files": source.source_files,
                                                  "test_files": source.test_files,
                                                  "dependency_manifests":
                                                      source.dependency_manifests})
        profiles = config.profiles
        self.servers = {"source": ToolServer(run_dir.source, profiles),
                        "target": ToolServer(run_dir.target, profiles)}
        self.toolbox = Toolbox({"source": run_dir.source, "target": run_dir.target,
                                "docs": run_dir.docs}, profiles,
                               {"source": source_language, "target": target_language},
                               self.servers, conventions=config.conventions,
                               offline=offline, fetch=fetch, timeout=runner_timeout)
        self.deadline: float | None = None
        self.generated: list[str] = []
        self.check_pairs: list[dict] = []
        self.handed_to_validator: set[str] = set()
        self.notes: list[str] = []

    def close(self) -> None:
        for server in self.servers.values():
            server.close()

    # -- helpers ---------------------------------------------------------------------

    def _start(self, agent: str, iteration: int | None = None) -> None:
        self.gateway.phase(agent, iteration)
        self.deadline = self.clock() + self.budget.agent_timeout

    def _check_deadline(self, agent: str) -> None:
        if self.deadline is not None and self.clock() >= self.deadline:
            raise AgentTimeout(f"{agent} exceeded its time budget")

    def _session(self, agent: str, scope: WriteScope) -> Session:
        self.toolbox.scope = scope
        return Session(self.gateway, agent, self.prompts[agent], self.toolbox, self.deadline,
                       clock=self.clock)

    def _doc(self, name: str) -> str:
        path = self.run.docs / docs.DOC_FILES.get(name, name)
        return path.read_text(encoding="utf-8") if path.is_file() else ""

    def _remaining(self) -> float:
        if self.deadline is None:
            return self.runner_timeout
        return max(1.0, min(self.runner_timeout, self.deadline - self.clock()))

    def _runner(self, agent: str) -> harness.Runner:
        root = str(self.run.root)

        def listen(result: harness.CommandResult) -> None:
            argv = [a.replace(root, "<run>") for a in result.argv]
            self.gateway.record_tool(agent, "shell", {"argv": argv},
                                     {"exit_code": result.exit_code,
                                      "timed_out": result.timed_out}, None, result.duration)

        return harness.Runner(listen)

    # -- analyzer --------------------------------------------------------------------

    def _analyzer_brief(self) -> str:
        s = self.source
        lines = [f"Source language: {self.source_profile.language}",
                 f"Target language: {self.target_profile.language}",
                 "", "Source files:", *[f"- source/{f}" for f in s.source_files],
                 "", "Test files:", *([f"- source/{f}" for f in s.test_files] or ["(none)"]),
                 "", "Dependency manifests:",
                 *([f"- source/{f}" for f in s.dependency_manifests] or ["(none)"]),
                 "", "Write docs/research.md, docs/libraries.md and docs/design.md."]
        return "\n".join(lines)

    def _analysis_problems(self) -> list[str]:
        problems = []
        for name, check in (("research", docs.check_research),
                            ("libraries", docs.check_libraries)):
            text = self._doc(name)
            problems += ([f"docs/{docs.DOC_FILES[name]} is missing"] if not text else
                         [f"docs/{docs.DOC_FILES[name]}: {p}" for p in check(text)])
        design = self._doc("design")
        problems += (["docs/design.md is missing"] if not design else
                     [f"docs/design.md: {p}"
                      for p in docs.check_design(design, self.source, self.target_profile)])
        return problems

    def run_analyzer(self) -> AnalyzerOutput:
        self._start("analyzer")
        scope = WriteScope(files=frozenset(f"docs/{docs.DOC_FILES[n]}"
                                           for n in ("research", "libraries", "design")))
        session = self._session("analyzer", scope)
        session.ask(self._analyzer_brief())
        problems = self._analysis_problems()
        for _ in range(ANALYZER_REPAIRS):
            if not problems:
                break
            session.ask(_repair_message(problems))
            problems = self._analysis_problems()
        if problems:
            raise PipelineError("analyzer documents are invalid: " + "; ".join(problems))
        return AnalyzerOutput(self._doc("research"), self._doc("libraries"),
                              self._doc("design"), docs.design_mapping(self._doc("design")))

    # -- planner ---------------------------------------------------------------------

    def verify_fragment_manifest(self, manifest: Mapping[str, Sequence[str]],
                                 source: Project | None = None) -> docs.ManifestReport:
        source = source or self.source
        truth = project_fragments(source, server=self.servers["source"])
        return docs.compare_manifest(manifest, truth, source.files)

    def _planner_brief(self, analysis: AnalyzerOutput, groups: Sequence[Sequence[str]]) -> str:
        tp = self.target_profile
        lines = [f"Source language: {self.source_profile.language} "
                 f"(name prefix '{self.source_profile.prefix}')",
                 f"Target language: {tp.language} (name prefix '{tp.prefix}')",
                 "Unimplemented-body marker(s): " + " | ".join(tp.stub_markers),
                 "", "File mapping from docs/design.md:",
                 *[f"- {s} -> {t}" for s, t in analysis.file_map.items()],
                 "", "Source files in bottom-up dependency order (one Part A step per line):",
                 *[f"- {', '.join(g)}" for g in groups],
                 "", "Test files:", *([f"- {t}" for t in self.source.test_files] or ["(none)"]),
                 "", "Write docs/fragments.md, docs/name_mapping.md, docs/skeleton.md, "
                 "docs/plan.md and the skeleton files under target/."]
        return "\n".join(lines)

    def _target_project(self, file_map: Mapping[str, str] | None = None) -> Project:
        tp = self.target_profile
        conv = self.config.conventions_for(tp.language)
        code = [f for f in walk_files(self.run.target) if tp.owns(f)]
        mapped_tests = {file_map[f] for f in self.source.test_files
                        if file_map and f in file_map}
        tests = sorted(f for f in code
                       if conv.is_test(f) or f in mapped_tests or f in self.generated)
        return discover_project(self.run.target, tp, conv,
                                overrides={"test_files": tests,
                                           "source_files": [f for f in code if f not in tests]})

    def _skeleton_problems(self, index: Sequence[str], analysis: AnalyzerOutput,
                           mapping: docs.NameMapping) -> list[str]:
        tp = self.target_profile
        problems = [f"skeleton file target/{f} does not exist" for f in index
                    if not (self.run.target / f).is_file()]
        problems += [f"design maps {s} to {t}, which is not in docs/skeleton.md"
                     for s, t in analysis.file_map.items() if t not in index]
        if tp.language not in GRAMMARS:
            return problems
        declared = set()
        for f in index:
            path = self.run.target / f
            if not path.is_file() or not tp.owns(f):
                continue
            text = path.read_text(encoding="utf-8", errors="replace")
            lines = text.splitlines()
            for frag in skeleton_fragments(file_structure(text.encode("utf-8"), tp.language, f)):
                declared.add(frag.simple_name)
                if frag.kind not in ("function", "method") or not tp.stub_markers:
                    continue
                body = "\n".join(lines[frag.span[0] - 1: frag.span[1]])
                if not docs.has_stub(body, tp):
                    problems.append(f"target/{f}: {frag.qualified_name} has a body that is "
                                    f"not a stub")
        for target_name in (t for _, t in mapping.categories.get("functions", [])):
            if target_name.rsplit(".", 1)[-1] not in declared:
                problems.append(f"no skeleton declaration for mapped function {target_name}")
        return problems

    def _skeleton_build(self, analysis: AnalyzerOutput) -> list[str]:
        if not self.target_profile.build_command:
            return []
        try:
            project = self._target_project(analysis.file_map)
            built = harness.build(project, self.target_profile, self._runner("planner"),
                                  self._remaining())
        except EmptyProjectError:
            return ["the target skeleton has no source files"]
        except harness.CommandNotFound as exc:
            self.notes.append(f"skeleton build skipped: {exc}")
            return []
        if built.ok:
            return []
        first = [f"{d.get('file')}:{d.get('line')}: {d.get('message')}"
                 for d in built.diagnostics[:5]]
        return ["the skeleton does not build: " + ("; ".join(first) or built.payload[-500:])]

    def _planning_problems(self, analysis: AnalyzerOutput, file_deps) -> tuple[list[str], dict]:
        out: dict = {}
        problems = [f"docs/{docs.DOC_FILES[n]} is missing"
                    for n in ("fragments", "name_mapping", "skeleton", "plan") if not self._doc(n)]
        if problems:
            return problems, out
        out["manifest"] = docs.parse_manifest(self._doc("fragments"))
        report = self.verify_fragment_manifest(out["manifest"])
        problems += [f"manifest lists {i}, which does not exist" for i in report.extra]
        problems += [f"manifest omits {i}" for i in report.missing]
        problems += [f"manifest omits file {f}" for f in report.unlisted_files]
        try:
            mapping = docs.parse_name_mapping(self._doc("name_mapping"))
        except docs.DocumentError as exc:
            return problems + [f"docs/name_mapping.md: {exc}"], out
        out["mapping"] = mapping
        ids = [i for v in out["manifest"].values() for i in v]
        problems += [f"name mapping: {p}" for p in mapping.problems(ids)]
        problems += [f"name mapping: {p}" for p in docs.mapping_coverage(mapping, self._truth)]
        out["index"] = docs.parse_skeleton_index(self._doc("skeleton"))
        problems += self._skeleton_problems(out["index"], analysis, mapping)
        out["plan"] = docs.parse_plan(self._doc("plan"), self.source.files)
        problems += [f"plan: {p}" for p in docs.lint_plan(out["plan"], self.source, file_deps)]
        if not problems:
            problems += self._skeleton_build(analysis)
        return problems, out

    def run_planner(self, analysis: AnalyzerOutput) -> PlanningOutput:
        self._start("planner")
        self._truth = project_fragments(self.source, server=self.servers["source"])
        file_deps = dependency_graph(self.source, self.source.source_files,
                                     self.servers["source"], self._truth)
        groups = bottom_up_groups(file_deps)
        names = ("fragments", "name_mapping", "skeleton", "plan")
        scope = WriteScope(files=frozenset(f"docs/{docs.DOC_FILES[n]}" for n in names),
                           dirs=("target/",))
        session = self._session("planner", scope)
        session.ask(self._planner_brief(analysis, groups))
        problems, parts = self._planning_problems(analysis, file_deps)
        for _ in range(PLANNER_REPAIRS):
            if not problems:
                break
            session.ask(_repair_message(problems))
            problems, parts = self._planning_problems(analysis, file_deps)
        if problems:
            raise PipelineError("planner output is invalid: " + "; ".join(problems))
        warnings = docs.plan_order_warnings(parts["plan"], file_deps)
        return PlanningOutput(parts["manifest"], parts["mapping"], tuple(parts["index"]),
                              parts["plan"], tuple(self._truth),
                              {k: frozenset(v) for k, v in file_deps.items()},
                              tuple(warnings + self.notes))

    # -- translator ------------------------------------------------------------------

    def _enforce(self, before: Mapping[str, bytes], allowed: set[str],
                 delta: TranslationDelta) -> None:
        changed = changed_files(before, self.run.target)
        outside = [f for f in changed if f not in allowed]
        if outside:
            restore(before, self.run.target, outside)
            delta.reverted += outside
        delta.changed += [f for f in changed if f in allowed and f not in delta.changed]

    def _step_brief(self, step: docs.PlanStep, pairs: Sequence[tuple[str, str]]) -> str:
        tp = self.target_profile
        lines = [f"Plan step {step.render()}", "",
                 "Translate (you may write only these target files):",
                 *[f"- source/{s} -> target/{t}" for s, t in pairs],
                 "", "Replace every body containing: " + " | ".join(tp.stub_markers),
                 "Names follow docs/name_mapping.md; the design is in docs/design.md."]
        return "\n".join(lines)

    def _fresh(self, ctx: AgentContext) -> TranslationDelta:
        delta = TranslationDelta("fresh")
        file_map = ctx.analysis.file_map
        plan = ctx.planning.plan
        for step in plan.part("A") + plan.part("B"):
            pairs = [(f, file_map[f]) for f in step.files if f in file_map]
            targets = {t for _, t in pairs}
            delta.scope += sorted(targets - set(delta.scope))
            before = snapshot(self.run.target)
            session = self._session("translator", WriteScope(
                files=frozenset(f"target/{t}" for t in targets)))
            session.ask(self._step_brief(step, pairs))
            for attempt in range(STEP_RETRIES + 1):
                left = [t for t in sorted(targets) if (self.run.target / t).is_file() and
                        docs.has_stub((self.run.target / t).read_text(encoding="utf-8",
                                                                      errors="replace"),
                                      self.target_profile)]
                if not left or attempt == STEP_RETRIES:
                    break
                session.ask("Unimplemented markers remain in: "
                            + ", ".join(f"target/{t}" for t in left) + ". Finish them.")
            if left:
                delta.failed_steps.append(step.id)
            self._enforce(before, targets, delta)
        return delta

    def repair_scope(self, report: harness.ValidationReport, ctx: AgentContext) -> list[str]:
        """Implicated target files plus their import-graph neighbours."""
        project = self._target_project(ctx.analysis.file_map)
        implicated = harness.implicated_files(report, project)
        if not implicated:
            return sorted(set(ctx.planning.skeleton_index) | set(project.files))
        graph = dependency_graph(project, project.files, None)
        return sorted(set(implicated) | neighbours(graph, implicated))

    def _repair_brief(self, report: harness.ValidationReport, scope: Sequence[str]) -> str:
        summary = {
            "compile_ok": report.compile_ok,
            "counts": report.counts,
            "build_diagnostics": report.build_diagnostics[:30],
            "failing_tests": [{"test_id": o.test_id, "status": o.status,
                               "failure": (o.failure_payload or "")[:3000]}
                              for o in report.failing_outcomes()[:30]],
            "failed_function_checks": [c for c in report.function_checks.values()
                                       if c["status"] != "success"],
        }
        return ("Repair mode. Validation report:\n"
                + json.dumps(summary, indent=1, sort_keys=True, ensure_ascii=False)
                + "\n\nFiles in scope (only these may change):\n"
                + "\n".join(f"- target/{f}" for f in scope))

    def _repair(self, ctx: AgentContext, report: harness.ValidationReport) -> TranslationDelta:
        scope = self.repair_scope(report, ctx)
        delta = TranslationDelta("repair", scope=scope)
        before = snapshot(self.run.target)
        session = self._session("translator", WriteScope(
            files=frozenset(f"target/{f}" for f in scope)))
        session.ask(self._repair_brief(report, scope))
        self._enforce(before, set(scope), delta)
        return delta

    def run_translator(self, ctx: AgentContext, report: harness.ValidationReport | None,
                       iteration: int = 1) -> TranslationDelta:
        self._start("translator", iteration)
        return self._fresh(ctx) if report is None else self._repair(ctx, report)

    # -- validator -------------------------------------------------------------------

    def _read_generated(self) -> None:
        path = self.run.docs / GENERATED_TESTS_DOC
        if not path.is_file():
            return
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            tests = [str(t) for t in data.get("generated_tests", [])]
            pairs = [{"fragment": str(c["fragment"]), "source_test": str(c["source_test"]),
                      "target_test": str(c["target_test"])}
                     for c in data.get("function_checks", [])]
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            self.notes.append(f"ignored malformed docs/{GENERATED_TESTS_DOC}: {exc}")
            return
        existing = [t for t in tests if (self.run.target / t).is_file()]
        self.generated = sorted(set(self.generated) | set(existing))
        known = {(c["fragment"], c["source_test"], c["target_test"]) for c in self.check_pairs}
        for c in pairs:
            if (c["fragment"], c["source_test"], c["target_test"]) not in known:
                self.check_pairs.append(c)

    def _function_checks(self, target: Project, fragments: Sequence[Fragment],
                         runner: harness.Runner) -> list[dict]:
        if not self.check_pairs:
            return []
        by_id = {f.identity: f for f in fragments}
        src_tests = sorted(set(self.source.test_files)
                           | {c["source_test"] for c in self.check_pairs
                              if (self.run.source / c["source_test"]).is_file()})
        source = discover_project(self.run.source, self.source_profile, overrides={
            "source_files": self.source.source_files, "test_files": src_tests})
        out = []
        for c in sorted(self.check_pairs, key=lambda c: (c["fragment"], c["target_test"])):
            file, name = parse_identity(c["fragment"])
            frag = by_id.get(c["fragment"]) or Fragment(file, name)
            out.append(harness.function_parity_check(
                frag, c["source_test"], c["target_test"], source, target,
                (self.source_profile, self.target_profile), runner, self._remaining()))
        return out

    def _validate(self, ctx: AgentContext, runner: harness.Runner) -> harness.ValidationReport:
        target = self._target_project(ctx.analysis.file_map)
        fragments = project_fragments(target, target.source_files)
        checks = self._function_checks(target, fragments, runner)
        return harness.validate(target, self.target_profile, fragments,
                                generated_tests=self.generated, function_checks=checks,
                                runner=runner, timeout=self._remaining(), policy=self.policy)

    def _validator_brief(self, uncovered: Sequence[str]) -> str:
        return "\n".join(["Translated functions that no test executes:",
                          *[f"- target/{u}" for u in uncovered], "",
                          f"Write new tests, then docs/{GENERATED_TESTS_DOC}."])

    def run_validator(self, ctx: AgentContext, iteration: int = 1) -> harness.ValidationReport:
        self._start("validator", iteration)
        runner = self._runner("validator")
        report = self._validate(ctx, runner)
        self._check_deadline("validator")
        fresh = [u for u in report.uncovered_fragments if u not in self.handed_to_validator]
        if report.compile_ok and fresh:
            self.handed_to_validator.update(fresh)
            session = self._session("validator", WriteScope(
                files=frozenset({f"docs/{GENERATED_TESTS_DOC}"}),
                new_under=("target/", "source/")))
            session.ask(self._validator_brief(fresh))
            self._read_generated()
            report = self._validate(ctx, runner)
            self._check_deadline("validator")
        report.notes += [n for n in self.notes if n not in report.notes]
        return report

    # -- the loop --------------------------------------------------------------------

    def orchestrate(self) -> RunResult:
        status, detail, report, iteration = "failed", None, None, 0
        deltas: list[TranslationDelta] = []
        try:
            analysis = self.run_analyzer()
            planning = self.run_planner(analysis)
            ctx = AgentContext(self.source, analysis, planning, self.run.target)
            for iteration in range(1, self.budget.max_iterations + 1):
                deltas.append(self.run_translator(ctx, report, iteration))
                report = self.run_validator(ctx, iteration)
                if deltas[-1].failed:
                    report.notes.append(f"translator iteration {iteration} failed: "
                                        + _delta_reason(deltas[-1]))
                    report.all_success = False
                if report.all_success:
                    status = "success"
                    break
            else:
                status = "exhausted"
        except AgentTimeout as exc:
            status, detail = "timeout", str(exc)
        except PipelineError as exc:
            status, detail = "failed", str(exc)
        except GatewayError as exc:
            status, detail = "error", f"{type(exc).__name__}: {exc}"
        finally:
            self.deadline = None
            if not self.gateway.log.closed:
                self.gateway.phase("end", iteration or None, status, detail)
                self.gateway.log.close()
            if report is not None:
                self.run.report.write_text(report.dumps(), encoding="utf-8")
            self.run.ledger.write_text(json.dumps(self.gateway.ledger.to_dict(), indent=2,
                                                  sort_keys=True) + "\n", encoding="utf-8")
            self.close()
        return RunResult(status, iteration, report, self.run.root, detail, deltas)


def _delta_reason(delta: TranslationDelta) -> str:
    if delta.failed_steps:
        return "stub markers remain after steps " + ", ".join(delta.failed_steps)
    return "the repair changed nothing"


def _repair_message(problems: Sequence[str]) -> str:
    return ("Your documents failed validation:\n" + "\n".join(f"- {p}" for p in problems)
            + "\nFix every problem, then reply with a one-line summary.")


def open_log(run: RunDir, config: Config, budget: RunBudget, source_language: str,
             target_language: str, run_id: str) -> TrajectoryLog:
    prompts = {prompt_id(text): text for text in load_prompts().values()}
    return TrajectoryLog.create(
        run.log, run_id=run_id, config_hash=config.digest(),
        budget={"agent_timeout": budget.agent_timeout, "max_iterations": budget.max_iterations},
        prompts=prompts, meta={"source_language": source_language,
                               "target_language": target_language})


def orchestrate(source: Project, target_language: str, budget: RunBudget, *, config: Config,
                backend, out_dir, run_id: str = "run", clock: Callable[[], float] = time.monotonic,
                **options) -> RunResult:
    """Run the whole pipeline for ``source`` into a fresh run directory."""
    run = RunDir.create(out_dir, source)
    log_ = open_log(run, config, budget, source.language, target_language, run_id)
    gateway = Gateway(backend, log_, ledger=CostLedger(config.rates), clock=clock)
    pipeline = Pipeline(source, config, source.language, target_language, gateway, run,
                        budget=budget, clock=clock, **options)
    return pipeline.orchestrate()
