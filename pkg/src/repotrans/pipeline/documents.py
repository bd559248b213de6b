"""The structured documents agents exchange, with parsers and structural checks.

Seven markdown documents live in a run's ``docs/`` directory:

* ``research.md``, ``libraries.md`` and ``design.md`` from the analyzer;
* ``fragments.md``, ``name_mapping.md``, ``skeleton.md`` and ``plan.md``
  from the planner.

Checks here are structural (headings, listed files, mapping totality). They
return a list of human-readable problems; an empty list means the document
passed.
"""

from __future__ import annotations

import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from repotrans.model import (
    Fragment,
    LanguageProfile,
    ModelError,
    Project,
    parse_identity,
)

DOC_FILES = {
    "research": "research.md",
    "libraries": "libraries.md",
    "design": "design.md",
    "fragments": "fragments.md",
    "name_mapping": "name_mapping.md",
    "skeleton": "skeleton.md",
    "plan": "plan.md",
}

RESEARCH_HEADINGS = ("Overview", "Directory Structure", "Structs and Interfaces",
                     "Data Models", "Error Handling", "Dependencies")
LIBRARY_HEADINGS = ("Overview", "Usages", "Example", "Recommendations in Target PL")
DESIGN_HEADINGS = ("Overview", "Translation Requirements", "Source Files to Translate",
                   "Module Structure", "Error Handling", "Third-Party Libraries")

# Skeleton categories and the name-mapping category each one feeds.
MAPPING_CATEGORIES = {"functions": "functions", "classes": "classes",
                      "structs": "structs", "globals": "variables"}
KIND_CATEGORY = {"function": "functions", "method": "functions", "class": "classes",
                 "interface": "classes", "struct": "structs", "global": "variables"}

NO_STEPS_MARKER = "(none)"

_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_ARROW = re.compile(r"^\s*(?:[-*]\s+)?`?([^`\s]+?)`?\s*(?:->|→)\s*`?([^`\s]+?)`?\s*$")


class DocumentError(ModelError):
    pass


def _clean_title(title: str) -> str:
    return title.strip().strip("*").rstrip(":").strip().strip("*").strip()


def headings(text: str) -> list[tuple[int, str]]:
    """(level, title) of every markdown heading outside fenced code."""
    out, fenced = [], False
    for line in text.splitlines():
        if line.lstrip().startswith("```"):
            fenced = not fenced
            continue
        m = None if fenced else _HEADING.match(line)
        if m:
            out.append((len(m.group(1)), _clean_title(m.group(2))))
    return out


def sections(text: str, level: int = 2) -> dict[str, str]:
    """Bodies of the headings at ``level``, keyed by cleaned title."""
    out: dict[str, list[str]] = {}
    current, fenced = None, False
    for line in text.splitlines():
        if line.lstrip().startswith("```"):
            fenced = not fenced
        m = None if fenced else _HEADING.match(line)
        if m and len(m.group(1)) <= level:
            current = _clean_title(m.group(2)) if len(m.group(1)) == level else None
            if current is not None:
                out.setdefault(current, [])
            continue
        if current is not None:
            out[current].append(line)
    return {k: "\n".join(v).strip("\n") for k, v in out.items()}


def _missing(text: str, required: Sequence[str], level: int = 2) -> list[str]:
    present = {t.lower() for lvl, t in headings(text) if lvl == level}
    return [f"missing heading '{'#' * level} {h}'" for h in required if h.lower() not in present]


# -- analyzer documents --------------------------------------------------------------


def check_research(text: str) -> list[str]:
    return _missing(text, RESEARCH_HEADINGS)


def check_libraries(text: str) -> list[str]:
    """Each ``## <library>`` entry needs the four ``###`` sub-sections.

    A document without entries must say so, e.g. "None: the project has no
    third-party dependencies."
    """
    problems = []
    entries = sections(text, 2)
    for name, body in entries.items():
        problems += [f"library '{name}': {p}" for p in _missing(body, LIBRARY_HEADINGS, 3)]
    if not entries and not re.search(r"\bnone\b", text, re.IGNORECASE):
        problems.append("no library entries and no statement that there are none")
    return problems


def library_names(text: str) -> list[str]:
    return list(sections(text, 2))


def parse_file_mapping(body: str) -> list[tuple[str, str]]:
    """``source -> target`` lines of a mapping section, in order."""
    pairs = []
    for line in body.splitlines():
        m = _ARROW.match(line)
        if m:
            pairs.append((m.group(1), m.group(2)))
    return pairs


def design_mapping(text: str) -> dict[str, str]:
    body = sections(text, 2).get("Source Files to Translate", "")
    return dict(parse_file_mapping(body))


def check_design(text: str, project: Project, target: LanguageProfile) -> list[str]:
    """Headings plus a strict one-to-one file mapping covering the whole project."""
    problems = _missing(text, DESIGN_HEADINGS)
    if problems:
        return problems
    body = sections(text, 2)["Source Files to Translate"]
    pairs = parse_file_mapping(body)
    known = set(project.files)
    seen_src, seen_tgt = set(), set()
    for src, tgt in pairs:
        if src not in known:
            problems.append(f"mapped file {src} is not in the source project")
        if src in seen_src:
            problems.append(f"{src} is mapped twice")
        if tgt in seen_tgt:
            problems.append(f"target file {tgt} is the image of two source files")
        if not target.owns(tgt):
            problems.append(f"target file {tgt} does not have a {target.language} extension")
        seen_src.add(src)
        seen_tgt.add(tgt)
    problems += [f"no target file mapped for {f}" for f in project.files if f not in seen_src]
    return problems


# -- fragment manifest ---------------------------------------------------------------


def render_manifest(fragments: Iterable[Fragment | str], files: Iterable[str] = ()) -> str:
    by_file: dict[str, list[str]] = {f: [] for f in files}
    for frag in fragments:
        identity = frag.identity if isinstance(frag, Fragment) else frag
        by_file.setdefault(parse_identity(identity)[0], []).append(identity)
    lines = ["# Fragment Manifest", ""]
    for name in sorted(by_file):
        lines += [f"## {name}", *by_file[name], ""]
    return "\n".join(lines)


def parse_manifest(text: str) -> dict[str, list[str]]:
    """File heading -> identities listed below it (possibly none)."""
    out: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip().lstrip("-* ").strip("`")
        if line.startswith("="):
            continue
        m = _HEADING.match(raw)
        if m:
            title = _clean_title(m.group(2))
            current = title if len(m.group(1)) == 2 else None
            if current is not None:
                out.setdefault(current, [])
        elif line and current is not None:
            out[current].append(line)
        elif line and ":" in line:
            out.setdefault(line.rpartition(":")[0], []).append(line)
    return out


@dataclass
class ManifestReport:
    missing: list[str] = field(default_factory=list)
    extra: list[str] = field(default_factory=list)
    unlisted_files: list[str] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.missing or self.extra or self.unlisted_files)

    def to_dict(self) -> dict:
        return {"missing": self.missing, "extra": self.extra,
                "unlisted_files": self.unlisted_files}


def compare_manifest(claimed: Mapping[str, Sequence[str]], truth: Iterable[Fragment],
                     files: Iterable[str]) -> ManifestReport:
    """Set comparison of a claimed manifest against the extracted fragments.

    A file that is neither a heading nor the file of a listed identity is
    unlisted; its fragments are not repeated under ``missing``.
    """
    truth_ids = {f.identity for f in truth}
    claimed_ids = {i for ids in claimed.values() for i in ids}
    mentioned = set(claimed) | {i.rpartition(":")[0] for i in claimed_ids}
    unlisted = sorted(f for f in files if f not in mentioned)
    missing = sorted(i for i in truth_ids - claimed_ids
                     if i.rpartition(":")[0] not in set(unlisted))
    return ManifestReport(missing, sorted(claimed_ids - truth_ids), unlisted)


# -- name mapping --------------------------------------------------------------------


@dataclass
class NameMapping:
    source_prefix: str
    target_prefix: str
    categories: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def render(self) -> str:
        lines = ["# Name Mapping", ""]
        for category, pairs in self.categories.items():
            lines.append(f"## {category}:")
            lines += [f"    {self.source_prefix}.{s}: {self.target_prefix}.{t}" for s, t in pairs]
        return "\n".join(lines) + "\n"

    def lookup(self, category: str) -> dict[str, str]:
        return dict(self.categories.get(category, []))

    def problems(self, manifest_ids: Iterable[str]) -> list[str]:
        out = []
        for category, pairs in self.categories.items():
            sources = [s for s, _ in pairs]
            targets = [t for _, t in pairs]
            out += [f"{category}: {s} is mapped twice" for s in _dupes(sources)]
            out += [f"{category}: {t} is the target of two symbols" for t in _dupes(targets)]
        names = {parse_identity(i)[1] for i in manifest_ids}
        out += [f"{c}: {s} is not in the fragment manifest"
                for c, pairs in self.categories.items() for s, _ in pairs if s not in names]
        return out


def _dupes(items: Sequence[str]) -> list[str]:
    seen, out = set(), []
    for item in items:
        if item in seen and item not in out:
            out.append(item)
        seen.add(item)
    return out


_MAP_ENTRY = re.compile(r"^\s*(?:[-*]\s+)?([\w+-]+)\.(\S+?)\s*:\s*([\w+-]+)\.(\S+)\s*,?\s*$")
_MAP_CATEGORY = re.compile(r"^\s*(?:#+\s*)?([A-Za-z_][\w ]*?)\s*:\s*\{?\s*$")


def parse_name_mapping(text: str) -> NameMapping:
    """Read the two-level ``category: { source: target }`` form.

    Both the heading style (``## functions:`` followed by indented
    ``go.isNumber: rs.isNumber`` lines) and the braced style are accepted.
    """
    mapping = NameMapping("", "")
    category = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped in ("}", "},") or stripped.startswith("# "):
            continue
        entry = _MAP_ENTRY.match(line)
        if entry and category is not None:
            sp, sname, tp, tname = entry.groups()
            if mapping.source_prefix and (sp, tp) != (mapping.source_prefix, mapping.target_prefix):
                raise DocumentError(f"inconsistent language prefixes in {stripped!r}")
            mapping.source_prefix, mapping.target_prefix = sp, tp
            mapping.categories[category].append((sname, tname.rstrip(",")))
            continue
        head = _MAP_CATEGORY.match(line)
        if head:
            category = head.group(1).strip()
            mapping.categories.setdefault(category, [])
            continue
        raise DocumentError(f"unreadable name-mapping line: {stripped!r}")
    return mapping


def mapping_coverage(mapping: NameMapping, fragments: Iterable[Fragment]) -> list[str]:
    """Fragments whose qualified name has no entry in its category."""
    out = []
    for frag in fragments:
        category = KIND_CATEGORY[frag.kind]
        if frag.qualified_name not in mapping.lookup(category):
            out.append(f"{category}: no mapping for {frag.identity}")
    return sorted(set(out))


def identity_mapping(fragments: Iterable[Fragment], source: LanguageProfile,
                     target: LanguageProfile) -> NameMapping:
    """A mapping that keeps every name, as the planner is asked to do by default."""
    mapping = NameMapping(source.prefix, target.prefix,
                          {c: [] for c in dict.fromkeys(KIND_CATEGORY.values())})
    for frag in sorted(fragments, key=lambda f: (f.file, f.span, f.qualified_name)):
        pairs = mapping.categories[KIND_CATEGORY[frag.kind]]
        if all(s != frag.qualified_name for s, _ in pairs):
            pairs.append((frag.qualified_name, frag.qualified_name))
    mapping.categories = {c: p for c, p in mapping.categories.items() if p}
    return mapping


# -- skeleton index ------------------------------------------------------------------


def parse_skeleton_index(text: str) -> list[str]:
    """Target files listed as ``- path`` lines, without any ``target/`` prefix."""
    out = []
    for line in text.splitlines():
        m = re.match(r"^\s*[-*]\s+`?([^`\s]+)`?", line)
        if m:
            path = m.group(1)
            path = path[len("target/"):] if path.startswith("target/") else path
            if path not in out:
                out.append(path)
    return out


def render_skeleton_index(files: Iterable[str]) -> str:
    return "# Skeleton Index\n\n" + "".join(f"- target/{f}\n" for f in files)


def has_stub(text: str, profile: LanguageProfile) -> bool:
    return any(marker in text for marker in profile.stub_markers)


# -- implementation plan -------------------------------------------------------------


@dataclass(frozen=True)
class PlanStep:
    id: str
    part: str
    action: str
    files: tuple[str, ...] = ()
    depends_on: tuple[str, ...] = ()

    def render(self) -> str:
        after = f" (depends on {', '.join(self.depends_on)})" if self.depends_on else ""
        return f"{self.id}: {self.action}{after}"


@dataclass
class Plan:
    overview: str = ""
    steps: list[PlanStep] = field(default_factory=list)
    explicit_empty: tuple[str, ...] = ()

    def part(self, name: str) -> list[PlanStep]:
        return [s for s in self.steps if s.part == name]

    def render(self) -> str:
        lines = ["# Implementation Plan", "", "## Overview", self.overview.strip(), ""]
        for part in ("A", "B"):
            lines.append(f"## Part {part}:")
            steps = self.part(part)
            lines += [s.render() for s in steps] if steps else [NO_STEPS_MARKER]
            lines.append("")
        return "\n".join(lines)


_STEP = re.compile(r"^\s*(?:[-*]\s+)?\**([AB]\d+)\**\s*:\s*(.*?)\s*$")
_DEPENDS = re.compile(r"\((?:depends on|after)\s+([AB]\d+(?:\s*,\s*[AB]\d+)*)\)\s*$",
                      re.IGNORECASE)
_PART = re.compile(r"^#{1,6}\s*\**\s*Part\s+([AB])\b", re.IGNORECASE)


def parse_plan(text: str, known_files: Iterable[str] = ()) -> Plan:
    """Parse ``## Part A:`` / ``## Part B:`` sections of ``A1: ...`` lines.

    A step's files are the known project files named in its action text.
    """
    known = sorted(set(known_files), key=len, reverse=True)
    plan = Plan()
    part, overview, empty = None, [], []
    for line in text.splitlines():
        m = _PART.match(line.strip())
        if m:
            part = m.group(1).upper()
            continue
        if _HEADING.match(line):
            part = "overview" if "overview" in line.lower() else None
            continue
        if part == "overview":
            overview.append(line)
            continue
        if part in ("A", "B") and line.strip().lower() == NO_STEPS_MARKER:
            empty.append(part)
            continue
        step = _STEP.match(line)
        if step is None or part not in ("A", "B"):
            continue
        step_id, action = step.groups()
        deps: tuple[str, ...] = ()
        d = _DEPENDS.search(action)
        if d:
            deps = tuple(x.strip() for x in d.group(1).split(","))
            action = action[: d.start()].rstrip()
        plan.steps.append(PlanStep(step_id, part, action, _files_in(action, known), deps))
    plan.overview = "\n".join(overview).strip()
    plan.explicit_empty = tuple(empty)
    return plan


def _files_in(action: str, known: Sequence[str]) -> tuple[str, ...]:
    found = []
    for name in known:
        if re.search(r"(?<![\w./-])" + re.escape(name) + r"(?![\w/-])", action):
            if not any(name in other for other in found):
                found.append(name)
    return tuple(sorted(found))


def lint_plan(plan: Plan, project: Project,
              file_deps: Mapping[str, Iterable[str]] | None = None) -> list[str]:
    """Structural plan checks.

    Steps are numbered per part, Part A precedes Part B, declared
    dependencies point at earlier steps, every source file appears in a Part A
    step and every test file in a Part B step, an empty part carries the
    explicit marker, and files in one dependency cycle share a step.
    """
    problems = []
    seen: list[str] = []
    in_b = False
    for step in plan.steps:
        if step.id in seen:
            problems.append(f"duplicate step id {step.id}")
        if step.id[0] != step.part:
            problems.append(f"step {step.id} is listed under Part {step.part}")
        if step.part == "B":
            in_b = True
        elif in_b:
            problems.append(f"Part A step {step.id} comes after a Part B step")
        problems += [f"step {step.id} depends on {d}, which is not an earlier step"
                     for d in step.depends_on if d not in seen]
        if not step.files:
            problems.append(f"step {step.id} names no project file")
        seen.append(step.id)
    for part in ("A", "B"):
        if not plan.part(part) and part not in plan.explicit_empty:
            problems.append(f"Part {part} has no steps and no explicit '{NO_STEPS_MARKER}' marker")
    in_a = {f for s in plan.part("A") for f in s.files}
    in_b_files = {f for s in plan.part("B") for f in s.files}
    problems += [f"source file {f} is in no Part A step" for f in project.source_files
                 if f not in in_a]
    problems += [f"test file {f} is in no Part B step" for f in project.test_files
                 if f not in in_b_files]
    if file_deps:
        from repotrans.pipeline.deps import cycles

        step_of = {}
        for step in plan.part("A"):
            for f in step.files:
                step_of.setdefault(f, step.id)
        for group in cycles(file_deps):
            ids = {step_of.get(f) for f in group}
            if len(ids) > 1:
                problems.append(f"files {', '.join(group)} depend on each other "
                                f"but are split across steps")
    return problems


def suggest_plan(project: Project, groups: Sequence[Sequence[str]], overview: str = "") -> Plan:
    """Part A from the bottom-up source groups, then one Part B step per test file."""
    steps = [PlanStep(f"A{i}", "A", "Translate " + ", ".join(g), tuple(sorted(g)))
             for i, g in enumerate(groups, 1)]
    steps += [PlanStep(f"B{i}", "B", f"Translate {f}", (f,))
              for i, f in enumerate(project.test_files, 1)]
    return Plan(overview, steps, tuple(p for p in "AB" if not any(s.part == p for s in steps)))


def plan_order_warnings(plan: Plan, file_deps: Mapping[str, Iterable[str]]) -> list[str]:
    """Part A steps translated before a file they depend on (advisory only)."""
    position = {}
    for index, step in enumerate(plan.part("A")):
        for f in step.files:
            position.setdefault(f, index)
    out = []
    for f, deps in sorted(file_deps.items()):
        for d in sorted(deps):
            if f in position and d in position and position[d] > position[f]:
                out.append(f"{f} is planned before its dependency {d}")
    return out
