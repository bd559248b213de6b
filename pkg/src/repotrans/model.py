"""Shared domain types: projects, fragments, budgets and cost accounting."""

from __future__ import annotations

import fnmatch
import os
import re
import string
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path, PurePosixPath

AGENTS = ("analyzer", "planner", "translator", "validator")
FRAGMENT_KINDS = ("function", "method", "class", "struct", "interface", "global")
PLACEHOLDERS = frozenset({"root", "file", "filter"})
RESULT_FORMATS = ("junit", "go-test-json", "libtest-json")

_LANG_ID_RE = re.compile(r"^[a-z][a-z0-9_+-]*$")
_DOLLAR_QUANTUM = Decimal("0.000001")

# Directories never considered part of a project snapshot.
IGNORED_DIRS = frozenset(
    {".git", ".hg", ".svn", "__pycache__", "node_modules", ".pytest_cache",
     ".mypy_cache", ".venv", "venv", ".repotrans", ".coverage_data"}
)


class ModelError(ValueError):
    """A domain value violates one of its invariants."""


class EmptyProjectError(ModelError):
    pass


class UnknownAgentError(ModelError):
    pass


@dataclass(frozen=True)
class CommentSyntax:
    line: str | None = None
    block_start: str | None = None
    block_end: str | None = None


def template_fields(template: Sequence[str]) -> set[str]:
    names: set[str] = set()
    for part in template:
        for _, name, _, _ in string.Formatter().parse(part):
            if name is not None:
                names.add(name)
    return names


def render_command(template: Sequence[str], **values: str | Sequence[str] | None) -> list[str]:
    """Substitute placeholders into an argv template.

    An element referring to a placeholder whose value is ``None`` is dropped,
    which is how optional arguments such as ``-k{filter}`` are expressed. A
    list value expands an element into one argument per item.
    """
    argv = []
    for part in template:
        names = template_fields([part])
        if any(values.get(n) is None for n in names):
            continue
        lists = [n for n in names if not isinstance(values[n], str)]
        if not lists:
            argv.append(part.format(**{n: values[n] for n in names}))
            continue
        if len(names) > 1:
            raise ModelError(f"list value for {lists[0]!r} must fill its element alone: {part!r}")
        argv.extend(part.format(**{lists[0]: item}) for item in values[lists[0]])
    return argv


@dataclass(frozen=True)
class LanguageProfile:
    """Everything the pipeline needs to know about one programming language."""

    language: str
    file_extensions: frozenset[str]
    lsp_launch: tuple[str, ...] = ()
    build_command: tuple[str, ...] = ()
    test_command: tuple[str, ...] = ()
    coverage_command: tuple[str, ...] = ()
    stub_markers: tuple[str, ...] = ()
    comment_syntax: CommentSyntax = CommentSyntax()
    result_format: str = "junit"
    results_path: str | None = None
    test_scope: str = "project"
    lsp_language_id: str | None = None
    identifier_pattern: str = r"^[A-Za-z_][A-Za-z0-9_]*$"
    reserved_words: frozenset[str] = frozenset()
    manifest_names: tuple[str, ...] = ()
    env: Mapping[str, str] = field(default_factory=dict)
    diagnostic_pattern: str = (
        r"^(?P<file>[^:\s][^:]*):(?P<line>\d+):(?:(?P<column>\d+):)?\s*"
        r"(?P<severity>error|warning|info|note)?[^:]*:?\s*(?P<message>.*)$"
    )

    def __post_init__(self):
        if not _LANG_ID_RE.match(self.language):
            raise ModelError(f"invalid language id {self.language!r}")
        if not self.file_extensions:
            raise ModelError(f"{self.language}: file_extensions must be nonempty")
        for name in ("lsp_launch", "build_command", "test_command", "coverage_command"):
            unknown = template_fields(getattr(self, name)) - PLACEHOLDERS
            if unknown:
                raise ModelError(
                    f"{self.language}: {name} uses undeclared placeholders {sorted(unknown)}"
                )
        if self.result_format not in RESULT_FORMATS:
            raise ModelError(f"{self.language}: unknown result_format {self.result_format!r}")
        if self.test_scope not in ("project", "file"):
            raise ModelError(f"{self.language}: test_scope must be 'project' or 'file'")

    @property
    def prefix(self) -> str:
        """Short tag used in name mappings, e.g. ``go`` or ``rs``."""
        return min(self.file_extensions, key=lambda e: (len(e), e)).lstrip(".")

    def owns(self, path: str) -> bool:
        return any(path.endswith(ext) for ext in self.file_extensions)

    def is_identifier(self, name: str) -> bool:
        return bool(re.match(self.identifier_pattern, name)) and name not in self.reserved_words


@dataclass(frozen=True)
class TestConventions:
    file_globs: tuple[str, ...] = ()
    directories: tuple[str, ...] = ()

    def is_test(self, relpath: str) -> bool:
        parts = PurePosixPath(relpath).parts
        if any(d in self.directories for d in parts[:-1]):
            return True
        name = parts[-1]
        return any(fnmatch.fnmatchcase(name, g) for g in self.file_globs)


@dataclass(frozen=True)
class Project:
    root: Path
    language: str
    source_files: tuple[str, ...]
    test_files: tuple[str, ...]
    dependency_manifests: tuple[str, ...] = ()

    def __post_init__(self):
        overlap = set(self.source_files) & set(self.test_files)
        if overlap:
            raise ModelError(f"files listed as both source and test: {sorted(overlap)}")
        for rel in (*self.source_files, *self.test_files, *self.dependency_manifests):
            if normalize_relpath(rel) != rel:
                raise ModelError(f"path is not normalized: {rel!r}")
            if not (self.root / rel).is_file():
                raise ModelError(f"listed path does not exist: {rel}")

    @property
    def files(self) -> tuple[str, ...]:
        return tuple(sorted((*self.source_files, *self.test_files)))


def normalize_relpath(path: str | os.PathLike) -> str:
    p = PurePosixPath(str(path).replace(os.sep, "/"))
    parts = [s for s in p.parts if s not in ("", ".")]
    if not parts or ".." in parts or p.is_absolute():
        raise ModelError(f"not a root-relative path: {path!r}")
    return "/".join(parts)


def walk_files(root: Path) -> list[str]:
    out = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = [d for d in dirnames if d not in IGNORED_DIRS]
        for name in filenames:
            out.append(normalize_relpath(os.path.relpath(os.path.join(dirpath, name), root)))
    return sorted(out)


def discover_project(
    root: str | os.PathLike,
    profile: LanguageProfile,
    conventions: TestConventions = TestConventions(),
    overrides: Mapping[str, Iterable[str]] | None = None,
) -> Project:
    """Partition the files under ``root`` into sources, tests and manifests."""
    root = Path(root).resolve()
    if not root.is_dir():
        raise ModelError(f"project root does not exist: {root}")
    overrides = overrides or {}
    everything = walk_files(root)
    code = [p for p in everything if profile.owns(p)]
    if "test_files" in overrides:
        tests = sorted(normalize_relpath(p) for p in overrides["test_files"])
    else:
        tests = [p for p in code if conventions.is_test(p)]
    if "source_files" in overrides:
        sources = sorted(normalize_relpath(p) for p in overrides["source_files"])
    else:
        sources = [p for p in code if p not in set(tests)]
    manifests = sorted(
        normalize_relpath(p) for p in overrides.get(
            "dependency_manifests",
            [p for p in everything if PurePosixPath(p).name in profile.manifest_names],
        )
    )
    if not sources and not tests:
        raise EmptyProjectError(f"no {profile.language} files under {root}")
    return Project(root, profile.language, tuple(sources), tuple(tests), tuple(manifests))


@dataclass(frozen=True, order=True)
class Fragment:
    file: str
    qualified_name: str
    kind: str = "function"
    span: tuple[int, int] = (1, 1)

    def __post_init__(self):
        if not self.qualified_name:
            raise ModelError("fragment qualified_name must be nonempty")
        if self.kind not in FRAGMENT_KINDS:
            raise ModelError(f"unknown fragment kind {self.kind!r}")
        start, end = self.span
        if not 1 <= start <= end:
            raise ModelError(f"bad span {self.span} for {self.file}:{self.qualified_name}")

    @property
    def identity(self) -> str:
        return fragment_identity(self)

    @property
    def simple_name(self) -> str:
        return self.qualified_name.rsplit(".", 1)[-1]


def fragment_identity(f: Fragment) -> str:
    return f"{f.file}:{f.qualified_name}"


def parse_identity(identity: str) -> tuple[str, str]:
    # Qualified names are dotted, so the last colon separates the two halves.
    file, sep, name = identity.rpartition(":")
    if not sep or not file or not name:
        raise ModelError(f"malformed fragment identity {identity!r}")
    return file, name


@dataclass(frozen=True)
class RunBudget:
    agent_timeout: float = 5000.0
    max_iterations: int = 5

    def __post_init__(self):
        if not self.agent_timeout > 0:
            raise ModelError("agent_timeout must be positive")
        if self.max_iterations < 1:
            raise ModelError("max_iterations must be at least 1")


@dataclass(frozen=True)
class RateTable:
    """Dollar price per token; zero rates disable cost reporting."""

    input: Decimal = Decimal(0)
    output: Decimal = Decimal(0)

    def price(self, in_tok: int, out_tok: int) -> Decimal:
        return (in_tok * self.input + out_tok * self.output).quantize(
            _DOLLAR_QUANTUM, rounding=ROUND_HALF_EVEN
        )


@dataclass(frozen=True)
class AgentCost:
    input_tokens: int = 0
    output_tokens: int = 0
    wall_seconds: float = 0.0
    dollars: Decimal = Decimal("0.000000")


@dataclass(frozen=True)
class CostLedger:
    rates: RateTable = RateTable()
    per_agent: Mapping[str, AgentCost] = field(default_factory=dict)

    @property
    def input_tokens(self) -> int:
        return sum(c.input_tokens for c in self.per_agent.values())

    @property
    def output_tokens(self) -> int:
        return sum(c.output_tokens for c in self.per_agent.values())

    @property
    def wall_seconds(self) -> float:
        return sum(c.wall_seconds for c in self.per_agent.values())

    @property
    def dollars(self) -> Decimal:
        return self.rates.price(self.input_tokens, self.output_tokens)

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_seconds": self.wall_seconds,
            "dollars": str(self.dollars),
            "rates": {"input": str(self.rates.input), "output": str(self.rates.output)},
            "per_agent": {
                name: {
                    "input_tokens": c.input_tokens,
                    "output_tokens": c.output_tokens,
                    "wall_seconds": c.wall_seconds,
                    "dollars": str(c.dollars),
                }
                for name, c in sorted(self.per_agent.items())
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> CostLedger:
        rates = RateTable(Decimal(data["rates"]["input"]), Decimal(data["rates"]["output"]))
        per_agent = {
            name: AgentCost(v["input_tokens"], v["output_tokens"], v["wall_seconds"],
                            Decimal(v["dollars"]))
            for name, v in data["per_agent"].items()
        }
        return cls(rates, per_agent)


def ledger_add(
    ledger: CostLedger, agent: str, in_tok: int, out_tok: int, secs: float
) -> CostLedger:
    """Return a new ledger with one usage delta folded into ``agent``'s entry."""
    if agent not in AGENTS:
        raise UnknownAgentError(f"unknown agent {agent!r}")
    if in_tok < 0 or out_tok < 0 or secs < 0:
        raise ModelError("ledger deltas must be nonnegative")
    old = ledger.per_agent.get(agent, AgentCost())
    i, o = old.input_tokens + in_tok, old.output_tokens + out_tok
    entry = AgentCost(i, o, old.wall_seconds + secs, ledger.rates.price(i, o))
    return replace(ledger, per_agent={**ledger.per_agent, agent: entry})
