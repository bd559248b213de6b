"""The normalized line-coverage format shared by every coverage adapter.

A text file, one record per line::

    repotrans-coverage 1
    file src/parser.py
    exec 1-4,7,9-12
    hit 1-3,9

``exec`` lists executable lines and ``hit`` the covered ones; both are
comma-separated ranges of 1-based line numbers. A ``file`` record starts a
new block; blank lines and lines starting with ``#`` are ignored.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from repotrans.model import Fragment

MAGIC = "repotrans-coverage"
VERSION = 1


class CoverageError(ValueError):
    pass


@dataclass(frozen=True)
class FileCoverage:
    executable: frozenset[int]
    covered: frozenset[int]

    def __post_init__(self):
        if not self.covered <= self.executable:
            extra = sorted(self.covered - self.executable)[:5]
            raise CoverageError(f"covered lines {extra} are not executable")


@dataclass(frozen=True)
class CoverageData:
    files: Mapping[str, FileCoverage] = field(default_factory=dict)

    def percent(self, only: Iterable[str] | None = None) -> float | None:
        """Covered share of executable lines, in percent, over ``only`` (default all)."""
        names = self.files if only is None else [f for f in only if f in self.files]
        total = sum(len(self.files[f].executable) for f in names)
        if total == 0:
            return None
        hit = sum(len(self.files[f].covered) for f in names)
        return round(100.0 * hit / total, 2)

    def fragment_covered(self, fragment: Fragment) -> bool:
        """True when a covered line falls in the fragment's body.

        The declaration line itself does not count when the fragment spans
        several lines: interpreters execute ``def`` lines at import time.
        """
        cov = self.files.get(fragment.file)
        if cov is None:
            return False
        start, end = fragment.span
        if end > start:
            start += 1
        return any(start <= line <= end for line in cov.covered)

    def merged(self, other: CoverageData) -> CoverageData:
        files = dict(self.files)
        for name, cov in other.files.items():
            if name in files:
                old = files[name]
                files[name] = FileCoverage(old.executable | cov.executable, old.covered | cov.covered)
            else:
                files[name] = cov
        return CoverageData(files)


def format_ranges(lines: Iterable[int]) -> str:
    out, run = [], []
    for n in sorted(set(lines)):
        if run and n == run[-1] + 1:
            run.append(n)
            continue
        if run:
            out.append(_run(run))
        run = [n]
    if run:
        out.append(_run(run))
    return ",".join(out)


def _run(run: list[int]) -> str:
    return str(run[0]) if len(run) == 1 else f"{run[0]}-{run[-1]}"


def parse_ranges(text: str) -> frozenset[int]:
    out: set[int] = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        lo, sep, hi = part.partition("-")
        try:
            a, b = int(lo), int(hi) if sep else int(lo)
        except ValueError:
            raise CoverageError(f"bad line range {part!r}") from None
        if a < 1 or b < a:
            raise CoverageError(f"bad line range {part!r}")
        out.update(range(a, b + 1))
    return frozenset(out)


def dumps(data: CoverageData) -> str:
    lines = [f"{MAGIC} {VERSION}"]
    for name in sorted(data.files):
        cov = data.files[name]
        lines += [f"file {name}", f"exec {format_ranges(cov.executable)}",
                  f"hit {format_ranges(cov.covered)}"]
    return "\n".join(lines) + "\n"


def loads(text: str) -> CoverageData:
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows or rows[0].split() != [MAGIC, str(VERSION)]:
        raise CoverageError(f"missing '{MAGIC} {VERSION}' header")
    files: dict[str, FileCoverage] = {}
    current, executable, covered = None, frozenset(), frozenset()
    for row in rows[1:] + ["file "]:
        key, _, value = row.partition(" ")
        if key == "file":
            if current is not None:
                if current in files:
                    raise CoverageError(f"duplicate block for {current}")
                files[current] = FileCoverage(executable, covered)
            current, executable, covered = value.strip() or None, frozenset(), frozenset()
        elif current is None:
            raise CoverageError(f"record before any file block: {row!r}")
        elif key == "exec":
            executable = parse_ranges(value)
        elif key == "hit":
            covered = parse_ranges(value)
        else:
            raise CoverageError(f"unknown record {key!r}")
    return CoverageData(files)


def coverage_gap(fragments: Iterable[Fragment], cov: CoverageData,
                 known_files: Iterable[str] | None = None) -> list[str]:
    """Identities of fragments with no covered line, in sorted order.

    ``known_files`` defaults to the fragments' files; coverage for any other
    path is an error.
    """
    fragments = list(fragments)
    known = set(known_files) if known_files is not None else {f.file for f in fragments}
    unknown = sorted(set(cov.files) - known)
    if unknown:
        raise CoverageError(f"coverage refers to files outside the project: {unknown}")
    return sorted(f.identity for f in fragments if not cov.fragment_covered(f))
