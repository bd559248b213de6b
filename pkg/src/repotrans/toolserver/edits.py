"""Batch text edits applied all-or-nothing.

All ranges in a batch refer to the original file; the end column is
exclusive. Positions are 1-based lines and 1-based code-point columns.
"""

from __future__ import annotations

import os
import re
import tempfile
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

_NEWLINE = re.compile(r"\r\n|\r|\n")


class EditError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Position:
    line: int
    column: int

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise EditError(f"positions are 1-based, got {self.line}:{self.column}")

    @classmethod
    def from_dict(cls, d) -> Position:
        return cls(int(d["line"]), int(d["column"]))

    def to_dict(self) -> dict:
        return {"line": self.line, "column": self.column}


@dataclass(frozen=True)
class TextEdit:
    start: Position
    end: Position
    text: str

    def __post_init__(self):
        if self.end < self.start:
            raise EditError(f"edit range ends before it starts: {self.start} > {self.end}")

    @classmethod
    def from_dict(cls, d) -> TextEdit:
        rng = d["range"]
        return cls(Position.from_dict(rng["start"]), Position.from_dict(rng["end"]),
                   d.get("text", d.get("newText", "")))

    def to_dict(self) -> dict:
        return {"range": {"start": self.start.to_dict(), "end": self.end.to_dict()},
                "text": self.text}


def line_starts(text: str) -> list[tuple[int, int]]:
    """(offset of line start, length of line content) for each line."""
    out, pos = [], 0
    for m in _NEWLINE.finditer(text):
        out.append((pos, m.start() - pos))
        pos = m.end()
    out.append((pos, len(text) - pos))
    return out


def offset_of(lines: list[tuple[int, int]], p: Position) -> int:
    if p.line > len(lines):
        raise EditError(f"line {p.line} is past the end of the file ({len(lines)} lines)")
    start, length = lines[p.line - 1]
    if p.column > length + 1:
        raise EditError(f"column {p.column} is past the end of line {p.line} (length {length})")
    return start + p.column - 1


def apply_edits(text: str, edits: Sequence[TextEdit],
                on_apply: Callable[[int], None] | None = None) -> str:
    """Return ``text`` with every edit applied, or raise without side effects."""
    lines = line_starts(text)
    spans = []
    for index, edit in enumerate(edits):
        spans.append((offset_of(lines, edit.start), offset_of(lines, edit.end), index))
    spans.sort()
    for (s1, e1, i1), (s2, e2, i2) in zip(spans, spans[1:]):
        if e1 > s2:
            raise EditError(f"edits {i1} and {i2} overlap")
    # Apply from the bottom up so earlier offsets stay valid.
    result = text
    for start, end, index in reversed(spans):
        if on_apply is not None:
            on_apply(index)
        result = result[:start] + edits[index].text + result[end:]
    return result


def read_text(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as f:
        return f.read()


def atomic_write(path: Path, data: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        if path.exists():
            os.chmod(tmp, path.stat().st_mode & 0o7777)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def edit_file(path: Path, edits: Sequence[TextEdit],
              on_apply: Callable[[int], None] | None = None) -> dict:
    if not edits:
        if not Path(path).is_file():
            raise FileNotFoundError(path)
        return {"applied": 0}
    original = read_text(path)
    updated = apply_edits(original, edits, on_apply)
    atomic_write(path, updated)
    return {"applied": len(edits)}


def apply_workspace_edits(batches: dict[Path, Sequence[TextEdit]]) -> int:
    """Apply edits to several files; either every file changes or none does."""
    staged = {}
    for path, edits in batches.items():
        staged[path] = (read_text(path), apply_edits(read_text(path), edits))
    written = []
    try:
        for path, (_, updated) in staged.items():
            atomic_write(path, updated)
            written.append(path)
    except BaseException:
        for path in written:
            atomic_write(path, staged[path][0])
        raise
    return sum(len(e) for e in batches.values())
