"""Directory tree snapshot and its pipe/indent rendering."""

from __future__ import annotations

import fnmatch
import os
from dataclasses import dataclass, field
from pathlib import Path

from repotrans.model import IGNORED_DIRS


@dataclass
class TreeNode:
    name: str
    kind: str  # "directory" or "file"
    children: list[TreeNode] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"name": self.name, "kind": self.kind}
        if self.kind == "directory":
            out["children"] = [c.to_dict() for c in self.children]
        return out


def _sort_key(name: str):
    # Case-folded first so "__init__.py" precedes "BasicParser.py".
    return name.casefold(), name


def _excluded(relpath: str, name: str, patterns) -> bool:
    return any(fnmatch.fnmatchcase(name, p) or fnmatch.fnmatchcase(relpath, p) for p in patterns)


def build_tree(root: str | os.PathLike, exclude=()) -> TreeNode:
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise OSError(f"unreadable directory: {root}")

    def visit(path: Path, rel: str) -> TreeNode:
        node = TreeNode(path.name, "directory")
        dirs, files = [], []
        for entry in os.scandir(path):
            child_rel = f"{rel}/{entry.name}" if rel else entry.name
            if _excluded(child_rel, entry.name, exclude):
                continue
            if entry.is_dir(follow_symlinks=False):
                if entry.name not in IGNORED_DIRS:
                    dirs.append((entry.name, child_rel))
            else:
                files.append(entry.name)
        for name, child_rel in sorted(dirs, key=lambda d: _sort_key(d[0])):
            node.children.append(visit(path / name, child_rel))
        for name in sorted(files, key=_sort_key):
            node.children.append(TreeNode(name, "file"))
        return node

    return visit(root.resolve(), "")


def render_tree(node: TreeNode) -> str:
    lines = []

    def emit(n: TreeNode, depth: int):
        label = n.name + ("/" if n.kind == "directory" else "")
        if depth == 0:
            lines.append(f"|-- {label}")
        else:
            lines.append("  " + "|   " * (depth - 1) + f"|-- {label}")
        for child in n.children:
            emit(child, depth + 1)

    emit(node, 0)
    return "\n".join(lines) + "\n"
