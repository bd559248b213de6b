"""File-level dependency graphs and the bottom-up translation order derived from them."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping
from pathlib import Path

import networkx as nx

from repotrans.model import Fragment, Project
from repotrans.toolserver.server import CapabilityUnavailable, ToolError, ToolServer
from repotrans.toolserver.skeleton import file_structure, skeleton_fragments
from repotrans.treesitter import GRAMMARS

log = logging.getLogger(__name__)

# Members are reached through their owner, so only top-level names make edges.
TOP_LEVEL_KINDS = ("function", "class", "interface", "struct", "global")


def project_fragments(project: Project, files: Iterable[str] | None = None,
                      server: ToolServer | None = None) -> list[Fragment]:
    """Fragments of the given files (default: all project files), by tree-sitter."""
    out = []
    for rel in project.files if files is None else files:
        if server is not None:
            record = server.get_file_structure(rel)
        else:
            if project.language not in GRAMMARS:
                continue
            record = file_structure((Path(project.root) / rel).read_bytes(), project.language, rel)
        out += skeleton_fragments(record)
    return sorted(out, key=lambda f: (f.file, f.span, f.qualified_name))


def _name_column(line_text: str, name: str) -> int | None:
    m = re.search(r"(?<![\w$])" + re.escape(name) + r"(?![\w$])", line_text)
    return m.start() + 1 if m else None


def dependency_graph(project: Project, files: Iterable[str],
                     server: ToolServer | None = None,
                     fragments: Iterable[Fragment] | None = None) -> dict[str, set[str]]:
    """``file -> files it uses``, restricted to ``files``.

    Edges come from ``references`` on each top-level declaration. When no
    language server is available the references are approximated by a
    word-boundary search for the declared name.
    """
    files = sorted(set(files))
    deps: dict[str, set[str]] = {f: set() for f in files}
    frags = [f for f in (fragments if fragments is not None else project_fragments(project, files))
             if f.file in deps and f.kind in TOP_LEVEL_KINDS]
    texts = {f: (Path(project.root) / f).read_text(encoding="utf-8", errors="replace")
             for f in files}
    use_lsp = server is not None
    for frag in frags:
        users = None
        if use_lsp:
            users = _lsp_users(server, frag, texts[frag.file])
            if users is None:
                use_lsp = False
        if users is None:
            users = {f for f, text in texts.items()
                     if f != frag.file and _name_column(text, frag.simple_name)}
        for user in users:
            if user in deps and user != frag.file:
                deps[user].add(frag.file)
    return deps


def _lsp_users(server: ToolServer, frag: Fragment, text: str) -> set[str] | None:
    line_no = frag.span[0]
    lines = text.splitlines()
    column = _name_column(lines[line_no - 1], frag.simple_name) if line_no <= len(lines) else None
    if column is None:
        return set()
    try:
        found = server.references(frag.file, line_no, column)
    except CapabilityUnavailable:
        log.info("no language server for %s; using textual references", frag.file)
        return None
    except ToolError:
        return set()
    return {loc["file"] for loc in found}


def cycles(file_deps: Mapping[str, Iterable[str]]) -> list[tuple[str, ...]]:
    """Strongly connected groups of two or more files, each sorted."""
    graph = _graph(file_deps)
    groups = [tuple(sorted(c)) for c in nx.strongly_connected_components(graph) if len(c) > 1]
    return sorted(groups)


def _graph(file_deps: Mapping[str, Iterable[str]]) -> nx.DiGraph:
    graph = nx.DiGraph()
    graph.add_nodes_from(file_deps)
    for f, deps in file_deps.items():
        graph.add_edges_from((f, d) for d in deps if d != f)
    return graph


def bottom_up_groups(file_deps: Mapping[str, Iterable[str]]) -> list[tuple[str, ...]]:
    """Translation order: dependencies first, cycles merged, ties by file name."""
    graph = _graph(file_deps)
    condensed = nx.condensation(graph)
    members = {n: tuple(sorted(condensed.nodes[n]["members"])) for n in condensed}
    # Edges point from user to dependency, so reverse for dependencies-first.
    order = nx.lexicographical_topological_sort(condensed.reverse(copy=False),
                                                key=lambda n: members[n])
    return [members[n] for n in order]


def neighbours(file_deps: Mapping[str, Iterable[str]], files: Iterable[str]) -> set[str]:
    """Direct dependencies and dependents of ``files``."""
    wanted = set(files)
    out = set()
    for f, deps in file_deps.items():
        deps = set(deps)
        if f in wanted:
            out |= deps
        if deps & wanted:
            out.add(f)
    return out - wanted
