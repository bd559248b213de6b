"""Trajectory graphs and their five summary numbers.

Operational definitions (abstraction ``tool-file/1``):

* Only tool calls become graph events; model turns are the reasoning between
  them. Phase markers split the log into sessions, one per agent invocation.
* An event's node is ``(kind, tool, primary file)``. The primary file is the
  first of the ``file``, ``path`` or ``filepath`` arguments, or none.
* NC is the number of distinct nodes.
* TEC is the number of consecutive event pairs inside each session, so a
  session of n events contributes n - 1.
* SEC is the number of unordered pairs of distinct nodes that share a
  primary file.
* Every time a node recurs inside a session it closes one loop, whose
  length is the number of steps since that node's latest earlier occurrence.
  LC counts loops and ALL is their mean length (0 without loops).
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from itertools import combinations

from repotrans.llm.gateway import Event, PhaseMarker, ToolCall

ABSTRACTION = "tool-file/1"
FILE_ARGS = ("file", "path", "filepath")

NodeKey = tuple[str, str, "str | None"]


def node_key(event: ToolCall) -> NodeKey:
    args = event.args if isinstance(event.args, dict) else {}
    primary = next((args[k] for k in FILE_ARGS if isinstance(args.get(k), str)), None)
    return ("tool", event.tool, primary)


@dataclass
class TrajectoryGraph:
    nodes: list[NodeKey] = field(default_factory=list)
    temporal_edges: list[tuple[NodeKey, NodeKey]] = field(default_factory=list)
    structural_edges: list[tuple[NodeKey, NodeKey]] = field(default_factory=list)
    loops: list[tuple[NodeKey, int]] = field(default_factory=list)
    abstraction: str = ABSTRACTION


def sessions(events: Iterable[Event]) -> list[list[NodeKey]]:
    """Node sequences, one per phase-delimited session; empty sessions dropped."""
    out, current = [], []
    for event in events:
        if isinstance(event, PhaseMarker):
            if current:
                out.append(current)
            current = []
        elif isinstance(event, ToolCall):
            current.append(node_key(event))
    if current:
        out.append(current)
    return out


def build_trajectory_graph(events: Iterable[Event]) -> TrajectoryGraph:
    graph = TrajectoryGraph()
    seen: dict[NodeKey, None] = {}
    for seq in sessions(events):
        last_at: dict[NodeKey, int] = {}
        for i, node in enumerate(seq):
            seen.setdefault(node, None)
            if i:
                graph.temporal_edges.append((seq[i - 1], node))
            if node in last_at:
                graph.loops.append((node, i - last_at[node]))
            last_at[node] = i
    graph.nodes = list(seen)
    ordered = sorted(graph.nodes, key=repr)
    graph.structural_edges = [(a, b) for a, b in combinations(ordered, 2)
                              if a[2] is not None and a[2] == b[2]]
    return graph


def trajectory_metrics(graph: TrajectoryGraph) -> dict:
    lengths = [length for _, length in graph.loops]
    return {
        "NC": len(graph.nodes),
        "TEC": len(graph.temporal_edges),
        "SEC": len(graph.structural_edges),
        "LC": len(lengths),
        "ALL": sum(lengths) / len(lengths) if lengths else 0.0,
    }
