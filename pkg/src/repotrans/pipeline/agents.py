"""Agent sessions and the tools they may call.

Agents see three virtual roots: ``source/`` (a working copy of the source
project), ``target/`` (the translation) and ``docs/`` (the shared
documents). Every path an agent passes or receives is prefixed with one of
them. Writes are checked against the session's :class:`WriteScope`.
"""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

from repotrans.llm.gateway import AgentTimeout, Gateway, OfflineViolation, ToolCall
from repotrans.model import (
    LanguageProfile,
    ModelError,
    TestConventions,
    discover_project,
    normalize_relpath,
    walk_files,
)
from repotrans.toolserver import edits as edit_ops
from repotrans.toolserver.server import METHODS, ToolError, ToolServer, load_schema
from repotrans.validation import harness

log = logging.getLogger(__name__)

ROOTS = ("source", "target", "docs")
FETCH_LIMIT = 200_000
READ_LIMIT = 400_000
FILE_KEYS = ("file", "filepath")


class ToolFailure(Exception):
    """A tool call the agent made cannot be honoured; reported back to the agent."""


@dataclass(frozen=True)
class WriteScope:
    """Virtual paths a session may write.

    ``files`` may be created or modified, anything under a prefix in
    ``dirs`` likewise, and under ``new_under`` only files that do not exist
    yet may be created.
    """

    files: frozenset[str] = frozenset()
    dirs: tuple[str, ...] = ()
    new_under: tuple[str, ...] = ()

    def allows(self, vpath: str, exists: bool) -> bool:
        if vpath in self.files or any(vpath.startswith(d) for d in self.dirs):
            return True
        return not exists and any(vpath.startswith(d) for d in self.new_under)

    def describe(self) -> str:
        parts = sorted(self.files) + [d + "**" for d in self.dirs]
        parts += [d + "** (new files only)" for d in self.new_under]
        return ", ".join(parts) or "nothing"


READ_ONLY = WriteScope()


def _schema(properties: dict, required: list[str]) -> dict:
    return {"type": "object", "properties": properties, "required": required,
            "additionalProperties": False}


_STR = {"type": "string"}
_INT = {"type": "integer", "minimum": 1}

BUILTIN_TOOLS = {
    "list_files": ("List files under a virtual directory ('.' lists the roots).",
                   _schema({"path": _STR}, [])),
    "read_file": ("Read a file, optionally a 1-based inclusive line range.",
                  _schema({"path": _STR, "start_line": _INT, "end_line": _INT}, ["path"])),
    "write_file": ("Create or overwrite a file with the given content.",
                   _schema({"path": _STR, "content": _STR}, ["path", "content"])),
    "run_build": ("Build or syntax-check the project under a root ('source' or 'target').",
                  _schema({"root": _STR}, ["root"])),
    "run_tests": ("Run the test suite of a root, optionally filtered; returns outcomes.",
                  _schema({"root": _STR, "filter": _STR}, ["root"])),
    "web_fetch": ("Fetch a web page (library documentation); unavailable offline.",
                  _schema({"url": _STR}, ["url"])),
}


def tool_specs(names: tuple[str, ...] | None = None) -> list[dict]:
    """Tool schemas in the gateway's neutral shape (name, description, parameters)."""
    schema = load_schema()
    specs = []
    for name in METHODS:
        specs.append({"name": name, "description": schema["methods"][name]["description"]
                      + " File paths carry a virtual root prefix such as 'target/'.",
                      "parameters": schema["methods"][name]["params"]})
    specs += [{"name": n, "description": d, "parameters": p} for n, (d, p) in BUILTIN_TOOLS.items()]
    if names is not None:
        specs = [s for s in specs if s["name"] in names]
    return sorted(specs, key=lambda s: s["name"])


class Toolbox:
    """Executes tool calls against the run's virtual roots."""

    def __init__(self, roots: Mapping[str, Path], profiles: Mapping[str, LanguageProfile],
                 languages: Mapping[str, str], servers: Mapping[str, ToolServer],
                 *, conventions: Mapping | None = None, offline: bool = False,
                 fetch: Callable[[str], str] | None = None, timeout: float = 600.0):
        self.roots = {k: Path(v) for k, v in roots.items()}
        self.profiles = dict(profiles)
        self.languages = dict(languages)  # virtual root -> language id
        self.servers = dict(servers)
        self.conventions = dict(conventions or {})
        self.offline = offline
        self.fetch = fetch
        self.timeout = timeout
        self.scope = READ_ONLY
        self.written: list[str] = []

    # -- paths ------------------------------------------------------------------

    def resolve(self, vpath: str) -> tuple[str, str, Path]:
        """(root name, root-relative path, absolute path) of a virtual path."""
        try:
            rel = normalize_relpath(vpath)
        except ModelError as exc:
            raise ToolFailure(str(exc)) from None
        root, _, inner = rel.partition("/")
        if root not in self.roots:
            raise ToolFailure(f"path must start with one of {', '.join(r + '/' for r in ROOTS)}")
        return root, inner, self.roots[root] / inner if inner else self.roots[root]

    def _virtual(self, root: str, value):
        if isinstance(value, dict):
            return {k: (f"{root}/{v}" if k in FILE_KEYS and isinstance(v, str) else
                        self._virtual(root, v)) for k, v in value.items()}
        if isinstance(value, list):
            return [self._virtual(root, v) for v in value]
        return value

    def _check_write(self, vpath: str, exists: bool) -> None:
        if not self.scope.allows(vpath, exists):
            raise ToolFailure(f"{vpath} is outside this session's write scope "
                              f"({self.scope.describe()})")

    # -- dispatch ---------------------------------------------------------------

    def call(self, tool: str, args: dict):
        if not isinstance(args, dict):
            raise ToolFailure("tool arguments must be an object")
        handler = getattr(self, "tool_" + tool, None)
        if handler is not None:
            try:
                return handler(**args)
            except TypeError as exc:
                raise ToolFailure(f"bad arguments for {tool}: {exc}") from None
        if tool in METHODS:
            return self._server_call(tool, dict(args))
        raise ToolFailure(f"unknown tool {tool!r}")

    def _server_call(self, tool: str, args: dict):
        key = "file" if "file" in args else "root" if tool == "get_directory_tree" else None
        if key is None:
            root = next((r for r, lang in self.languages.items()
                         if lang == args.get("language")), "target")
            if "language" not in args:
                args["language"] = self.languages.get(root)
        else:
            given = args.get(key, ".")
            root, inner, path = self.resolve(given if given not in ("", ".") else "target")
            args[key] = inner or "."
            if tool in ("edit_file", "rename_symbol"):
                self._check_write(f"{root}/{inner}", path.exists())
        server = self.servers.get(root)
        if server is None:
            raise ToolFailure(f"no tool server for {root}/")
        try:
            result = server._invoke(tool, args)
        except ToolError as exc:
            raise ToolFailure(f"{type(exc).__name__}: {exc}") from None
        except Exception as exc:  # parameter binding errors and the like
            raise ToolFailure(str(exc)) from None
        if tool in ("edit_file",):
            self.written.append(f"{root}/{inner}")
        return self._virtual(root, result)

    # -- builtin tools ------------------------------------------------------------

    def tool_list_files(self, path: str = "."):
        if path in (".", "", "/"):
            return sorted(r + "/" for r in self.roots)
        root, inner, abs_path = self.resolve(path)
        if not abs_path.is_dir():
            raise ToolFailure(f"not a directory: {path}")
        prefix = f"{root}/{inner}/" if inner else f"{root}/"
        return [prefix + f for f in walk_files(abs_path)]

    def tool_read_file(self, path: str, start_line: int | None = None,
                       end_line: int | None = None):
        _, _, abs_path = self.resolve(path)
        if not abs_path.is_file():
            raise ToolFailure(f"file not found: {path}")
        text = abs_path.read_text(encoding="utf-8", errors="replace")
        if start_line is not None or end_line is not None:
            lines = text.splitlines(keepends=True)
            text = "".join(lines[(start_line or 1) - 1:end_line])
        if len(text) > READ_LIMIT:
            text = text[:READ_LIMIT] + "\n[truncated]"
        return text

    def tool_write_file(self, path: str, content: str):
        root, inner, abs_path = self.resolve(path)
        if not inner:
            raise ToolFailure("cannot write a root directory")
        self._check_write(f"{root}/{inner}", abs_path.exists())
        abs_path.parent.mkdir(parents=True, exist_ok=True)
        edit_ops.atomic_write(abs_path, content)
        server = self.servers.get(root)
        if server is not None:
            try:
                server._resync(abs_path)
            except Exception:  # noqa: BLE001 - the file is written either way
                log.debug("resync failed for %s", path, exc_info=True)
        self.written.append(f"{root}/{inner}")
        return {"path": f"{root}/{inner}", "bytes": len(content.encode("utf-8"))}

    def _project(self, root: str):
        if root not in self.languages:
            raise ToolFailure(f"no project under {root}/")
        lang = self.languages[root]
        try:
            project = discover_project(self.roots[root], self.profiles[lang],
                                       self.conventions.get(lang) or TestConventions())
        except ModelError as exc:
            raise ToolFailure(str(exc)) from None
        return project, self.profiles[lang]

    def tool_run_build(self, root: str):
        project, profile = self._project(root.strip("/"))
        try:
            built = harness.build(project, profile, harness.Runner(), self.timeout)
        except harness.HarnessError as exc:
            raise ToolFailure(str(exc)) from None
        return {"ok": built.ok, "diagnostics": built.diagnostics[:50],
                "output": built.payload[-4000:] if not built.ok else ""}

    def tool_run_tests(self, root: str, filter: str | None = None):
        project, profile = self._project(root.strip("/"))
        try:
            run = harness.run_tests(project, profile, filter, harness.Runner(), self.timeout,
                                    with_coverage=False)
        except harness.HarnessError as exc:
            raise ToolFailure(str(exc)) from None
        return {"counts": harness.counts(run.outcomes),
                "outcomes": [{"test_id": o.test_id, "status": o.status,
                              "failure": (o.failure_payload or "")[:4000] or None}
                             for o in sorted(run.outcomes, key=lambda o: o.test_id)]}

    def tool_web_fetch(self, url: str):
        if self.offline:
            raise ToolFailure(str(OfflineViolation("web_fetch is disabled in offline mode")))
        if self.fetch is None:
            raise ToolFailure("web_fetch is not configured")
        return self.fetch(url)[:FETCH_LIMIT]


def http_fetch(url: str) -> str:
    import httpx

    resp = httpx.get(url, follow_redirects=True, timeout=30.0)
    resp.raise_for_status()
    return resp.text


# -- sessions ---------------------------------------------------------------------------

# Tools whose results depend on the outside world; replay serves the recorded result.
EXTERNAL_TOOLS = frozenset({"web_fetch"})


@dataclass
class Session:
    """One agent invocation: a conversation plus tool execution until the model stops."""

    gateway: Gateway
    agent: str
    system_prompt: str
    toolbox: Toolbox
    deadline: float | None
    tools: list[dict] = field(default_factory=tool_specs)
    max_turns: int = 200
    messages: list[dict] = field(default_factory=list)
    clock: Callable[[], float] = time.monotonic

    def __post_init__(self):
        self.prompt_id = self.gateway.register_prompt(self.system_prompt)

    def check_deadline(self) -> None:
        if self.deadline is not None and self.clock() >= self.deadline:
            raise AgentTimeout(f"{self.agent} exceeded its time budget")

    def ask(self, text: str) -> str:
        """Send a user message and run tool calls until a turn has none; return its text."""
        self.messages.append({"role": "user", "content": text})
        for _ in range(self.max_turns):
            self.check_deadline()
            turn = self.gateway.complete(self.agent, self.prompt_id, self.messages,
                                         self.tools, self.deadline)
            calls = turn.tool_calls
            self.messages.append({"role": "assistant", "content": turn.text,
                                  "tool_calls": calls})
            if not calls:
                return turn.text
            results = []
            for call in calls:
                self.check_deadline()
                results.append(self._run_tool(call))
            self.messages.append({"role": "tool", "results": results})
        raise AgentTimeout(f"{self.agent} did not finish within {self.max_turns} turns")

    def _run_tool(self, call: dict) -> dict:
        tool, args = call["tool"], call.get("args") or {}
        started = self.clock()
        result, error = None, None
        recorded = self._recorded(tool) if tool in EXTERNAL_TOOLS else None
        if recorded is not None:
            result, error = recorded.result, recorded.error
        else:
            try:
                result = self.toolbox.call(tool, json.loads(json.dumps(args)))
            except ToolFailure as exc:
                error = str(exc)
        self.gateway.record_tool(self.agent, tool, args, result, error,
                                 self.clock() - started, call.get("id"))
        content = error if error is not None else (
            result if isinstance(result, str) else json.dumps(result, sort_keys=True,
                                                              ensure_ascii=False))
        return {"id": call.get("id"), "content": content, "is_error": error is not None}

    def _recorded(self, tool: str) -> ToolCall | None:
        events = getattr(self.gateway.backend, "events", None)
        seq = self.gateway.log.next_seq
        if events and 0 < seq <= len(events):
            old = events[seq - 1]
            if isinstance(old, ToolCall) and old.tool == tool:
                return old
        return None
