"""The eight static-analysis tools behind a JSON-RPC 2.0 endpoint."""

from __future__ import annotations

import inspect
import json
import logging
import queue
import re
import shutil
import socketserver
import threading
import time
from collections.abc import Mapping
from pathlib import Path
from typing import IO

from repotrans.model import Fragment, LanguageProfile, ModelError, normalize_relpath
from repotrans.toolserver import edits as edit_ops
from repotrans.toolserver.lsp import (
    LspClient,
    LspCrashed,
    LspError,
    from_lsp_character,
    path_to_uri,
    to_lsp_character,
    uri_to_path,
)
from repotrans.toolserver.skeleton import file_structure, skeleton_fragments
from repotrans.toolserver.tree import build_tree, render_tree
from repotrans.treesitter import GRAMMARS

log = logging.getLogger(__name__)

METHODS = ("definition", "diagnostics", "edit_file", "hover", "references",
           "rename_symbol", "get_directory_tree", "get_file_structure")
MUTATING = frozenset({"edit_file", "rename_symbol"})
SCHEMA_VERSION = "1.0.0"
MAX_OPENED_FILES = 2000
SEVERITIES = {1: "error", 2: "warning", 3: "info", 4: "hint"}

PARSE_ERROR, INVALID_REQUEST, METHOD_NOT_FOUND, INVALID_PARAMS, INTERNAL_ERROR = (
    -32700, -32600, -32601, -32602, -32603)


class ToolError(Exception):
    code = -32000

    def __init__(self, message: str, data=None):
        super().__init__(message)
        self.data = data


class CapabilityUnavailable(ToolError):
    code = -32001


class UnresolvedSymbol(ToolError):
    code = -32002


class FileNotFound(ToolError):
    code = -32003


class InvalidEdit(ToolError):
    code = -32004


class SettleTimeout(ToolError):
    code = -32005


class RenameRejected(ToolError):
    code = -32006


class UnsupportedLanguage(ToolError):
    code = -32007


class InvalidParams(ToolError):
    code = INVALID_PARAMS


_WORD = re.compile(r"[A-Za-z0-9_$]+")


class ToolServer:
    """Tool implementations for one workspace.

    Language servers are started on first use and restarted after a crash,
    at most ``max_restarts`` times with exponential backoff.
    """

    def __init__(self, root, profiles: Mapping[str, LanguageProfile], *,
                 settle: float = 2.0, settle_cap: float = 30.0, max_restarts: int = 3,
                 backoff: float = 0.25, request_timeout: float = 30.0):
        self.root = Path(root).resolve()
        self.profiles = dict(profiles)
        self.settle = settle
        self.settle_cap = settle_cap
        self.max_restarts = max_restarts
        self.backoff = backoff
        self.request_timeout = request_timeout
        self._clients: dict[str, LspClient] = {}
        self._restarts: dict[str, int] = {}
        self._unavailable: dict[str, str] = {}
        self._lock = threading.RLock()

    # -- plumbing ---------------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            for client in self._clients.values():
                try:
                    client.close()
                except Exception:  # noqa: BLE001 - best effort on shutdown
                    log.debug("error closing language server", exc_info=True)
            self._clients.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _path(self, file: str) -> Path:
        try:
            rel = normalize_relpath(file)
        except ModelError as exc:
            raise FileNotFound(str(exc)) from None
        path = self.root / rel
        if not path.is_file():
            raise FileNotFound(f"file not found: {file}")
        return path

    def _rel(self, path: Path) -> str | None:
        try:
            return Path(path).resolve().relative_to(self.root).as_posix()
        except ValueError:
            return None

    def _profile_for(self, file: str) -> LanguageProfile:
        for profile in self.profiles.values():
            if profile.owns(file):
                return profile
        raise UnsupportedLanguage(f"no language profile owns {file}")

    def _client(self, profile: LanguageProfile) -> LspClient:
        lang = profile.language
        client = self._clients.get(lang)
        if client is not None and client.alive:
            return client
        if lang in self._unavailable:
            raise CapabilityUnavailable(self._unavailable[lang], {"language": lang})
        if not profile.lsp_launch or shutil.which(profile.lsp_launch[0]) is None:
            reason = f"language server for {lang} is not installed"
            self._unavailable[lang] = reason
            raise CapabilityUnavailable(reason, {"language": lang})
        if client is not None:
            # A previous instance died; this start counts as a restart.
            count = self._restarts.get(lang, 0)
            if count >= self.max_restarts:
                reason = f"language server for {lang} crashed {count + 1} times"
                self._unavailable[lang] = reason
                raise CapabilityUnavailable(reason, {"language": lang})
            self._restarts[lang] = count + 1
            time.sleep(self.backoff * (2 ** count))
            client.close(timeout=0.5)
        argv = [part.format(root=str(self.root)) for part in profile.lsp_launch]
        client = LspClient(argv, self.root, profile.lsp_language_id or lang, profile.env,
                           request_timeout=self.request_timeout)
        self._clients[lang] = client
        try:
            client.start()
        except (OSError, LspError) as exc:
            if not isinstance(exc, LspCrashed):
                reason = f"cannot start language server for {lang}: {exc}"
                self._unavailable[lang] = reason
                raise CapabilityUnavailable(reason, {"language": lang}) from None
            return self._client(profile)
        return client

    def _lsp_call(self, profile: LanguageProfile, fn):
        """Run ``fn(client)``, restarting the server if it dies underneath us."""
        while True:
            client = self._client(profile)
            try:
                return fn(client)
            except LspCrashed:
                log.warning("%s language server crashed", profile.language)
                continue

    def _open_workspace(self, client: LspClient, profile: LanguageProfile) -> None:
        """Open every file of the language so cross-file queries see the whole project.

        Some servers index the workspace lazily and answer references or
        rename only from the documents they have been shown.
        """
        from repotrans.model import walk_files

        owned = [rel for rel in walk_files(self.root) if profile.owns(rel)]
        for rel in owned[:MAX_OPENED_FILES]:
            client.sync_document(self.root / rel)

    def _lsp_position(self, path: Path, line: int, column: int) -> dict:
        lines = edit_ops.read_text(path).splitlines()
        if not 1 <= line <= max(len(lines), 1):
            raise InvalidParams(f"line {line} is outside {self._rel(path)}")
        text = lines[line - 1] if lines else ""
        return {"line": line - 1, "character": to_lsp_character(text, column)}

    def _from_lsp_location(self, uri: str, pos: dict) -> dict | None:
        path = uri_to_path(uri)
        rel = self._rel(path)
        if rel is None or not path.is_file():
            return None
        lines = edit_ops.read_text(path).splitlines()
        text = lines[pos["line"]] if pos["line"] < len(lines) else ""
        return {"file": rel, "line": pos["line"] + 1,
                "column": from_lsp_character(text, pos["character"])}

    def _fragment_at(self, file: str, line: int) -> Fragment | None:
        record = self.get_file_structure(file)
        containing = [f for f in skeleton_fragments(record) if f.span[0] <= line <= f.span[1]]
        if not containing:
            return None
        return min(containing, key=lambda f: (f.span[1] - f.span[0], -f.span[0]))

    def _location_result(self, loc: dict) -> dict:
        path = self.root / loc["file"]
        lines = edit_ops.read_text(path).splitlines(keepends=True)
        fragment = self._fragment_at(loc["file"], loc["line"])
        if fragment is None:
            word = _word_at(lines[loc["line"] - 1] if lines else "", loc["column"]) or "?"
            fragment = Fragment(loc["file"], word, "global", (loc["line"], loc["line"]))
        start, end = fragment.span
        return {
            "file": fragment.file, "qualified_name": fragment.qualified_name,
            "kind": fragment.kind, "span": [start, end],
            "line": loc["line"], "column": loc["column"],
            "text": "".join(lines[start - 1:end]),
        }

    # -- the eight tools -----------------------------------------------------

    def definition(self, symbol: str | None = None, file: str | None = None,
                   line: int | None = None, column: int | None = None,
                   language: str | None = None) -> dict:
        """Locate the defining construct of a symbol, by position or by name."""
        if symbol is None and (file is None or line is None or column is None):
            raise InvalidParams("definition needs either symbol or file/line/column")
        if symbol is None:
            path = self._path(file)
            profile = self._profile_for(file)

            def ask(client):
                uri = client.sync_document(path)
                return client.request("textDocument/definition", {
                    "textDocument": {"uri": uri},
                    "position": self._lsp_position(path, line, column)})

            raw = self._lsp_call(profile, ask)
            locations = _as_locations(raw)
            resolved = [self._from_lsp_location(u, r["start"]) for u, r in locations]
            resolved = sorted((r for r in resolved if r), key=lambda r: (r["file"], r["line"], r["column"]))
            if not resolved:
                raise UnresolvedSymbol(f"no definition found at {file}:{line}:{column}")
            return self._location_result(resolved[0])
        return self._definition_by_name(symbol, language)

    def _definition_by_name(self, symbol: str, language: str | None) -> dict:
        simple = symbol.rsplit(".", 1)[-1]
        profiles = [self.profiles[language]] if language else self._workspace_profiles()
        for profile in profiles:
            try:
                raw = self._lsp_call(profile, lambda c: c.request("workspace/symbol", {"query": simple}))
            except CapabilityUnavailable:
                raw = None
            if raw is None:
                hit = self._skeleton_lookup(symbol, profile)
                if hit is not None:
                    return hit
                continue
            matches = []
            for info in raw:
                name = info.get("name")
                container = info.get("containerName")
                qualified = f"{container}.{name}" if container else name
                if symbol not in (name, qualified):
                    continue
                loc = info.get("location", {})
                if "range" not in loc:
                    continue
                resolved = self._from_lsp_location(loc["uri"], loc["range"]["start"])
                if resolved is not None:
                    matches.append(resolved)
            if matches:
                matches.sort(key=lambda r: (r["file"], r["line"], r["column"]))
                return self._location_result(matches[0])
            hit = self._skeleton_lookup(symbol, profile)
            if hit is not None:
                return hit
        raise UnresolvedSymbol(f"symbol not found: {symbol}")

    def _skeleton_lookup(self, symbol: str, profile: LanguageProfile) -> dict | None:
        from repotrans.model import walk_files

        for rel in walk_files(self.root):
            if not profile.owns(rel) or profile.language not in GRAMMARS:
                continue
            for fragment in skeleton_fragments(self.get_file_structure(rel)):
                if symbol in (fragment.qualified_name, fragment.identity):
                    start = fragment.span[0]
                    line_text = edit_ops.read_text(self.root / rel).splitlines()[start - 1]
                    col = line_text.find(fragment.simple_name) + 1 or 1
                    return self._location_result({"file": rel, "line": start, "column": col})
        return None

    def _workspace_profiles(self) -> list[LanguageProfile]:
        from repotrans.model import walk_files

        counts = {}
        for rel in walk_files(self.root):
            for lang, profile in self.profiles.items():
                if profile.owns(rel):
                    counts[lang] = counts.get(lang, 0) + 1
        return [self.profiles[lang] for lang in sorted(counts, key=lambda k: (-counts[k], k))]

    def diagnostics(self, file: str) -> list[dict]:
        path = self._path(file)
        profile = self._profile_for(file)

        def ask(client):
            before = client.publish_count
            uri = path_to_uri(path)
            known = client.documents.get(uri)
            client.sync_document(path)
            unchanged = known is not None and client.documents[uri] == known
            since = before
            if unchanged and uri in client.diagnostics:
                since = client.diagnostics[uri][0] - 1
            return client.wait_for_diagnostics(uri, since, self.settle, self.settle_cap)

        raw = self._lsp_call(profile, ask)
        if raw is None:
            raise SettleTimeout(f"no diagnostics for {file} within {self.settle_cap}s")
        lines = edit_ops.read_text(path).splitlines()
        out = []
        for d in raw:
            rng = d["range"]
            out.append({
                "file": file,
                "range": {"start": _pos(lines, rng["start"]), "end": _pos(lines, rng["end"])},
                "severity": SEVERITIES.get(d.get("severity", 1), "error"),
                "message": d.get("message", ""),
                "source": d.get("source") or profile.language,
            })
        out.sort(key=lambda d: (d["range"]["start"]["line"], d["range"]["start"]["column"], d["message"]))
        return out

    def edit_file(self, file: str, edits: list) -> dict:
        path = self._path(file)
        try:
            batch = [edit_ops.TextEdit.from_dict(e) for e in edits]
            result = edit_ops.edit_file(path, batch)
        except (edit_ops.EditError, KeyError, TypeError) as exc:
            raise InvalidEdit(str(exc)) from None
        self._resync(path)
        return result

    def _resync(self, path: Path) -> None:
        for profile in self.profiles.values():
            client = self._clients.get(profile.language)
            if client is not None and client.alive and path_to_uri(path) in client.documents:
                try:
                    client.sync_document(path)
                except LspCrashed:
                    pass

    def hover(self, file: str, line: int, column: int) -> dict | None:
        path = self._path(file)
        profile = self._profile_for(file)

        def ask(client):
            uri = client.sync_document(path)
            return client.request("textDocument/hover", {
                "textDocument": {"uri": uri},
                "position": self._lsp_position(path, line, column)})

        raw = self._lsp_call(profile, ask)
        text = _render_hover(raw.get("contents") if raw else None)
        return {"text": text} if text else None

    def references(self, file: str, line: int, column: int,
                   include_declaration: bool = True) -> list[dict]:
        path = self._path(file)
        profile = self._profile_for(file)

        def ask(client):
            self._open_workspace(client, profile)
            uri = client.sync_document(path)
            return client.request("textDocument/references", {
                "textDocument": {"uri": uri},
                "position": self._lsp_position(path, line, column),
                "context": {"includeDeclaration": include_declaration}})

        raw = self._lsp_call(profile, ask) or []
        if not raw:
            raise UnresolvedSymbol(f"no symbol at {file}:{line}:{column}")
        out = [self._from_lsp_location(r["uri"], r["range"]["start"]) for r in raw]
        unique = {(r["file"], r["line"], r["column"]): r for r in out if r}
        return [unique[k] for k in sorted(unique)]

    def rename_symbol(self, file: str, line: int, column: int, new_name: str) -> dict:
        path = self._path(file)
        profile = self._profile_for(file)
        if not profile.is_identifier(new_name):
            raise RenameRejected(f"{new_name!r} is not a valid {profile.language} identifier")
        lines = edit_ops.read_text(path).splitlines()
        current = _word_at(lines[line - 1] if 0 < line <= len(lines) else "", column)
        if current == new_name:
            return {"files_changed": 0, "edits_applied": 0}

        def ask(client):
            self._open_workspace(client, profile)
            uri = client.sync_document(path)
            return client.request("textDocument/rename", {
                "textDocument": {"uri": uri},
                "position": self._lsp_position(path, line, column),
                "newName": new_name})

        try:
            raw = self._lsp_call(profile, ask)
        except LspError as exc:
            raise RenameRejected(str(exc)) from None
        if not raw:
            raise UnresolvedSymbol(f"nothing to rename at {file}:{line}:{column}")
        batches: dict[Path, list[edit_ops.TextEdit]] = {}
        for uri, lsp_edits in _workspace_edit_items(raw):
            target = uri_to_path(uri)
            if self._rel(target) is None:
                raise RenameRejected(f"rename would touch a file outside the workspace: {target}")
            text_lines = edit_ops.read_text(target).splitlines()
            batches.setdefault(target, []).extend(
                edit_ops.TextEdit(
                    edit_ops.Position(**_pos(text_lines, e["range"]["start"])),
                    edit_ops.Position(**_pos(text_lines, e["range"]["end"])),
                    e["newText"])
                for e in lsp_edits)
        try:
            applied = edit_ops.apply_workspace_edits(batches)
        except edit_ops.EditError as exc:
            raise RenameRejected(str(exc)) from None
        for target in batches:
            self._resync(target)
        return {"files_changed": len(batches), "edits_applied": applied}

    def get_directory_tree(self, root: str = ".", exclude: list | None = None) -> dict:
        base = self.root if root in (".", "") else self.root / normalize_relpath(root)
        try:
            node = build_tree(base, exclude or [])
        except OSError as exc:
            raise FileNotFound(str(exc)) from None
        return {"tree": node.to_dict(), "rendered": render_tree(node)}

    def get_file_structure(self, file: str) -> dict:
        path = self._path(file)
        profile = self._profile_for(file)
        if profile.language not in GRAMMARS:
            raise UnsupportedLanguage(f"no grammar for {profile.language}")
        return file_structure(path.read_bytes(), profile.language, normalize_relpath(file))

    # -- JSON-RPC --------------------------------------------------------------

    def handle(self, message) -> dict | list | None:
        """Process one decoded JSON-RPC message (or batch) and build the reply."""
        if isinstance(message, list):
            if not message:
                return _error(None, INVALID_REQUEST, "empty batch")
            replies = [r for r in (self.handle(m) for m in message) if r is not None]
            return replies or None
        if (not isinstance(message, dict) or message.get("jsonrpc") != "2.0"
                or not isinstance(message.get("method"), str)):
            return _error(message.get("id") if isinstance(message, dict) else None,
                          INVALID_REQUEST, "invalid request")
        msg_id = message.get("id")
        is_notification = "id" not in message
        try:
            result = self._dispatch(message["method"], message.get("params"))
        except _RpcError as exc:
            return None if is_notification else _error(msg_id, exc.code, str(exc), exc.data)
        except ToolError as exc:
            return None if is_notification else _error(msg_id, exc.code, str(exc), exc.data)
        except Exception as exc:  # noqa: BLE001 - surfaced to the client
            log.exception("internal error in %s", message["method"])
            return None if is_notification else _error(msg_id, INTERNAL_ERROR, str(exc))
        if is_notification:
            return None
        return {"jsonrpc": "2.0", "id": msg_id, "result": result}

    def _dispatch(self, method: str, params):
        if method in METHODS:
            return self._invoke(method, params)
        if method == "initialize":
            return {"protocolVersion": "2024-11-05", "serverInfo": {"name": "repotrans-tools",
                    "version": SCHEMA_VERSION}, "capabilities": {"tools": {}}}
        if method == "tools/list":
            return {"tools": tool_descriptions()}
        if method == "tools/call":
            params = params or {}
            name = params.get("name")
            if name not in METHODS:
                raise _RpcError(METHOD_NOT_FOUND, f"unknown tool {name!r}")
            try:
                result = self._invoke(name, params.get("arguments") or {})
            except ToolError as exc:
                return {"content": [{"type": "text", "text": str(exc)}], "isError": True}
            return {"content": [{"type": "text", "text": json.dumps(result)}], "isError": False}
        if method.startswith("notifications/"):
            return None
        raise _RpcError(METHOD_NOT_FOUND, f"method not found: {method}")

    def _invoke(self, method: str, params):
        fn = getattr(self, method)
        try:
            if isinstance(params, list):
                bound = inspect.signature(fn).bind(*params)
            else:
                bound = inspect.signature(fn).bind(**(params or {}))
        except TypeError as exc:
            raise _RpcError(INVALID_PARAMS, f"invalid params for {method}: {exc}") from None
        with self._lock:
            return fn(*bound.args, **bound.kwargs)


class _RpcError(Exception):
    def __init__(self, code: int, message: str, data=None):
        super().__init__(message)
        self.code = code
        self.data = data


def _error(msg_id, code: int, message: str, data=None) -> dict:
    err = {"code": code, "message": message}
    if data is not None:
        err["data"] = data
    return {"jsonrpc": "2.0", "id": msg_id, "error": err}


def _pos(lines: list[str], p: dict) -> dict:
    text = lines[p["line"]] if p["line"] < len(lines) else ""
    return {"line": p["line"] + 1, "column": from_lsp_character(text, p["character"])}


def _word_at(line_text: str, column: int) -> str | None:
    for m in _WORD.finditer(line_text):
        if m.start() <= column - 1 < m.end():
            return m.group()
    return None


def _as_locations(raw) -> list[tuple[str, dict]]:
    if raw is None:
        return []
    if isinstance(raw, dict):
        raw = [raw]
    out = []
    for loc in raw:
        if "targetUri" in loc:
            out.append((loc["targetUri"], loc.get("targetSelectionRange") or loc["targetRange"]))
        else:
            out.append((loc["uri"], loc["range"]))
    return out


def _workspace_edit_items(edit: dict):
    if edit.get("documentChanges"):
        for change in edit["documentChanges"]:
            if "textDocument" in change:
                yield change["textDocument"]["uri"], change["edits"]
            else:
                raise RenameRejected(f"unsupported resource operation {change.get('kind')!r}")
    for uri, edits in (edit.get("changes") or {}).items():
        yield uri, edits


def _render_hover(contents) -> str:
    if contents is None:
        return ""
    if isinstance(contents, list):
        return "\n".join(t for t in (_render_hover(c) for c in contents) if t)
    if isinstance(contents, dict):
        value = contents.get("value", "")
    else:
        value = str(contents)
    kept = [ln for ln in value.splitlines() if not ln.strip().startswith("```") and ln.strip() != "---"]
    return "\n".join(kept).strip()


def tool_descriptions() -> list[dict]:
    schema = load_schema()
    return [{"name": name, "description": schema["methods"][name]["description"],
             "inputSchema": schema["methods"][name]["params"]} for name in METHODS]


def load_schema() -> dict:
    from importlib import resources

    return json.loads(resources.files("repotrans.toolserver").joinpath("schema.json").read_text())


# -- transports ------------------------------------------------------------------

def _reply_line(server: ToolServer, line: str) -> str | None:
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        return json.dumps(_error(None, PARSE_ERROR, f"parse error: {exc}"))
    reply = server.handle(message)
    return None if reply is None else json.dumps(reply)


def serve_stdio(server: ToolServer, instream: IO[str], outstream: IO[str]) -> None:
    """Line-delimited JSON-RPC until EOF."""
    for line in instream:
        if not line.strip():
            continue
        reply = _reply_line(server, line)
        if reply is not None:
            outstream.write(reply + "\n")
            outstream.flush()


class _FifoWorker:
    """Executes requests from every connection strictly in arrival order."""

    def __init__(self, server: ToolServer):
        self.server = server
        self.jobs: queue.Queue = queue.Queue()
        self.thread = threading.Thread(target=self._run, daemon=True, name="toolserver-fifo")
        self.thread.start()

    def _run(self):
        while True:
            line, box, done = self.jobs.get()
            if line is None:
                return
            box.append(_reply_line(self.server, line))
            done.set()

    def submit(self, line: str) -> str | None:
        box, done = [], threading.Event()
        self.jobs.put((line, box, done))
        done.wait()
        return box[0]

    def stop(self):
        self.jobs.put((None, None, None))


def make_tcp_server(server: ToolServer, host: str = "127.0.0.1", port: int = 0):
    worker = _FifoWorker(server)

    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", "replace")
                if not line.strip():
                    continue
                reply = worker.submit(line)
                if reply is not None:
                    self.wfile.write((reply + "\n").encode("utf-8"))
                    self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

        def server_close(self):
            super().server_close()
            worker.stop()

    return Server((host, port), Handler)
