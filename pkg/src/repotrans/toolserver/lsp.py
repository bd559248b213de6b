"""Minimal Language Server Protocol client over a subprocess's stdio."""

from __future__ import annotations

import itertools
import json
import logging
import os
import subprocess
import threading
import time
from pathlib import Path
from urllib.parse import unquote, urlparse

log = logging.getLogger(__name__)


class LspError(RuntimeError):
    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code


class LspCrashed(LspError):
    pass


def path_to_uri(path: Path) -> str:
    return Path(path).resolve().as_uri()


def uri_to_path(uri: str) -> Path:
    return Path(unquote(urlparse(uri).path))


def utf16_len(s: str) -> int:
    return len(s.encode("utf-16-le")) // 2


def to_lsp_character(line_text: str, column: int) -> int:
    """1-based code-point column to 0-based UTF-16 offset."""
    return utf16_len(line_text[: column - 1])


def from_lsp_character(line_text: str, character: int) -> int:
    """0-based UTF-16 offset to 1-based code-point column."""
    units = 0
    for i, ch in enumerate(line_text):
        if units >= character:
            return i + 1
        units += 2 if ord(ch) > 0xFFFF else 1
    return len(line_text) + 1


class LspClient:
    """One running language server.

    A reader thread demultiplexes responses, answers the few server->client
    requests servers insist on, and records ``publishDiagnostics``.
    """

    def __init__(self, argv, root: Path, language_id: str, env=None,
                 request_timeout: float = 30.0):
        self.argv = list(argv)
        self.root = Path(root).resolve()
        self.language_id = language_id
        self.env = env
        self.request_timeout = request_timeout
        self.proc: subprocess.Popen | None = None
        self._ids = itertools.count(1)
        self._pending: dict[int, dict] = {}
        self._cond = threading.Condition()
        self._write_lock = threading.Lock()
        self._reader: threading.Thread | None = None
        self.diagnostics: dict[str, tuple[int, float, list]] = {}
        self._publish_count = 0
        self.documents: dict[str, tuple[int, str]] = {}
        self.capabilities: dict = {}

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> LspClient:
        env = {**os.environ, **(self.env or {})}
        self.proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, cwd=self.root, env=env,
        )
        self._reader = threading.Thread(target=self._read_loop, daemon=True,
                                        name=f"lsp-{self.language_id}")
        self._reader.start()
        result = self.request("initialize", {
            "processId": os.getpid(),
            "rootUri": path_to_uri(self.root),
            "rootPath": str(self.root),
            "workspaceFolders": [{"uri": path_to_uri(self.root), "name": self.root.name}],
            "capabilities": {
                "textDocument": {
                    "hover": {"contentFormat": ["markdown", "plaintext"]},
                    "publishDiagnostics": {"relatedInformation": False, "tagSupport": {"valueSet": [1, 2]}},
                    "definition": {"linkSupport": False},
                    "rename": {"prepareSupport": False},
                    "synchronization": {"didSave": True},
                },
                "workspace": {
                    "workspaceEdit": {"documentChanges": True},
                    "configuration": True,
                    "workspaceFolders": True,
                    "symbol": {},
                },
                "general": {"positionEncodings": ["utf-16"]},
            },
        })
        self.capabilities = (result or {}).get("capabilities", {})
        self.notify("initialized", {})
        return self

    @property
    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def close(self, timeout: float = 2.0) -> None:
        if self.proc is None:
            return
        if self.alive:
            try:
                self.request("shutdown", None, timeout=timeout)
                self.notify("exit", None)
            except LspError:
                pass
        try:
            self.proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass

    # -- wire -----------------------------------------------------------------

    def _send(self, message: dict) -> None:
        body = json.dumps(message).encode("utf-8")
        header = f"Content-Length: {len(body)}\r\n\r\n".encode("ascii")
        with self._write_lock:
            if not self.alive:
                raise LspCrashed(f"{self.argv[0]} is not running")
            try:
                self.proc.stdin.write(header + body)
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise LspCrashed(f"{self.argv[0]}: {exc}") from None

    def _read_message(self) -> dict | None:
        stream = self.proc.stdout
        length = None
        while True:
            line = stream.readline()
            if not line:
                return None
            line = line.strip()
            if not line:
                break
            name, _, value = line.decode("ascii", "replace").partition(":")
            if name.lower() == "content-length":
                length = int(value.strip())
        if length is None:
            return None
        body = stream.read(length)
        if len(body) < length:
            return None
        return json.loads(body)

    def _read_loop(self) -> None:
        while True:
            try:
                msg = self._read_message()
            except (OSError, ValueError):
                msg = None
            if msg is None:
                with self._cond:
                    self._cond.notify_all()
                return
            if "method" in msg and "id" in msg:
                self._answer_server_request(msg)
            elif "method" in msg:
                if msg["method"] == "textDocument/publishDiagnostics":
                    params = msg["params"]
                    with self._cond:
                        self._publish_count += 1
                        self.diagnostics[params["uri"]] = (
                            self._publish_count, time.monotonic(), params.get("diagnostics", []))
                        self._cond.notify_all()
            elif "id" in msg:
                with self._cond:
                    self._pending[msg["id"]] = msg
                    self._cond.notify_all()

    def _answer_server_request(self, msg: dict) -> None:
        method = msg["method"]
        if method == "workspace/configuration":
            result = [None for _ in msg.get("params", {}).get("items", [])]
        elif method == "workspace/workspaceFolders":
            result = [{"uri": path_to_uri(self.root), "name": self.root.name}]
        else:
            result = None
        try:
            self._send({"jsonrpc": "2.0", "id": msg["id"], "result": result})
        except LspCrashed:
            pass

    def notify(self, method: str, params) -> None:
        self._send({"jsonrpc": "2.0", "method": method, "params": params})

    def request(self, method: str, params, timeout: float | None = None):
        msg_id = next(self._ids)
        self._send({"jsonrpc": "2.0", "id": msg_id, "method": method, "params": params})
        deadline = time.monotonic() + (timeout or self.request_timeout)
        with self._cond:
            while msg_id not in self._pending:
                if not self.alive:
                    raise LspCrashed(f"{self.argv[0]} exited during {method}")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise LspError(f"{method} timed out")
                self._cond.wait(min(remaining, 0.2))
            response = self._pending.pop(msg_id)
        if "error" in response:
            err = response["error"]
            raise LspError(err.get("message", "error"), err.get("code"))
        return response.get("result")

    # -- documents ------------------------------------------------------------

    def sync_document(self, path: Path) -> str:
        """Make the server's view of ``path`` match the disk; return its URI."""
        uri = path_to_uri(path)
        content = Path(path).read_text(encoding="utf-8")
        known = self.documents.get(uri)
        if known is None:
            self.notify("textDocument/didOpen", {"textDocument": {
                "uri": uri, "languageId": self.language_id, "version": 1, "text": content}})
            self.documents[uri] = (1, content)
        elif known[1] != content:
            version = known[0] + 1
            self.notify("textDocument/didChange", {
                "textDocument": {"uri": uri, "version": version},
                "contentChanges": [{"text": content}]})
            self.documents[uri] = (version, content)
        return uri

    def wait_for_diagnostics(self, uri: str, since: int, settle: float, cap: float):
        """Block until ``uri`` has published after ``since`` and then gone quiet.

        Returns the diagnostics list, or ``None`` if the cap expired first.
        """
        start = time.monotonic()
        with self._cond:
            while True:
                now = time.monotonic()
                entry = self.diagnostics.get(uri)
                if entry is not None and entry[0] > since and now - entry[1] >= settle:
                    return entry[2]
                if now - start >= cap:
                    return None
                if not self.alive:
                    raise LspCrashed(f"{self.argv[0]} exited while computing diagnostics")
                self._cond.wait(0.05)

    @property
    def publish_count(self) -> int:
        with self._cond:
            return self._publish_count
