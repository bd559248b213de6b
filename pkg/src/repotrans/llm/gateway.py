"""Provider-agnostic completions with full recording and fingerprint-checked replay.

Every model turn, tool call and phase change is appended to a trajectory
log, one JSON object per line, header first. A log can drive a later run in
place of the model: each request is fingerprinted and must match the
recorded one, otherwise replay stops with a diff.

Messages use a small provider-neutral shape::

    {"role": "user", "content": "..."}
    {"role": "assistant", "content": "...", "tool_calls": [{"id", "tool", "args"}]}
    {"role": "tool", "results": [{"id", "content", "is_error"}]}
"""

from __future__ import annotations

import difflib
import hashlib
import json
import math
import os
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

from repotrans.model import CostLedger, ledger_add

LOG_FORMAT = "repotrans-trajectory/1"
PHASES = ("analyzer", "planner", "translator", "validator", "end")

ENV_URL = "REPOTRANS_API_URL"
ENV_KEY = "REPOTRANS_API_KEY"
ENV_MODEL = "REPOTRANS_MODEL"
DEFAULT_URL = "https://api.anthropic.com/v1/messages"


class GatewayError(RuntimeError):
    pass


class ScriptExhausted(GatewayError):
    pass


class ReplayMismatch(GatewayError):
    pass


class ProviderError(GatewayError):
    pass


class OfflineViolation(GatewayError):
    pass


class AgentTimeout(GatewayError):
    """The active agent ran past its wall-clock budget."""


class LogError(GatewayError):
    pass


# -- events ----------------------------------------------------------------------


@dataclass
class PhaseMarker:
    seq: int
    phase: str
    iteration: int | None = None
    status: str | None = None
    detail: str | None = None

    kind = "phase"


@dataclass
class ToolCall:
    seq: int
    agent: str
    tool: str
    args: dict
    result: object = None
    error: str | None = None
    wall: float = 0.0
    call_id: str | None = None

    kind = "tool"


@dataclass
class AgentTurn:
    seq: int
    agent: str
    request: dict  # system_prompt_id, messages, available_tools
    response: dict  # text, tool_calls
    usage: dict  # input_tokens, output_tokens
    wall: float
    fingerprint: str

    kind = "turn"

    @property
    def tool_calls(self) -> list[dict]:
        return self.response.get("tool_calls", [])

    @property
    def text(self) -> str:
        return self.response.get("text", "")


EVENT_CLASSES = {cls.kind: cls for cls in (PhaseMarker, ToolCall, AgentTurn)}
Event = PhaseMarker | ToolCall | AgentTurn


def event_to_record(event: Event) -> dict:
    return {"type": event.kind, **asdict(event)}


def event_from_record(record: dict) -> Event:
    record = dict(record)
    try:
        cls = EVENT_CLASSES[record.pop("type")]
    except KeyError:
        raise LogError(f"unknown event record: {record!r}") from None
    return cls(**record)


# -- canonical form and fingerprint ---------------------------------------------------


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _sorted_tools(tools: Iterable[dict]) -> list[dict]:
    return sorted(tools, key=lambda t: (t.get("name", ""), canonical_json(t)))


def fingerprint(request: dict) -> str:
    """SHA-256 over the canonical request; tool order does not matter, prompt text does."""
    body = dict(request)
    body["available_tools"] = _sorted_tools(body.get("available_tools", []))
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def prompt_id(text: str) -> str:
    return "sha256:" + hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# -- the log -------------------------------------------------------------------------


class TrajectoryLog:
    """Append-only event log. Each record is flushed and fsynced before returning."""

    def __init__(self, path, header: dict, *, durable: bool = True):
        self.path = Path(path)
        self.header = {"type": "header", "format": LOG_FORMAT, **header}
        self.durable = durable
        self.last_seq = 0
        self._fh = open(self.path, "x", encoding="utf-8")
        self._write(self.header)

    @classmethod
    def create(cls, path, *, run_id: str, config_hash: str, budget: dict,
               prompts: dict[str, str], meta: dict | None = None, durable: bool = True):
        return cls(path, {"run_id": run_id, "config_hash": config_hash, "budget": budget,
                          "prompts": dict(sorted(prompts.items())), "meta": meta or {}},
                   durable=durable)

    def _write(self, record: dict) -> None:
        if self._fh is None:
            raise LogError(f"{self.path} is closed")
        self._fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
        self._fh.flush()
        if self.durable:
            os.fsync(self._fh.fileno())

    @property
    def next_seq(self) -> int:
        return self.last_seq + 1

    def record(self, event: Event) -> TrajectoryLog:
        if event.seq != self.last_seq + 1:
            raise LogError(f"event seq {event.seq} does not follow {self.last_seq}")
        self._write(event_to_record(event))
        self.last_seq = event.seq
        return self

    @property
    def closed(self) -> bool:
        return self._fh is None

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path) -> tuple[dict, list[Event]]:
    """Parse a log file back into its header and events."""
    with open(path, encoding="utf-8") as f:
        lines = [ln for ln in f.read().split("\n") if ln]
    if not lines:
        raise LogError(f"{path} is empty")
    header = json.loads(lines[0])
    if header.get("type") != "header" or header.get("format") != LOG_FORMAT:
        raise LogError(f"{path} does not start with a {LOG_FORMAT} header")
    events = [event_from_record(json.loads(ln)) for ln in lines[1:]]
    for expected, event in enumerate(events, start=1):
        if event.seq != expected:
            raise LogError(f"{path}: event {expected} has seq {event.seq}")
    return header, events


# -- backends ------------------------------------------------------------------------


@dataclass
class BackendReply:
    response: dict
    usage: dict
    wall: float | None = None  # replay supplies the recorded duration


def estimate_tokens(value) -> int:
    """Deterministic stand-in for token counts when a backend reports none."""
    return math.ceil(len(canonical_json(value)) / 4)


def _wait(seconds: float, deadline: float | None, clock: Callable[[], float]) -> None:
    if deadline is not None and clock() + seconds > deadline:
        time.sleep(max(0.0, deadline - clock()))
        raise AgentTimeout("agent budget exhausted while waiting for the model")
    time.sleep(seconds)


class ScriptedBackend:
    """Returns pre-written turns in order.

    A turn is ``{"agent"?, "text"?, "tool_calls"?, "usage"?, "sleep"?}``. When
    ``agent`` is given it must match the requesting agent.
    """

    def __init__(self, turns: Sequence[dict], clock: Callable[[], float] = time.monotonic):
        self.turns = list(turns)
        self.position = 0
        self.clock = clock

    @classmethod
    def from_file(cls, path) -> ScriptedBackend:
        import yaml

        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        turns = data["turns"] if isinstance(data, dict) else data
        if not isinstance(turns, list):
            raise GatewayError(f"{path}: expected a list of turns")
        return cls(turns)

    def complete(self, request: dict, system: str, deadline: float | None) -> BackendReply:
        if self.position >= len(self.turns):
            raise ScriptExhausted(f"script exhausted after {len(self.turns)} turns "
                                  f"({request['agent']} asked for another)")
        turn = self.turns[self.position]
        self.position += 1
        if turn.get("agent") not in (None, request["agent"]):
            raise GatewayError(f"script turn {self.position} is for {turn['agent']}, "
                               f"but {request['agent']} is asking")
        if turn.get("sleep"):
            _wait(float(turn["sleep"]), deadline, self.clock)
        calls = [{"id": c.get("id") or f"call-{self.position}-{i}", "tool": c["tool"],
                  "args": c.get("args", {})} for i, c in enumerate(turn.get("tool_calls", []), 1)]
        response = {"text": turn.get("text", ""), "tool_calls": calls}
        usage = turn.get("usage") or {"input_tokens": estimate_tokens(request),
                                      "output_tokens": estimate_tokens(response)}
        return BackendReply(response, {"input_tokens": int(usage["input_tokens"]),
                                       "output_tokens": int(usage["output_tokens"])})


class ReplayBackend:
    """Serves the turns of a recorded log, insisting on matching fingerprints."""

    def __init__(self, events: Sequence[Event]):
        self.events = list(events)
        self.turns = [e for e in self.events if isinstance(e, AgentTurn)]
        self.position = 0

    @classmethod
    def from_file(cls, path) -> ReplayBackend:
        return cls(read_log(path)[1])

    def complete(self, request: dict, system: str, deadline: float | None) -> BackendReply:
        if self.position >= len(self.turns):
            raise ReplayMismatch(f"the log has only {len(self.turns)} turns; "
                                 f"{request['agent']} asked for another")
        recorded = self.turns[self.position]
        self.position += 1
        actual = {"agent": request["agent"], **request["request"]}
        expected = {"agent": recorded.agent, **recorded.request}
        if fingerprint(actual) != recorded.fingerprint:
            raise ReplayMismatch(f"request {self.position} diverges from the log:\n"
                                 + request_diff(expected, actual))
        return BackendReply(recorded.response, dict(recorded.usage), recorded.wall)

    def recorded_wall(self, event: Event) -> float | None:
        """Duration of the recorded event in the same slot, if it is the same call."""
        if 0 < event.seq <= len(self.events):
            old = self.events[event.seq - 1]
            if type(old) is type(event) and getattr(old, "tool", None) == getattr(event, "tool", None):
                return old.wall
        return None


def request_diff(expected: dict, actual: dict) -> str:
    a = json.dumps(expected, indent=1, sort_keys=True, ensure_ascii=False).splitlines()
    b = json.dumps(actual, indent=1, sort_keys=True, ensure_ascii=False).splitlines()
    return "\n".join(difflib.unified_diff(a, b, "recorded", "current", lineterm="", n=2))


class LiveBackend:
    """Messages-style HTTP provider. Endpoint, key and model come from the environment."""

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 model: str | None = None, *, max_tokens: int = 4096, attempts: int = 3,
                 backoff: float = 1.0, client=None, clock: Callable[[], float] = time.monotonic):
        import httpx

        self.url = url or os.environ.get(ENV_URL, DEFAULT_URL)
        self.api_key = api_key or os.environ.get(ENV_KEY)
        self.model = model or os.environ.get(ENV_MODEL)
        if not self.api_key or not self.model:
            raise ProviderError(f"live backend needs {ENV_KEY} and {ENV_MODEL}")
        self.max_tokens = max_tokens
        self.attempts = attempts
        self.backoff = backoff
        self.client = client or httpx.Client()
        self.clock = clock
        self._httpx = httpx

    def payload(self, request: dict, system: str) -> dict:
        body = request["request"]
        return {
            "model": self.model,
            "max_tokens": self.max_tokens,
            "system": system,
            "messages": [_to_provider(m) for m in body["messages"]],
            "tools": [{"name": t["name"], "description": t.get("description", ""),
                       "input_schema": t.get("parameters", {"type": "object"})}
                      for t in _sorted_tools(body["available_tools"])],
        }

    def complete(self, request: dict, system: str, deadline: float | None) -> BackendReply:
        payload = self.payload(request, system)
        headers = {"x-api-key": self.api_key, "anthropic-version": "2023-06-01",
                   "content-type": "application/json"}
        last = None
        for attempt in range(self.attempts):
            timeout = 600.0 if deadline is None else deadline - self.clock()
            if timeout <= 0:
                raise AgentTimeout("agent budget exhausted before the model answered")
            try:
                resp = self.client.post(self.url, json=payload, headers=headers, timeout=timeout)
            except self._httpx.TimeoutException:
                if deadline is not None and self.clock() >= deadline:
                    raise AgentTimeout("model request cancelled at the agent deadline") from None
                last = "timeout"
            except self._httpx.TransportError as exc:
                last = str(exc)
            else:
                if resp.status_code == 200:
                    return _from_provider(resp.json())
                last = f"HTTP {resp.status_code}: {resp.text[:500]}"
                if resp.status_code not in (408, 429) and resp.status_code < 500:
                    raise ProviderError(last)
            if attempt + 1 < self.attempts:
                _wait(self.backoff * 2 ** attempt, deadline, self.clock)
        raise ProviderError(f"provider failed after {self.attempts} attempts: {last}")


def _to_provider(message: dict) -> dict:
    role = message["role"]
    if role == "user":
        return {"role": "user", "content": message["content"]}
    if role == "assistant":
        blocks = []
        if message.get("content"):
            blocks.append({"type": "text", "text": message["content"]})
        blocks += [{"type": "tool_use", "id": c["id"], "name": c["tool"], "input": c["args"]}
                   for c in message.get("tool_calls", [])]
        return {"role": "assistant", "content": blocks}
    if role == "tool":
        return {"role": "user", "content": [
            {"type": "tool_result", "tool_use_id": r["id"], "content": r["content"],
             "is_error": bool(r.get("is_error"))} for r in message["results"]]}
    raise GatewayError(f"unknown message role {role!r}")


def _from_provider(data: dict) -> BackendReply:
    text, calls = [], []
    for block in data.get("content", []):
        if block.get("type") == "text":
            text.append(block["text"])
        elif block.get("type") == "tool_use":
            calls.append({"id": block["id"], "tool": block["name"], "args": block.get("input", {})})
    usage = data.get("usage", {})
    return BackendReply({"text": "".join(text), "tool_calls": calls},
                        {"input_tokens": int(usage.get("input_tokens", 0)),
                         "output_tokens": int(usage.get("output_tokens", 0))})


# -- the gateway -----------------------------------------------------------------


@dataclass
class Gateway:
    """Single funnel for model turns and tool results; owns the log and the ledger."""

    backend: object
    log: TrajectoryLog
    prompts: dict[str, str] = field(default_factory=dict)
    ledger: CostLedger = field(default_factory=CostLedger)
    clock: Callable[[], float] = time.monotonic

    def register_prompt(self, text: str) -> str:
        pid = prompt_id(text)
        if pid not in self.log.header["prompts"]:
            raise GatewayError(f"prompt {pid} is not in the log header")
        self.prompts[pid] = text
        return pid

    def complete(self, agent: str, system_prompt_id: str, messages: list[dict],
                 tools: list[dict], deadline: float | None = None) -> AgentTurn:
        if deadline is not None and self.clock() >= deadline:
            raise AgentTimeout(f"{agent} exceeded its budget")
        body = {"system_prompt_id": system_prompt_id, "messages": messages,
                "available_tools": _sorted_tools(tools)}
        request = {"agent": agent, "request": body}
        started = self.clock()
        reply = self.backend.complete(request, self.prompts.get(system_prompt_id, ""), deadline)
        wall = reply.wall if reply.wall is not None else round(self.clock() - started, 6)
        turn = AgentTurn(self.log.next_seq, agent, json.loads(json.dumps(body)),
                         reply.response, reply.usage, wall,
                         fingerprint({"agent": agent, **body}))
        self.log.record(turn)
        self.ledger = ledger_add(self.ledger, agent, turn.usage["input_tokens"],
                                 turn.usage["output_tokens"], wall)
        return turn

    def _wall(self, event, measured: float) -> float:
        recorded = getattr(self.backend, "recorded_wall", None)
        if recorded is not None:
            value = recorded(event)
            if value is not None:
                return value
        return round(measured, 6)

    def record_tool(self, agent: str, tool: str, args: dict, result=None,
                    error: str | None = None, wall: float = 0.0,
                    call_id: str | None = None) -> ToolCall:
        event = ToolCall(self.log.next_seq, agent, tool, args, result, error, 0.0, call_id)
        event.wall = self._wall(event, wall)
        self.log.record(event)
        return event

    def phase(self, phase: str, iteration: int | None = None, status: str | None = None,
              detail: str | None = None) -> PhaseMarker:
        if phase not in PHASES:
            raise GatewayError(f"unknown phase {phase!r}")
        marker = PhaseMarker(self.log.next_seq, phase, iteration, status, detail)
        self.log.record(marker)
        return marker
