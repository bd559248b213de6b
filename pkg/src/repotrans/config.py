"""Load language profiles, rates, budgets and test conventions from YAML."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from repotrans.model import (
    CommentSyntax,
    LanguageProfile,
    ModelError,
    RateTable,
    RunBudget,
    TestConventions,
)

TOP_LEVEL_KEYS = {"languages", "rates", "budget", "test_conventions"}
PROFILE_KEYS = {
    "language", "file_extensions", "lsp_launch", "build_command", "test_command",
    "coverage_command", "stub_markers", "comment_syntax", "result_format", "results_path",
    "test_scope", "lsp_language_id", "identifier_pattern", "reserved_words",
    "manifest_names", "env", "diagnostic_pattern",
}


class ConfigError(ModelError):
    pass


@dataclass(frozen=True)
class Config:
    profiles: dict[str, LanguageProfile]
    rates: RateTable = RateTable()
    budget: RunBudget = RunBudget()
    conventions: dict[str, TestConventions] = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False)

    def profile(self, language: str) -> LanguageProfile:
        try:
            return self.profiles[language]
        except KeyError:
            raise ConfigError(f"no language profile configured for {language!r}") from None

    def conventions_for(self, language: str) -> TestConventions:
        return self.conventions.get(language, TestConventions())

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


def _reject_unknown(data: dict, allowed: set[str], where: str) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _profile(entry: dict) -> LanguageProfile:
    if not isinstance(entry, dict):
        raise ConfigError("each entry under 'languages' must be a mapping")
    _reject_unknown(entry, PROFILE_KEYS, f"language {entry.get('language')!r}")
    kw: dict[str, Any] = dict(entry)
    kw["file_extensions"] = frozenset(kw.get("file_extensions") or ())
    for key in ("lsp_launch", "build_command", "test_command", "coverage_command",
                "stub_markers", "manifest_names"):
        if key in kw:
            kw[key] = tuple(str(x) for x in kw[key] or ())
    if "reserved_words" in kw:
        kw["reserved_words"] = frozenset(str(x) for x in kw["reserved_words"])
    if "comment_syntax" in kw:
        _reject_unknown(kw["comment_syntax"], {"line", "block_start", "block_end"},
                        "comment_syntax")
        kw["comment_syntax"] = CommentSyntax(**kw["comment_syntax"])
    if "env" in kw:
        kw["env"] = {str(k): str(v) for k, v in (kw["env"] or {}).items()}
    try:
        return LanguageProfile(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    if "languages" in override:
        by_id = {e["language"]: e for e in base.get("languages", [])}
        for entry in override["languages"]:
            by_id[entry["language"]] = {**by_id.get(entry["language"], {}), **entry}
        merged["languages"] = list(by_id.values())
    for key in ("rates", "budget"):
        if key in override:
            merged[key] = {**base.get(key, {}), **override[key]}
    if "test_conventions" in override:
        merged["test_conventions"] = {**base.get("test_conventions", {}),
                                      **override["test_conventions"]}
    return merged


def default_config_data() -> dict:
    text = resources.files("repotrans").joinpath("defaults.yaml").read_text()
    return yaml.safe_load(text)


def config_from_data(data: dict) -> Config:
    _reject_unknown(data, TOP_LEVEL_KEYS, "config")
    profiles = {}
    for entry in data.get("languages", []):
        profile = _profile(entry)
        profiles[profile.language] = profile
    rates_raw = data.get("rates", {}) or {}
    _reject_unknown(rates_raw, {"input", "output"}, "rates")
    rates = RateTable(Decimal(str(rates_raw.get("input", 0))),
                      Decimal(str(rates_raw.get("output", 0))))
    budget_raw = data.get("budget", {}) or {}
    _reject_unknown(budget_raw, {"agent_timeout", "max_iterations"}, "budget")
    budget = RunBudget(float(budget_raw.get("agent_timeout", 5000)),
                       int(budget_raw.get("max_iterations", 5)))
    conventions = {}
    for lang, conv in (data.get("test_conventions") or {}).items():
        _reject_unknown(conv, {"file_globs", "directories"}, f"test_conventions.{lang}")
        conventions[lang] = TestConventions(tuple(conv.get("file_globs", ())),
                                            tuple(conv.get("directories", ())))
    return Config(profiles, rates, budget, conventions, raw=data)


def load_config(path: str | Path | None = None) -> Config:
    """Read a config file layered over the built-in defaults.

    Unknown keys anywhere in the user file are rejected rather than ignored.
    """
    data = default_config_data()
    if path is not None:
        try:
            user = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        _reject_unknown(user, TOP_LEVEL_KEYS, "config")
        data = _merge(data, user)
    return config_from_data(data)
