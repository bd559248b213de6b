"""Tree-sitter grammar registry shared by the structure and assertion extractors."""

from __future__ import annotations

import functools
import importlib

import tree_sitter

GRAMMARS = {
    "python": "tree_sitter_python",
    "go": "tree_sitter_go",
    "javascript": "tree_sitter_javascript",
    "java": "tree_sitter_java",
    "rust": "tree_sitter_rust",
}


class UnsupportedLanguage(LookupError):
    pass


@functools.lru_cache(maxsize=None)
def parser_for(language: str) -> tree_sitter.Parser:
    try:
        module = importlib.import_module(GRAMMARS[language])
    except (KeyError, ImportError):
        raise UnsupportedLanguage(f"no grammar available for {language!r}") from None
    return tree_sitter.Parser(tree_sitter.Language(module.language()))


def parse(language: str, source: bytes) -> tree_sitter.Tree:
    return parser_for(language).parse(source)


def text(node) -> str:
    return node.text.decode("utf-8", errors="replace")


def span(node) -> tuple[int, int]:
    return node.start_point[0] + 1, node.end_point[0] + 1
