from __future__ import annotations

import ast
import json
import time

import pytest

from conftest import FIXTURES, GOLDEN
from repotrans.model import discover_project
from repotrans.pipeline.deps import project_fragments
from repotrans.toolserver.server import FileNotFound, ToolServer, UnsupportedLanguage
from repotrans.toolserver.skeleton import file_structure, skeleton_fragments

CATEGORIES = ["classes", "functions", "globals", "imports", "structs"]


def dump(record) -> str:
    return json.dumps(record, indent=2, sort_keys=True) + "\n"


@pytest.mark.parametrize("fixture,file,golden", [
    ("checkdigit", "checkdigit.go", "checkdigit.go"),
    ("checkdigit", "damm.go", "damm.go"),
    ("python", "src/main/BasicParser.py", "BasicParser.py"),
    ("jsmini", "lib/shapes.js", "shapes.js"),
])
def test_file_structure_golden(config, fixture, file, golden):
    with ToolServer(FIXTURES / fixture, config.profiles) as server:
        got = dump(server.get_file_structure(file))
    assert got == (GOLDEN / f"{golden}.structure.json").read_text()


@pytest.mark.parametrize("fixture,exclude", [
    ("python", []), ("checkdigit", []), ("jsmini", ["*.pyc"]),
])
def test_directory_tree_golden(config, fixture, exclude):
    with ToolServer(FIXTURES / fixture, config.profiles) as server:
        first = server.get_directory_tree(".", exclude)["rendered"]
        second = server.get_directory_tree(".", exclude)["rendered"]
    assert first == second == (GOLDEN / f"{fixture}.tree.txt").read_text()


def test_tree_lines_present():
    text = (GOLDEN / "python.tree.txt").read_text()
    for line in ("|-- conftest.py", "|-- pytest.ini", "|-- run.sh", "|-- BasicParser.py",
                 "|-- BasicParserTest.py"):
        assert line in text
    # Two-space indent under the root.
    assert text.splitlines()[1] == "  |-- src/"


def test_tree_exclude_drops_leaf(config):
    with ToolServer(FIXTURES / "jsmini", config.profiles) as server:
        with_pyc = server.get_directory_tree(".")["rendered"]
        without = server.get_directory_tree(".", ["*.pyc"])["rendered"]
    assert "cache.pyc" in with_pyc
    assert "cache.pyc" not in without


def test_tree_of_empty_dir(tmp_path, config):
    (tmp_path / "empty").mkdir()
    with ToolServer(tmp_path / "empty", config.profiles) as server:
        tree = server.get_directory_tree(".")
    assert tree["tree"] == {"name": "empty", "kind": "directory", "children": []}
    assert tree["rendered"] == "|-- empty/\n"


def test_tree_of_missing_root(tmp_path, config):
    with ToolServer(tmp_path, config.profiles) as server:
        with pytest.raises(FileNotFound):
            server.get_directory_tree("nope")


@pytest.mark.parametrize("lang,name", [("python", "e.py"), ("go", "e.go"),
                                       ("javascript", "e.js"), ("rust", "e.rs"),
                                       ("java", "E.java")])
def test_empty_file_has_five_empty_lists(lang, name):
    record = file_structure(b"", lang, name)
    assert sorted(record["skeleton"]) == CATEGORIES
    assert all(v == [] for v in record["skeleton"].values())
    assert record["parse_error"] is False


def test_checkdigit_functions_match_manifest():
    record = file_structure((FIXTURES / "checkdigit/checkdigit.go").read_bytes(), "go",
                            "checkdigit.go")
    names = {e["name"] for e in record["skeleton"]["functions"]}
    assert {"isNumber", "NewLuhn", "NewDamm", "NewUPC"} <= names


def _ast_oracle(source: str):
    """Independent count by walking Python's own AST."""
    tree = ast.parse(source)
    classes = methods = functions = globals_ = 0
    for node in tree.body:
        if isinstance(node, ast.ClassDef):
            classes += 1
            methods += sum(isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef)) for n in node.body)
        elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            functions += 1
        elif isinstance(node, (ast.Assign, ast.AnnAssign)):
            targets = node.targets if isinstance(node, ast.Assign) else [node.target]
            globals_ += sum(isinstance(t, ast.Name) for t in targets)
    return classes, methods, functions, globals_


def test_python_counts_match_ast_oracle():
    source = (FIXTURES / "python/src/main/BasicParser.py").read_text()
    record = file_structure(source.encode(), "python", "BasicParser.py")
    sk = record["skeleton"]
    got = (len(sk["classes"]),
           sum(e["kind"] == "method" for e in sk["functions"]),
           sum(e["kind"] == "function" for e in sk["functions"]),
           len(sk["globals"]))
    assert got == _ast_oracle(source) == (2, 3, 0, 1)


def test_spans_lie_within_file():
    for path in FIXTURES.rglob("*"):
        lang = {".py": "python", ".go": "go", ".js": "javascript"}.get(path.suffix)
        if lang is None or path.name == "fake_lsp.py":
            continue
        source = path.read_bytes()
        n = max(1, len(source.decode().splitlines()))
        for entries in file_structure(source, lang, path.name)["skeleton"].values():
            for e in entries:
                assert 1 <= e["span"][0] <= e["span"][1] <= n, (path, e)


def test_parse_error_gives_partial_skeleton():
    record = file_structure(b"def ok():\n    return 1\n\ndef broken(:\n", "python", "b.py")
    assert record["parse_error"] is True
    assert "ok" in {e["name"] for e in record["skeleton"]["functions"]}


def test_unsupported_language(tmp_path, config):
    (tmp_path / "x.unknown").write_text("hi")
    with ToolServer(tmp_path, config.profiles) as server:
        with pytest.raises(UnsupportedLanguage):
            server.get_file_structure("x.unknown")


def test_structure_fragments_equal_manifest_truth(config):
    # The planner's ground truth is exactly the union of get_file_structure fragments.
    project = discover_project(FIXTURES / "checkdigit", config.profile("go"),
                               config.conventions_for("go"))
    with ToolServer(project.root, config.profiles) as server:
        via_server = sorted((f.identity, f.span) for f in project_fragments(project, server=server))
        union = sorted((f.identity, f.span) for rel in project.files
                       for f in skeleton_fragments(server.get_file_structure(rel)))
    assert via_server == union
    assert ("checkdigit.go:isNumber", (31, 41)) in union


@pytest.mark.parametrize("fixture,file", [("checkdigit", "checkdigit.go"),
                                          ("python", "src/main/BasicParser.py"),
                                          ("jsmini", "lib/shapes.js")])
def test_project_analysis_tools_are_fast(config, fixture, file):
    start = time.monotonic()
    with ToolServer(FIXTURES / fixture, config.profiles) as server:
        server.get_file_structure(file)
        server.get_directory_tree(".")
    assert time.monotonic() - start < 10
