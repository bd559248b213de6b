from __future__ import annotations

import ast
import math
import random
from decimal import Decimal

import pytest
from click.testing import CliRunner

from conftest import FIXTURES, GOLDEN
from repotrans.cli import demo_paths, main
from repotrans.llm.gateway import PhaseMarker, ToolCall, read_log
from repotrans.metrics import report
from repotrans.metrics.assertions import Literal, analyze_tests
from repotrans.metrics.compare import (
    MetricsError,
    compare_test_pair,
    cosine,
    literals_equal,
    pair_tests,
    parse_embeddings,
    summarize,
)
from repotrans.metrics.trajectory import build_trajectory_graph, trajectory_metrics
from repotrans.model import CostLedger, RateTable, ledger_add

PAIR = FIXTURES / "metrics_pair"

# -- cosine -----------------------------------------------------------------------------------


def brute_cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / (math.sqrt(sum(x * x for x in a)) * math.sqrt(sum(y * y for y in b)))


def test_cosine_against_brute_force():
    rnd = random.Random(3)
    for _ in range(100):
        n = rnd.randint(1, 64)
        a = [rnd.uniform(-10, 10) for _ in range(n)]
        b = [rnd.uniform(-10, 10) for _ in range(n)]
        assert abs(cosine(a, b) - brute_cosine(a, b)) <= 1e-9


def test_cosine_edges():
    assert cosine([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
    assert cosine([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1.0, abs=1e-12)
    assert cosine([1, 0], [0, 5]) == 0.0
    assert cosine([1, 2, 2], [2, 1, 2]) == pytest.approx(8 / 9, abs=1e-12)
    with pytest.raises(MetricsError):
        cosine([0, 0], [1, 1])
    with pytest.raises(MetricsError):
        cosine([1], [1, 2])


def test_embeddings_file_errors():
    assert parse_embeddings("# c\nsrc:a\t2\t1,2\n") == {"src:a": [1.0, 2.0]}
    for bad in ("src:a\t3\t1,2\n", "src:a 2 1,2\n", "src:a\t2\t1,x\n",
                "src:a\t1\t1\nsrc:a\t1\t2\n"):
        with pytest.raises(MetricsError):
            parse_embeddings(bad)


# -- assertion extraction vs. Python's own AST -------------------------------------------------


def _ast_literal(node):
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.USub):
        inner = _ast_literal(node.operand)
        if inner is not None and inner.type in ("int", "float"):
            return Literal(inner.type, -inner.value)
        return None
    if not isinstance(node, ast.Constant):
        return None
    v = node.value
    if isinstance(v, bool):
        return Literal("bool", v)
    if isinstance(v, int):
        return Literal("int", v)
    if isinstance(v, float):
        return Literal("float", v)
    if isinstance(v, str):
        return Literal("string", v)
    return None


def _ast_first(*nodes):
    for n in nodes:
        lit = _ast_literal(n)
        if lit is not None:
            return lit
    return None


def _ast_kind(node):
    if isinstance(node, ast.Assert):
        t = node.test
        if isinstance(t, ast.UnaryOp) and isinstance(t.op, ast.Not):
            return "assert_false", None
        if isinstance(t, ast.Compare):
            if len(t.ops) == 1 and isinstance(t.ops[0], ast.Eq):
                return "assert_equal", _ast_first(t.comparators[0], t.left)
            return "other", None
        return "assert_true", None
    if isinstance(node, ast.Call):
        fn = node.func
        name = fn.attr if isinstance(fn, ast.Attribute) else getattr(fn, "id", "")
        if name in ("assertEqual", "assertEquals"):
            return "assert_equal", _ast_first(*node.args[1:2], *node.args[:1])
        if name == "assertTrue":
            return "assert_true", None
        if name == "assertFalse":
            return "assert_false", None
        dotted = ast.unparse(fn)
        if name.startswith("assert") or dotted == "pytest.raises":
            return "other", None
    return None


def ast_oracle(source: str):
    lines = source.splitlines()
    out = []
    for node in ast.parse(source).body:
        if isinstance(node, ast.FunctionDef) and node.name.startswith("test"):
            span = (node.lineno, node.end_lineno)
            loc = sum(1 for ln in lines[span[0] - 1:span[1]]
                      if ln.strip() and not ln.strip().startswith("#"))
            calls = sum(isinstance(n, ast.Call) for n in ast.walk(node))
            records = sorted((n.lineno, *k) for n in ast.walk(node)
                             if (k := _ast_kind(n)) is not None)
            out.append((node.name, span, loc, calls, [(k, lit, ln) for ln, k, lit in records]))
    return out


def _rand_literal(rnd):
    choice = rnd.randrange(5)
    if choice == 0:
        return repr(rnd.randint(-1000, 1000))
    if choice == 1:
        return repr(rnd.choice([0.5, -2.25, 1e-9, 3.0, 123456.789, -0.0001]))
    if choice == 2:
        return repr("".join(rnd.choice("ab c'\"\\\té") for _ in range(rnd.randint(0, 6))))
    if choice == 3:
        return rnd.choice(["True", "False"])
    return rnd.choice(["x", "obj.m(1)", "f(g(2), 3)", "[1, 2]"])


def _rand_expr(rnd):
    return rnd.choice(["f(x)", "obj.m(1, 2)", "x", "g(h(x))", "len(items)", "x.y"])


def _rand_stmt(rnd):
    e, lit = _rand_expr(rnd), _rand_literal(rnd)
    return rnd.choice([
        f"assert {e} == {lit}", f"assert {lit} == {e}", f"assert not {e}", f"assert {e} > {lit}",
        f"assert {e}", f"assert {e} is not None", f"self.assertEqual({e}, {lit})",
        f"self.assertTrue({e})", f"self.assertFalse({e})", f"self.assertIn({lit}, {e})",
        f"with pytest.raises(ValueError):\n        {e}", f"y = f({lit})", "# a comment", "",
        f"for i in range(3):\n        assert {e} == {lit}",
    ])


def random_test_file(rnd):
    parts = ["import pytest", ""]
    for t in range(rnd.randint(1, 4)):
        parts += ["", f"def test_case_{t}():"]
        body = [_rand_stmt(rnd) for _ in range(rnd.randint(1, 6))]
        parts += ["    " + s if s else "" for s in body] + ["    pass"]
        if rnd.random() < 0.3:
            parts += ["", f"def helper_{t}():", "    assert x == 1"]
    return "\n".join(parts) + "\n"


def _normal(lit):
    return None if lit is None else (lit.type, lit.value)


def test_python_extraction_matches_ast_oracle():
    rnd = random.Random(5)
    for _ in range(200):
        source = random_test_file(rnd)
        got = [(c.test_id, c.span, c.loc, c.invocations,
                [(r.kind, _normal(r.expected_literal), r.line) for r in c.assertions])
               for c in analyze_tests(source, "python")]
        want = [(name, span, loc, calls, [(k, _normal(lit), ln) for k, lit, ln in recs])
                for name, span, loc, calls, recs in ast_oracle(source)]
        assert got == want, source


def test_fixture_kinds_and_the_tokens_mismatch():
    java = analyze_tests((PAIR / "java/ParserTest.java").read_text(), "java", "ParserTest.java")
    py = analyze_tests((PAIR / "python/test_parser.py").read_text(), "python", "test_parser.py")
    kinds = {c.test_id.rsplit(".", 1)[-1].rsplit("::", 1)[-1]: [r.kind for r in c.assertions]
             for c in java + py}
    assert kinds["testTokens"] == ["assert_false", "assert_true"]
    assert kinds["test_tokens"] == ["other", "other"]
    assert kinds["testRatio"] == ["assert_equal", "other"]
    ratio = next(c for c in java if c.test_id.endswith("testRatio")).assertions[0]
    assert ratio.expected_literal == Literal("float", 0.5)
    pairs, lonely_src, lonely_tgt = pair_tests(java, py)
    tokens = next(compare_test_pair(s, t) for s, t in pairs if s.test_id.endswith("testTokens"))
    assert tokens.assertion_counts == (2, 2, True)
    assert tokens.type_match["assert_false"] == 0.0 and tokens.type_match["assert_true"] == 0.0
    assert [c.test_id for c in lonely_src] == ["ParserTest.java::ParserTest.testOnlyInJava"]
    assert [c.test_id for c in lonely_tgt] == ["test_parser.py::test_only_in_python"]


def test_literal_equality_rules():
    assert literals_equal(Literal("float", 0.1 + 0.2), Literal("float", 0.3))
    assert literals_equal(Literal("int", 2), Literal("float", 2.0))
    assert not literals_equal(Literal("string", "2"), Literal("int", 2))
    assert not literals_equal(Literal("bool", True), Literal("int", 1))
    assert not literals_equal(Literal("float", 1.0), Literal("float", 1.0 + 1e-6))


def test_other_languages_extract():
    go = ('package cd\n\nimport "testing"\n\nfunc TestX(t *testing.T) {\n'
          '\tif got := f(); got != 3 {\n\t\tt.Errorf("got %d", got)\n\t}\n'
          '\tif !ok() {\n\t\tt.Fatal("bad")\n\t}\n}\n')
    (case,) = analyze_tests(go, "go", "x_test.go")
    assert [(r.kind, r.expected_literal) for r in case.assertions] == [
        ("assert_equal", Literal("int", 3)), ("assert_true", None)]
    rs = ('#[test]\nfn adds() {\n    assert_eq!(add(1, 2), 3);\n    assert!(!empty());\n}\n')
    (case,) = analyze_tests(rs, "rust", "lib.rs")
    assert [r.kind for r in case.assertions] == ["assert_equal", "assert_false"]
    js = ("test('adds', () => {\n  assert.strictEqual(add(1, 2), 3);\n"
          "  expect(ok()).toBeTruthy();\n});\n")
    (case,) = analyze_tests(js, "javascript", "a.test.js")
    assert [r.kind for r in case.assertions] == ["assert_equal", "assert_true"]


# -- trajectory graph vs. a brute-force oracle ---------------------------------------------------


def brute_trajectory(events):
    sess, cur = [], []
    for e in events:
        if isinstance(e, PhaseMarker):
            sess.append(cur)
            cur = []
        else:
            f = next((e.args[k] for k in ("file", "path", "filepath") if k in e.args), None)
            cur.append(("tool", e.tool, f))
    sess.append(cur)
    nodes = {n for s in sess for n in s}
    tec = sum(max(0, len(s) - 1) for s in sess)
    ordered = list(nodes)
    sec = sum(1 for i in range(len(ordered)) for j in range(i + 1, len(ordered))
              if ordered[i][2] is not None and ordered[i][2] == ordered[j][2])
    loops = []
    for s in sess:
        for i in range(len(s)):
            for j in range(i - 1, -1, -1):
                if s[j] == s[i]:
                    loops.append(i - j)
                    break
    return {"NC": len(nodes), "TEC": tec, "SEC": sec, "LC": len(loops),
            "ALL": sum(loops) / len(loops) if loops else 0.0}


def random_events(rnd):
    events = []
    for seq in range(1, rnd.randint(0, 50) + 1):
        if rnd.random() < 0.12:
            events.append(PhaseMarker(seq, rnd.choice(["analyzer", "translator"]), 1))
        else:
            key = rnd.choice(["file", "path", "filepath", None])
            args = {key: rnd.choice(["a.py", "b.py", "c.go"])} if key else {"q": 1}
            events.append(ToolCall(seq, "translator", rnd.choice(["hover", "read_file", "shell"]),
                                   args))
    return events


def test_trajectory_against_brute_force():
    rnd = random.Random(9)
    for _ in range(200):
        events = random_events(rnd)
        got = trajectory_metrics(build_trajectory_graph(events))
        want = brute_trajectory(events)
        assert {k: got[k] for k in ("NC", "TEC", "SEC", "LC")} == \
            {k: want[k] for k in ("NC", "TEC", "SEC", "LC")}
        assert got["ALL"] == pytest.approx(want["ALL"], abs=1e-6)


def test_trajectory_aba_example():
    a = {"file": "x.py"}
    events = [ToolCall(1, "t", "hover", a), ToolCall(2, "t", "read_file", a),
              ToolCall(3, "t", "hover", a)]
    assert trajectory_metrics(build_trajectory_graph(events)) == {
        "NC": 2, "TEC": 2, "SEC": 1, "LC": 1, "ALL": 2.0}
    assert trajectory_metrics(build_trajectory_graph([])) == {
        "NC": 0, "TEC": 0, "SEC": 0, "LC": 0, "ALL": 0.0}


def test_phase_markers_split_sessions():
    a = {"file": "x.py"}
    events = [ToolCall(1, "t", "hover", a), PhaseMarker(2, "validator", 1),
              ToolCall(3, "t", "hover", a)]
    assert trajectory_metrics(build_trajectory_graph(events))["TEC"] == 0
    assert trajectory_metrics(build_trajectory_graph(events))["LC"] == 0


def test_demo_log_trajectory_is_stable():
    _, _, log = demo_paths()
    _, events = read_log(log)
    first = trajectory_metrics(build_trajectory_graph(events))
    assert first == trajectory_metrics(build_trajectory_graph(events))
    assert first["NC"] > 0 and first["TEC"] > 0


# -- reports ---------------------------------------------------------------------------------


def _pair_summary():
    java = analyze_tests((PAIR / "java/ParserTest.java").read_text(), "java", "ParserTest.java")
    py = analyze_tests((PAIR / "python/test_parser.py").read_text(), "python", "test_parser.py")
    emb = parse_embeddings((PAIR / "embeddings.tsv").read_text())
    return summarize(java, py, emb)


def test_summary_numbers():
    s = _pair_summary()
    assert (s.tests, s.translated, s.not_translated) == (4, 3, 1)
    assert (s.equal_output_total, s.equal_output_matching) == (3, 3)
    assert s.avg_cosine == pytest.approx((8 / 9 + 1) / 2, abs=1e-6)


def test_records_round_trip():
    s = _pair_summary()
    ledger = ledger_add(CostLedger(RateTable(Decimal("3e-6"), Decimal("15e-6"))),
                        "planner", 1000, 500, 2.0)
    sections = {"tests": [report.tests_row("java", s)], "pairs": report.pair_rows(s),
                "unpaired": [], "trajectory": [{"run": "r", "NC": 1, "TEC": 0, "SEC": 0,
                                                "LC": 0, "ALL": 0.0}]}
    text = report.emit_report(sections, ledger, "records")
    meta, back = report.parse_records(text)
    assert meta["abstraction"] == "tool-file/1"
    assert {k: v for k, v in back.items() if k != "cost"} == sections
    assert back["cost"][-1] == {"agent": "total", "input_tokens": 1000, "output_tokens": 500,
                                "dollars": "0.010500", "wall_seconds": 2.0}
    assert report.emit_report(sections, ledger, "records") == text
    with pytest.raises(ValueError):
        report.emit_report({"bogus": []})


def test_cli_metrics_table_matches_golden():
    result = CliRunner().invoke(main, [
        "metrics", "--src-tests", str(PAIR / "java"), "--tgt-tests", str(PAIR / "python"),
        "--src-lang", "java", "--tgt-lang", "python",
        "--embeddings", str(PAIR / "embeddings.tsv")])
    assert result.exit_code == 0, result.output
    assert result.output == (GOLDEN / "metrics_pair.txt").read_text()
