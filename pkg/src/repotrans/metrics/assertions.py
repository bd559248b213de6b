"""Static extraction of test cases and their assertions.

Each language has a small pattern table mapping assertion constructs to one
of four kinds: ``assert_equal``, ``assert_true``, ``assert_false`` and
``other``. The expected value of an equality assertion is recorded when it
is a literal of type string, int, float or bool.

Pattern tables:

python
    ``assert a == b`` is assert_equal, ``assert not x`` assert_false, any
    other comparison ``other``, any other expression assert_true.
    ``assertEqual``/``assertEquals``/``assertTrue``/``assertFalse`` calls map
    by name; any other ``assert*`` call and ``pytest.raises`` is ``other``.
java
    ``assertEquals`` is assert_equal, ``assertTrue``/``assertFalse`` map by
    name, any other ``assert*`` or ``fail`` call is ``other``.
javascript
    ``assert.equal``/``strictEqual``/``deepEqual``/``deepStrictEqual`` and
    ``expect(..).toBe``/``toEqual``/``toStrictEqual`` are assert_equal;
    ``assert(x)``/``assert.ok(x)``/``toBeTruthy`` assert_true, the same with
    a leading ``!`` or ``toBeFalsy`` assert_false; other ``assert.*`` and
    ``expect`` matchers are ``other``.
go
    An ``if`` whose body calls ``t.Error*``/``t.Fatal*`` is an assertion:
    condition ``a != b`` is assert_equal, ``!x`` assert_true, a bare
    ``x`` assert_false, anything else ``other``. testify's
    ``assert``/``require`` ``Equal``, ``True`` and ``False`` map by name.
rust
    ``assert_eq!`` is assert_equal, ``assert!(!x)`` assert_false,
    ``assert!(x)`` assert_true, other ``assert*!`` and ``panic!`` are
    ``other``.

Method invocations count every call expression in a test body, assertion
calls and macro invocations included.
"""

from __future__ import annotations

import ast
import json
import re
from dataclasses import dataclass, field

from repotrans.treesitter import GRAMMARS, parse, text

KINDS = ("assert_equal", "assert_true", "assert_false", "other")
LITERAL_TYPES = ("string", "int", "float", "bool")


class AssertionParseError(ValueError):
    pass


@dataclass(frozen=True)
class Literal:
    type: str
    value: object


@dataclass(frozen=True)
class AssertionRecord:
    test_id: str
    kind: str
    expected_literal: Literal | None
    line: int


@dataclass
class TestCase:
    test_id: str
    span: tuple[int, int]
    loc: int = 0
    invocations: int = 0
    assertions: list[AssertionRecord] = field(default_factory=list)


# -- literals ---------------------------------------------------------------------------


def _decode_string(raw: str) -> str:
    if raw[:1] in ("r", "b") and len(raw) > 1 and raw[1] in "\"'#":
        body = raw.lstrip("rb").strip("#")
        return body[1:-1]
    if raw[:1] == "`":
        return raw[1:-1]
    if raw[:1] == '"':
        try:
            return json.loads(raw)
        except ValueError:
            pass
    try:
        value = ast.literal_eval(raw)
        if isinstance(value, str):
            return value
    except (ValueError, SyntaxError):
        pass
    return raw[1:-1]


def _number(raw: str, negative: bool = False) -> Literal | None:
    cleaned = raw.replace("_", "")
    cleaned = re.sub(r"(?i)(u8|u16|u32|u64|u128|usize|i8|i16|i32|i64|i128|isize|f32|f64)$", "", cleaned)
    cleaned = re.sub(r"[lLfFdD]$", "", cleaned) if not cleaned.lower().startswith("0x") else cleaned
    sign = -1 if negative else 1
    try:
        if re.fullmatch(r"(?i)0x[0-9a-f]+|0o?[0-7]+|0b[01]+|\d+", cleaned):
            base = 16 if cleaned[:2].lower() == "0x" else 2 if cleaned[:2].lower() == "0b" else \
                8 if cleaned[:2].lower() == "0o" else 10
            digits = cleaned[2:] if base != 10 else cleaned
            return Literal("int", sign * int(digits, base))
        return Literal("float", sign * float(cleaned))
    except ValueError:
        return None


_STRING_TYPES = {"string", "string_literal", "interpreted_string_literal", "raw_string_literal",
                 "character_literal", "char_literal"}
_INT_TYPES = {"integer", "integer_literal", "int_literal", "decimal_integer_literal",
              "hex_integer_literal", "octal_integer_literal", "binary_integer_literal"}
_FLOAT_TYPES = {"float", "float_literal", "decimal_floating_point_literal"}
_BOOL_TEXT = {"true": True, "false": False, "True": True, "False": False}


def literal_of(node) -> Literal | None:
    """Typed literal for an expression node, or ``None`` if it is not one."""
    if node is None:
        return None
    while node.type in ("parenthesized_expression",) and node.named_child_count == 1:
        node = node.named_children[0]
    t, raw = node.type, text(node)
    if t in _STRING_TYPES:
        if t == "string" and node.children and text(node.children[0]).lower().startswith("f"):
            return None  # f-strings are not literals
        if any(c.type in ("interpolation", "template_substitution") for c in node.named_children):
            return None
        return Literal("string", _decode_string(raw))
    if t == "template_string":
        if any(c.type == "template_substitution" for c in node.named_children):
            return None
        return Literal("string", raw[1:-1])
    if t in _INT_TYPES or t in _FLOAT_TYPES or t == "number":
        lit = _number(raw)
        if lit is not None and t in _FLOAT_TYPES and lit.type == "int":
            lit = Literal("float", float(lit.value))
        return lit
    if t in ("true", "false", "boolean_literal") or (t == "identifier" and raw in ("true", "false")):
        return Literal("bool", _BOOL_TEXT[raw])
    if t in ("unary_expression", "unary_operator") and raw.startswith("-"):
        operand = node.named_children[-1] if node.named_children else None
        inner = literal_of(operand)
        if inner is not None and inner.type in ("int", "float"):
            return Literal(inner.type, -inner.value)
    return None


# -- shared walking helpers ------------------------------------------------------------


def _walk(node):
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        stack.extend(reversed(n.children))


def _loc(source_lines: list[str], span: tuple[int, int], line_comment: str) -> int:
    count = 0
    for line in source_lines[span[0] - 1: span[1]]:
        s = line.strip()
        if s and not s.startswith(line_comment):
            count += 1
    return count


def _first_literal(*nodes) -> Literal | None:
    for n in nodes:
        lit = literal_of(n)
        if lit is not None:
            return lit
    return None


def _args(call) -> list:
    args = call.child_by_field_name("arguments")
    return [] if args is None else [a for a in args.named_children if a.type != "comment"]


def _callee_name(call) -> str:
    fn = call.child_by_field_name("function") or call.child_by_field_name("name")
    if fn is None:
        return ""
    if fn.type in ("attribute", "member_expression", "selector_expression", "field_expression"):
        last = fn.named_children[-1]
        return text(last)
    return text(fn)


# -- python -------------------------------------------------------------------------


def _py_tests(root):
    def visit(node, scope):
        for child in node.named_children:
            target = child.child_by_field_name("definition") if child.type == "decorated_definition" else child
            if target is None:
                continue
            if target.type == "class_definition":
                yield from visit(target.child_by_field_name("body"),
                                 (*scope, text(target.child_by_field_name("name"))))
            elif target.type == "function_definition":
                name = text(target.child_by_field_name("name"))
                if name.startswith("test"):
                    yield ".".join((*scope, name)), target
    return list(visit(root, ()))


def _py_assertions(body):
    for n in _walk(body):
        if n.type == "assert_statement":
            expr = n.named_children[0] if n.named_children else None
            yield _py_assert_stmt(expr), n
        elif n.type == "call":
            name = _callee_name(n)
            fn = text(n.child_by_field_name("function"))
            if name in ("assertEqual", "assertEquals"):
                args = _args(n)
                yield ("assert_equal", _first_literal(*args[1:2], *args[:1])), n
            elif name == "assertTrue":
                yield ("assert_true", None), n
            elif name == "assertFalse":
                yield ("assert_false", None), n
            elif name.startswith("assert") or fn == "pytest.raises":
                yield ("other", None), n


def _py_assert_stmt(expr):
    if expr is None:
        return "other", None
    if expr.type == "not_operator":
        return "assert_false", None
    if expr.type == "comparison_operator":
        ops = [text(c) for c in expr.children if not c.is_named]
        operands = expr.named_children
        if ops == ["=="] and len(operands) == 2:
            return "assert_equal", _first_literal(operands[1], operands[0])
        return "other", None
    return "assert_true", None


# -- java ---------------------------------------------------------------------------


def _java_tests(root):
    out = []

    def visit(node, scope):
        for child in node.named_children:
            if child.type in ("class_declaration", "enum_declaration", "record_declaration"):
                name = text(child.child_by_field_name("name"))
                body = child.child_by_field_name("body")
                if body is not None:
                    visit(body, (*scope, name))
            elif child.type == "method_declaration":
                mods = next((c for c in child.named_children if c.type == "modifiers"), None)
                annotated = mods is not None and re.search(r"@(\w+\.)*(Test|ParameterizedTest|RepeatedTest)\b", text(mods))
                name = text(child.child_by_field_name("name"))
                if annotated or name.startswith("test"):
                    out.append((".".join((*scope, name)), child))
    visit(root, ())
    return out


def _java_assertions(body):
    for n in _walk(body):
        if n.type != "method_invocation":
            continue
        name = text(n.child_by_field_name("name"))
        if name == "assertEquals":
            args = _args(n)
            if len(args) == 3 and literal_of(args[0]) and literal_of(args[0]).type == "string" \
                    and not (literal_of(args[2]) and literal_of(args[2]).type == "float"):
                expected = args[1]  # JUnit 4 order: message, expected, actual
            else:
                expected = args[0] if args else None
            yield ("assert_equal", literal_of(expected)), n
        elif name == "assertTrue":
            yield ("assert_true", None), n
        elif name == "assertFalse":
            yield ("assert_false", None), n
        elif name.startswith("assert") or name == "fail":
            yield ("other", None), n


# -- javascript ---------------------------------------------------------------------


_JS_EQUAL = {"equal", "strictEqual", "deepEqual", "deepStrictEqual"}
_JEST_EQUAL = {"toBe", "toEqual", "toStrictEqual"}


def _js_tests(root):
    out = []

    def visit(node, scope):
        for n in node.named_children:
            if n.type == "call_expression":
                fn = n.child_by_field_name("function")
                fname = text(fn) if fn is not None else ""
                args = _args(n)
                title = literal_of(args[0]) if args else None
                if fname in ("describe", "test.describe", "suite") and title and title.type == "string":
                    for a in args[1:]:
                        visit(a, (*scope, title.value))
                    continue
                if fname in ("test", "it", "test.it", "test.only", "it.only") and title and title.type == "string":
                    out.append((" > ".join((*scope, title.value)), n))
                    continue
            visit(n, scope)
    visit(root, ())
    return out


def _js_assertions(body):
    for n in _walk(body):
        if n.type != "call_expression":
            continue
        fn = n.child_by_field_name("function")
        fname = text(fn) if fn is not None else ""
        args = _args(n)
        if fname in ("assert", "assert.ok"):
            negated = bool(args) and args[0].type == "unary_expression" and text(args[0]).startswith("!")
            yield ("assert_false" if negated else "assert_true", None), n
        elif fname.startswith("assert."):
            method = fname.split(".", 1)[1]
            if method in _JS_EQUAL:
                yield ("assert_equal", _first_literal(*args[1:2], *args[:1])), n
            else:
                yield ("other", None), n
        elif fn is not None and fn.type == "member_expression" and text(fn.child_by_field_name("object")).startswith("expect("):
            matcher = text(fn.child_by_field_name("property"))
            inner = fn.child_by_field_name("object")
            if inner.type == "member_expression":  # expect(x).not.toBe(...)
                yield ("other", None), n
            elif matcher in _JEST_EQUAL:
                yield ("assert_equal", _first_literal(*args[:1])), n
            elif matcher == "toBeTruthy":
                yield ("assert_true", None), n
            elif matcher == "toBeFalsy":
                yield ("assert_false", None), n
            else:
                yield ("other", None), n


# -- go -------------------------------------------------------------------------------


_GO_FAIL = re.compile(r"^(Error|Errorf|Fatal|Fatalf|Fail|FailNow)$")


def _go_tests(root):
    out = []
    for n in root.named_children:
        if n.type == "function_declaration":
            name = text(n.child_by_field_name("name"))
            if re.match(r"^Test[A-Z0-9_]|^Test$", name):
                out.append((name, n))
    return out


def _go_reports_failure(block) -> bool:
    for n in _walk(block):
        if n.type == "call_expression":
            fn = n.child_by_field_name("function")
            if fn is not None and fn.type == "selector_expression" and \
                    _GO_FAIL.match(text(fn.child_by_field_name("field"))):
                return True
    return False


def _go_assertions(body):
    for n in _walk(body):
        if n.type == "if_statement":
            consequence = n.child_by_field_name("consequence")
            if consequence is None or not _go_reports_failure(consequence):
                continue
            cond = n.child_by_field_name("condition")
            ops = [text(c) for c in cond.children if not c.is_named] if cond is not None else []
            if cond is not None and cond.type == "binary_expression" and ops == ["!="]:
                yield ("assert_equal", _first_literal(cond.child_by_field_name("right"),
                                                      cond.child_by_field_name("left"))), n
            elif cond is not None and cond.type == "unary_expression" and text(cond).startswith("!"):
                yield ("assert_true", None), n
            elif cond is not None and cond.type in ("identifier", "call_expression", "selector_expression"):
                yield ("assert_false", None), n
            else:
                yield ("other", None), n
        elif n.type == "call_expression":
            fn = n.child_by_field_name("function")
            if fn is None or fn.type != "selector_expression":
                continue
            pkg = text(fn.child_by_field_name("operand"))
            name = text(fn.child_by_field_name("field"))
            if pkg not in ("assert", "require"):
                continue
            args = _args(n)
            if name == "Equal":
                yield ("assert_equal", _first_literal(*args[1:2], *args[2:3])), n
            elif name == "True":
                yield ("assert_true", None), n
            elif name == "False":
                yield ("assert_false", None), n
            else:
                yield ("other", None), n


# -- rust -------------------------------------------------------------------------------


def _rust_tests(root):
    out = []

    def visit(node, scope):
        pending_test = False
        for n in node.named_children:
            if n.type == "attribute_item":
                if re.search(r"\btest\b", text(n)):
                    pending_test = True
                continue
            if n.type == "function_item" and pending_test:
                out.append((".".join((*scope, text(n.child_by_field_name("name")))), n))
            elif n.type == "mod_item" and n.child_by_field_name("body") is not None:
                visit(n.child_by_field_name("body"), (*scope, text(n.child_by_field_name("name"))))
            pending_test = False
    visit(root, ())
    return out


def _rust_macro_args(tree) -> list[list]:
    args, current = [], []
    for c in tree.children[1:-1]:
        if not c.is_named and text(c) == ",":
            args.append(current)
            current = []
        else:
            current.append(c)
    if current:
        args.append(current)
    return args


def _rust_arg_literal(tokens) -> Literal | None:
    if len(tokens) == 1:
        return literal_of(tokens[0])
    if len(tokens) == 2 and text(tokens[0]) == "-":
        lit = literal_of(tokens[1])
        if lit is not None and lit.type in ("int", "float"):
            return Literal(lit.type, -lit.value)
    return None


def _rust_assertions(body):
    for n in _walk(body):
        if n.type != "macro_invocation":
            continue
        name = text(n.child_by_field_name("macro"))
        tree = next((c for c in n.named_children if c.type == "token_tree"), None)
        args = _rust_macro_args(tree) if tree is not None else []
        if name == "assert_eq":
            lit = _rust_arg_literal(args[1]) if len(args) > 1 else None
            if lit is None and args:
                lit = _rust_arg_literal(args[0])
            yield ("assert_equal", lit), n
        elif name == "assert":
            negated = bool(args) and bool(args[0]) and text(args[0][0]) == "!"
            yield ("assert_false" if negated else "assert_true", None), n
        elif name.startswith("assert") or name == "panic":
            yield ("other", None), n


# -- driver -------------------------------------------------------------------------------


_TABLE = {
    "python": (_py_tests, _py_assertions, ("call",), "#"),
    "java": (_java_tests, _java_assertions, ("method_invocation", "object_creation_expression"), "//"),
    "javascript": (_js_tests, _js_assertions, ("call_expression", "new_expression"), "//"),
    "go": (_go_tests, _go_assertions, ("call_expression",), "//"),
    "rust": (_rust_tests, _rust_assertions, ("call_expression", "macro_invocation"), "//"),
}


def analyze_tests(source: str, language: str, file: str = "") -> list[TestCase]:
    """Test cases in a test file, each with its assertions, LoC and call count."""
    if language not in _TABLE or language not in GRAMMARS:
        raise AssertionParseError(f"no assertion patterns for {language}")
    tree = parse(language, source.encode("utf-8"))
    if tree.root_node.has_error:
        raise AssertionParseError(f"{file or '<source>'}: parse error")
    find_tests, find_assertions, call_types, comment = _TABLE[language]
    lines = source.splitlines()
    out = []
    for name, node in find_tests(tree.root_node):
        test_id = f"{file}::{name}" if file else name
        span = (node.start_point[0] + 1, node.end_point[0] + 1)
        case = TestCase(test_id, span, _loc(lines, span, comment))
        case.invocations = sum(1 for n in _walk(node) if n.type in call_types)
        for (kind, lit), at in find_assertions(node):
            case.assertions.append(AssertionRecord(test_id, kind, lit, at.start_point[0] + 1))
        case.assertions.sort(key=lambda r: r.line)
        out.append(case)
    return out


def extract_assertions(source: str, language: str, file: str = "") -> list[AssertionRecord]:
    """Every recognized assertion in the file's test cases, in source order."""
    return [r for case in analyze_tests(source, language, file) for r in case.assertions]
