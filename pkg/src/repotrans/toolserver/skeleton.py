"""Per-language extraction of file skeletons (imports, classes, functions, ...).

Each adapter walks a tree-sitter parse tree and files every named construct
under one of five categories. Names are qualified with their enclosing
scopes, joined by dots. Interfaces and traits are recorded under ``classes``
with kind ``interface``; Go named non-struct types and Rust enums go under
``structs``.
"""

from __future__ import annotations

from collections.abc import Iterable

from repotrans.model import Fragment
from repotrans.treesitter import parse, span, text

CATEGORIES = ("imports", "classes", "functions", "globals", "structs")

_CATEGORY_KIND_DEFAULT = {"classes": "class", "functions": "function",
                          "globals": "global", "structs": "struct"}


class _Collector:
    def __init__(self):
        self.skeleton = {c: [] for c in CATEGORIES}

    def add(self, category: str, name: str, node, kind: str | None = None):
        entry = {"name": name, "kind": kind or _CATEGORY_KIND_DEFAULT.get(category, "import"),
                 "span": list(span(node))}
        self.skeleton[category].append(entry)


def _qual(scope: tuple[str, ...], name: str) -> str:
    return ".".join((*scope, name))


# -- python -------------------------------------------------------------------

def _py_walk(node, c: _Collector, scope: tuple[str, ...], in_class: bool, top: bool):
    for child in node.named_children:
        kind = child.type
        if kind == "decorated_definition":
            child = child.child_by_field_name("definition")
            kind = child.type
        if kind in ("import_statement", "import_from_statement", "future_import_statement"):
            module = child.child_by_field_name("module_name")
            if module is not None:
                c.add("imports", text(module), child)
            else:
                for name in child.children_by_field_name("name"):
                    target = name.child_by_field_name("name") or name
                    c.add("imports", text(target), child)
        elif kind == "class_definition":
            name = text(child.child_by_field_name("name"))
            c.add("classes", _qual(scope, name), child)
            _py_walk(child.child_by_field_name("body"), c, (*scope, name), True, False)
        elif kind == "function_definition":
            name = text(child.child_by_field_name("name"))
            c.add("functions", _qual(scope, name), child, "method" if in_class else "function")
            _py_walk(child.child_by_field_name("body"), c, (*scope, name), False, False)
        elif kind == "expression_statement" and top:
            for expr in child.named_children:
                if expr.type == "assignment":
                    for name in _py_targets(expr.child_by_field_name("left")):
                        c.add("globals", name, child)
        elif kind in ("if_statement", "try_statement", "with_statement", "block",
                      "else_clause", "elif_clause", "except_clause", "finally_clause"):
            # Conditional definitions keep their enclosing scope.
            _py_walk(child, c, scope, in_class, False)


def _py_targets(node) -> Iterable[str]:
    if node is None:
        return
    if node.type == "identifier":
        yield text(node)
    elif node.type in ("pattern_list", "tuple_pattern", "list_pattern"):
        for sub in node.named_children:
            yield from _py_targets(sub)


def _python(root, c: _Collector):
    _py_walk(root, c, (), False, True)


# -- go -----------------------------------------------------------------------

def _go_receiver_type(receiver) -> str:
    for param in receiver.named_children:
        typ = param.child_by_field_name("type")
        while typ is not None and typ.type in ("pointer_type", "generic_type"):
            typ = typ.named_children[0] if typ.type == "pointer_type" else typ.child_by_field_name("type")
        if typ is not None:
            return text(typ)
    return "?"


def _go(root, c: _Collector):
    for child in root.named_children:
        kind = child.type
        if kind == "import_declaration":
            for spec in _descendants(child, "import_spec"):
                path = spec.child_by_field_name("path")
                c.add("imports", text(path).strip('"`'), spec)
        elif kind == "function_declaration":
            c.add("functions", text(child.child_by_field_name("name")), child)
        elif kind == "method_declaration":
            recv = _go_receiver_type(child.child_by_field_name("receiver"))
            c.add("functions", f"{recv}.{text(child.child_by_field_name('name'))}", child, "method")
        elif kind == "type_declaration":
            for spec in child.named_children:
                if spec.type not in ("type_spec", "type_alias"):
                    continue
                name = text(spec.child_by_field_name("name"))
                typ = spec.child_by_field_name("type")
                node = child if len(child.named_children) == 1 else spec
                if typ is not None and typ.type == "interface_type":
                    c.add("classes", name, node, "interface")
                else:
                    c.add("structs", name, node, "struct")
        elif kind in ("var_declaration", "const_declaration"):
            for spec in _descendants(child, ("var_spec", "const_spec")):
                node = child if len(child.named_children) == 1 else spec
                for name in spec.children_by_field_name("name"):
                    if name.type == "identifier":
                        c.add("globals", text(name), node)


# -- javascript ---------------------------------------------------------------

_JS_FUNCTION_VALUES = ("arrow_function", "function_expression", "function", "generator_function")


def _js_is_require(value) -> bool:
    return (value is not None and value.type == "call_expression"
            and text(value.child_by_field_name("function")) == "require")


def _js_class(node, c: _Collector, scope: tuple[str, ...]):
    name = text(node.child_by_field_name("name"))
    c.add("classes", _qual(scope, name), node)
    for member in node.child_by_field_name("body").named_children:
        if member.type == "method_definition":
            c.add("functions", _qual((*scope, name), text(member.child_by_field_name("name"))),
                  member, "method")


def _js_walk(node, c: _Collector):
    for child in node.named_children:
        kind = child.type
        if kind == "export_statement":
            decl = child.child_by_field_name("declaration")
            if decl is not None:
                _js_walk_one(decl, c, child)
            continue
        _js_walk_one(child, c, child)


def _js_walk_one(child, c: _Collector, outer):
    kind = child.type
    if kind == "import_statement":
        c.add("imports", text(child.child_by_field_name("source")).strip("'\"`"), outer)
    elif kind in ("function_declaration", "generator_function_declaration"):
        c.add("functions", text(child.child_by_field_name("name")), outer)
    elif kind == "class_declaration":
        _js_class(child, c, ())
    elif kind in ("lexical_declaration", "variable_declaration"):
        for decl in child.named_children:
            if decl.type != "variable_declarator":
                continue
            name_node, value = decl.child_by_field_name("name"), decl.child_by_field_name("value")
            if name_node.type != "identifier":
                if _js_is_require(value):
                    c.add("imports", text(value.child_by_field_name("arguments").named_children[0]).strip("'\"`"), outer)
                continue
            if _js_is_require(value):
                c.add("imports", text(value.child_by_field_name("arguments").named_children[0]).strip("'\"`"), outer)
            elif value is not None and value.type in _JS_FUNCTION_VALUES:
                c.add("functions", text(name_node), outer)
            elif value is not None and value.type == "class":
                c.add("classes", text(name_node), outer)
            else:
                c.add("globals", text(name_node), outer)


def _javascript(root, c: _Collector):
    _js_walk(root, c)


# -- java ---------------------------------------------------------------------

_JAVA_TYPES = {"class_declaration": "class", "enum_declaration": "class",
               "record_declaration": "class", "interface_declaration": "interface",
               "annotation_type_declaration": "interface"}


def _java_type(node, c: _Collector, scope: tuple[str, ...]):
    name = text(node.child_by_field_name("name"))
    c.add("classes", _qual(scope, name), node, _JAVA_TYPES[node.type])
    inner = (*scope, name)
    body = node.child_by_field_name("body")
    if body is None:
        return
    for member in body.named_children:
        if member.type == "enum_body_declarations":
            members = member.named_children
        else:
            members = [member]
        for m in members:
            if m.type in _JAVA_TYPES:
                _java_type(m, c, inner)
            elif m.type in ("method_declaration", "constructor_declaration"):
                c.add("functions", _qual(inner, text(m.child_by_field_name("name"))), m, "method")
            elif m.type in ("field_declaration", "constant_declaration"):
                mods = next((x for x in m.named_children if x.type == "modifiers"), None)
                if m.type == "constant_declaration" or (mods is not None and "static" in text(mods).split()):
                    for decl in m.children_by_field_name("declarator"):
                        c.add("globals", _qual(inner, text(decl.child_by_field_name("name"))), m)


def _java(root, c: _Collector):
    for child in root.named_children:
        if child.type == "import_declaration":
            names = [x for x in child.named_children if x.type in ("scoped_identifier", "identifier")]
            c.add("imports", text(names[0]) if names else text(child), child)
        elif child.type in _JAVA_TYPES:
            _java_type(child, c, ())


# -- rust ---------------------------------------------------------------------

def _rust_type_name(node) -> str:
    while node is not None and node.type in ("generic_type", "reference_type", "scoped_type_identifier"):
        node = node.child_by_field_name("type") or node.child_by_field_name("name")
    return text(node) if node is not None else "?"


def _rust_walk(node, c: _Collector, scope: tuple[str, ...]):
    for child in node.named_children:
        kind = child.type
        if kind == "use_declaration":
            c.add("imports", text(child.child_by_field_name("argument")), child)
        elif kind == "function_item":
            c.add("functions", _qual(scope, text(child.child_by_field_name("name"))), child)
        elif kind in ("struct_item", "enum_item", "union_item"):
            c.add("structs", _qual(scope, text(child.child_by_field_name("name"))), child)
        elif kind == "trait_item":
            name = text(child.child_by_field_name("name"))
            c.add("classes", _qual(scope, name), child, "interface")
            _rust_members(child.child_by_field_name("body"), c, (*scope, name))
        elif kind == "impl_item":
            name = _rust_type_name(child.child_by_field_name("type"))
            body = child.child_by_field_name("body")
            if body is not None:
                _rust_members(body, c, (*scope, name))
        elif kind in ("const_item", "static_item"):
            c.add("globals", _qual(scope, text(child.child_by_field_name("name"))), child)
        elif kind == "mod_item":
            body = child.child_by_field_name("body")
            if body is not None:
                _rust_walk(body, c, (*scope, text(child.child_by_field_name("name"))))


def _rust_members(body, c: _Collector, scope: tuple[str, ...]):
    for m in body.named_children:
        if m.type in ("function_item", "function_signature_item"):
            c.add("functions", _qual(scope, text(m.child_by_field_name("name"))), m, "method")
        elif m.type == "const_item":
            c.add("globals", _qual(scope, text(m.child_by_field_name("name"))), m)


def _rust(root, c: _Collector):
    _rust_walk(root, c, ())


def _descendants(node, types) -> Iterable:
    if isinstance(types, str):
        types = (types,)
    for child in node.named_children:
        if child.type in types:
            yield child
        else:
            yield from _descendants(child, types)


ADAPTERS = {"python": _python, "go": _go, "javascript": _javascript, "java": _java, "rust": _rust}


def file_structure(source: bytes, language: str, filepath: str) -> dict:
    """Return the skeleton record for one file's contents.

    On a syntax error the partial skeleton is still returned, flagged with
    ``parse_error``.
    """
    tree = parse(language, source)
    collector = _Collector()
    ADAPTERS[language](tree.root_node, collector)
    for entries in collector.skeleton.values():
        entries.sort(key=lambda e: (e["span"][0], e["span"][1], e["name"]))
    return {
        "filepath": filepath,
        "language": language,
        "skeleton": collector.skeleton,
        "parse_error": tree.root_node.has_error,
    }


def skeleton_fragments(record: dict) -> list[Fragment]:
    out = []
    for category in ("classes", "functions", "globals", "structs"):
        for entry in record["skeleton"][category]:
            out.append(Fragment(record["filepath"], entry["name"], entry["kind"],
                                tuple(entry["span"])))
    return sorted(out, key=lambda f: (f.span, f.qualified_name))
