"""Thin per-language adapters invoked through profile command templates.

    python3 -m repotrans.validation.adapters pycheck ROOT
    python3 -m repotrans.validation.adapters pycov ROOT [TEST_FILE ...]
    python3 -m repotrans.validation.adapters jscheck ROOT
    python3 -m repotrans.validation.adapters jscov ROOT [TEST_FILE ...]
    python3 -m repotrans.validation.adapters gocov ROOT

Checkers print ``file:line:col: error: message`` lines and exit 1 on any
error. Coverage adapters print the normalized coverage format on stdout;
they exit 0 even when tests fail, and 3 when the coverage tool is missing.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import sys
import tempfile
from pathlib import Path

from repotrans.model import walk_files
from repotrans.validation.coverage import CoverageData, FileCoverage, dumps

UNAVAILABLE = 3


def _rel(root: Path, path: str) -> str | None:
    p = Path(path)
    if not p.is_absolute():
        p = root / p
    try:
        return p.resolve().relative_to(root).as_posix()
    except ValueError:
        return None


def pycheck(root: Path) -> int:
    status = 0
    for rel in walk_files(root):
        if not rel.endswith(".py"):
            continue
        source = (root / rel).read_bytes()
        try:
            compile(source, rel, "exec", dont_inherit=True)
        except SyntaxError as exc:
            print(f"{rel}:{exc.lineno or 1}:{exc.offset or 1}: error: {exc.msg}")
            status = 1
        except ValueError as exc:  # null bytes and the like
            print(f"{rel}:1:1: error: {exc}")
            status = 1
    return status


def pycov(root: Path, tests: list[str]) -> int:
    try:
        import coverage  # noqa: F401
    except ImportError:
        print("coverage.py is not installed", file=sys.stderr)
        return UNAVAILABLE
    with tempfile.TemporaryDirectory() as tmp:
        env = {**os.environ, "COVERAGE_FILE": os.path.join(tmp, ".coverage"),
               "PYTHONDONTWRITEBYTECODE": "1"}
        subprocess.run([sys.executable, "-m", "coverage", "run", f"--source={root}", "-m", "pytest",
                        "-q", "-p", "no:cacheprovider", f"--rootdir={root}", *tests],
                       cwd=root, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        out = os.path.join(tmp, "cov.json")
        done = subprocess.run([sys.executable, "-m", "coverage", "json", "-q", "-o", out],
                              cwd=root, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE,
                              text=True)
        if done.returncode != 0 or not os.path.exists(out):
            print(done.stderr.strip() or "coverage produced no data", file=sys.stderr)
            return 1
        data = json.loads(Path(out).read_text())
    files = {}
    for name, entry in data.get("files", {}).items():
        rel = _rel(root, name)
        if rel is None:
            continue
        hit = frozenset(entry.get("executed_lines", []))
        files[rel] = FileCoverage(hit | frozenset(entry.get("missing_lines", [])), hit)
    sys.stdout.write(dumps(CoverageData(files)))
    return 0


def jscheck(root: Path) -> int:
    status = 0
    for rel in walk_files(root):
        if not rel.endswith((".js", ".mjs", ".cjs")):
            continue
        done = subprocess.run(["node", "--check", rel], cwd=root, capture_output=True, text=True)
        if done.returncode == 0:
            continue
        status = 1
        lines = done.stderr.splitlines()
        where = re.search(r":(\d+)$", lines[0]) if lines else None
        message = next((ln for ln in lines if re.match(r"^\w*Error\b", ln)), "syntax error")
        print(f"{rel}:{where.group(1) if where else 1}:1: error: {message}")
    return status


def parse_lcov(text: str, root: Path) -> CoverageData:
    files: dict[str, FileCoverage] = {}
    current, executable, hit = None, set(), set()
    for line in text.splitlines():
        if line.startswith("SF:"):
            current, executable, hit = _rel(root, line[3:]), set(), set()
        elif line.startswith("DA:") and current is not None:
            number, count = line[3:].split(",")[:2]
            executable.add(int(number))
            if int(count) > 0:
                hit.add(int(number))
        elif line == "end_of_record" and current is not None:
            files[current] = FileCoverage(frozenset(executable), frozenset(hit))
            current = None
    return CoverageData(files)


def jscov(root: Path, tests: list[str]) -> int:
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "lcov.info")
        try:
            subprocess.run(["node", "--test", "--experimental-test-coverage",
                            "--test-reporter=lcov", f"--test-reporter-destination={out}", *tests],
                           cwd=root, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        except FileNotFoundError:
            print("node is not installed", file=sys.stderr)
            return UNAVAILABLE
        if not os.path.exists(out):
            print("node produced no coverage data", file=sys.stderr)
            return 1
        data = parse_lcov(Path(out).read_text(), root)
    sys.stdout.write(dumps(data))
    return 0


_GO_BLOCK = re.compile(r"^(?P<file>.+):(?P<l1>\d+)\.\d+,(?P<l2>\d+)\.\d+ \d+ (?P<count>\d+)$")


def parse_go_profile(text: str, module: str, root: Path) -> CoverageData:
    executable: dict[str, set[int]] = {}
    hit: dict[str, set[int]] = {}
    for line in text.splitlines():
        m = _GO_BLOCK.match(line.strip())
        if not m:
            continue
        name = m["file"]
        if module and name.startswith(module + "/"):
            name = name[len(module) + 1:]
        rel = _rel(root, name)
        if rel is None:
            continue
        lines = range(int(m["l1"]), int(m["l2"]) + 1)
        executable.setdefault(rel, set()).update(lines)
        if int(m["count"]) > 0:
            hit.setdefault(rel, set()).update(lines)
    return CoverageData({f: FileCoverage(frozenset(executable[f]), frozenset(hit.get(f, ())))
                         for f in executable})


def gocov(root: Path) -> int:
    gomod = root / "go.mod"
    module = ""
    if gomod.exists():
        m = re.search(r"^module\s+(\S+)", gomod.read_text(), re.M)
        module = m.group(1) if m else ""
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, "cover.out")
        try:
            subprocess.run(["go", "test", f"-coverprofile={out}", "./..."], cwd=root,
                           stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        except FileNotFoundError:
            print("go is not installed", file=sys.stderr)
            return UNAVAILABLE
        if not os.path.exists(out):
            print("go produced no coverage profile", file=sys.stderr)
            return 1
        data = parse_go_profile(Path(out).read_text(), module, root)
    sys.stdout.write(dumps(data))
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) < 2:
        print(__doc__, file=sys.stderr)
        return 2
    command, root, rest = argv[0], Path(argv[1]).resolve(), argv[2:]
    if command == "pycheck":
        return pycheck(root)
    if command == "pycov":
        return pycov(root, rest)
    if command == "jscheck":
        return jscheck(root)
    if command == "jscov":
        return jscov(root, rest)
    if command == "gocov":
        return gocov(root)
    print(f"unknown adapter {command!r}", file=sys.stderr)
    return 2


if __name__ == "__main__":
    sys.exit(main())
