"""Source/target test comparison: assertion counts, expected values, kinds, similarity."""

from __future__ import annotations

import math
import re
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from repotrans.metrics.assertions import KINDS, AssertionRecord, Literal, TestCase

FLOAT_RTOL = 1e-9


class MetricsError(ValueError):
    pass


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise MetricsError(f"dimension mismatch: {len(a)} vs {len(b)}")
    na = math.sqrt(math.fsum(x * x for x in a))
    nb = math.sqrt(math.fsum(y * y for y in b))
    if na == 0 or nb == 0:
        raise MetricsError("cosine is undefined for a zero vector")
    value = math.fsum(x * y for x, y in zip(a, b)) / (na * nb)
    return max(-1.0, min(1.0, value))


def literals_equal(a: Literal, b: Literal) -> bool:
    """Strings and ints and bools compare exactly; floats within a relative 1e-9.

    An int and a float holding the same number are equal, since target
    languages may differ in how they spell whole-valued floats.
    """
    numeric = ("int", "float")
    if a.type in numeric and b.type in numeric and "float" in (a.type, b.type):
        return math.isclose(float(a.value), float(b.value), rel_tol=FLOAT_RTOL, abs_tol=0.0)
    return a.type == b.type and a.value == b.value


def _match_literals(src: list[Literal], tgt: list[Literal]) -> int:
    """Size of the largest one-to-one matching under :func:`literals_equal`."""
    remaining = list(tgt)
    matched = 0
    for lit in src:
        for i, other in enumerate(remaining):
            if literals_equal(lit, other):
                del remaining[i]
                matched += 1
                break
    return matched


@dataclass
class TestPairMetrics:
    source_id: str
    target_id: str
    assertion_counts: tuple[int, int, bool]
    equal_output: tuple[int, int]  # (total, matching)
    type_match: dict[str, float | None]
    kind_counts: dict[str, tuple[int, int]]  # kind -> (source count, matched)
    cosine: float | None
    loc: tuple[int, int]
    invocations: tuple[int, int]


def compare_test_pair(src: TestCase, tgt: TestCase,
                      embeddings: tuple[Sequence[float], Sequence[float]] | None = None
                      ) -> TestPairMetrics:
    s_recs, t_recs = src.assertions, tgt.assertions
    count_match = len(s_recs) == len(t_recs)
    s_lits = _equal_literals(s_recs)
    t_lits = _equal_literals(t_recs)
    equal_output = (len(s_lits), _match_literals(s_lits, t_lits))
    s_kinds, t_kinds = Counter(r.kind for r in s_recs), Counter(r.kind for r in t_recs)
    kind_counts, type_match = {}, {}
    for kind in KINDS:
        matched = min(s_kinds[kind], t_kinds[kind])
        kind_counts[kind] = (s_kinds[kind], matched)
        type_match[kind] = round(100.0 * matched / s_kinds[kind], 4) if s_kinds[kind] else None
    sim = cosine(*embeddings) if embeddings is not None else None
    return TestPairMetrics(src.test_id, tgt.test_id, (len(s_recs), len(t_recs), count_match),
                           equal_output, type_match, kind_counts, sim, (src.loc, tgt.loc),
                           (src.invocations, tgt.invocations))


def _equal_literals(records: Sequence[AssertionRecord]) -> list[Literal]:
    return [r.expected_literal for r in records
            if r.kind == "assert_equal" and r.expected_literal is not None]


# -- pairing source and target tests ------------------------------------------------------


def test_key(test_id: str) -> str:
    """Language-neutral key: the test's last name segment, lowercased, without a test prefix."""
    name = re.split(r"::|\.| > ", test_id)[-1]
    key = re.sub(r"[^0-9a-z]", "", name.lower())
    return key[4:] if key.startswith("test") and len(key) > 4 else key


def pair_tests(source: Sequence[TestCase], target: Sequence[TestCase]
               ) -> tuple[list[tuple[TestCase, TestCase]], list[TestCase], list[TestCase]]:
    """Pair by :func:`test_key`; returns (pairs, unpaired source, unpaired target)."""
    by_key: dict[str, list[TestCase]] = {}
    for case in target:
        by_key.setdefault(test_key(case.test_id), []).append(case)
    pairs, lonely = [], []
    for case in source:
        bucket = by_key.get(test_key(case.test_id))
        if bucket:
            pairs.append((case, bucket.pop(0)))
        else:
            lonely.append(case)
    leftovers = [c for bucket in by_key.values() for c in bucket]
    return pairs, lonely, sorted(leftovers, key=lambda c: c.test_id)


@dataclass
class TestSuiteSummary:
    tests: int
    translated: int
    not_translated: int
    matching_assertions: int
    non_matching_assertions: int
    equal_output_total: int
    equal_output_matching: int
    type_match: dict[str, float | None]
    avg_cosine: float | None
    avg_loc: tuple[float, float]
    avg_invocations: tuple[float, float]
    pairs: list[TestPairMetrics] = field(default_factory=list)


def summarize(source: Sequence[TestCase], target: Sequence[TestCase],
              embeddings: Mapping[str, Sequence[float]] | None = None) -> TestSuiteSummary:
    """Project-level roll-up. Assertion-output matching counts per assertion."""
    pairs, lonely, _ = pair_tests(source, target)
    metrics = []
    for s, t in pairs:
        vec = None
        if embeddings is not None and f"src:{s.test_id}" in embeddings and f"tgt:{t.test_id}" in embeddings:
            vec = (embeddings[f"src:{s.test_id}"], embeddings[f"tgt:{t.test_id}"])
        metrics.append(compare_test_pair(s, t, vec))
    type_match = {}
    for kind in KINDS:
        total = sum(m.kind_counts[kind][0] for m in metrics)
        hit = sum(m.kind_counts[kind][1] for m in metrics)
        type_match[kind] = round(100.0 * hit / total, 4) if total else None
    sims = [m.cosine for m in metrics if m.cosine is not None]

    def mean(values):
        values = list(values)
        return round(sum(values) / len(values), 4) if values else 0.0

    return TestSuiteSummary(
        tests=len(source),
        translated=len(pairs),
        not_translated=len(lonely),
        matching_assertions=sum(1 for m in metrics if m.assertion_counts[2]),
        non_matching_assertions=sum(1 for m in metrics if not m.assertion_counts[2]),
        equal_output_total=sum(m.equal_output[0] for m in metrics),
        equal_output_matching=sum(m.equal_output[1] for m in metrics),
        type_match=type_match,
        avg_cosine=round(sum(sims) / len(sims), 6) if sims else None,
        avg_loc=(mean(m.loc[0] for m in metrics), mean(m.loc[1] for m in metrics)),
        avg_invocations=(mean(m.invocations[0] for m in metrics),
                         mean(m.invocations[1] for m in metrics)),
        pairs=metrics,
    )


# -- embeddings file ------------------------------------------------------------------


def parse_embeddings(text: str) -> dict[str, list[float]]:
    """Parse the columnar embeddings format.

    One vector per line, tab-separated: ``test_id``, ``dimension``, then the
    values separated by commas. Test ids carry a ``src:`` or ``tgt:`` prefix.
    Blank lines and ``#`` comments are skipped.
    """
    out: dict[str, list[float]] = {}
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        cols = line.rstrip("\n").split("\t")
        if len(cols) != 3:
            raise MetricsError(f"line {number}: expected 3 tab-separated columns")
        test_id, dim, values = cols
        try:
            vector = [float(v) for v in values.split(",") if v.strip()]
            dim = int(dim)
        except ValueError:
            raise MetricsError(f"line {number}: malformed number") from None
        if len(vector) != dim:
            raise MetricsError(f"line {number}: declared dimension {dim}, got {len(vector)} values")
        if test_id in out:
            raise MetricsError(f"line {number}: duplicate vector for {test_id}")
        out[test_id] = vector
    return out


def load_embeddings(path) -> dict[str, list[float]]:
    return parse_embeddings(Path(path).read_text(encoding="utf-8"))
