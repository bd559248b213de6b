"""Rendering of evaluation results as an aligned table or as JSON-lines records."""

from __future__ import annotations

import json

from repotrans.metrics.compare import TestSuiteSummary
from repotrans.metrics.trajectory import ABSTRACTION
from repotrans.model import CostLedger

REPORT_FORMAT = "repotrans-metrics/1"

SECTIONS = {
    "validation": ("project", "loc", "cs", "te", "tp", "tf", "c", "c_plus",
                   "fv_success", "fv_fail"),
    "tests": ("project", "tests", "translated", "not_translated", "assert_match",
              "assert_mismatch", "equal_total", "equal_matching", "tm_equal", "tm_true",
              "tm_false", "tm_other", "cosine", "loc_src", "loc_tgt", "calls_src", "calls_tgt"),
    "pairs": ("source_test", "target_test", "asserts_src", "asserts_tgt", "count_match",
              "equal_total", "equal_matching", "cosine", "loc_src", "loc_tgt", "calls_src",
              "calls_tgt"),
    "unpaired": ("side", "test_id"),
    "trajectory": ("run", "NC", "TEC", "SEC", "LC", "ALL"),
    "cost": ("agent", "input_tokens", "output_tokens", "dollars", "wall_seconds"),
}

META = {
    "format": REPORT_FORMAT,
    "abstraction": ABSTRACTION,
    "equal_output_denominator": "per-assertion",
    "method_invocations": "all call expressions, assertion calls included",
}


def validation_row(project: str, report, loc: int | None = None) -> dict:
    cov = report.coverage or {}
    before, after = cov.get("percent_before"), cov.get("percent_after")
    checks = report.function_checks.values()
    return {
        "project": project, "loc": loc, "cs": 100.0 if report.compile_ok else 0.0,
        "te": report.counts["executed"], "tp": report.counts["passed"],
        "tf": report.counts["failed"], "c": before,
        "c_plus": round(after - before, 2) if before is not None and after is not None else None,
        "fv_success": sum(1 for c in checks if c["status"] == "success"),
        "fv_fail": sum(1 for c in checks if c["status"] != "success"),
    }


def tests_row(project: str, s: TestSuiteSummary) -> dict:
    return {
        "project": project, "tests": s.tests, "translated": s.translated,
        "not_translated": s.not_translated, "assert_match": s.matching_assertions,
        "assert_mismatch": s.non_matching_assertions, "equal_total": s.equal_output_total,
        "equal_matching": s.equal_output_matching, "tm_equal": s.type_match["assert_equal"],
        "tm_true": s.type_match["assert_true"], "tm_false": s.type_match["assert_false"],
        "tm_other": s.type_match["other"], "cosine": s.avg_cosine,
        "loc_src": s.avg_loc[0], "loc_tgt": s.avg_loc[1],
        "calls_src": s.avg_invocations[0], "calls_tgt": s.avg_invocations[1],
    }


def pair_rows(s: TestSuiteSummary) -> list[dict]:
    return [{"source_test": m.source_id, "target_test": m.target_id,
             "asserts_src": m.assertion_counts[0], "asserts_tgt": m.assertion_counts[1],
             "count_match": m.assertion_counts[2], "equal_total": m.equal_output[0],
             "equal_matching": m.equal_output[1], "cosine": m.cosine, "loc_src": m.loc[0],
             "loc_tgt": m.loc[1], "calls_src": m.invocations[0], "calls_tgt": m.invocations[1]}
            for m in s.pairs]


def cost_rows(ledger: CostLedger) -> list[dict]:
    rows = [{"agent": name, "input_tokens": c.input_tokens, "output_tokens": c.output_tokens,
             "dollars": str(c.dollars), "wall_seconds": round(c.wall_seconds, 3)}
            for name, c in sorted(ledger.per_agent.items())]
    rows.append({"agent": "total", "input_tokens": ledger.input_tokens,
                 "output_tokens": ledger.output_tokens, "dollars": str(ledger.dollars),
                 "wall_seconds": round(ledger.wall_seconds, 3)})
    return rows


def _cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return f"{value:.4f}".rstrip("0").rstrip(".") if value != int(value) else f"{value:.1f}"
    return str(value)


def _table(section: str, rows: list[dict]) -> str:
    columns = SECTIONS[section]
    cells = [list(columns)] + [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = [f"[{section}]"]
    for row in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip())
    return "\n".join(lines)


def emit_report(sections: dict[str, list[dict]], ledger: CostLedger | None = None,
                fmt: str = "table") -> str:
    """Render the given sections (and the ledger, if any) deterministically.

    Sections that are absent are skipped; present but empty ones render as a
    header-only table.
    """
    data = {name: list(sections[name]) for name in SECTIONS if name in sections}
    if ledger is not None:
        data["cost"] = cost_rows(ledger)
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ValueError(f"unknown report sections {sorted(unknown)}")
    if fmt == "table":
        header = f"# {REPORT_FORMAT} abstraction={ABSTRACTION} equal-output=per-assertion"
        return "\n\n".join([header] + [_table(name, rows) for name, rows in data.items()]) + "\n"
    if fmt == "records":
        lines = [json.dumps({"record": "meta", **META}, sort_keys=True)]
        for name, rows in data.items():
            lines.append(json.dumps({"record": "section", "name": name}, sort_keys=True))
            lines += [json.dumps({"record": name, **row}, sort_keys=True) for row in rows]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_records(text: str) -> tuple[dict, dict[str, list[dict]]]:
    """Inverse of the ``records`` rendering: (meta, sections)."""
    meta, sections = None, {}
    for line in text.splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record.pop("record")
        if kind == "meta":
            meta = record
        elif kind == "section":
            sections[record["name"]] = []
        elif kind in sections:
            sections[kind].append(record)
        else:
            raise ValueError(f"record for undeclared section {kind!r}")
    if meta is None or meta.get("format") != REPORT_FORMAT:
        raise ValueError(f"not a {REPORT_FORMAT} records stream")
    return meta, sections
