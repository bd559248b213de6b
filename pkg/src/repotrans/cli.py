"""Command-line entry point.

Exit codes: 0 when the run or validation fully succeeds, 1 when it does not
(failing tests, exhausted iterations, invalid agent output, replay
divergence), 2 for configuration and usage errors, 3 when an agent ran out
of time.
"""

from __future__ import annotations

import json
import logging
import shutil
import signal
import sys
import uuid
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import click

from repotrans.config import Config, ConfigError, load_config
from repotrans.llm.gateway import (
    GatewayError,
    LiveBackend,
    ReplayBackend,
    ScriptedBackend,
    read_log,
)
from repotrans.model import ModelError, RunBudget, discover_project, walk_files

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_TIMEOUT = 0, 1, 2, 3
STATUS_EXIT = {"success": EXIT_OK, "exhausted": EXIT_FAILED, "failed": EXIT_FAILED,
               "error": EXIT_FAILED, "timeout": EXIT_TIMEOUT}


class ConfigProblem(click.ClickException):
    exit_code = EXIT_CONFIG


@dataclass(frozen=True)
class RunConfig:
    source: Path
    source_lang: str
    target_lang: str
    out: Path
    config_path: Path | None = None
    max_iter: int | None = None
    agent_timeout: float | None = None
    backend: str = "live"  # live, mock or replay
    script: Path | None = None
    replay: Path | None = None
    record: Path | None = None
    offline: bool = False
    run_id: str | None = None

    def __post_init__(self):
        if self.backend not in ("live", "mock", "replay"):
            raise ConfigProblem(f"unknown backend {self.backend!r}")
        if self.backend == "live" and self.replay is not None:
            raise ConfigProblem("--replay and the live backend are mutually exclusive")
        if self.backend == "live" and self.offline:
            raise ConfigProblem("--offline forbids the live backend")
        if self.backend == "mock" and self.script is None:
            raise ConfigProblem("the mock backend needs --script")
        if self.backend == "replay" and self.replay is None:
            raise ConfigProblem("the replay backend needs --replay")

    def budget(self, config: Config) -> RunBudget:
        try:
            return RunBudget(
                self.agent_timeout if self.agent_timeout is not None
                else config.budget.agent_timeout,
                self.max_iter if self.max_iter is not None else config.budget.max_iterations)
        except ModelError as exc:
            raise ConfigProblem(str(exc)) from None


def _config(path) -> Config:
    try:
        return load_config(path)
    except ConfigError as exc:
        raise ConfigProblem(str(exc)) from None


def _backend(cfg: RunConfig):
    try:
        if cfg.backend == "mock":
            return ScriptedBackend.from_file(cfg.script)
        if cfg.backend == "replay":
            return ReplayBackend.from_file(cfg.replay)
        return LiveBackend()
    except (OSError, GatewayError, ValueError) as exc:
        raise ConfigProblem(str(exc)) from None


def _project(root, language: str, config: Config):
    try:
        return discover_project(root, config.profile(language), config.conventions_for(language))
    except ModelError as exc:
        raise ConfigProblem(str(exc)) from None


def run_translate(cfg: RunConfig) -> int:
    """Run the pipeline and return the exit code."""
    from repotrans.pipeline.agents import http_fetch
    from repotrans.pipeline.orchestrator import orchestrate

    config = _config(cfg.config_path)
    for lang in (cfg.source_lang, cfg.target_lang):
        if lang not in config.profiles:
            raise ConfigProblem(f"no language profile configured for {lang!r}")
    budget = cfg.budget(config)
    source = _project(cfg.source, cfg.source_lang, config)
    run_id = cfg.run_id
    if run_id is None and cfg.backend == "replay":
        run_id = read_log(cfg.replay)[0].get("run_id")
    backend = _backend(cfg)
    try:
        result = orchestrate(source, cfg.target_lang, budget, config=config, backend=backend,
                             out_dir=cfg.out, run_id=run_id or uuid.uuid4().hex[:12],
                             offline=cfg.offline, fetch=None if cfg.offline else http_fetch)
    except ModelError as exc:
        raise ConfigProblem(str(exc)) from None
    if cfg.record is not None:
        shutil.copyfile(result.run_dir / "trajectory.log", cfg.record)
    line = f"status: {result.status} after {result.iterations} iteration(s)"
    click.echo(line + (f" ({result.detail})" if result.detail else ""))
    if result.report is not None:
        c = result.report.counts
        click.echo(f"tests: {c['executed']} executed, {c['passed']} passed, "
                   f"{c['failed']} failed; all_success={str(result.report.all_success).lower()}")
    click.echo(f"run directory: {result.run_dir}")
    return STATUS_EXIT[result.status]


# -- commands ----------------------------------------------------------------------------


@click.group()
@click.option("-v", "--verbose", count=True, help="Log more (repeat for debug output).")
def main(verbose: int) -> None:
    """Translate and validate whole repositories with cooperating agents."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--source", "source", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--source-lang", required=True)
@click.option("--target-lang", required=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-iter", type=int, help="Translate/validate rounds (default 5).")
@click.option("--agent-timeout", type=float, help="Seconds per agent invocation (default 5000).")
@click.option("--backend", type=click.Choice(["live", "mock", "replay"]),
              help="Model backend; defaults to replay with --replay, else live.")
@click.option("--script", type=click.Path(exists=True, dir_okay=False),
              help="Scripted turns for the mock backend.")
@click.option("--replay", type=click.Path(exists=True, dir_okay=False),
              help="Trajectory log to replay.")
@click.option("--record", type=click.Path(dir_okay=False),
              help="Also copy the trajectory log here.")
@click.option("--offline", is_flag=True, help="Forbid all network use.")
def translate(source, source_lang, target_lang, out, config_path, max_iter, agent_timeout,
              backend, script, replay, record, offline):
    """Translate a repository end to end."""
    if backend is None:
        backend = "replay" if replay else "mock" if script else "live"
    cfg = RunConfig(Path(source), source_lang, target_lang, Path(out),
                    Path(config_path) if config_path else None, max_iter, agent_timeout,
                    backend, Path(script) if script else None, Path(replay) if replay else None,
                    Path(record) if record else None, offline)
    sys.exit(run_translate(cfg))


@main.command()
@click.argument("log", type=click.Path(exists=True, dir_okay=False))
@click.option("--source", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def replay(log, source, out, config_path):
    """Re-run a recorded trajectory log against the same source project."""
    try:
        header, _ = read_log(log)
    except (GatewayError, ValueError, OSError) as exc:
        raise ConfigProblem(f"cannot read {log}: {exc}") from None
    meta = header.get("meta", {})
    budget = header.get("budget", {})
    cfg = RunConfig(Path(source), meta.get("source_language", ""),
                    meta.get("target_language", ""), Path(out),
                    Path(config_path) if config_path else None,
                    budget.get("max_iterations"), budget.get("agent_timeout"), "replay",
                    replay=Path(log), offline=True, run_id=header.get("run_id"))
    sys.exit(run_translate(cfg))


def demo_paths() -> tuple[Path, Path, Path]:
    base = Path(str(resources.files("repotrans").joinpath("demo")))
    return base / "source", base / "script.yaml", base / "demo.log"


@main.command()
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--mode", type=click.Choice(["replay", "mock"]), default="replay", show_default=True)
def demo(out, mode):
    """Run the bundled JavaScript-to-Python demo offline."""
    source, script, log = demo_paths()
    cfg = RunConfig(source, "javascript", "python", Path(out), backend=mode,
                    script=script if mode == "mock" else None,
                    replay=log if mode == "replay" else None, offline=True,
                    run_id="demo" if mode == "mock" else None)
    sys.exit(run_translate(cfg))


@main.command()
@click.option("--project", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--lang", required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False),
              help="Fragment manifest restricting the coverage-gap analysis.")
@click.option("--report", "report_path", default="report.json", show_default=True,
              type=click.Path(dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", type=click.Choice(["inclusive", "exclusive"]), default="inclusive",
              show_default=True)
@click.option("--generated", multiple=True, help="Test file written by an agent (repeatable).")
@click.option("--timeout", type=float, default=600.0, show_default=True)
def validate(project, lang, manifest, report_path, config_path, policy, generated, timeout):
    """Build, test and measure coverage of a project; no agents involved."""
    from repotrans.pipeline.deps import project_fragments
    from repotrans.pipeline.documents import parse_manifest
    from repotrans.validation import harness

    config = _config(config_path)
    proj = _project(project, lang, config)
    fragments = project_fragments(proj, proj.source_files)
    if manifest:
        listed = {i for ids in parse_manifest(Path(manifest).read_text()).values() for i in ids}
        fragments = [f for f in fragments if f.identity in listed]
    try:
        report = harness.validate(proj, config.profile(lang), fragments,
                                  generated_tests=list(generated), timeout=timeout,
                                  policy=policy)
    except harness.CommandNotFound as exc:
        raise ConfigProblem(str(exc)) from None
    Path(report_path).write_text(report.dumps(), encoding="utf-8")
    c = report.counts
    click.echo(f"compile_ok={str(report.compile_ok).lower()} TE={c['executed']} "
               f"TP={c['passed']} TF={c['failed']} errors={c['errors']} "
               f"not_collected={c['not_collected']}")
    cov = report.coverage
    if cov.get("available"):
        click.echo(f"coverage: {cov['percent_after']}%")
    else:
        click.echo(f"coverage: unavailable ({cov.get('note')})")
    for frag in report.uncovered_fragments:
        click.echo(f"uncovered: {frag}")
    for o in report.failing_outcomes():
        click.echo(f"{o.status}: {o.test_id}")
    sys.exit(EXIT_OK if report.all_success else EXIT_FAILED)


def _load_tests(directory: Path, language: str, config: Config):
    from repotrans.metrics.assertions import AssertionParseError, analyze_tests

    profile = config.profile(language)
    cases, broken = [], []
    for rel in walk_files(directory):
        if not profile.owns(rel):
            continue
        try:
            cases += analyze_tests((directory / rel).read_text(encoding="utf-8"), language, rel)
        except AssertionParseError as exc:
            broken.append(f"{rel}: {exc}")
    return cases, broken


@main.command()
@click.option("--src-tests", type=click.Path(exists=True, file_okay=False))
@click.option("--tgt-tests", type=click.Path(exists=True, file_okay=False))
@click.option("--src-lang")
@click.option("--tgt-lang")
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False))
@click.option("--log", "log_path", type=click.Path(exists=True, dir_okay=False),
              help="Trajectory log for the process metrics.")
@click.option("--format", "fmt", type=click.Choice(["table", "records"]), default="table",
              show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def metrics(src_tests, tgt_tests, src_lang, tgt_lang, embeddings, log_path, fmt, config_path):
    """Compare source and target tests and/or analyze a trajectory log."""
    from repotrans.metrics.compare import (
        MetricsError,
        load_embeddings,
        pair_tests,
        summarize,
    )
    from repotrans.metrics.report import emit_report, pair_rows, tests_row
    from repotrans.metrics.trajectory import build_trajectory_graph, trajectory_metrics

    if not (src_tests or log_path):
        raise click.UsageError("give --src-tests/--tgt-tests, --log, or both")
    sections, broken = {}, []
    if src_tests or tgt_tests:
        if not (src_tests and tgt_tests and src_lang and tgt_lang):
            raise click.UsageError("test comparison needs --src-tests, --tgt-tests, "
                                   "--src-lang and --tgt-lang")
        config = _config(config_path)
        try:
            source, b1 = _load_tests(Path(src_tests), src_lang, config)
            target, b2 = _load_tests(Path(tgt_tests), tgt_lang, config)
            vectors = load_embeddings(embeddings) if embeddings else None
        except (ConfigError, MetricsError) as exc:
            raise ConfigProblem(str(exc)) from None
        broken = b1 + b2
        try:
            summary = summarize(source, target, vectors)
        except MetricsError as exc:
            raise ConfigProblem(str(exc)) from None
        _, lonely_src, lonely_tgt = pair_tests(source, target)
        sections["tests"] = [tests_row(Path(src_tests).name, summary)]
        sections["pairs"] = pair_rows(summary)
        sections["unpaired"] = ([{"side": "source", "test_id": c.test_id} for c in lonely_src]
                                + [{"side": "target", "test_id": c.test_id} for c in lonely_tgt])
    if log_path:
        try:
            header, events = read_log(log_path)
        except (GatewayError, ValueError) as exc:
            raise ConfigProblem(f"cannot read {log_path}: {exc}") from None
        values = trajectory_metrics(build_trajectory_graph(events))
        sections["trajectory"] = [{"run": header.get("run_id"), **values}]
    click.echo(emit_report(sections, fmt=fmt), nl=False)
    for problem in broken:
        click.echo(f"unparseable: {problem}", err=True)
    sys.exit(EXIT_FAILED if broken else EXIT_OK)


@main.command()
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--lang", help="Serve only this language's profile.")
@click.option("--transport", type=click.Choice(["stdio", "tcp"]), default="stdio",
              show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
def toolserver(root, lang, transport, host, port, config_path):
    """Serve the code-analysis tools over JSON-RPC until EOF or a termination signal."""
    from repotrans.toolserver.server import ToolServer, make_tcp_server, serve_stdio

    config = _config(config_path)
    profiles = config.profiles
    if lang is not None:
        profiles = {lang: config.profile(lang)} if lang in profiles else None
        if profiles is None:
            raise ConfigProblem(f"no language profile configured for {lang!r}")

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    server = ToolServer(root, profiles)
    try:
        if transport == "stdio":
            serve_stdio(server, sys.stdin, sys.stdout)
        else:
            tcp = make_tcp_server(server, host, port)
            click.echo(json.dumps({"host": tcp.server_address[0],
                                   "port": tcp.server_address[1]}), err=True)
            try:
                tcp.serve_forever()
            finally:
                tcp.server_close()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()


if __name__ == "__main__":
    main()
