"""The `sentinel` command line: serve, sync, query, chat, report, fixtures."""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click

from .config import CONFIG_ENV, Config, load_config
from .model import SentinelError, TimeWindow, format_ts, parse_ts
from .service import SentinelService, build_app
from .store import filter_from_params
from .timeparse import parse_relative_window

TABLE_II_UTTERANCES = [
    "Where is the capital of Finland?",
    "How is the weather",
    "What is Phishing?",
    "How do banks protect customer data from cyber threats?",
    "Give the latest IP addresses reported in the last 24 hours.",
    "Show the statistics of the latest IoCs in the last 7 days.",
    "Is this email address malicious: John.Doe@testcompany.com",
    "Is this URL John.Doe.com secure?",
    "Show me all attacks targeting TCP port 9000.",
    "How many attacks reported within the last 24 hours targeting TCP port 23?",
    "Block the IP addresses within subnet 54.12.0.0/16",
    "Block the hash signature 530ac4e9c1fda1736a4a05b0b0d2b2d36f25e5e3d9c6a00be5ac05ba81516e2b",
    "Block 130.231.4.98 if it is malicious.",
    "Block all IP addresses reported today.",
]


def _load(config_path: Optional[str]) -> Config:
    try:
        return load_config(Path(config_path) if config_path else None)
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot load config: {exc}")


@click.group()
def main():
    """Cyber Sentinel: conversational security operations over an IoC store."""


@main.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None, help="YAML config path.")
@click.option("--host", default=None, help="Bind host (overrides config).")
@click.option("--port", type=int, default=None, help="Bind port (overrides config).")
def serve(config_path, host, port):
    """Run the HTTP/WebSocket service."""
    import uvicorn

    from .service import configure_logging

    configure_logging()
    config = _load(config_path)
    if host:
        config.host = host
    if port:
        config.port = port
    app = build_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="info")


@main.command()
@click.argument("source")
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
def sync(source, config_path):
    """Sync one feed source, or `all`."""
    config = _load(config_path)
    service = SentinelService(config)
    try:
        result = service.sync_feed(source)
    except SentinelError as exc:
        click.echo(f"sync failed: {exc.message}", err=True)
        sys.exit(1)
    finally:
        service.shutdown()
    for report in result["reports"]:
        click.echo(json.dumps(report))


@main.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
@click.option("--type", "kind", type=click.Choice(["ip", "subnet", "email", "hash", "url", "port"]), default=None)
@click.option("--value", default=None, help="Signature value to match.")
@click.option("--last", default=None, help="Relative window, e.g. '24h' or '7d'.")
@click.option("--from", "from_date", default=None, help="Window start (UTC timestamp).")
@click.option("--to", "to_date", default=None, help="Window end (UTC timestamp).")
@click.option("--source", "sources", multiple=True, help="Restrict to feed source(s).")
@click.option("--limit", type=int, default=None)
def query(config_path, kind, value, last, from_date, to_date, sources, limit):
    """Query the store; prints tab-delimited records."""
    config = _load(config_path)
    service = SentinelService(config)
    try:
        window_from = parse_ts(from_date) if from_date else None
        window_to = parse_ts(to_date) if to_date else None
        if last:
            window = parse_relative_window(f"last {_expand_relative(last)}", service.clock.now())
            if window is None:
                raise click.ClickException(f"cannot parse --last {last!r}")
            window_from, window_to = window.from_date, window.to_date
        flt = filter_from_params(
            kind=kind,
            value=value,
            from_date=window_from,
            to_date=window_to,
            sources=list(sources) or None,
            limit=limit,
        )
        result = service.store.query(flt)
        click.echo("\t".join(["kind", "value", "source", "first_reported", "last_reported", "threat_label"]))
        for rec in result.records:
            click.echo(
                "\t".join(
                    [
                        rec.signature.kind.value,
                        rec.signature.value,
                        rec.source,
                        format_ts(rec.first_reported),
                        format_ts(rec.last_reported),
                        rec.threat_label,
                    ]
                )
            )
        click.echo(f"# total_matched={result.total_matched} truncated={result.truncated}", err=True)
    except SentinelError as exc:
        click.echo(f"query failed: {exc.message}", err=True)
        sys.exit(1)
    finally:
        service.shutdown()


def _expand_relative(text: str) -> str:
    text = text.strip().lower()
    if text.endswith("h"):
        return f"{text[:-1]} hours"
    if text.endswith("d"):
        return f"{text[:-1]} days"
    return text


@main.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
@click.option("--url", default=None, help="Talk to a running service instead of in-process.")
@click.option("--token", default=None, help="Bearer token for --url mode.")
def chat(config_path, url, token):
    """Interactive terminal chat with the agent."""
    if url:
        _remote_chat(url, token)
        return
    config = _load(config_path)
    service = SentinelService(config)
    session_id = service.create_session()
    click.echo(f"session {session_id} (local). Type /quit to exit.")
    try:
        while True:
            try:
                text = click.prompt("you", prompt_suffix="> ")
            except (EOFError, KeyboardInterrupt, click.Abort):
                break
            if text.strip() in ("/quit", "/exit"):
                break
            try:
                turn = service.post_message(session_id, text)
            except SentinelError as exc:
                click.echo(f"[error {exc.code}] {exc.message}", err=True)
                continue
            click.echo(f"[{turn['kind']}] {turn['text']}")
    finally:
        service.shutdown()


def _remote_chat(url: str, token: Optional[str]):
    import requests

    headers = {"Authorization": f"Bearer {token}"} if token else {}
    resp = requests.post(f"{url.rstrip('/')}/api/sessions", headers=headers, timeout=10)
    resp.raise_for_status()
    session_id = resp.json()["session_id"]
    click.echo(f"session {session_id} @ {url}. Type /quit to exit.")
    while True:
        try:
            text = click.prompt("you", prompt_suffix="> ")
        except (EOFError, KeyboardInterrupt, click.Abort):
            break
        if text.strip() in ("/quit", "/exit"):
            break
        resp = requests.post(
            f"{url.rstrip('/')}/api/sessions/{session_id}/messages",
            json={"text": text},
            headers=headers,
            timeout=60,
        )
        if resp.status_code >= 400:
            click.echo(f"[error] {resp.text}", err=True)
            continue
        turn = resp.json()["turn"]
        click.echo(f"[{turn['kind']}] {turn['text']}")


@main.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
@click.option("--out", "out_dir", default="report", help="Output directory.")
@click.option("--last", default=None, help="Relative window, e.g. '7d'.")
@click.option("--from", "from_date", default=None)
@click.option("--to", "to_date", default=None)
def report(config_path, out_dir, last, from_date, to_date):
    """Write delimited stats/records plus PNG figures for a time window."""
    from .report import write_report

    config = _load(config_path)
    service = SentinelService(config)
    try:
        window_from = parse_ts(from_date) if from_date else None
        window_to = parse_ts(to_date) if to_date else None
        if last:
            window = parse_relative_window(f"last {_expand_relative(last)}", service.clock.now())
            if window is None:
                raise click.ClickException(f"cannot parse --last {last!r}")
            window_from, window_to = window.from_date, window.to_date
        paths = write_report(service.store, TimeWindow(window_from, window_to), Path(out_dir))
        for path in paths:
            click.echo(str(path))
    except SentinelError as exc:
        click.echo(f"report failed: {exc.message}", err=True)
        sys.exit(1)
    finally:
        service.shutdown()


@main.group()
def fixtures():
    """Record or replay scripted LLM fixtures."""


@fixtures.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
@click.option("--out", "out_dir", required=True, help="Directory for recorded completions.")
@click.option("--transcript", default=None, help="File with one utterance per line (defaults to the built-in set).")
def record(config_path, out_dir, transcript):
    """Drive the pipeline with the rule-based backend, recording all LLM traffic."""
    from .llm import RecordingBackend, RuleBasedBackend, ScriptedBackend

    config = _load(config_path)
    service = SentinelService(config)
    scripted = ScriptedBackend(Path(out_dir))
    service.gateway.backend = RecordingBackend(RuleBasedBackend(), scripted)
    utterances = TABLE_II_UTTERANCES
    if transcript:
        utterances = [l.strip() for l in Path(transcript).read_text("utf-8").splitlines() if l.strip()]
    try:
        session_id = service.create_session()
        for utterance in utterances:
            turn = service.post_message(session_id, utterance)
            click.echo(f"[{turn['kind']}] {utterance}")
            if turn["kind"] == "confirmation":
                service.confirm(session_id, "deny")
        click.echo(f"recorded {len(scripted)} completions into {out_dir}")
    finally:
        service.shutdown()


@fixtures.command()
@click.option("--config", "config_path", envvar=CONFIG_ENV, default=None)
@click.option("--dir", "fixture_dir", required=True, help="Directory with recorded completions.")
@click.option("--transcript", default=None)
def replay(config_path, fixture_dir, transcript):
    """Replay utterances against recorded completions (fails on any fixture miss)."""
    config = _load(config_path)
    config.llm_backend = "scripted"
    config.llm_fixtures = Path(fixture_dir)
    service = SentinelService(config)
    utterances = TABLE_II_UTTERANCES
    if transcript:
        utterances = [l.strip() for l in Path(transcript).read_text("utf-8").splitlines() if l.strip()]
    try:
        session_id = service.create_session()
        for utterance in utterances:
            turn = service.post_message(session_id, utterance)
            click.echo(f"[{turn['kind']}] {utterance}")
            if turn["kind"] == "confirmation":
                service.confirm(session_id, "deny")
    except SentinelError as exc:
        click.echo(f"replay failed: {exc.message}", err=True)
        sys.exit(1)
    finally:
        service.shutdown()


if __name__ == "__main__":
    main()
