"""HTTP/WebSocket service binding the store, feeds, gateway, and engine.

Sessions are processed serially per session (bounded queue), persisted on
every turn, and every pipeline stage is appended to the audit log before
the response leaves the process.
"""

from __future__ import annotations

import asyncio
import contextvars
import json
import logging
import os
import secrets
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__
from .audit import AuditLog
from .clock import FixedClock, SystemClock
from .config import Config
from .dialogue import Awaiting, DialogState, DialogueEngine, EngineConfig, new_state
from .executor import Executor
from .feeds import FeedRegistry, FeedScheduler
from .llm import Gateway, RemoteBackend, RuleBasedBackend, ScriptedBackend, TemplateSet
from .model import SentinelError, canonical_json, format_ts, parse_ts, utc_now
from .siem import MockSiem, WazuhConnector
from .store import IocStore, filter_from_params

logger = logging.getLogger(__name__)

_audit_session: contextvars.ContextVar[str] = contextvars.ContextVar("audit_session", default="")


class UnknownSession(SentinelError):
    code = "UnknownSession"


class Busy(SentinelError):
    code = "Busy"


class NothingPending(SentinelError):
    code = "NothingPending"


class BadRequest(SentinelError):
    code = "BadRequest"


_STATUS_FOR = {
    "UnknownSession": 404,
    "Busy": 429,
    "NothingPending": 409,
    "BadRequest": 400,
    "UnparseableSignature": 400,
    "HintMismatch": 400,
    "FeedUnavailable": 502,
    "AuthRejected": 502,
    "MalformedPayload": 502,
    "SiemUnavailable": 502,
    "StorageFailure": 500,
}

MAX_MESSAGE_BYTES = 8 * 1024


@dataclass
class ManagedSession:
    state: DialogState
    created_at: datetime
    last_activity: datetime
    lock: threading.Lock = field(default_factory=threading.Lock)
    waiting: int = 0


class SentinelService:
    """Owns all long-lived components; the FastAPI app is a thin shell over it."""

    def __init__(self, config: Config):
        self.config = config
        self.clock = FixedClock(config.fixed_clock) if config.fixed_clock else SystemClock()
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self.store = IocStore(config.store_path)
        self.audit = AuditLog(config.audit_path)
        self.templates = TemplateSet(override_dir=config.template_dir)
        self.registry = FeedRegistry(
            override_path=config.feed_overrides, fixtures_dir=config.feed_fixtures
        )
        self.siem = self._build_siem(config)
        self.gateway = Gateway(self._build_backend(config), observer=self._audit_llm)
        executor = Executor(
            self.store, self.siem, list_name=config.cdb_list_name, cdb_value=config.cdb_value
        )
        engine_config = EngineConfig(
            auto_confirm=config.auto_confirm,
            history_window=config.history_window,
            extraction_samples=config.extraction_samples,
            extraction_temperature=config.extraction_temperature,
        )
        self.engine = DialogueEngine(self.gateway, executor, templates=self.templates, config=engine_config)
        self.engine.add_observer(self._audit_engine)
        self.scheduler = FeedScheduler(
            self.registry,
            self.store,
            interval_seconds=config.feed_interval_minutes * 60,
            fixtures_dir=config.feed_fixtures,
        )
        self.sessions: dict[str, ManagedSession] = {}
        self._sessions_guard = threading.Lock()
        self._streams: dict[str, list] = {}
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._load_sessions()

    # -- wiring ----------------------------------------------------------------

    @staticmethod
    def _build_backend(config: Config):
        if config.llm_backend == "remote":
            return RemoteBackend(config.llm_endpoint, config.llm_model)
        if config.llm_backend == "scripted":
            return ScriptedBackend(config.llm_fixtures)
        return RuleBasedBackend()

    @staticmethod
    def _build_siem(config: Config):
        if config.siem == "wazuh":
            return WazuhConnector(config.wazuh_url, config.wazuh_user, config.wazuh_password)
        return MockSiem()

    def _audit_llm(self, kind: str, payload: dict) -> None:
        session_id = _audit_session.get()
        if session_id:
            self.audit.append(session_id, kind, payload)

    def _audit_engine(self, kind: str, payload: dict) -> None:
        session_id = _audit_session.get()
        if session_id:
            self.audit.append(session_id, kind, payload)
            self._publish(session_id, {"event": "progress", "stage": kind})

    # -- session persistence -----------------------------------------------------

    def _session_path(self, session_id: str) -> Path:
        return self.config.sessions_dir / f"{session_id}.json"

    def _persist_session(self, managed: ManagedSession) -> None:
        self.config.sessions_dir.mkdir(parents=True, exist_ok=True)
        path = self._session_path(managed.state.session_id)
        tmp = path.with_suffix(".tmp")
        doc = {
            "created_at": format_ts(managed.created_at),
            "last_activity": format_ts(managed.last_activity),
            "state": managed.state.to_doc(),
        }
        with open(tmp, "wb") as fh:
            fh.write(canonical_json(doc).encode("utf-8"))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def _load_sessions(self) -> None:
        if not self.config.sessions_dir.exists():
            return
        for path in self.config.sessions_dir.glob("*.json"):
            try:
                doc = json.loads(path.read_text("utf-8"))
                state = DialogState.from_doc(doc["state"], self.clock)
                self.sessions[state.session_id] = ManagedSession(
                    state=state,
                    created_at=parse_ts(doc["created_at"]),
                    last_activity=parse_ts(doc["last_activity"]),
                )
            except (ValueError, KeyError) as exc:
                logger.warning("skipping unreadable session file %s: %s", path, exc)
        if self.sessions:
            logger.info("restored %d session(s)", len(self.sessions))

    # -- API operations ----------------------------------------------------------

    def create_session(self) -> str:
        session_id = secrets.token_hex(16)  # 128 bits
        state = new_state(session_id, self.clock, self.templates)
        managed = ManagedSession(state=state, created_at=self.clock.now(), last_activity=self.clock.now())
        with self._sessions_guard:
            self.sessions[session_id] = managed
        self._persist_session(managed)
        return session_id

    def _managed(self, session_id: str) -> ManagedSession:
        with self._sessions_guard:
            if session_id not in self.sessions:
                raise UnknownSession(f"no such session: {session_id}")
            return self.sessions[session_id]

    def post_message(self, session_id: str, text: str) -> dict:
        if not text or not text.strip():
            raise BadRequest("message text must be nonempty")
        if len(text.encode("utf-8")) > MAX_MESSAGE_BYTES:
            raise BadRequest(f"message exceeds {MAX_MESSAGE_BYTES} bytes")
        managed = self._managed(session_id)
        with self._sessions_guard:
            if managed.waiting >= self.config.queue_depth:
                raise Busy(f"session {session_id} has {managed.waiting} turns queued")
            managed.waiting += 1
        try:
            with managed.lock:  # serial per session; queued callers wait here
                token = _audit_session.set(session_id)
                try:
                    self.audit.append(session_id, "user_msg", {"text": text})
                    state, turn = self.engine.next_turn(managed.state, text)
                finally:
                    _audit_session.reset(token)
                if not turn.retryable:
                    managed.state = state
                managed.last_activity = self.clock.now()
                self._persist_session(managed)
                turn_doc = turn.to_doc()
                self._publish(session_id, {"event": "turn", "turn": turn_doc})
                return turn_doc
        finally:
            with self._sessions_guard:
                managed.waiting -= 1

    def confirm(self, session_id: str, decision: str) -> dict:
        if decision not in ("affirm", "deny"):
            raise BadRequest("decision must be affirm or deny")
        managed = self._managed(session_id)
        with managed.lock:
            if managed.state.awaiting is not Awaiting.CONFIRMATION:
                raise NothingPending("no confirmation is pending for this session")
            token = _audit_session.set(session_id)
            try:
                self.audit.append(session_id, "confirmation", {"decision": decision})
                state, turn = self.engine.confirm(managed.state, affirm=decision == "affirm")
            finally:
                _audit_session.reset(token)
            managed.state = state
            managed.last_activity = self.clock.now()
            self._persist_session(managed)
            turn_doc = turn.to_doc()
            self._publish(session_id, {"event": "turn", "turn": turn_doc})
            return turn_doc

    def query_iocs(self, params: dict) -> dict:
        kind = params.get("type")
        value = params.get("value")
        if params.get("port"):
            kind, value = "port", params["port"]
        flt = filter_from_params(
            kind=kind,
            value=value,
            from_date=parse_ts(params["from"]) if params.get("from") else None,
            to_date=parse_ts(params["to"]) if params.get("to") else None,
            sources=params["sources"].split(",") if params.get("sources") else None,
            limit=int(params["limit"]) if params.get("limit") else None,
        )
        return self.store.query(flt).to_doc()

    def sync_feed(self, source_id: str) -> dict:
        if source_id == "all":
            reports = []
            for sid in self.registry.ids():
                report = self.scheduler.sync_source(sid)
                if report:
                    reports.append(report.to_doc())
            return {"reports": reports}
        if source_id not in self.registry.ids():
            raise BadRequest(f"unknown feed source: {source_id}")
        report = self.scheduler.sync_source(source_id)
        return {"reports": [report.to_doc()] if report else []}

    # -- streaming ---------------------------------------------------------------

    def attach_stream(self, session_id: str) -> asyncio.Queue:
        self._managed(session_id)
        queue: asyncio.Queue = asyncio.Queue()
        self._streams.setdefault(session_id, []).append(queue)
        return queue

    def detach_stream(self, session_id: str, queue: asyncio.Queue) -> None:
        queues = self._streams.get(session_id, [])
        if queue in queues:
            queues.remove(queue)

    def _publish(self, session_id: str, event: dict) -> None:
        queues = self._streams.get(session_id, [])
        loop = self._loop
        if not queues or loop is None:
            return
        for queue in list(queues):
            loop.call_soon_threadsafe(queue.put_nowait, event)

    def shutdown(self) -> None:
        self.scheduler.stop()
        self.store.close()
        self.audit.close()


# ---------------------------------------------------------------------------
# FastAPI shell
# ---------------------------------------------------------------------------


class MessageBody(BaseModel):
    text: str


class ConfirmBody(BaseModel):
    decision: str


class _JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        doc = {
            "time": format_ts(utc_now()),
            "level": record.levelname.lower(),
            "logger": record.name,
            "message": record.getMessage(),
        }
        if record.exc_info:
            doc["exception"] = self.formatException(record.exc_info)
        return canonical_json(doc)


def configure_logging(level: int = logging.INFO) -> None:
    """One canonical JSON document per log line on stdout."""
    import sys

    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(_JsonLineFormatter())
    root = logging.getLogger()
    root.handlers = [handler]
    root.setLevel(level)


def build_app(config: Config, service: Optional[SentinelService] = None) -> FastAPI:
    from contextlib import asynccontextmanager

    svc = service or SentinelService(config)

    @asynccontextmanager
    async def _lifespan(app: FastAPI):
        svc._loop = asyncio.get_running_loop()
        if config.feed_poll:
            svc.scheduler.start()
        yield
        svc.shutdown()

    app = FastAPI(title="cyber-sentinel", version=__version__, lifespan=_lifespan)
    app.state.service = svc

    @app.middleware("http")
    async def _auth(request: Request, call_next):
        if config.api_token and request.url.path.startswith("/api/"):
            header = request.headers.get("authorization", "")
            if header != f"Bearer {config.api_token}":
                return JSONResponse(
                    status_code=401,
                    content={"error": {"code": "Unauthorized", "message": "bad or missing token"}},
                )
        return await call_next(request)

    @app.exception_handler(SentinelError)
    async def _domain_error(request: Request, exc: SentinelError):
        status = _STATUS_FOR.get(exc.code, 500)
        return JSONResponse(status_code=status, content={"error": {"code": exc.code, "message": exc.message}})

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "version": __version__, "records": len(svc.store)}

    @app.post("/api/sessions")
    def create_session():
        return {"session_id": svc.create_session()}

    @app.post("/api/sessions/{session_id}/messages")
    def post_message(session_id: str, body: MessageBody):
        return {"turn": svc.post_message(session_id, body.text)}

    @app.post("/api/sessions/{session_id}/confirm")
    def confirm(session_id: str, body: ConfirmBody):
        return {"turn": svc.confirm(session_id, body.decision)}

    @app.get("/api/iocs")
    def query_iocs(request: Request):
        return svc.query_iocs(dict(request.query_params))

    @app.post("/api/feeds/{source_id}/sync")
    def sync_feed(source_id: str):
        return svc.sync_feed(source_id)

    @app.get("/api/audit")
    def audit_entries(session: Optional[str] = None):
        return {"entries": [e.to_doc() for e in svc.audit.entries(session)]}

    @app.websocket("/api/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        if config.api_token:
            token = websocket.query_params.get("token", "")
            if token != config.api_token:
                await websocket.close(code=4401)
                return
        try:
            queue = svc.attach_stream(session_id)
        except UnknownSession:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        try:
            while True:
                event = await queue.get()
                await websocket.send_json(event)
        except WebSocketDisconnect:
            pass
        finally:
            svc.detach_stream(session_id, queue)

    return app
