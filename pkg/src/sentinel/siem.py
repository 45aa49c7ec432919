"""SIEM command vocabulary and connectors.

All endpoint knowledge lives in WazuhConnector so the recording mock is a
drop-in replacement. CDB writes are serialized per list to keep uploads
race-free.
"""

from __future__ import annotations

import logging
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import requests

from .model import SentinelError

logger = logging.getLogger(__name__)

_LIST_NAME_RE = re.compile(r"^[a-z0-9-]+$")


class SiemUnavailable(SentinelError):
    code = "SiemUnavailable"


class InvalidKey(SentinelError):
    code = "InvalidKey"


class CommandKind(str, Enum):
    CDB_ADD = "cdb_add"
    CDB_REMOVE = "cdb_remove"
    AR_BLOCK = "active_response_block"
    AR_UNBLOCK = "active_response_unblock"


@dataclass(frozen=True)
class SiemCommand:
    """One instruction for the SIEM: a CDB list edit or an active response."""

    kind: CommandKind
    list_name: str = ""
    key: str = ""
    value: str = ""
    target: str = ""
    scope: str = "all"

    def __post_init__(self):
        if self.kind in (CommandKind.CDB_ADD, CommandKind.CDB_REMOVE):
            if not _LIST_NAME_RE.match(self.list_name):
                raise ValueError(f"bad CDB list name: {self.list_name!r}")
            if not self.key or ":" in self.key or "\n" in self.key:
                raise InvalidKey(f"bad CDB key: {self.key!r}")
        else:
            if not self.target:
                raise ValueError("active response requires a target")

    def to_doc(self) -> dict:
        doc = {"kind": self.kind.value}
        if self.list_name:
            doc["list_name"] = self.list_name
        if self.key:
            doc["key"] = self.key
        if self.value:
            doc["value"] = self.value
        if self.target:
            doc["target"] = self.target
        if self.kind in (CommandKind.AR_BLOCK, CommandKind.AR_UNBLOCK):
            doc["scope"] = self.scope
        return doc


def render_cdb(entries: dict[str, str]) -> str:
    """Bit-exact CDB list body: `key:value` lines, keys sorted bytewise, LF."""
    for key, value in entries.items():
        if not key or ":" in key or "\n" in key:
            raise InvalidKey(f"bad CDB key: {key!r}")
        if "\n" in value:
            raise InvalidKey(f"bad CDB value for {key!r}: contains newline")
    lines = [f"{key}:{entries[key]}\n" for key in sorted(entries, key=lambda k: k.encode("utf-8"))]
    return "".join(lines)


def parse_cdb(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for line in text.splitlines():
        if not line:
            continue
        key, _, value = line.partition(":")
        entries[key] = value
    return entries


class MockSiem:
    """Records every command; supports down/slow/reject fault injection."""

    name = "mock"

    def __init__(self):
        self.call_log: list[SiemCommand] = []
        self.cdb: dict[str, dict[str, str]] = {}
        self.blocked: set[str] = set()
        self.down = False
        self.reject = False
        self.latency = 0.0
        self._lock = threading.Lock()

    def issue(self, command: SiemCommand) -> None:
        if self.latency:
            time.sleep(self.latency)
        if self.down:
            raise SiemUnavailable("mock SIEM is down")
        if self.reject:
            raise SiemUnavailable("mock SIEM rejected the command")
        with self._lock:
            if command.kind is CommandKind.CDB_ADD:
                self.cdb.setdefault(command.list_name, {})[command.key] = command.value
            elif command.kind is CommandKind.CDB_REMOVE:
                self.cdb.get(command.list_name, {}).pop(command.key, None)
            elif command.kind is CommandKind.AR_BLOCK:
                self.blocked.add(command.target)
            else:
                self.blocked.discard(command.target)
            self.call_log.append(command)

    def commands_of_kind(self, kind: CommandKind) -> list[SiemCommand]:
        return [c for c in self.call_log if c.kind is kind]


class WazuhConnector:
    """Speaks the manager's HTTP API: CDB list uploads and active responses."""

    name = "wazuh"

    def __init__(
        self,
        base_url: str,
        username: str = "wazuh",
        password: str = "",
        timeout: float = 15.0,
        verify_tls: bool = True,
        session: Optional[requests.Session] = None,
    ):
        self._base = base_url.rstrip("/")
        self._auth = (username, password)
        self._timeout = timeout
        self._verify = verify_tls
        self._session = session or requests.Session()
        self._token: Optional[str] = None
        self._shadow: dict[str, dict[str, str]] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _list_lock(self, list_name: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(list_name, threading.Lock())

    def _authenticate(self) -> str:
        try:
            resp = self._session.post(
                f"{self._base}/security/user/authenticate",
                auth=self._auth,
                timeout=self._timeout,
                verify=self._verify,
            )
            resp.raise_for_status()
            self._token = resp.json()["data"]["token"]
            return self._token
        except requests.RequestException as exc:
            raise SiemUnavailable(f"authentication failed: {exc}") from exc

    def _headers(self) -> dict:
        if not self._token:
            self._authenticate()
        return {"Authorization": f"Bearer {self._token}"}

    def _request(self, method: str, path: str, **kwargs):
        try:
            resp = self._session.request(
                method,
                f"{self._base}{path}",
                headers=self._headers(),
                timeout=self._timeout,
                verify=self._verify,
                **kwargs,
            )
            if resp.status_code == 401:
                self._authenticate()
                resp = self._session.request(
                    method,
                    f"{self._base}{path}",
                    headers=self._headers(),
                    timeout=self._timeout,
                    verify=self._verify,
                    **kwargs,
                )
            resp.raise_for_status()
            return resp
        except requests.RequestException as exc:
            raise SiemUnavailable(f"{method} {path} failed: {exc}") from exc

    def issue(self, command: SiemCommand) -> None:
        if command.kind in (CommandKind.CDB_ADD, CommandKind.CDB_REMOVE):
            with self._list_lock(command.list_name):
                entries = dict(self._shadow.get(command.list_name, {}))
                if command.kind is CommandKind.CDB_ADD:
                    entries[command.key] = command.value
                else:
                    entries.pop(command.key, None)
                self._upload_list(command.list_name, entries)
                self._shadow[command.list_name] = entries
        elif command.kind is CommandKind.AR_BLOCK:
            self._active_response("firewall-drop", command.target, command.scope)
        else:
            self._active_response("firewall-undrop", command.target, command.scope)

    def _upload_list(self, list_name: str, entries: dict[str, str]) -> None:
        body = render_cdb(entries)
        self._request(
            "PUT",
            f"/lists/files/{list_name}",
            params={"overwrite": "true"},
            data=body.encode("utf-8"),
        )

    def _active_response(self, ar_command: str, target: str, scope: str) -> None:
        payload = {
            "command": f"!{ar_command}",
            "arguments": [],
            "alert": {"data": {"srcip": target}},
        }
        params = {} if scope == "all" else {"agents_list": scope}
        self._request("PUT", "/active-response", json=payload, params=params)
