"""Small JSON-over-HTTP helper with retry on transport failures."""

from __future__ import annotations

import logging
import threading

import requests

from erp.errors import ProtocolError, RemoteUnavailable

log = logging.getLogger(__name__)


class JSONClient:
    """POSTs JSON bodies to one endpoint.

    Connection errors and timeouts are retried `retries` times; anything the
    server actually answers (non-200, bad JSON) is a ProtocolError at once.
    Each thread gets its own `requests.Session`.
    """

    def __init__(self, endpoint: str, timeout_ms: float = 5000, retries: int = 2):
        if timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if retries < 0:
            raise ValueError("retries must be non-negative")
        self.endpoint = endpoint.rstrip("/")
        self.timeout_ms = timeout_ms
        self.retries = retries
        self._local = threading.local()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_local"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._local = threading.local()

    @property
    def _session(self) -> requests.Session:
        sess = getattr(self._local, "session", None)
        if sess is None:
            sess = self._local.session = requests.Session()
        return sess

    def post(self, path: str, payload: dict) -> dict:
        url = self.endpoint + path
        last_exc = None
        for attempt in range(1, self.retries + 2):
            try:
                resp = self._session.post(url, json=payload, timeout=self.timeout_ms / 1000)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                log.debug("attempt %d to %s failed: %s", attempt, url, exc)
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"{url} answered HTTP {resp.status_code}")
            try:
                body = resp.json()
            except ValueError as exc:
                raise ProtocolError(f"{url} returned invalid JSON") from exc
            if not isinstance(body, dict):
                raise ProtocolError(f"{url} returned a non-object body")
            return body
        raise RemoteUnavailable(url, self.retries + 1, last_exc)
