"""Minimal JSON-over-HTTP plumbing.

Each service exposes a :class:`JsonApp`. The same app object can be called
in-process through :class:`LocalTransport` (deterministic, used by the
scenario harness) or served on a socket with :func:`serve` and reached with
:class:`HttpTransport`.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable, Mapping, Protocol
from urllib.parse import urlsplit

from .errors import FedAuthError, StartupFailure, TransportError, outcome_of

log = logging.getLogger(__name__)


@dataclass
class Request:
    method: str
    path: str
    body: dict[str, Any] = field(default_factory=dict)
    headers: Mapping[str, str] = field(default_factory=dict)


@dataclass
class Response:
    status: int
    body: dict[str, Any]

    @property
    def ok(self) -> bool:
        return self.status == 200


Handler = Callable[[Request], Response]


def error_response(status: int, exc: BaseException) -> Response:
    return Response(status, {"error": outcome_of(exc), "message": str(exc)})


class JsonApp:
    """Exact-path and prefix routing plus exception-to-status mapping."""

    # Subclasses map exception types to HTTP statuses; first isinstance match wins.
    error_status: tuple[tuple[type[BaseException], int], ...] = ()

    def __init__(self) -> None:
        self._routes: dict[tuple[str, str], Handler] = {}
        self._prefix_routes: list[tuple[str, str, Handler]] = []

    def route(self, method: str, path: str, handler: Handler) -> None:
        if path.endswith("/*"):
            self._prefix_routes.append((method, path[:-1], handler))
        else:
            self._routes[(method, path)] = handler

    def handle(self, request: Request) -> Response:
        handler = self._routes.get((request.method, request.path))
        if handler is None:
            for method, prefix, h in self._prefix_routes:
                if method == request.method and request.path.startswith(prefix):
                    handler = h
                    break
        if handler is None:
            return Response(404, {"error": "NotFound", "message": request.path})
        try:
            return handler(request)
        except FedAuthError as exc:
            for exc_type, status in self.error_status:
                if isinstance(exc, exc_type):
                    return error_response(status, exc)
            return error_response(400, exc)
        except (KeyError, TypeError, ValueError) as exc:
            return Response(400, {"error": "BadRequest", "message": str(exc)})


def require_fields(body: Mapping[str, Any], *names: str) -> list[Any]:
    missing = [n for n in names if n not in body]
    if missing:
        raise ValueError(f"missing fields: {', '.join(missing)}")
    return [body[n] for n in names]


# -- transports ---------------------------------------------------------------


class Transport(Protocol):
    def get(self, url: str, headers: Mapping[str, str] | None = None) -> Response: ...

    def post(self, url: str, body: Mapping[str, Any], headers: Mapping[str, str] | None = None) -> Response: ...


class LocalTransport:
    """Dispatches URLs to in-process apps by longest matching base URL."""

    def __init__(self, mounts: Mapping[str, JsonApp] | None = None):
        self.mounts: dict[str, JsonApp] = {}
        for base, app in (mounts or {}).items():
            self.mount(base, app)

    def mount(self, base_url: str, app: JsonApp) -> None:
        self.mounts[base_url.rstrip("/")] = app

    def unmount(self, base_url: str) -> None:
        self.mounts.pop(base_url.rstrip("/"), None)

    def _dispatch(self, method: str, url: str, body: Mapping[str, Any] | None, headers) -> Response:
        for base in sorted(self.mounts, key=len, reverse=True):
            if url == base or url.startswith(base + "/"):
                path = url[len(base):] or "/"
                # Round-trip through JSON so in-process calls see exactly what the wire would carry.
                payload = json.loads(json.dumps(dict(body or {})))
                resp = self.mounts[base].handle(Request(method, path, payload, dict(headers or {})))
                return Response(resp.status, json.loads(json.dumps(resp.body)))
        raise TransportError(f"no endpoint reachable at {url}")

    def get(self, url: str, headers: Mapping[str, str] | None = None) -> Response:
        return self._dispatch("GET", url, None, headers)

    def post(self, url: str, body: Mapping[str, Any], headers: Mapping[str, str] | None = None) -> Response:
        return self._dispatch("POST", url, body, headers)


class HttpTransport:
    def __init__(self, timeout: float = 5.0):
        self.timeout = timeout

    def _send(self, req: urllib.request.Request) -> Response:
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return Response(resp.status, _decode(resp.read()))
        except urllib.error.HTTPError as err:
            return Response(err.code, _decode(err.read()))
        except (urllib.error.URLError, OSError) as err:
            raise TransportError(f"{req.full_url}: {err}") from None

    def get(self, url: str, headers: Mapping[str, str] | None = None) -> Response:
        return self._send(urllib.request.Request(url, headers=dict(headers or {}), method="GET"))

    def post(self, url: str, body: Mapping[str, Any], headers: Mapping[str, str] | None = None) -> Response:
        data = json.dumps(dict(body)).encode()
        hdrs = {"Content-Type": "application/json", **dict(headers or {})}
        return self._send(urllib.request.Request(url, data=data, headers=hdrs, method="POST"))


def _decode(raw: bytes) -> dict[str, Any]:
    try:
        doc = json.loads(raw or b"{}")
    except ValueError:
        return {"error": "BadResponse", "raw": raw[:200].decode("utf-8", "replace")}
    return doc if isinstance(doc, dict) else {"value": doc}


# -- serving ------------------------------------------------------------------


def _make_handler(app: JsonApp) -> type[BaseHTTPRequestHandler]:
    class _Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _run(self, method: str) -> None:
            path = urlsplit(self.path).path
            body: dict[str, Any] = {}
            length = int(self.headers.get("Content-Length") or 0)
            if length:
                try:
                    parsed = json.loads(self.rfile.read(length))
                except ValueError:
                    self._reply(Response(400, {"error": "BadRequest", "message": "body is not JSON"}))
                    return
                if not isinstance(parsed, dict):
                    self._reply(Response(400, {"error": "BadRequest", "message": "body must be an object"}))
                    return
                body = parsed
            headers = {k.lower(): v for k, v in self.headers.items()}
            self._reply(app.handle(Request(method, path, body, headers)))

        def _reply(self, resp: Response) -> None:
            data = json.dumps(resp.body).encode()
            self.send_response(resp.status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self) -> None:  # noqa: N802
            self._run("GET")

        def do_POST(self) -> None:  # noqa: N802
            self._run("POST")

        def log_message(self, fmt: str, *args: Any) -> None:
            log.debug("%s %s", self.address_string(), fmt % args)

    return _Handler


def serve(app: JsonApp, host: str = "127.0.0.1", port: int = 0, background: bool = True) -> ThreadingHTTPServer:
    """Bind ``app`` to ``host:port``. With ``background`` the server runs in a
    daemon thread and the bound server is returned; call ``shutdown()`` to stop."""
    try:
        server = ThreadingHTTPServer((host, port), _make_handler(app))
    except OSError as exc:
        raise StartupFailure(f"cannot bind {host}:{port}: {exc}") from None
    server.daemon_threads = True
    if background:
        threading.Thread(target=server.serve_forever, daemon=True).start()
    else:
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
    return server


def base_url(server: ThreadingHTTPServer) -> str:
    host, port = server.server_address[:2]
    return f"http://{host}:{port}"
