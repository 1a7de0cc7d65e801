"""HTTP-style request/response plumbing.

Handlers are plain callables ``Request -> Response``. The same handler can be
mounted on a real socket with :func:`serve_http` or called in-process through
a loopback transport (see :mod:`truffle.sim.network`). Clients talk through
anything with a ``request`` method shaped like :class:`HttpTransport.request`.
"""

from __future__ import annotations

import http.client
import json
import logging
import socket
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping, Optional, Protocol
from urllib.parse import quote, unquote

from truffle.errors import GatewayTimeout, TransportError

log = logging.getLogger(__name__)

# Header names are part of the wire contract; keep them bit-exact.
H_TARGET = "X-Truffle-Target"
H_KIND = "X-Truffle-Storage-Kind"
H_LOCATOR = "X-Truffle-Locator"
H_ENDPOINT = "X-Truffle-Endpoint"
H_CREDENTIALS = "X-Truffle-Credentials-Ref"
H_BUFFER = "X-Truffle-Buffer"
H_KEY = "X-Truffle-Key"
H_TRACE = "X-Truffle-Trace"
H_ERROR = "X-Truffle-Error"


def _lookup(headers: Mapping[str, str], name: str) -> Optional[str]:
    lowered = name.lower()
    for k, v in headers.items():
        if k.lower() == lowered:
            return v
    return None


@dataclass
class Request:
    method: str
    path: str
    headers: dict[str, str] = field(default_factory=dict)
    body: bytes = b""

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        value = _lookup(self.headers, name)
        return default if value is None else value


@dataclass
class Response:
    status: int
    body: bytes = b""
    headers: dict[str, str] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return 200 <= self.status < 300

    def header(self, name: str, default: Optional[str] = None) -> Optional[str]:
        value = _lookup(self.headers, name)
        return default if value is None else value

    @property
    def error(self) -> Optional[str]:
        return self.header(H_ERROR)

    def json(self):
        return json.loads(self.body.decode())


Handler = Callable[[Request], Response]


def error_response(status: int, code: str, message: str = "") -> Response:
    body = json.dumps({"error": code, "message": message}).encode()
    return Response(status, body, {H_ERROR: code, "Content-Type": "application/json"})


def path_segment(value: str) -> str:
    return quote(value, safe="")


def split_path(path: str) -> list[str]:
    path = path.split("?", 1)[0]
    return [unquote(p) for p in path.strip("/").split("/") if p != ""]


class Transport(Protocol):
    def request(
        self,
        address: str,
        method: str,
        path: str,
        headers: Optional[Mapping[str, str]] = None,
        body: bytes = b"",
        timeout_ms: Optional[float] = None,
    ) -> Response: ...


class HttpTransport:
    """Blocking HTTP/1.1 client over ``http.client``; ``address`` is ``host:port``."""

    def request(
        self,
        address: str,
        method: str,
        path: str,
        headers: Optional[Mapping[str, str]] = None,
        body: bytes = b"",
        timeout_ms: Optional[float] = None,
    ) -> Response:
        host, _, port = address.rpartition(":")
        timeout = None if timeout_ms is None else timeout_ms / 1000.0
        conn = http.client.HTTPConnection(host, int(port), timeout=timeout)
        try:
            conn.request(method, path, body=body or None, headers=dict(headers or {}))
            resp = conn.getresponse()
            data = resp.read()
            return Response(resp.status, data, dict(resp.getheaders()))
        except (socket.timeout, TimeoutError) as exc:
            raise GatewayTimeout(f"{method} {address}{path} timed out") from exc
        except OSError as exc:
            raise TransportError(f"{method} {address}{path}: {exc}") from exc
        finally:
            conn.close()


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve_http(handler: Handler, address: str) -> tuple[ThreadingHTTPServer, str]:
    """Serve ``handler`` on ``address`` (``host:port``, port 0 picks one) in a daemon thread.

    Returns the server and the bound ``host:port``. Call ``server.shutdown()`` to stop.
    """
    host, _, port = address.rpartition(":")

    class _RequestHandler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def _dispatch(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            req = Request(self.command, self.path, dict(self.headers.items()), body)
            try:
                resp = handler(req)
            except Exception as exc:  # keep the server alive, surface as 500
                log.exception("handler failed for %s %s", self.command, self.path)
                resp = error_response(500, "internal", str(exc))
            self.send_response(resp.status)
            for k, v in resp.headers.items():
                if k.lower() not in ("content-length", "connection"):
                    self.send_header(k, v)
            self.send_header("Content-Length", str(len(resp.body)))
            self.end_headers()
            if resp.body:
                self.wfile.write(resp.body)

        do_GET = do_POST = do_PUT = do_DELETE = _dispatch

        def log_message(self, format, *args):  # noqa: A002
            log.debug("%s - %s", self.address_string(), format % args)

    server = _Server((host or "127.0.0.1", int(port)), _RequestHandler)
    bound = f"{server.server_address[0]}:{server.server_address[1]}"
    threading.Thread(target=server.serve_forever, name=f"http-{bound}", daemon=True).start()
    return server, bound
