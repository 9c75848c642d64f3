"""HTTP/1.1 JSON API over :class:`~shotit.service.SearchService`.

Routes:
    POST /search?cutBorders=1&topK=10   multipart ``image`` field or raw image body
    GET  /image/{id}?t=SECONDS          nearest stored frame as PNG
    GET  /video/{id}?from=S&to=S        clip bytes
    GET  /status                        catalog and index summary
"""

from __future__ import annotations

import json
import logging
import re
import threading
from email.parser import BytesParser
from email.policy import HTTP
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .service import BadRequest, SearchRequest, SearchService, ServiceError

log = logging.getLogger(__name__)

MAX_UPLOAD = 32 * 1024 * 1024
_MEDIA_ROUTE = re.compile(r"^/(image|video)/(\d+)$")


def _flag(value: str | None, default: bool) -> bool:
    if value is None:
        return default
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise BadRequest(f"bad boolean {value!r}")


def _number(params: dict, name: str, cast=float):
    raw = params.get(name, [None])[0]
    if raw is None:
        raise BadRequest(f"missing query parameter {name!r}")
    try:
        return cast(raw)
    except ValueError:
        raise BadRequest(f"bad {name} value {raw!r}") from None


def extract_image(content_type: str, body: bytes) -> bytes:
    """Return the image bytes from a multipart form (field ``image``) or a raw body."""
    if not content_type.lower().startswith("multipart/form-data"):
        return body
    msg = BytesParser(policy=HTTP).parsebytes(
        b"Content-Type: " + content_type.encode("latin-1") + b"\r\n\r\n" + body
    )
    if not msg.is_multipart():
        raise BadRequest("malformed multipart body")
    parts = list(msg.iter_parts())
    for part in parts:
        if part.get_param("name", header="content-disposition") == "image":
            return part.get_payload(decode=True) or b""
    for part in parts:
        if part.get_filename():
            return part.get_payload(decode=True) or b""
    raise BadRequest("multipart body has no image field")


class Handler(BaseHTTPRequestHandler):
    service: SearchService
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.info("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, ctype: str) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj).encode(), "application/json")

    def _error(self, exc: ServiceError) -> None:
        self._json(exc.status, {"error": str(exc)})

    def do_GET(self):
        url = urlsplit(self.path)
        params = parse_qs(url.query)
        try:
            if url.path == "/status":
                return self._json(200, self.service.status())
            m = _MEDIA_ROUTE.match(url.path)
            if not m:
                return self._json(404, {"error": f"no route {url.path}"})
            kind, media_id = m.group(1), int(m.group(2))
            if kind == "image":
                png = self.service.serve_image(media_id, _number(params, "t"))
                return self._send(200, png, "image/png")
            chunks = self.service.serve_video(media_id, _number(params, "from"), _number(params, "to"))
            ctype = "application/octet-stream" if self.service.config.clipper_cmd else "application/zip"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Transfer-Encoding", "chunked")
            self.end_headers()
            for chunk in chunks:
                self.wfile.write(b"%x\r\n%s\r\n" % (len(chunk), chunk))
            self.wfile.write(b"0\r\n\r\n")
        except ServiceError as exc:
            self._error(exc)

    def do_POST(self):
        url = urlsplit(self.path)
        if url.path != "/search":
            return self._json(404, {"error": f"no route {url.path}"})
        try:
            length = int(self.headers.get("Content-Length") or 0)
            if length <= 0:
                raise BadRequest("empty request body")
            if length > MAX_UPLOAD:
                raise BadRequest("upload too large")
            body = self.rfile.read(length)
            params = parse_qs(url.query)
            image = extract_image(self.headers.get("Content-Type", ""), body)
            top_k_raw = params.get("topK", ["10"])[0]
            try:
                top_k = int(top_k_raw)
            except ValueError:
                raise BadRequest(f"bad topK {top_k_raw!r}") from None
            req = SearchRequest(
                image=image,
                cut_borders=_flag(params.get("cutBorders", [None])[0], True),
                top_k=top_k,
            )
            self._json(200, self.service.handle_search(req).to_json())
        except ServiceError as exc:
            self._error(exc)


def make_server(service: SearchService, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def serve_in_thread(service: SearchService, host: str = "127.0.0.1", port: int = 0):
    """Start a server on a background thread; returns (server, thread)."""
    server = make_server(service, host, port)
    t = threading.Thread(target=server.serve_forever, name="shotit-http", daemon=True)
    t.start()
    return server, t
