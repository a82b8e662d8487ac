"""HTTP/JSON boundary for similarity oracles.

serve() wraps any local SimilarityOracle in a small threaded HTTP service;
connect() gives back a client object that satisfies the same oracle contract
against a remote endpoint.  Images cross the wire as base64-encoded 8-bit
netpbm payloads, which makes the quantization a visible, testable step
rather than an accident of serialization.

Protocol (version 1, JSON bodies):

    GET  /v1/health
        -> 200 {"protocol_version", "width", "height", "channels",
                "queries_used", "budget"}
    POST /v1/score   {"id", "images": [b64 PGM/PPM, ...], "protocol_version"}
        -> 200 {"scores", "queries_used", "budget_remaining"}
    POST /v1/enroll  {"id", "image": b64 PGM/PPM, "protocol_version"}
        -> 200 {"enrolled", "queries_used"}

/v1/enroll is an extension beyond the scoring surface so that remote clients
can stand up a test target without shell access to the server; a deployment
wrapping a real verification system would simply not route it.

Error responses carry {"error": <machine-readable code>, "detail": <text>}:
400 bad_request | unsupported_protocol | empty_batch | bad_image |
geometry_mismatch | degenerate_input, 404 unknown_identity (plus not_found
for unknown paths), 429 budget_exhausted with used/limit/attempted fields.

The server decodes an entire batch before scoring any of it, so a malformed
image never consumes budget.  The client performs no transparent retries: a
caller that re-sends a batch is billed again, exactly like a real metered
scoring API.
"""

from __future__ import annotations

import base64
import binascii
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib import error as _urlerror
from urllib import request as _urlrequest

import numpy as np

from .errors import (
    BudgetExhaustedError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    TransportError,
    UnknownIdentityError,
    UnsupportedVersionError,
)
from .image import decode_netpbm, encode_netpbm
from .oracle import SimilarityOracle

PROTOCOL_VERSION = 1


class _RequestFault(Exception):
    """Internal: carries an HTTP status and error payload to the handler."""

    def __init__(self, status, code, detail, **extra):
        super().__init__(detail)
        self.status = status
        self.payload = {"error": code, "detail": detail, **extra}


def _decode_wire_image(b64_text, geometry, what):
    if not isinstance(b64_text, str):
        raise _RequestFault(400, "bad_image", f"{what} is not base64 text")
    try:
        raw = base64.b64decode(b64_text, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise _RequestFault(400, "bad_image", f"{what}: {exc}") from exc
    try:
        img = decode_netpbm(raw)
    except FormatError as exc:
        raise _RequestFault(400, "bad_image", f"{what}: {exc}") from exc
    if img.shape != geometry:
        raise _RequestFault(
            400, "geometry_mismatch",
            f"{what} has geometry {img.shape}, server expects {geometry}")
    return img


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, *args):  # tests run many requests; stay quiet
        pass

    def _reply(self, status, payload):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _read_json(self):
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            payload = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise _RequestFault(400, "bad_request", f"request body: {exc}") from exc
        if not isinstance(payload, dict):
            raise _RequestFault(400, "bad_request", "request body must be an object")
        version = payload.get("protocol_version")
        if version is None:
            raise _RequestFault(400, "bad_request", "protocol_version is required")
        if version != PROTOCOL_VERSION:
            raise _RequestFault(
                400, "unsupported_protocol",
                f"protocol_version {version!r} is not supported (this is {PROTOCOL_VERSION})")
        identity = payload.get("id")
        if not isinstance(identity, str) or not identity:
            raise _RequestFault(400, "bad_request", "id must be a non-empty string")
        return payload, identity

    def do_GET(self):
        if self.path != "/v1/health":
            self._reply(404, {"error": "not_found", "detail": self.path})
            return
        h, w, c = self.server.geometry
        self._reply(200, {
            "protocol_version": PROTOCOL_VERSION,
            "width": w,
            "height": h,
            "channels": c,
            "queries_used": self.server.oracle.queries_used(),
            "budget": self.server.oracle.budget(),
        })

    def do_POST(self):
        try:
            if self.path == "/v1/score":
                self._score()
            elif self.path == "/v1/enroll":
                self._enroll()
            else:
                self._reply(404, {"error": "not_found", "detail": self.path})
        except _RequestFault as fault:
            self._reply(fault.status, fault.payload)

    def _score(self):
        payload, identity = self._read_json()
        images_b64 = payload.get("images")
        if not isinstance(images_b64, list):
            raise _RequestFault(400, "bad_request", "images must be a list")
        if not images_b64:
            raise _RequestFault(400, "empty_batch", "images list is empty")
        geometry = self.server.geometry
        images = [_decode_wire_image(b64, geometry, f"images[{i}]")
                  for i, b64 in enumerate(images_b64)]
        oracle = self.server.oracle
        try:
            scores = oracle.score_batch(images, identity)
        except UnknownIdentityError:
            raise _RequestFault(404, "unknown_identity",
                                f"identity {identity!r} is not enrolled",
                                id=identity) from None
        except BudgetExhaustedError as exc:
            raise _RequestFault(429, "budget_exhausted", str(exc),
                                used=exc.used, limit=exc.limit,
                                attempted=exc.attempted) from None
        used = oracle.queries_used()
        limit = oracle.budget()
        self._reply(200, {
            "scores": [float(s) for s in scores],
            "queries_used": used,
            "budget_remaining": None if limit is None else limit - used,
        })

    def _enroll(self):
        payload, identity = self._read_json()
        if "image" not in payload:
            raise _RequestFault(400, "bad_request", "image is required")
        img = _decode_wire_image(payload["image"], self.server.geometry, "image")
        try:
            self.server.oracle.enroll(identity, img)
        except DegenerateInputError as exc:
            raise _RequestFault(400, "degenerate_input", str(exc)) from None
        self._reply(200, {
            "enrolled": identity,
            "queries_used": self.server.oracle.queries_used(),
        })


class _OracleHTTPServer(ThreadingHTTPServer):
    daemon_threads = True


class OracleService:
    """A running scoring service; close() releases the socket."""

    def __init__(self, server, thread):
        self._server = server
        self._thread = thread

    @property
    def address(self):
        host, port = self._server.server_address[:2]
        return host, port

    @property
    def endpoint(self):
        host, port = self.address
        return f"http://{host}:{port}"

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()
        return False


def serve(oracle, bind_address=("127.0.0.1", 0), geometry=None) -> OracleService:
    """Expose `oracle` over HTTP; returns a handle with .endpoint and .close().

    bind_address is a (host, port) pair or a "host:port" string; port 0 picks
    a free port.  geometry defaults to the oracle's own; passing it explicitly
    is for oracles that do not expose one.  Bind failures raise OSError.
    """
    if isinstance(bind_address, str):
        host, _, port_text = bind_address.rpartition(":")
        if not host:
            raise ValueError(f"bind address {bind_address!r} is not host:port")
        bind_address = (host, int(port_text))
    if geometry is None:
        geometry = getattr(oracle, "geometry", None)
    if geometry is None:
        raise GeometryError("oracle exposes no geometry; pass one to serve()")
    geometry = tuple(int(g) for g in geometry)
    if len(geometry) != 3:
        raise GeometryError(f"geometry must be (height, width, channels), got {geometry}")
    server = _OracleHTTPServer(bind_address, _Handler)
    server.oracle = oracle
    server.geometry = geometry
    thread = threading.Thread(target=server.serve_forever, name="oracle-wire", daemon=True)
    thread.start()
    return OracleService(server, thread)


class RemoteOracle(SimilarityOracle):
    """SimilarityOracle client for a served endpoint.

    queries_used() mirrors the server's accounting as of the last response
    seen; there are no transparent retries, so a batch the caller re-sends
    counts twice, like any metered scoring API.
    """

    def __init__(self, endpoint, timeout=10.0):
        self._endpoint = endpoint.rstrip("/")
        self._timeout = timeout
        health = self._request("GET", "/v1/health")
        version = health.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise UnsupportedVersionError(version)
        try:
            self._geometry = (int(health["height"]), int(health["width"]),
                              int(health["channels"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed health response: {health!r}") from exc
        self._used = int(health.get("queries_used", 0))
        budget = health.get("budget")
        self._budget = None if budget is None else int(budget)

    @property
    def geometry(self):
        return self._geometry

    def _request(self, method, path, payload=None):
        url = self._endpoint + path
        data = None
        headers = {}
        if payload is not None:
            data = json.dumps(payload).encode("utf-8")
            headers["Content-Type"] = "application/json"
        req = _urlrequest.Request(url, data=data, headers=headers, method=method)
        try:
            with _urlrequest.urlopen(req, timeout=self._timeout) as resp:
                body = resp.read()
        except _urlerror.HTTPError as exc:
            raise self._mapped_error(exc) from None
        except (_urlerror.URLError, ConnectionError, TimeoutError, OSError) as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        try:
            return json.loads(body.decode("utf-8"))
        except (ValueError, UnicodeDecodeError) as exc:
            raise TransportError(f"{method} {url}: unparseable response body") from exc

    @staticmethod
    def _mapped_error(exc: _urlerror.HTTPError):
        try:
            payload = json.loads(exc.read().decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            payload = {}
        code = payload.get("error")
        detail = payload.get("detail", f"HTTP {exc.code}")
        if code == "budget_exhausted":
            return BudgetExhaustedError(payload.get("used"), payload.get("limit"),
                                        payload.get("attempted"))
        if code == "unknown_identity":
            return UnknownIdentityError(payload.get("id", detail))
        if code == "geometry_mismatch":
            return GeometryError(detail)
        if code == "degenerate_input":
            return DegenerateInputError(detail)
        if code in ("bad_image", "empty_batch", "bad_request", "unsupported_protocol"):
            return FormatError(code, detail)
        return TransportError(f"HTTP {exc.code}: {detail}")

    def enroll(self, identity, image):
        reply = self._request("POST", "/v1/enroll", {
            "protocol_version": PROTOCOL_VERSION,
            "id": identity,
            "image": base64.b64encode(encode_netpbm(image)).decode("ascii"),
        })
        if "queries_used" in reply:
            self._used = int(reply["queries_used"])

    def score_batch(self, images, identity):
        reply = self._request("POST", "/v1/score", {
            "protocol_version": PROTOCOL_VERSION,
            "id": identity,
            "images": [base64.b64encode(encode_netpbm(im)).decode("ascii")
                       for im in images],
        })
        try:
            scores = np.asarray([float(s) for s in reply["scores"]], dtype=np.float64)
            self._used = int(reply["queries_used"])
        except (KeyError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed score response: {reply!r}") from exc
        if scores.shape != (len(images),):
            raise TransportError(
                f"server returned {scores.shape[0]} scores for {len(images)} images")
        remaining = reply.get("budget_remaining")
        if remaining is not None and self._budget is None:
            self._budget = self._used + int(remaining)
        return scores

    def queries_used(self):
        return self._used

    def budget(self):
        return self._budget


def connect(endpoint: str, timeout=10.0) -> RemoteOracle:
    """Open a client against a served oracle; raises TransportError if unreachable."""
    return RemoteOracle(endpoint, timeout=timeout)
