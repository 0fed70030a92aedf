"""REST vitals endpoint and MJPEG streams over the stdlib HTTP server.

Handlers only ever read snapshots from :class:`~pulsegrid.pipeline.DataContainer`,
so a slow client cannot hold up the processing tick. Each MJPEG connection
waits for the next published frame and sends only the newest one, which
bounds per-client memory to a single encoded frame.
"""

from __future__ import annotations

import errno
import io
import logging
import math
import socket
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from PIL import Image

from .errors import ServerStartupError
from .ingest import RawFrame
from .pipeline import DataContainer, VitalsRecord

log = logging.getLogger(__name__)

REST_PATH = "/vhealth"
STREAM_PATHS = {"/mainstream": "mainstream", "/pulsestream": "pulsestream"}


@dataclass(frozen=True)
class StreamConfig:
    rest_port: int = 8080
    rest_path: str = REST_PATH
    stream_port: int = 8081
    boundary: str = "pulsegridframe"
    jpeg_quality: int = 80
    bind_address: str = "127.0.0.1"
    # how long an idle stream waits before re-checking for shutdown
    poll_s: float = 0.25
    shutdown_grace_s: float = 2.0
    # kernel send buffer per stream connection; keeps a stalled client from
    # parking many frames in the socket instead of skipping to the newest
    stream_sndbuf_bytes: int = 32768

    def __post_init__(self):
        if self.rest_port == self.stream_port and self.rest_port != 0:
            raise ValueError("REST and stream ports must differ")
        if not self.boundary or not self.boundary.isascii() or any(c.isspace() for c in self.boundary):
            raise ValueError("boundary must be non-empty ASCII without whitespace")
        if not 1 <= self.jpeg_quality <= 100:
            raise ValueError("jpeg quality must be in 1..100")


def _real(v: float) -> str:
    return f"{v:.2f}" if math.isfinite(v) else "0.00"


def format_vhealth(rec: VitalsRecord) -> str:
    """Seven comma-separated values: reals with two decimals, flags as 0/1."""
    return ",".join((
        _real(rec.g_hr), _real(rec.g_br), _real(rec.g_O2),
        "1" if rec.g_seeuser else "0", "1" if rec.g_stable else "0",
        _real(rec.g_hr_graph), _real(rec.g_br_graph),
    ))


def encode_jpeg(frame: RawFrame, quality: int = 80) -> bytes:
    img = Image.frombytes("RGB", (frame.width, frame.height), frame.data)
    out = io.BytesIO()
    img.save(out, format="JPEG", quality=quality)
    return out.getvalue()


class _JpegCache:
    """Encodes each published frame once, however many clients are watching."""

    def __init__(self, quality: int):
        self.quality = quality
        self._lock = threading.Lock()
        self._entries: dict = {}

    def get(self, stream: str, seq: int, frame: RawFrame) -> bytes:
        with self._lock:
            hit = self._entries.get(stream)
            if hit is not None and hit[0] == seq:
                return hit[1]
        data = encode_jpeg(frame, self.quality)
        with self._lock:
            self._entries[stream] = (seq, data)
        return data


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = False
    # the stdlib default backlog of 5 refuses bursts of concurrent clients
    request_queue_size = 512

    def __init__(self, addr, handler, container, cfg, cache, stopping):
        self.container = container
        self.cfg = cfg
        self.cache = cache
        self.stopping = stopping
        super().__init__(addr, handler)


class _BaseHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: _Server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _plain(self, status: int, body: str, extra: Optional[dict] = None):
        data = body.encode("ascii")
        self.send_response(status)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(data)))
        for k, v in (extra or {}).items():
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def _method_not_allowed(self):
        self._plain(405, "method not allowed\n", {"Allow": "GET"})

    do_POST = do_PUT = do_DELETE = do_PATCH = do_HEAD = _method_not_allowed


class RestHandler(_BaseHandler):
    def do_GET(self):
        if self.path.split("?", 1)[0] != self.server.cfg.rest_path:
            self._plain(404, "not found\n")
            return
        self._plain(200, format_vhealth(self.server.container.vitals()))


class StreamHandler(_BaseHandler):
    def setup(self):
        super().setup()
        self.connection.setsockopt(socket.SOL_SOCKET, socket.SO_SNDBUF,
                                   self.server.cfg.stream_sndbuf_bytes)

    def do_GET(self):
        stream = STREAM_PATHS.get(self.path.split("?", 1)[0])
        if stream is None:
            self._plain(404, "not found\n")
            return
        srv = self.server
        boundary = srv.cfg.boundary
        self.close_connection = True
        self.send_response(200)
        self.send_header("Content-Type", f"multipart/x-mixed-replace; boundary={boundary}")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        seq = 0
        try:
            while not srv.stopping.is_set():
                seq, frame = srv.container.wait_for_frame(stream, seq, srv.cfg.poll_s)
                if frame is None:
                    if srv.container.closed:
                        break
                    continue
                jpeg = srv.cache.get(stream, seq, frame)
                head = (f"--{boundary}\r\nContent-Type: image/jpeg\r\n"
                        f"Content-Length: {len(jpeg)}\r\n\r\n").encode("ascii")
                self.wfile.write(head + jpeg + b"\r\n")
                self.wfile.flush()
        except (BrokenPipeError, ConnectionResetError, socket.timeout, OSError):
            log.debug("stream client %s went away", self.address_string())


class ServerHandle:
    def __init__(self, rest: _Server, stream: _Server, stopping: threading.Event, cfg):
        self.rest = rest
        self.stream = stream
        self._stopping = stopping
        self._cfg = cfg
        self._threads = [
            threading.Thread(target=s.serve_forever, kwargs={"poll_interval": 0.1},
                             name=name, daemon=True)
            for s, name in ((rest, "rest"), (stream, "mjpeg"))
        ]
        for t in self._threads:
            t.start()

    @property
    def rest_port(self) -> int:
        return self.rest.server_address[1]

    @property
    def stream_port(self) -> int:
        return self.stream.server_address[1]

    def shutdown(self) -> None:
        self._stopping.set()
        for s in (self.rest, self.stream):
            s.shutdown()
            s.server_close()
        for t in self._threads:
            t.join(timeout=self._cfg.shutdown_grace_s)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def _bind(cfg, port, handler, container, cache, stopping) -> _Server:
    try:
        return _Server((cfg.bind_address, port), handler, container, cfg, cache, stopping)
    except OSError as exc:
        reason = "already in use" if exc.errno == errno.EADDRINUSE else exc.strerror
        raise ServerStartupError(f"cannot bind port {port}: {reason}") from exc


def start_servers(cfg: StreamConfig, container: DataContainer) -> ServerHandle:
    """Start both servers on background threads. Port 0 picks a free port."""
    stopping = threading.Event()
    cache = _JpegCache(cfg.jpeg_quality)
    rest = _bind(cfg, cfg.rest_port, RestHandler, container, cache, stopping)
    try:
        stream = _bind(cfg, cfg.stream_port, StreamHandler, container, cache, stopping)
    except ServerStartupError:
        rest.server_close()
        raise
    return ServerHandle(rest, stream, stopping, cfg)
