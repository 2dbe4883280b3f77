"""Binary request/response protocol for attaching out-of-process planners.

Frame layout, all integers little-endian::

    "PLNR" | version u8 | type u8 | request_id u64 | body_len u32 | body

Types: 1 request, 2 response, 3 error.
Request body: C u16 | ch u16 | H u16 | W u16 | float32 payload (row-major).
Response body: T u16 | T x 2 float64 waypoints.
Error body: code u16 | UTF-8 message.
"""

from __future__ import annotations

import itertools
import logging
import socket
import socketserver
import struct
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout

import numpy as np

from .core import ViewTensor
from .errors import PlannerError, TransportError
from .planner import PlannerHandle

log = logging.getLogger(__name__)

MAGIC = b"PLNR"
VERSION = 1
REQUEST, RESPONSE, ERROR = 1, 2, 3
HEADER = struct.Struct("<4sBBQI")
MAX_BODY = 1 << 30

ERR_BAD_HEADER = 1
ERR_BAD_TYPE = 2
ERR_BAD_BODY = 3
ERR_PLANNER = 4


class ProtocolError(TransportError):
    def __init__(self, code, message):
        super().__init__(f"[{code}] {message}")
        self.code = code


def encode_frame(ftype: int, request_id: int, body: bytes) -> bytes:
    return HEADER.pack(MAGIC, VERSION, ftype, request_id, len(body)) + body


def encode_request(request_id: int, x: ViewTensor) -> bytes:
    c, ch, h, w = x.shape
    body = struct.pack("<4H", c, ch, h, w) + np.ascontiguousarray(x.data, dtype="<f4").tobytes()
    return encode_frame(REQUEST, request_id, body)


def decode_request_body(body: bytes) -> ViewTensor:
    if len(body) < 8:
        raise ProtocolError(ERR_BAD_BODY, "request body shorter than its dims")
    dims = struct.unpack_from("<4H", body)
    n = int(np.prod(dims, dtype=np.int64))
    if len(body) != 8 + 4 * n:
        raise ProtocolError(ERR_BAD_BODY, f"payload {len(body) - 8} bytes, dims {dims} need {4 * n}")
    data = np.frombuffer(body, dtype="<f4", offset=8).reshape(dims)
    if not np.all(np.isfinite(data)):
        raise ProtocolError(ERR_BAD_BODY, "payload contains non-finite values")
    return ViewTensor(data)


def encode_response(request_id: int, traj: np.ndarray) -> bytes:
    traj = np.ascontiguousarray(traj, dtype="<f8")
    return encode_frame(RESPONSE, request_id, struct.pack("<H", len(traj)) + traj.tobytes())


def decode_response_body(body: bytes) -> np.ndarray:
    if len(body) < 2:
        raise ProtocolError(ERR_BAD_BODY, "response body empty")
    (t,) = struct.unpack_from("<H", body)
    if len(body) != 2 + 16 * t:
        raise ProtocolError(ERR_BAD_BODY, f"response declares {t} waypoints, carries {len(body) - 2} bytes")
    return np.frombuffer(body, dtype="<f8", offset=2).reshape(t, 2).astype(np.float64)


def encode_error(request_id: int, code: int, message: str) -> bytes:
    return encode_frame(ERROR, request_id, struct.pack("<H", code) + message.encode("utf-8"))


def decode_error_body(body: bytes):
    (code,) = struct.unpack_from("<H", body) if len(body) >= 2 else (0,)
    return code, body[2:].decode("utf-8", errors="replace")


def _recv_exact(sock, n):
    chunks = []
    while n:
        chunk = sock.recv(n)
        if not chunk:
            return None
        chunks.append(chunk)
        n -= len(chunk)
    return b"".join(chunks)


def read_frame(sock):
    """Return (type, request_id, body), or None on a clean EOF.

    Raises ProtocolError on a bad header; the stream is unusable afterwards.
    """
    head = _recv_exact(sock, HEADER.size)
    if head is None:
        return None
    magic, version, ftype, rid, blen = HEADER.unpack(head)
    if magic != MAGIC or version != VERSION:
        raise ProtocolError(ERR_BAD_HEADER, f"bad magic/version {magic!r}/{version}")
    if blen > MAX_BODY:
        raise ProtocolError(ERR_BAD_HEADER, f"body length {blen} exceeds limit")
    body = _recv_exact(sock, blen) if blen else b""
    if body is None:
        raise ProtocolError(ERR_BAD_BODY, "connection closed inside a frame body")
    return ftype, rid, body


# --- server ----------------------------------------------------------------


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server = self.server
        sock = self.request
        write_lock = threading.Lock()

        def send(frame):
            with write_lock:
                sock.sendall(frame)

        def answer(rid, x):
            try:
                traj = server.planner.plan(x)
                send(encode_response(rid, traj))
            except OSError:
                pass
            except Exception as exc:  # noqa: BLE001 - reported to the client
                try:
                    send(encode_error(rid, ERR_PLANNER, str(exc)))
                except OSError:
                    pass

        with ThreadPoolExecutor(max_workers=server.workers) as pool:
            while True:
                try:
                    frame = read_frame(sock)
                except ProtocolError as exc:
                    # framing is lost; report and drop this connection only
                    try:
                        send(encode_error(0, exc.code, str(exc)))
                    except OSError:
                        pass
                    return
                except OSError:
                    return
                if frame is None:
                    return
                ftype, rid, body = frame
                if ftype != REQUEST:
                    send(encode_error(rid, ERR_BAD_TYPE, f"unexpected frame type {ftype}"))
                    continue
                try:
                    x = decode_request_body(body)
                except ProtocolError as exc:
                    send(encode_error(rid, exc.code, str(exc)))
                    continue
                pool.submit(answer, rid, x)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class PlannerServer:
    """Serve a planner over the frame protocol on a TCP endpoint.

    Use as a context manager; ``port=0`` picks a free port, read it back from
    ``address``.
    """

    def __init__(self, planner: PlannerHandle, host="127.0.0.1", port=0, workers=4):
        try:
            self._server = _TCPServer((host, port), _Handler)
        except OSError as exc:
            raise TransportError(f"cannot bind {host}:{port}: {exc}") from exc
        self._server.planner = planner
        self._server.workers = workers
        self._thread = None

    @property
    def address(self):
        return self._server.server_address[:2]

    def start(self):
        if self._thread is not None:
            return self
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self._server.serve_forever()

    def stop(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


def serve_external(planner: PlannerHandle, endpoint=("127.0.0.1", 0), workers=4) -> PlannerServer:
    """Start a background server answering requests with ``planner``."""
    host, port = endpoint
    return PlannerServer(planner, host, port, workers).start()


# --- client ----------------------------------------------------------------


class _Connection:
    def __init__(self, host, port, timeout):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot reach planner at {host}:{port}: {exc}") from exc
        self.sock.settimeout(None)
        self.pending: dict[int, Future] = {}
        self.lock = threading.Lock()
        self.send_lock = threading.Lock()
        self.alive = True
        self.reader = threading.Thread(target=self._read_loop, daemon=True)
        self.reader.start()

    def _fail_all(self, exc):
        with self.lock:
            self.alive = False
            pending, self.pending = self.pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    def _read_loop(self):
        try:
            while True:
                frame = read_frame(self.sock)
                if frame is None:
                    raise TransportError("planner server closed the connection")
                ftype, rid, body = frame
                with self.lock:
                    fut = self.pending.pop(rid, None)
                if fut is None:
                    if ftype == ERROR:
                        raise ProtocolError(*decode_error_body(body))
                    continue
                if ftype == RESPONSE:
                    fut.set_result(decode_response_body(body))
                elif ftype == ERROR:
                    code, msg = decode_error_body(body)
                    if code == ERR_PLANNER:
                        fut.set_exception(PlannerError(f"remote planner failed: {msg}"))
                    else:
                        fut.set_exception(ProtocolError(code, msg))
                else:
                    fut.set_exception(ProtocolError(ERR_BAD_TYPE, f"unexpected frame type {ftype}"))
        except (OSError, ValueError) as exc:
            err = exc if isinstance(exc, TransportError) else TransportError(str(exc))
            self._fail_all(err)

    def submit(self, frame, rid) -> Future:
        fut = Future()
        with self.lock:
            if not self.alive:
                raise TransportError("connection is closed")
            self.pending[rid] = fut
        try:
            with self.send_lock:
                self.sock.sendall(frame)
        except OSError as exc:
            self._fail_all(TransportError(f"send failed: {exc}"))
            raise TransportError(f"send failed: {exc}") from exc
        return fut

    def close(self):
        self._fail_all(TransportError("connection closed by client"))
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class RemotePlanner(PlannerHandle):
    """Client side of the protocol; multiplexes concurrent queries on one socket.

    A transport failure is retried once on a fresh connection before
    surfacing as TransportError.
    """

    kind = "external"

    def __init__(self, host, port, horizon=None, max_in_flight=8, timeout=30.0):
        super().__init__(horizon=horizon, max_in_flight=max_in_flight)
        self.host, self.port, self.timeout = host, port, timeout
        self._conn = None
        self._conn_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def _connection(self):
        with self._conn_lock:
            if self._conn is None or not self._conn.alive:
                self._conn = _Connection(self.host, self.port, self.timeout)
            return self._conn

    def _query(self, x):
        rid = next(self._ids)
        fut = self._connection().submit(encode_request(rid, x), rid)
        try:
            return fut.result(timeout=self.timeout)
        except FutureTimeout as exc:
            raise TransportError(f"request {rid} timed out after {self.timeout}s") from exc

    def _plan(self, x: ViewTensor, kept):
        with self._slots:
            try:
                traj = self._query(x)
            except ProtocolError:
                raise
            except TransportError as exc:
                log.warning("planner transport error, retrying once: %s", exc)
                traj = self._query(x)
        if self.horizon is not None and len(traj) != self.horizon:
            raise TransportError(f"remote planner returned {len(traj)} waypoints, expected {self.horizon}")
        return traj

    def close(self):
        with self._conn_lock:
            if self._conn is not None:
                self._conn.close()
                self._conn = None


def parse_endpoint(text: str):
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1"), int(port)
