"""Socket server and clients.

The server owns one compartment. Antigen and signal sessions only append
to the compartment's ingest queue; response sessions receive every
response record the cells emit. One thread per connected client.
"""

from __future__ import annotations

import logging
import os
import queue
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .model import ResponseRecord, TissueCompartment
from .protocol import (
    AntigenMsg,
    ErrorMsg,
    Hello,
    ProtocolError,
    ResponseMsg,
    SignalMsg,
    decode_message,
    encode_message,
)

log = logging.getLogger(__name__)

DEFAULT_ADDR = "127.0.0.1:7077"
MAX_LINE = 4096


class TransportError(ConnectionError):
    """Connection-level failure; the caller may reconnect and retry."""

    retriable = True


def parse_addr(addr: Optional[str] = None) -> tuple[str, int]:
    addr = addr or os.environ.get("TISSUE_ADDR") or DEFAULT_ADDR
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


@dataclass
class ClientSession:
    role: str
    peer: tuple
    received: int = 0
    sent: int = 0
    errors: int = 0
    closed: bool = False
    outbox: Optional[queue.Queue] = field(default=None, repr=False)


_CLOSE = object()


class _Handler(socketserver.StreamRequestHandler):
    server: "_TCPServer"

    def _reply_error(self, text: str) -> None:
        text = "".join(ch if ch.isprintable() and ch.isascii() else "?" for ch in text).strip()
        try:
            self.wfile.write(encode_message(ErrorMsg(text[:200])))
        except OSError:
            pass

    def handle(self) -> None:
        owner = self.server.owner
        first = self.rfile.readline(MAX_LINE)
        if not first:
            return
        try:
            hello = decode_message(first)
        except ProtocolError as exc:
            self._reply_error(f"bad handshake: {exc}")
            return
        if not isinstance(hello, Hello):
            self._reply_error("expected H <role> first")
            return
        session = ClientSession(hello.role, self.client_address)
        owner._add_session(session)
        try:
            if hello.role == "response":
                self._serve_responses(session)
            else:
                self._serve_input(session)
        finally:
            session.closed = True
            owner._drop_session(session)

    def _serve_input(self, session: ClientSession) -> None:
        ingest = self.server.owner.compartment.queue
        want = AntigenMsg if session.role == "antigen" else SignalMsg
        while True:
            line = self.rfile.readline(MAX_LINE)
            if not line:
                return
            try:
                msg = decode_message(line)
            except ProtocolError as exc:
                session.errors += 1
                self._reply_error(str(exc))
                continue
            if not isinstance(msg, want):
                self._reply_error(f"{type(msg).__name__} not allowed on a {session.role} session")
                return
            if isinstance(msg, AntigenMsg):
                ingest.put_antigen(msg.value)
            else:
                ingest.put_signal(msg.index, msg.level)
            session.received += 1

    def _serve_responses(self, session: ClientSession) -> None:
        # inbound lines are ignored; a closed socket ends the session
        watcher = threading.Thread(target=self._watch_eof, args=(session,), daemon=True)
        watcher.start()
        while True:
            item = session.outbox.get()
            if item is _CLOSE:
                return
            try:
                self.wfile.write(encode_message(ResponseMsg(item.tick, item.value)))
                self.wfile.flush()
            except OSError:
                return
            session.sent += 1

    def _watch_eof(self, session: ClientSession) -> None:
        try:
            while self.rfile.readline(MAX_LINE):
                pass
        except OSError:
            pass
        session.outbox.put(_CLOSE)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True
    owner: "TissueServer"


class TissueServer:
    """Listener plus per-client sessions feeding one compartment."""

    def __init__(self, compartment: TissueCompartment, addr: Optional[str] = None):
        self.compartment = compartment
        self._host, self._port = parse_addr(addr)
        self._tcp: Optional[_TCPServer] = None
        self._thread: Optional[threading.Thread] = None
        self._lock = threading.Lock()
        self.sessions: list[ClientSession] = []
        self.history: list[ClientSession] = []

    @property
    def address(self) -> str:
        host, port = self._tcp.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "TissueServer":
        self._tcp = _TCPServer((self._host, self._port), _Handler)  # bind errors are fatal
        self._tcp.owner = self
        self.compartment.response_listeners.append(self._fan_out)
        self._thread = threading.Thread(target=self._tcp.serve_forever, name="tissue-listener", daemon=True)
        self._thread.start()
        log.info("tissue server listening on %s", self.address)
        return self

    def close(self) -> None:
        if self._tcp is None:
            return
        if self._fan_out in self.compartment.response_listeners:
            self.compartment.response_listeners.remove(self._fan_out)
        with self._lock:
            for s in self.sessions:
                if s.outbox is not None:
                    s.outbox.put(_CLOSE)
        self._tcp.shutdown()
        self._tcp.server_close()
        self._tcp = None

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    def _add_session(self, session: ClientSession) -> None:
        if session.role == "response":
            session.outbox = queue.Queue()
        with self._lock:
            self.sessions.append(session)
            self.history.append(session)

    def _drop_session(self, session: ClientSession) -> None:
        with self._lock:
            if session in self.sessions:
                self.sessions.remove(session)

    def _fan_out(self, record: ResponseRecord) -> None:
        with self._lock:
            for s in self.sessions:
                if s.outbox is not None:
                    s.outbox.put(record)

    def wait_for_sessions(self, n: int, timeout: float = 5.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            with self._lock:
                if len(self.sessions) >= n:
                    return True
            time.sleep(0.005)
        return False


def serve(compartment: TissueCompartment, addr: Optional[str] = None) -> TissueServer:
    return TissueServer(compartment, addr).start()


class TissueClient:
    """A connected antigen, signal or response client."""

    def __init__(self, addr: Optional[str], role: str, timeout: Optional[float] = 10.0):
        host, port = parse_addr(addr)
        self.role = role
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._rfile = self._sock.makefile("rb")
        self._send(encode_message(Hello(role)))

    def _send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise TransportError(f"send failed: {exc}") from exc

    def send_antigen(self, value: int) -> None:
        if self.role != "antigen":
            raise ProtocolError(f"{self.role} client cannot send antigen")
        self._send(encode_message(AntigenMsg(value)))

    def send_signal(self, index: int, level: float) -> None:
        if self.role != "signal":
            raise ProtocolError(f"{self.role} client cannot send signals")
        self._send(encode_message(SignalMsg(index, level)))

    def recv_responses(self, timeout: Optional[float] = None) -> Iterator[ResponseMsg]:
        """Yield response records in emission order until the server closes
        or ``timeout`` seconds pass without data."""
        if self.role != "response":
            raise ProtocolError(f"{self.role} client cannot receive responses")
        self._sock.settimeout(timeout)
        while True:
            try:
                line = self._rfile.readline(MAX_LINE)
            except socket.timeout:
                return
            except OSError as exc:
                raise TransportError(f"receive failed: {exc}") from exc
            if not line:
                return
            msg = decode_message(line)
            if isinstance(msg, ResponseMsg):
                yield msg

    def read_line(self, timeout: float = 1.0) -> Optional[bytes]:
        self._sock.settimeout(timeout)
        try:
            return self._rfile.readline(MAX_LINE) or None
        except socket.timeout:
            return None

    def send_raw(self, data: bytes) -> None:
        self._send(data)

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._rfile.close()
        self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
