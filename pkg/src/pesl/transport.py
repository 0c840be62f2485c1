"""Client-side transports: loopback, TCP, and a recording wrapper.

Every transport exposes the same two calls:

    request(msg) -> Message    strict request/response round trip
    close()                    send SHUTDOWN and release resources

The loopback transport still pushes every message through the wire
encoder and decoder, so a loopback run exercises the exact byte
format a TCP run does; swapping transports cannot change any number.
An ERROR reply is raised as ProtocolError on the edge side.
"""

import socket
from dataclasses import dataclass

from .cloud import CloudSession, read_frame
from .errors import ProtocolError
from .wire import (
    DEFAULT_MAX_PAYLOAD,
    Kind,
    Message,
    decode_message,
    encode_message,
    parse_error,
)


def _raise_if_error(msg: Message) -> Message:
    if msg.kind == Kind.ERROR:
        code, text = parse_error(msg)
        raise ProtocolError(f"cloud reported: {text}", code=code)
    return msg


class LoopbackTransport:
    """In-process cloud behind the real serializer."""

    def __init__(self, session: CloudSession, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.session = session
        self.max_payload = max_payload
        self.closed = False

    def request(self, msg: Message) -> Message:
        if self.closed:
            raise ProtocolError("transport is closed")
        raw = encode_message(msg, self.max_payload)
        reply = self.session.handle(decode_message(raw, self.max_payload))
        if reply is None:
            raise ProtocolError("no reply (SHUTDOWN is sent via close())")
        return _raise_if_error(
            decode_message(encode_message(reply, self.max_payload), self.max_payload)
        )

    def close(self) -> None:
        if not self.closed:
            self.session.handle(
                decode_message(encode_message(Message(Kind.SHUTDOWN)))
            )
            self.closed = True


class TcpTransport:
    """Blocking TCP client for a cloud server."""

    def __init__(
        self,
        host: str,
        port: int,
        timeout: float = 30.0,
        max_payload: int = DEFAULT_MAX_PAYLOAD,
    ):
        self.max_payload = max_payload
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self.closed = False

    def request(self, msg: Message) -> Message:
        if self.closed:
            raise ProtocolError("transport is closed")
        self._sock.sendall(encode_message(msg, self.max_payload))
        reply = read_frame(self._sock, self.max_payload)
        if reply is None:
            raise ProtocolError("cloud closed the connection mid-request")
        return _raise_if_error(reply)

    def close(self) -> None:
        if not self.closed:
            try:
                self._sock.sendall(encode_message(Message(Kind.SHUTDOWN)))
            except OSError:
                pass
            self._sock.close()
            self.closed = True


@dataclass
class FrameRecord:
    direction: str  # "edge->cloud" or "cloud->edge"
    kind: Kind
    raw: bytes


class RecordingTransport:
    """Wraps another transport and captures every frame both ways.

    Used by the information-boundary check: the recorded edge->cloud
    traffic can be audited to contain nothing but HELLO dims, shuffled
    matrices, STEP and SHUTDOWN. `capture_path`, when set, appends
    each frame to a file as a direction byte (0 out, 1 in) plus the
    raw frame bytes.
    """

    def __init__(self, inner, capture_path: str | None = None):
        self.inner = inner
        self.records: list[FrameRecord] = []
        self.capture_path = capture_path
        self._fh = open(capture_path, "wb") if capture_path else None

    def _record(self, direction: str, msg: Message) -> None:
        raw = encode_message(msg)
        self.records.append(FrameRecord(direction, msg.kind, raw))
        if self._fh is not None:
            self._fh.write(bytes([0 if direction == "edge->cloud" else 1]))
            self._fh.write(raw)

    def request(self, msg: Message) -> Message:
        self._record("edge->cloud", msg)
        try:
            reply = self.inner.request(msg)
        except ProtocolError:
            raise
        self._record("cloud->edge", reply)
        return reply

    def close(self) -> None:
        self._record("edge->cloud", Message(Kind.SHUTDOWN))
        self.inner.close()
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    @property
    def outbound_kinds(self) -> list[Kind]:
        return [r.kind for r in self.records if r.direction == "edge->cloud"]
