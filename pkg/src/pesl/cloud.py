"""Cloud-side session: the request handler behind every transport.

The cloud holds only the middle of the network. It sees shuffled
features and shuffled gradients, never raw images, labels, or any
shuffle key; there is no message kind that could carry them. One
session serves one edge connection; the weight stack is shared across
sessions so training survives reconnects.

Per request:
    HELLO     check dims, reply CONFIG_ACK (mismatch: ERROR code 3)
    FWD_REQ   run the stack forward, cache activations, reply FWD_RESP
    BWD_REQ   backward through the cache, accumulate weight grads,
              reply BWD_ACK carrying dl/d(input); without a pending
              forward this is an ordering violation (ERROR code 2)
    STEP      apply mean-gradient SGD, clear accumulators, reply
              BWD_ACK with an empty payload
    SHUTDOWN  end of session, no reply
"""

import socket
import threading

import numpy as np

from .encoder import (
    EncoderBlockWeights,
    stack_backward,
    stack_forward,
)
from .errors import DecodeError, PeslError
from .wire import (
    ERR_DIMS,
    ERR_INTERNAL,
    ERR_MALFORMED,
    ERR_ORDER,
    HEADER,
    HEADER_SIZE,
    Kind,
    MAGIC,
    Message,
    VERSION,
    decode_message,
    encode_message,
    error_message,
    matrix_message,
    matrix_of,
    parse_hello,
)

_ACCUM_FIELDS = (
    "d_w_q", "d_w_k", "d_w_v", "d_w_1", "d_w_2",
    "d_b_q", "d_b_k", "d_b_v", "d_b_1", "d_b_2",
    "d_gamma1", "d_beta1", "d_gamma2", "d_beta2",
)
_PARAM_OF = {
    "d_w_q": "w_q", "d_w_k": "w_k", "d_w_v": "w_v",
    "d_w_1": "w_1", "d_w_2": "w_2",
    "d_b_q": "b_q", "d_b_k": "b_k", "d_b_v": "b_v",
    "d_b_1": "b_1", "d_b_2": "b_2",
    "d_gamma1": "gamma1", "d_beta1": "beta1",
    "d_gamma2": "gamma2", "d_beta2": "beta2",
}


class CloudSession:
    """Protocol state machine around a shared weight stack."""

    def __init__(
        self,
        blocks: list[EncoderBlockWeights],
        lr: float,
        activation: str = "relu",
        n_heads: int = 1,
    ):
        self.blocks = blocks
        self.lr = float(lr)
        self.activation = activation
        self.n_heads = n_heads
        self.greeted = False
        self.finished = False
        self._pending = None  # activations of the last un-consumed forward
        self._accum = None
        self._count = 0

    def _zero_accum(self):
        self._accum = [
            {
                f: np.zeros_like(getattr(w, _PARAM_OF[f]))
                for f in _ACCUM_FIELDS
                if getattr(w, _PARAM_OF[f]) is not None
            }
            for w in self.blocks
        ]
        self._count = 0

    def handle(self, msg: Message) -> Message | None:
        """Answer one request. Returns None only for SHUTDOWN."""
        try:
            return self._dispatch(msg)
        except PeslError as e:
            return error_message(ERR_INTERNAL, str(e))

    def _dispatch(self, msg: Message) -> Message | None:
        if msg.kind == Kind.HELLO:
            p, d, n_layers = parse_hello(msg)
            if d != self.blocks[0].d or n_layers != len(self.blocks):
                return error_message(
                    ERR_DIMS,
                    f"edge expects d={d}, n_layers={n_layers}; cloud has "
                    f"d={self.blocks[0].d}, n_layers={len(self.blocks)}",
                )
            self.greeted = True
            self._zero_accum()
            return Message(Kind.CONFIG_ACK)
        if msg.kind == Kind.FWD_REQ:
            z = matrix_of(msg)
            out, acts = stack_forward(
                self.blocks, z, activation=self.activation, n_heads=self.n_heads
            )
            self._pending = acts
            return matrix_message(Kind.FWD_RESP, out)
        if msg.kind == Kind.BWD_REQ:
            if self._pending is None:
                return error_message(
                    ERR_ORDER, "BWD_REQ without a pending FWD_REQ"
                )
            g = matrix_of(msg)
            grads, d_z = stack_backward(
                self.blocks, self._pending, g,
                activation=self.activation, n_heads=self.n_heads,
            )
            self._pending = None
            if self._accum is None:
                self._zero_accum()
            for acc, gi in zip(self._accum, grads):
                for f in acc:
                    acc[f] += getattr(gi, f)
            self._count += 1
            return matrix_message(Kind.BWD_ACK, d_z)
        if msg.kind == Kind.STEP:
            if self._count > 0:
                inv = 1.0 / self._count
                for w, acc in zip(self.blocks, self._accum):
                    for f, g in acc.items():
                        param = getattr(w, _PARAM_OF[f])
                        param -= self.lr * inv * g
                self._zero_accum()
            return Message(Kind.BWD_ACK)
        if msg.kind == Kind.SHUTDOWN:
            self.finished = True
            return None
        return error_message(ERR_ORDER, f"unexpected message kind {msg.kind}")


def _recvall(sock: socket.socket, n: int) -> bytes:
    """Read exactly n bytes; b"" on clean EOF at a frame boundary."""
    chunks = []
    got = 0
    while got < n:
        piece = sock.recv(n - got)
        if not piece:
            if got == 0:
                return b""
            raise ConnectionError(f"connection dropped mid-frame ({got}/{n} bytes)")
        chunks.append(piece)
        got += len(piece)
    return b"".join(chunks)


def read_frame(sock: socket.socket, max_payload: int) -> Message | None:
    """Read one frame from a socket; None on clean EOF."""
    header = _recvall(sock, HEADER_SIZE)
    if not header:
        return None
    magic, version, kind, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DecodeError(f"unsupported protocol version {version}", 4)
    if length > max_payload:
        raise DecodeError(f"payload length {length} exceeds cap {max_payload}", 6)
    payload = _recvall(sock, length) if length else b""
    if length and len(payload) != length:
        raise DecodeError("truncated payload", HEADER_SIZE + len(payload))
    return decode_message(header + payload, max_payload)


class CloudServer:
    """Single-threaded TCP server wrapping a shared weight stack.

    Connections are served one at a time; the stack persists across
    them. Start with .start(), stop with .stop(); .port is the bound
    port (pass port=0 for an ephemeral one).
    """

    def __init__(
        self,
        blocks: list[EncoderBlockWeights],
        lr: float,
        activation: str = "relu",
        n_heads: int = 1,
        host: str = "127.0.0.1",
        port: int = 0,
        max_payload: int = 1 << 30,
        max_connections: int | None = None,
    ):
        self.blocks = blocks
        self.lr = lr
        self.activation = activation
        self.n_heads = n_heads
        self.max_payload = max_payload
        self.max_connections = max_connections
        self._stop = threading.Event()
        self._thread = None
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host, port))
        self._sock.listen(4)
        self._sock.settimeout(0.2)
        self.host, self.port = self._sock.getsockname()

    def _serve_connection(self, conn: socket.socket) -> None:
        session = CloudSession(
            self.blocks, self.lr, activation=self.activation, n_heads=self.n_heads
        )
        conn.settimeout(30.0)
        with conn:
            while not self._stop.is_set():
                try:
                    msg = read_frame(conn, self.max_payload)
                except DecodeError as e:
                    conn.sendall(
                        encode_message(error_message(ERR_MALFORMED, str(e)))
                    )
                    return
                except (ConnectionError, socket.timeout):
                    return
                if msg is None:
                    return
                reply = session.handle(msg)
                if reply is None:
                    return
                conn.sendall(encode_message(reply, self.max_payload))

    def _loop(self) -> None:
        served = 0
        while not self._stop.is_set():
            if self.max_connections is not None and served >= self.max_connections:
                break
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            self._serve_connection(conn)
            served += 1
        self._sock.close()

    def start(self) -> "CloudServer":
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()
        return self

    def wait(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)


def run_cloud(
    blocks: list[EncoderBlockWeights],
    lr: float,
    host: str = "127.0.0.1",
    port: int = 0,
    activation: str = "relu",
    n_heads: int = 1,
    max_connections: int | None = None,
) -> CloudServer:
    """Start a cloud server thread; returns the running server."""
    return CloudServer(
        blocks, lr, activation=activation, n_heads=n_heads,
        host=host, port=port, max_connections=max_connections,
    ).start()
