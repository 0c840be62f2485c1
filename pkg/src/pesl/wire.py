"""Length-prefixed binary framing for the edge/cloud link.

Frame layout (little endian):

    offset 0   4 bytes   magic b"PESL"
    offset 4   1 byte    protocol version (currently 1)
    offset 5   1 byte    message kind
    offset 6   8 bytes   payload length, unsigned
    offset 14  payload

Payloads by kind: HELLO carries three u32 dims (p, d, n_layers);
FWD_REQ / FWD_RESP / BWD_REQ carry exactly one matrix; BWD_ACK
carries one matrix when answering BWD_REQ (the gradient wrt the
cloud's input) and is empty when answering STEP; CONFIG_ACK, STEP and
SHUTDOWN are empty (a SHUTDOWN frame is exactly 14 bytes); ERROR is
one status byte plus UTF-8 text.

A matrix payload is u32 rows, u32 cols, then rows*cols float64
values, row major. Serialization is lossless: float64 bit patterns
pass through unchanged.

Decode failures raise DecodeError naming the byte offset of the
problem. Frames larger than `max_payload` (default 1 GiB) are
rejected without allocating the payload.
"""

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import ContractError, DecodeError

MAGIC = b"PESL"
VERSION = 1
HEADER = struct.Struct("<4sBBQ")
HEADER_SIZE = HEADER.size  # 14 bytes
DEFAULT_MAX_PAYLOAD = 1 << 30


class Kind(IntEnum):
    HELLO = 1
    CONFIG_ACK = 2
    FWD_REQ = 3
    FWD_RESP = 4
    BWD_REQ = 5
    BWD_ACK = 6
    STEP = 7
    SHUTDOWN = 8
    ERROR = 9


# ERROR status codes
ERR_MALFORMED = 1
ERR_ORDER = 2
ERR_DIMS = 3
ERR_INTERNAL = 4


@dataclass(frozen=True)
class Message:
    kind: Kind
    payload: bytes = b""


def encode_message(msg: Message, max_payload: int = DEFAULT_MAX_PAYLOAD) -> bytes:
    if len(msg.payload) > max_payload:
        raise ContractError(
            f"payload of {len(msg.payload)} bytes exceeds cap {max_payload}"
        )
    return HEADER.pack(MAGIC, VERSION, int(msg.kind), len(msg.payload)) + msg.payload


def decode_message(buf: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Message:
    """Decode one complete frame occupying the whole buffer."""
    if len(buf) < HEADER_SIZE:
        raise DecodeError(
            f"truncated header, need {HEADER_SIZE} bytes, have {len(buf)}", len(buf)
        )
    magic, version, kind, length = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise DecodeError(f"unsupported protocol version {version}", 4)
    try:
        kind = Kind(kind)
    except ValueError:
        raise DecodeError(f"unknown message kind {kind}", 5) from None
    if length > max_payload:
        raise DecodeError(f"payload length {length} exceeds cap {max_payload}", 6)
    if len(buf) != HEADER_SIZE + length:
        raise DecodeError(
            f"frame length mismatch: header says {length} payload bytes, "
            f"buffer has {len(buf) - HEADER_SIZE}",
            min(len(buf), HEADER_SIZE + length),
        )
    return Message(kind=kind, payload=buf[HEADER_SIZE:])


def encode_matrix(a: np.ndarray) -> bytes:
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"wire matrices are 2-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ContractError("refusing to send a matrix with non-finite entries")
    return struct.pack("<II", a.shape[0], a.shape[1]) + a.astype("<f8").tobytes()


def decode_matrix(payload: bytes) -> np.ndarray:
    if len(payload) < 8:
        raise DecodeError("matrix payload shorter than its dims header", len(payload))
    rows, cols = struct.unpack_from("<II", payload, 0)
    if rows < 1 or cols < 1:
        raise DecodeError(f"matrix dims must be positive, got {rows}x{cols}", 0)
    want = 8 + rows * cols * 8
    if len(payload) != want:
        raise DecodeError(
            f"matrix payload of {len(payload)} bytes, dims say {want}",
            min(len(payload), want),
        )
    a = np.frombuffer(payload, dtype="<f8", offset=8).reshape(rows, cols)
    a = a.astype(np.float64)
    if not np.isfinite(a).all():
        raise DecodeError("matrix payload contains non-finite values", 8)
    return a


def matrix_message(kind: Kind, a: np.ndarray) -> Message:
    return Message(kind=kind, payload=encode_matrix(a))


def matrix_of(msg: Message) -> np.ndarray:
    return decode_matrix(msg.payload)


def hello_message(p: int, d: int, n_layers: int) -> Message:
    return Message(Kind.HELLO, struct.pack("<III", p, d, n_layers))


def parse_hello(msg: Message) -> tuple[int, int, int]:
    if len(msg.payload) != 12:
        raise DecodeError(
            f"HELLO payload must be 12 bytes, got {len(msg.payload)}", len(msg.payload)
        )
    return struct.unpack("<III", msg.payload)


def error_message(code: int, text: str) -> Message:
    return Message(Kind.ERROR, bytes([code]) + text.encode("utf-8"))


def parse_error(msg: Message) -> tuple[int, str]:
    if not msg.payload:
        return ERR_INTERNAL, "unspecified error"
    return msg.payload[0], msg.payload[1:].decode("utf-8", errors="replace")
