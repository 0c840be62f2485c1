"""Frame codec: round trips, bit-lossless matrices, decode offsets."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from pesl.errors import ContractError, DecodeError
from pesl.wire import (
    DEFAULT_MAX_PAYLOAD,
    HEADER_SIZE,
    Kind,
    Message,
    decode_matrix,
    decode_message,
    encode_matrix,
    encode_message,
    error_message,
    hello_message,
    matrix_message,
    matrix_of,
    parse_error,
    parse_hello,
)


def test_frame_layout_is_frozen():
    raw = encode_message(Message(Kind.SHUTDOWN))
    assert raw == b"PESL" + bytes([1, 8]) + b"\x00" * 8
    assert HEADER_SIZE == 14
    assert DEFAULT_MAX_PAYLOAD == 1 << 30


def test_every_kind_round_trips():
    for kind in Kind:
        payload = b"" if kind != Kind.ERROR else b"\x01oops"
        msg = Message(kind, payload)
        back = decode_message(encode_message(msg))
        assert back.kind == kind
        assert back.payload == payload


def test_matrix_serialization_is_bit_lossless():
    rng = np.random.default_rng(7001)
    for _ in range(40):
        rows, cols = (int(x) for x in rng.integers(1, 30, 2))
        a = rng.standard_normal((rows, cols))
        # sprinkle exact denormals and negative zeros
        a[0, 0] = -0.0
        if rows > 1:
            a[1, 0] = 5e-324
        back = decode_matrix(encode_matrix(a))
        assert a.tobytes() == back.tobytes()
    m = matrix_of(matrix_message(Kind.FWD_REQ, np.eye(3)))
    npt.assert_array_equal(m, np.eye(3))


def test_encode_rejects_bad_matrices():
    with pytest.raises(ContractError):
        encode_matrix(np.zeros(3))
    with pytest.raises(ContractError):
        encode_matrix(np.array([[np.nan]]))
    with pytest.raises(ContractError):
        encode_message(Message(Kind.FWD_REQ, b"x" * 32), max_payload=16)


def test_decode_errors_carry_offsets():
    good = encode_message(matrix_message(Kind.FWD_REQ, np.ones((2, 2))))

    with pytest.raises(DecodeError) as e:
        decode_message(good[:10])
    assert e.value.offset == 10

    with pytest.raises(DecodeError) as e:
        decode_message(b"JUNK" + good[4:])
    assert e.value.offset == 0

    bad_ver = bytearray(good)
    bad_ver[4] = 9
    with pytest.raises(DecodeError) as e:
        decode_message(bytes(bad_ver))
    assert e.value.offset == 4

    bad_kind = bytearray(good)
    bad_kind[5] = 200
    with pytest.raises(DecodeError) as e:
        decode_message(bytes(bad_kind))
    assert e.value.offset == 5

    with pytest.raises(DecodeError) as e:
        decode_message(good + b"\x00")
    with pytest.raises(DecodeError):
        decode_message(good[:-1])

    with pytest.raises(DecodeError) as e:
        decode_message(good, max_payload=8)
    assert e.value.offset == 6


def test_matrix_decode_errors():
    with pytest.raises(DecodeError):
        decode_matrix(b"\x00" * 4)
    with pytest.raises(DecodeError):
        decode_matrix(struct.pack("<II", 0, 3))
    with pytest.raises(DecodeError):
        decode_matrix(struct.pack("<II", 2, 2) + b"\x00" * 24)
    nan_payload = struct.pack("<II", 1, 1) + struct.pack("<d", float("nan"))
    with pytest.raises(DecodeError) as e:
        decode_matrix(nan_payload)
    assert e.value.offset == 8


def test_decode_fuzz_never_hangs_or_miscodes(tmp_path):
    # random buffers must either decode to a valid frame or raise
    # DecodeError; nothing else
    rng = np.random.default_rng(7002)
    for _ in range(300):
        n = int(rng.integers(0, 40))
        buf = rng.integers(0, 256, n, dtype=np.uint8).tobytes()
        try:
            msg = decode_message(buf)
            assert isinstance(msg.kind, Kind)
        except DecodeError as e:
            assert 0 <= e.offset <= max(n, HEADER_SIZE + 1)


def test_hello_and_error_payloads():
    p, d, layers = parse_hello(hello_message(16, 64, 3))
    assert (p, d, layers) == (16, 64, 3)
    with pytest.raises(DecodeError):
        parse_hello(Message(Kind.HELLO, b"\x00" * 5))
    code, text = parse_error(error_message(2, "out of order"))
    assert code == 2
    assert text == "out of order"
    code, text = parse_error(Message(Kind.ERROR, b""))
    assert code == 4  # defaults to internal


def test_error_text_survives_utf8():
    code, text = parse_error(error_message(3, "width ≠ expected"))
    assert text == "width ≠ expected"
