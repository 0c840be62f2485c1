"""Cloud session state machine and SGD accounting."""

import numpy as np
import numpy.testing as npt

from conftest import random_blocks
from pesl.cloud import CloudSession
from pesl.encoder import stack_backward, stack_forward
from pesl.wire import (
    ERR_DIMS,
    ERR_INTERNAL,
    ERR_ORDER,
    Kind,
    Message,
    hello_message,
    matrix_message,
    matrix_of,
    parse_error,
)


def _session(rng, n_layers=1, d=4, lr=0.1, variant="minimal"):
    return CloudSession(random_blocks(rng, n_layers, d, variant), lr=lr)


def test_hello_checks_dims():
    rng = np.random.default_rng(8001)
    s = _session(rng, n_layers=2, d=4)
    ok = s.handle(hello_message(3, 4, 2))
    assert ok.kind == Kind.CONFIG_ACK
    assert s.greeted

    bad_d = s.handle(hello_message(3, 5, 2))
    assert bad_d.kind == Kind.ERROR
    assert parse_error(bad_d)[0] == ERR_DIMS

    bad_layers = s.handle(hello_message(3, 4, 1))
    assert parse_error(bad_layers)[0] == ERR_DIMS


def test_forward_backward_round_trip_matches_direct_stack():
    rng = np.random.default_rng(8002)
    s = _session(rng, n_layers=2, d=5)
    s.handle(hello_message(3, 5, 2))
    z = rng.standard_normal((3, 5))
    g = rng.standard_normal((3, 5))

    resp = s.handle(matrix_message(Kind.FWD_REQ, z))
    assert resp.kind == Kind.FWD_RESP
    want_out, acts = stack_forward(s.blocks, z)
    npt.assert_array_equal(matrix_of(resp), want_out)

    ack = s.handle(matrix_message(Kind.BWD_REQ, g))
    assert ack.kind == Kind.BWD_ACK
    _, want_dz = stack_backward(s.blocks, acts, g)
    npt.assert_array_equal(matrix_of(ack), want_dz)


def test_backward_without_forward_is_an_order_violation():
    rng = np.random.default_rng(8003)
    s = _session(rng)
    s.handle(hello_message(2, 4, 1))
    err = s.handle(matrix_message(Kind.BWD_REQ, np.ones((2, 4))))
    assert err.kind == Kind.ERROR
    assert parse_error(err)[0] == ERR_ORDER

    # a consumed forward cannot back two gradients
    s.handle(matrix_message(Kind.FWD_REQ, np.ones((2, 4))))
    s.handle(matrix_message(Kind.BWD_REQ, np.ones((2, 4))))
    err = s.handle(matrix_message(Kind.BWD_REQ, np.ones((2, 4))))
    assert parse_error(err)[0] == ERR_ORDER


def test_unexpected_kind_and_internal_errors():
    rng = np.random.default_rng(8004)
    s = _session(rng)
    s.handle(hello_message(2, 4, 1))
    err = s.handle(Message(Kind.CONFIG_ACK))
    assert parse_error(err)[0] == ERR_ORDER
    # a malformed matrix payload surfaces as an internal error reply,
    # not an exception, so one bad frame cannot kill the server loop
    err = s.handle(Message(Kind.FWD_REQ, b"\x00" * 3))
    assert err.kind == Kind.ERROR
    assert parse_error(err)[0] == ERR_INTERNAL
    err = s.handle(matrix_message(Kind.FWD_REQ, np.ones((2, 9))))
    assert parse_error(err)[0] == ERR_INTERNAL


def test_step_applies_mean_gradient_sgd():
    rng = np.random.default_rng(8005)
    s = _session(rng, lr=0.5)
    s.handle(hello_message(2, 4, 1))
    before = [w.copy() for w in s.blocks]

    zs = [rng.standard_normal((2, 4)) for _ in range(3)]
    gs = [rng.standard_normal((2, 4)) for _ in range(3)]
    want_sum = None
    for z, g in zip(zs, gs):
        _, acts = stack_forward(before, z)
        grads, _ = stack_backward(before, acts, g)
        if want_sum is None:
            want_sum = {f: getattr(grads[0], f).copy()
                        for f in ("d_w_q", "d_w_k", "d_w_v", "d_w_1", "d_w_2")}
        else:
            for f in want_sum:
                want_sum[f] += getattr(grads[0], f)
        s.handle(matrix_message(Kind.FWD_REQ, z))
        s.handle(matrix_message(Kind.BWD_REQ, g))

    ack = s.handle(Message(Kind.STEP))
    assert ack.kind == Kind.BWD_ACK and ack.payload == b""
    for f, total in want_sum.items():
        name = f[2:]
        want = getattr(before[0], name) - 0.5 * (total / 3.0)
        npt.assert_allclose(getattr(s.blocks[0], name), want, atol=1e-15)


def test_step_with_no_gradients_is_a_no_op():
    rng = np.random.default_rng(8006)
    s = _session(rng)
    s.handle(hello_message(2, 4, 1))
    before = s.blocks[0].w_q.copy()
    ack = s.handle(Message(Kind.STEP))
    assert ack.kind == Kind.BWD_ACK
    npt.assert_array_equal(s.blocks[0].w_q, before)


def test_shutdown_ends_session():
    rng = np.random.default_rng(8007)
    s = _session(rng)
    assert s.handle(Message(Kind.SHUTDOWN)) is None
    assert s.finished


def test_sessions_share_one_stack():
    # two sequential edge connections must train the same weights
    rng = np.random.default_rng(8008)
    blocks = random_blocks(rng, 1, 4, "minimal")
    s1 = CloudSession(blocks, lr=0.1)
    s2 = CloudSession(blocks, lr=0.1)
    s1.handle(hello_message(2, 4, 1))
    s2.handle(hello_message(2, 4, 1))
    w0 = blocks[0].w_q.copy()
    s1.handle(matrix_message(Kind.FWD_REQ, rng.standard_normal((2, 4))))
    s1.handle(matrix_message(Kind.BWD_REQ, rng.standard_normal((2, 4))))
    s1.handle(Message(Kind.STEP))
    assert np.abs(blocks[0].w_q - w0).max() > 0
    assert s2.blocks[0] is blocks[0]
    npt.assert_array_equal(s2.blocks[0].w_q, blocks[0].w_q)
