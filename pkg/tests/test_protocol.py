import json
import socket
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitalguard import protocol
from vitalguard.errors import FrameTooLarge, IncompleteFrame, MalformedPayload

json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-10**9, 10**9)
    | st.floats(allow_nan=False, allow_infinity=False) | st.text(max_size=20),
    lambda children: st.lists(children, max_size=4)
    | st.dictionaries(st.text(max_size=8), children, max_size=4),
    max_leaves=12,
)

messages = st.fixed_dictionaries(
    {"type": st.sampled_from(protocol.MESSAGE_TYPES)},
    optional={"slot": st.integers(0, 10**6),
              "d": st.lists(st.floats(allow_nan=False, allow_infinity=False),
                            max_size=8),
              "extra": json_values},
)


@settings(max_examples=300, deadline=None)
@given(messages)
def test_frame_round_trip_identity(msg):
    frame = protocol.encode_frame(msg)
    decoded, consumed = protocol.decode_frame(frame)
    assert consumed == len(frame)
    assert decoded == json.loads(json.dumps(msg))


@settings(max_examples=100, deadline=None)
@given(messages, messages)
def test_decode_consumes_exactly_one_frame(m1, m2):
    buf = protocol.encode_frame(m1) + protocol.encode_frame(m2)
    d1, c1 = protocol.decode_frame(buf)
    d2, c2 = protocol.decode_frame(buf[c1:])
    assert d1 == json.loads(json.dumps(m1))
    assert d2 == json.loads(json.dumps(m2))
    assert c1 + c2 == len(buf)


def test_encode_rejects_unknown_type():
    with pytest.raises(MalformedPayload):
        protocol.encode_frame({"type": "BOGUS"})
    with pytest.raises(MalformedPayload):
        protocol.encode_frame(["not", "a", "dict"])


def test_encode_rejects_oversize():
    msg = {"type": protocol.DATA, "d": "x" * (protocol.MAX_PAYLOAD + 1)}
    with pytest.raises(FrameTooLarge):
        protocol.encode_frame(msg)


def test_decode_incomplete_frames():
    frame = protocol.encode_frame({"type": protocol.ACK})
    with pytest.raises(IncompleteFrame):
        protocol.decode_frame(frame[:3])
    with pytest.raises(IncompleteFrame):
        protocol.decode_frame(frame[:-1])


def test_decode_rejects_oversize_declaration():
    buf = protocol.HEADER.pack(protocol.MAX_PAYLOAD + 1) + b"x"
    with pytest.raises(FrameTooLarge):
        protocol.decode_frame(buf)


def test_decode_rejects_malformed_json():
    payload = b"{not json"
    buf = protocol.HEADER.pack(len(payload)) + payload
    with pytest.raises(MalformedPayload):
        protocol.decode_frame(buf)


def test_decode_rejects_non_message_json():
    payload = json.dumps({"no_type": 1}).encode()
    buf = protocol.HEADER.pack(len(payload)) + payload
    with pytest.raises(MalformedPayload):
        protocol.decode_frame(buf)


def test_send_recv_over_socketpair():
    a, b = socket.socketpair()
    try:
        msgs = [{"type": protocol.HELLO, "user_description": "hi"},
                {"type": protocol.DATA, "slot": 3, "d": [1.5, -2.0]},
                {"type": protocol.ACK}]

        def sender():
            for m in msgs:
                protocol.send_message(a, m)
            a.shutdown(socket.SHUT_WR)

        t = threading.Thread(target=sender)
        t.start()
        received = []
        while True:
            m = protocol.recv_message(b)
            if m is None:
                break
            received.append(m)
        t.join()
        assert received == msgs
    finally:
        a.close()
        b.close()


def test_recv_message_eof_mid_frame():
    a, b = socket.socketpair()
    try:
        frame = protocol.encode_frame({"type": protocol.ACK})
        a.sendall(frame[:-2])
        a.shutdown(socket.SHUT_WR)
        with pytest.raises(IncompleteFrame):
            protocol.recv_message(b)
    finally:
        a.close()
        b.close()
