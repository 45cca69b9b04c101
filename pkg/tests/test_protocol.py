import math

import pytest
from hypothesis import given, strategies as st

from libtissue.protocol import (
    AntigenMsg,
    ErrorMsg,
    Hello,
    ProtocolError,
    ResponseMsg,
    SignalMsg,
    decode_message,
    encode_message,
)

U32 = st.integers(0, 2**32 - 1)
messages = st.one_of(
    st.builds(AntigenMsg, U32),
    st.builds(SignalMsg, st.integers(0, 2**16), st.floats(allow_nan=False, allow_infinity=False)),
    st.builds(ResponseMsg, st.integers(0, 2**40), U32),
    st.builds(Hello, st.sampled_from(["antigen", "signal", "response"])),
    st.builds(ErrorMsg, st.text(st.characters(min_codepoint=32, max_codepoint=126)).map(str.strip)),
)


@pytest.mark.parametrize(
    "msg, wire",
    [
        (AntigenMsg(5), b"A 5\n"),
        (SignalMsg(0, 0.85), b"S 0 0.85\n"),
        (ResponseMsg(120, 6), b"R 120 6\n"),
        (Hello("antigen"), b"H antigen\n"),
        (ErrorMsg("bad line"), b"E bad line\n"),
        (ErrorMsg(""), b"E\n"),
    ],
)
def test_known_encodings(msg, wire):
    assert encode_message(msg) == wire
    assert decode_message(wire) == msg


def test_crlf_accepted():
    assert decode_message(b"A 7\r\n") == AntigenMsg(7)


@pytest.mark.parametrize(
    "line",
    [b"", b"\n", b"A\n", b"A -1\n", b"A 4294967296\n", b"A 1 2\n", b"A x\n", b"S 0\n",
     b"S 0 nan\n", b"S 0 inf\n", b"S -1 0.5\n", b"R 1\n", b"H root\n", b"Q 1\n",
     b"A  1\n", b"A1\n", b"A \xff\n", b"E \x01\n", b"A \xd9\xa3\n"],
)
def test_malformed_lines_rejected(line):
    with pytest.raises(ProtocolError):
        decode_message(line)


@pytest.mark.parametrize(
    "msg",
    [AntigenMsg(-1), AntigenMsg(2**32), SignalMsg(0, math.nan), SignalMsg(-1, 1.0),
     ResponseMsg(-1, 0), Hello("admin"), ErrorMsg(" padded"), ErrorMsg("tab\there")],
)
def test_invalid_messages_not_encoded(msg):
    with pytest.raises(ProtocolError):
        encode_message(msg)


def test_non_message_type():
    with pytest.raises(TypeError):
        encode_message("A 1")


@given(messages)
def test_round_trip(msg):
    assert decode_message(encode_message(msg)) == msg


@given(st.binary(max_size=40))
def test_arbitrary_bytes_decode_or_raise(data):
    try:
        decode_message(data)
    except ProtocolError:
        pass
