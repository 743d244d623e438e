import io
import struct

import pytest
from hypothesis import given
from hypothesis import strategies as st

from obliqc.codec import DEFAULT_CONFIG
from obliqc.errors import (
    BadMagic,
    NoCommonBackend,
    NoCommonKeyMode,
    NoCommonWidth,
    ProtocolError,
    TruncatedPayload,
    UnsupportedVersion,
)
from obliqc.protocol import (
    HEADER_SIZE,
    KEY_CHUNK,
    UP,
    Capabilities,
    EvalRequest,
    MsgKind,
    TransferLedger,
    WireMessage,
    deserialize,
    iter_frames,
    key_upload_messages,
    pack_envelope,
    read_frame,
    serialize,
    session_handshake,
    unpack_envelope,
)

messages = st.builds(
    WireMessage,
    st.sampled_from(list(MsgKind)),
    st.integers(0, 2**64 - 1),
    st.integers(0, 2**32 - 1),
    st.binary(max_size=512),
)


def test_header_layout():
    raw = serialize(WireMessage(MsgKind.HELLO, 0x0102, 7, b"abc"))
    assert HEADER_SIZE == 24
    assert raw[:4] == b"OBLQ"
    assert struct.unpack_from("<HHQII", raw, 4) == (1, 1, 0x0102, 7, 3)


def test_hello_round_trip():
    m = WireMessage(MsgKind.HELLO, 0, 0, pack_envelope({"caps": {}}))
    assert deserialize(serialize(m)) == m


def test_rejections():
    raw = serialize(WireMessage(MsgKind.EVAL_REQUEST, 1, 2, b"payload"))
    with pytest.raises(TruncatedPayload):
        deserialize(raw[:-1])
    with pytest.raises(TruncatedPayload):
        deserialize(raw[:10])
    with pytest.raises(BadMagic):
        deserialize(b"XBLQ" + raw[4:])
    with pytest.raises(UnsupportedVersion):
        deserialize(raw[:4] + struct.pack("<H", 2) + raw[6:])
    with pytest.raises(ProtocolError):
        deserialize(raw[:6] + struct.pack("<H", 99) + raw[8:])
    with pytest.raises(ProtocolError):
        deserialize(raw + b"x")


@given(messages)
def test_fuzz_round_trip(m):
    raw = serialize(m)
    assert deserialize(raw) == m
    assert serialize(deserialize(raw)) == raw
    assert len(raw) == m.frame_bytes


@given(st.lists(messages, max_size=8))
def test_stream_of_frames(ms):
    buf = b"".join(serialize(m) for m in ms)
    assert list(iter_frames(buf)) == ms
    stream, out = io.BytesIO(buf), []
    while (m := read_frame(stream)) is not None:
        out.append(m)
    assert out == ms


@given(st.dictionaries(st.text(max_size=5), st.integers()), st.lists(st.binary(max_size=64)))
def test_envelope_round_trip(meta, blobs):
    assert unpack_envelope(pack_envelope(meta, blobs)) == (meta, blobs)


def test_envelope_truncation():
    with pytest.raises(TruncatedPayload):
        unpack_envelope(pack_envelope({"a": 1}, [b"x" * 10])[:-3])


def test_eval_request_invariants():
    with pytest.raises(ProtocolError):
        EvalRequest("R1", (4,), 0, DEFAULT_CONFIG, ())
    with pytest.raises(ProtocolError):
        EvalRequest("R3", (4,), 1, DEFAULT_CONFIG, ())
    req = EvalRequest("R3", (2, 3), 5, DEFAULT_CONFIG, (b"a", b"bc"))
    assert EvalRequest.from_payload(req.to_payload()) == req


def test_key_upload_chunking():
    blob = bytes(range(256)) * (KEY_CHUNK // 256 * 2 + 3)
    msgs = key_upload_messages(1, 0, "eval_key", blob)
    assert len(msgs) == 3
    parts = [unpack_envelope(m.payload) for m in msgs]
    assert all(len(b[0]) <= KEY_CHUNK for _, b in parts)
    assert b"".join(b[0] for _, b in parts) == blob
    assert key_upload_messages(1, 0, "k", b"")[0].payload


def test_handshake():
    both32 = Capabilities(("reference",), (32,))
    assert session_handshake(both32, both32).codec.width == 32
    client = Capabilities(("reference",), (16, 32))
    assert session_handshake(client, both32).codec.width == 32
    with pytest.raises(NoCommonWidth):
        session_handshake(Capabilities(("reference",), (16,)), both32)
    with pytest.raises(NoCommonBackend):
        session_handshake(Capabilities(("masked",), (32,)), both32)
    with pytest.raises(NoCommonKeyMode):
        session_handshake(Capabilities(("reference",), (32,), ("diff",)),
                          Capabilities(("reference",), (32,), ("same",)))


def test_handshake_server_preference_and_cadence():
    server = Capabilities(("masked", "reference"), (32, 16), ("diff", "same"), 4)
    client = Capabilities(("reference", "masked"), (16, 32), ("same", "diff"))
    a = session_handshake(client, server)
    assert (a.backend, a.codec.width, a.key_mode, a.cadence) == ("masked", 32, "diff", 4)
    c2 = Capabilities(("reference",), (16,), ("diff",), 2)
    assert session_handshake(c2, server).cadence == 2
    plain = Capabilities(("reference",), (16,), ("diff",))
    assert session_handshake(plain, plain).cadence == 1
    assert session_handshake(client, Capabilities(("reference",), (16,))).cadence is None


def test_ledger_arithmetic():
    led = TransferLedger()
    s = led.summary()
    assert s["total_up"] == s["total_down"] == 0
    led.record(UP, WireMessage(MsgKind.KEY_UPLOAD, 1, 0, b"\0" * 1000))
    s = led.summary()
    assert s["up"]["KEY_UPLOAD"] == 1024 and s["total_up"] == 1024
    with pytest.raises(ValueError):
        led.record("sideways", WireMessage(MsgKind.HELLO, 0, 0))
