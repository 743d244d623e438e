"""Binary framing and payloads for the client-server exchange.

Every frame is a fixed 24-byte little-endian header followed by the payload::

    magic   4s   b"OBLQ"
    version u16
    kind    u16  (MsgKind)
    session u64
    epoch   u32
    length  u32  payload bytes

Payloads are *envelopes*: a u32-prefixed JSON metadata object followed by a
u32 blob count and u32-prefixed binary blobs (keys, ciphertexts).  A capture
file (``.oblq``) is simply frames concatenated in the order they crossed the
wire.
"""

from __future__ import annotations

import enum
import json
import socket
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Optional, Sequence

from .codec import DEFAULT_CONFIG, FixedPointConfig
from .errors import (
    BadMagic,
    NoCommonBackend,
    NoCommonKeyMode,
    NoCommonWidth,
    ProtocolError,
    TruncatedPayload,
    UnsupportedVersion,
)

MAGIC = b"OBLQ"
VERSION = 1
HEADER = struct.Struct("<4sHHQII")
HEADER_SIZE = HEADER.size
KEY_CHUNK = 4 * 1024 * 1024
MAX_PAYLOAD = 2**32 - 1

UP, DOWN = "up", "down"


class MsgKind(enum.IntEnum):
    HELLO = 1
    CONTEXT_UPLOAD = 2
    KEY_UPLOAD = 3
    EVAL_REQUEST = 4
    EVAL_RESPONSE = 5
    ROTATE = 6
    ERROR = 7


@dataclass(frozen=True)
class WireMessage:
    kind: MsgKind
    session_id: int
    key_epoch: int
    payload: bytes = b""

    @property
    def payload_bytes(self) -> int:
        return len(self.payload)

    @property
    def frame_bytes(self) -> int:
        return HEADER_SIZE + len(self.payload)


def serialize(msg: WireMessage) -> bytes:
    if len(msg.payload) > MAX_PAYLOAD:
        raise ProtocolError("payload exceeds u32 length field")
    return HEADER.pack(MAGIC, VERSION, int(msg.kind), msg.session_id, msg.key_epoch,
                       len(msg.payload)) + msg.payload


def _parse_header(head: bytes):
    if len(head) < HEADER_SIZE:
        raise TruncatedPayload(f"header needs {HEADER_SIZE} bytes, got {len(head)}")
    magic, version, kind, sid, epoch, length = HEADER.unpack_from(head)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"protocol version {version}")
    try:
        kind = MsgKind(kind)
    except ValueError:
        raise ProtocolError(f"unknown message kind {kind}") from None
    return kind, sid, epoch, length


def deserialize(buf: bytes) -> WireMessage:
    kind, sid, epoch, length = _parse_header(buf)
    body = buf[HEADER_SIZE:]
    if len(body) < length:
        raise TruncatedPayload(f"payload declares {length} bytes, {len(body)} present")
    if len(body) > length:
        raise ProtocolError(f"{len(body) - length} trailing bytes after frame")
    return WireMessage(kind, sid, epoch, bytes(body))


def iter_frames(buf: bytes) -> Iterator[WireMessage]:
    pos = 0
    while pos < len(buf):
        kind, sid, epoch, length = _parse_header(buf[pos:pos + HEADER_SIZE])
        end = pos + HEADER_SIZE + length
        if end > len(buf):
            raise TruncatedPayload("capture ends inside a frame")
        yield WireMessage(kind, sid, epoch, bytes(buf[pos + HEADER_SIZE:end]))
        pos = end


def read_frame(stream: BinaryIO) -> Optional[WireMessage]:
    """Read one frame from a file-like stream; None on clean EOF."""
    head = stream.read(HEADER_SIZE)
    if not head:
        return None
    kind, sid, epoch, length = _parse_header(head)
    body = stream.read(length)
    if len(body) < length:
        raise TruncatedPayload(f"stream ended after {len(body)} of {length} payload bytes")
    return WireMessage(kind, sid, epoch, body)


def write_capture(path, messages: Sequence[WireMessage]) -> int:
    with open(path, "wb") as f:
        return sum(f.write(serialize(m)) for m in messages)


def read_capture(path) -> list[WireMessage]:
    with open(path, "rb") as f:
        return list(iter_frames(f.read()))


# -- envelopes --------------------------------------------------------------

_U32 = struct.Struct("<I")


def pack_envelope(meta: dict, blobs: Sequence[bytes] = ()) -> bytes:
    head = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    parts = [_U32.pack(len(head)), head, _U32.pack(len(blobs))]
    for b in blobs:
        parts += [_U32.pack(len(b)), bytes(b)]
    return b"".join(parts)


def unpack_envelope(payload: bytes) -> tuple[dict, list[bytes]]:
    try:
        (n,) = _U32.unpack_from(payload, 0)
        meta = json.loads(payload[4:4 + n])
        pos = 4 + n
        (count,) = _U32.unpack_from(payload, pos)
        pos += 4
        blobs = []
        for _ in range(count):
            (size,) = _U32.unpack_from(payload, pos)
            pos += 4
            if pos + size > len(payload):
                raise TruncatedPayload("blob runs past end of payload")
            blobs.append(payload[pos:pos + size])
            pos += size
    except (struct.error, ValueError) as exc:
        raise TruncatedPayload(f"malformed envelope: {exc}") from None
    return meta, blobs


@dataclass(frozen=True)
class EvalRequest:
    rule_id: str
    shape: tuple
    batch_count: int
    codec: FixedPointConfig
    blobs: tuple = field(repr=False)

    def __post_init__(self):
        if self.batch_count < 1:
            raise ProtocolError("batch_count must be >= 1")
        expected = {"R1": 1, "R2": 1, "R3": 2}.get(self.rule_id)
        if expected is not None and len(self.shape) != expected:
            raise ProtocolError(f"shape {self.shape} inconsistent with {self.rule_id}")

    def to_payload(self) -> bytes:
        meta = {"rule": self.rule_id, "shape": list(self.shape), "batch_count": self.batch_count,
                "codec": self.codec.to_dict()}
        return pack_envelope(meta, self.blobs)

    @classmethod
    def from_payload(cls, payload: bytes) -> "EvalRequest":
        meta, blobs = unpack_envelope(payload)
        return cls(meta["rule"], tuple(meta["shape"]), int(meta["batch_count"]),
                   FixedPointConfig.from_dict(meta["codec"]), tuple(blobs))


@dataclass(frozen=True)
class EvalResponse:
    rule_id: str
    blobs: tuple = field(repr=False)

    def to_payload(self) -> bytes:
        return pack_envelope({"rule": self.rule_id}, self.blobs)

    @classmethod
    def from_payload(cls, payload: bytes) -> "EvalResponse":
        meta, blobs = unpack_envelope(payload)
        return cls(meta["rule"], tuple(blobs))


def key_upload_messages(session_id: int, epoch: int, name: str, blob: bytes,
                        chunk: int = KEY_CHUNK) -> list[WireMessage]:
    """Split one key artifact into KEY_UPLOAD frames of at most ``chunk`` bytes."""
    pieces = [blob[i:i + chunk] for i in range(0, len(blob), chunk)] or [b""]
    return [
        WireMessage(MsgKind.KEY_UPLOAD, session_id, epoch, pack_envelope(
            {"name": name, "index": i, "count": len(pieces), "total": len(blob)}, [p]))
        for i, p in enumerate(pieces)
    ]


def error_message(session_id: int, epoch: int, code: str, message: str) -> WireMessage:
    return WireMessage(MsgKind.ERROR, session_id, epoch,
                       pack_envelope({"code": code, "message": message}))


# -- handshake --------------------------------------------------------------

@dataclass(frozen=True)
class Capabilities:
    backends: tuple
    widths: tuple
    key_modes: tuple = ("same", "diff")
    cadence: Optional[int] = None

    def to_dict(self) -> dict:
        return {"backends": list(self.backends), "widths": list(self.widths),
                "key_modes": list(self.key_modes), "cadence": self.cadence}

    @classmethod
    def from_dict(cls, d: dict) -> "Capabilities":
        return cls(tuple(d["backends"]), tuple(int(w) for w in d["widths"]),
                   tuple(d.get("key_modes", ("same",))), d.get("cadence"))


@dataclass(frozen=True)
class Agreement:
    backend: str
    codec: FixedPointConfig
    key_mode: str
    cadence: Optional[int]

    def to_dict(self) -> dict:
        return {"backend": self.backend, "codec": self.codec.to_dict(),
                "key_mode": self.key_mode, "cadence": self.cadence}

    @classmethod
    def from_dict(cls, d: dict) -> "Agreement":
        return cls(d["backend"], FixedPointConfig.from_dict(d["codec"]), d["key_mode"],
                   d.get("cadence"))


def session_handshake(client: Capabilities, server: Capabilities,
                      codec: FixedPointConfig = DEFAULT_CONFIG) -> Agreement:
    """Pick backend, width and key mode; the server's preference order decides."""
    backend = next((b for b in server.backends if b in client.backends), None)
    if backend is None:
        raise NoCommonBackend(f"client {client.backends} / server {server.backends}")
    width = next((w for w in server.widths if w in client.widths), None)
    if width is None:
        raise NoCommonWidth(f"client {client.widths} / server {server.widths}")
    mode = next((m for m in server.key_modes if m in client.key_modes), None)
    if mode is None:
        raise NoCommonKeyMode(f"client {client.key_modes} / server {server.key_modes}")
    cadence = None
    if mode == "diff":
        cadence = client.cadence or server.cadence or 1
    return Agreement(backend, codec.with_width(width), mode, cadence)


# -- byte accounting --------------------------------------------------------

class TransferLedger:
    """Cumulative frame bytes per (direction, message kind); atomic updates."""

    def __init__(self):
        self._lock = threading.Lock()
        self._bytes: dict = defaultdict(int)
        self._frames: dict = defaultdict(int)

    def record(self, direction: str, msg: WireMessage) -> None:
        if direction not in (UP, DOWN):
            raise ValueError(direction)
        with self._lock:
            self._bytes[(direction, msg.kind.name)] += msg.frame_bytes
            self._frames[(direction, msg.kind.name)] += 1

    def total(self, direction: Optional[str] = None) -> int:
        with self._lock:
            return sum(v for (d, _), v in self._bytes.items() if direction in (None, d))

    def summary(self) -> dict:
        with self._lock:
            out = {d: {k.name: 0 for k in MsgKind} for d in (UP, DOWN)}
            for (d, kind), v in self._bytes.items():
                out[d][kind] = v
        out["total_up"] = sum(out[UP].values())
        out["total_down"] = sum(out[DOWN].values())
        return out


class Channel:
    """A framed socket that books every frame in a ledger and optional capture."""

    def __init__(self, sock: socket.socket, ledger: TransferLedger, outgoing: str,
                 capture: Optional[BinaryIO] = None):
        self.sock = sock
        self.ledger = ledger
        self.outgoing = outgoing
        self.incoming = DOWN if outgoing == UP else UP
        self.capture = capture
        self._reader = sock.makefile("rb")

    def send(self, msg: WireMessage) -> None:
        data = serialize(msg)
        # booked before sending so a peer that already has the reply sees it counted
        self.ledger.record(self.outgoing, msg)
        self.sock.sendall(data)
        if self.capture is not None:
            self.capture.write(data)

    def recv(self) -> Optional[WireMessage]:
        msg = read_frame(self._reader)
        if msg is not None:
            self.ledger.record(self.incoming, msg)
            if self.capture is not None:
                self.capture.write(serialize(msg))
        return msg

    def close(self) -> None:
        try:
            self._reader.close()
        finally:
            self.sock.close()
