"""Client side of the trust model: keys, encryption and decryption stay here."""

from __future__ import annotations

import base64
import json
import socket
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np

from ..codec import FixedPointConfig
from ..errors import ObliqcError
from ..oblivious import Backend, SessionKeys, get_backend
from ..protocol import (
    UP,
    Agreement,
    Capabilities,
    Channel,
    EvalRequest,
    EvalResponse,
    MsgKind,
    TransferLedger,
    WireMessage,
    key_upload_messages,
    pack_envelope,
    unpack_envelope,
)
from .server import parse_addr

KEY_ARTIFACTS = ("public_key", "eval_key")


class ServerError(ObliqcError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


class ConnectionFailed(ObliqcError, ConnectionError):
    pass


@dataclass
class QCResult:
    """Decrypted outcome for one window (R1/R2) or one matrix (R3)."""

    rule_id: str
    flag: Optional[int] = None
    score_raw: Optional[int] = None
    row_flags: tuple = ()


def keys_to_json(keys: SessionKeys) -> str:
    return json.dumps({
        "session_id": keys.session_id, "key_epoch": keys.key_epoch, "width": keys.width,
        "backend": keys.backend, "serialized_sizes": keys.serialized_sizes,
        "blobs": {k: base64.b64encode(v).decode() for k, v in keys.blobs.items()},
        "secret": base64.b64encode(keys.secret).decode(),
    }, indent=2)


def keys_from_json(text: str) -> SessionKeys:
    d = json.loads(text)
    return SessionKeys(int(d["session_id"]), int(d["key_epoch"]), int(d["width"]), d["backend"],
                       dict(d["serialized_sizes"]),
                       {k: base64.b64decode(v) for k, v in d["blobs"].items()},
                       base64.b64decode(d["secret"]))


def hello_message(caps: Capabilities) -> WireMessage:
    return WireMessage(MsgKind.HELLO, 0, 0, pack_envelope({"caps": caps.to_dict()}))


def setup_messages(keys: SessionKeys) -> list[WireMessage]:
    """CONTEXT_UPLOAD followed by the chunked key uploads for a fresh session."""
    msgs = [WireMessage(MsgKind.CONTEXT_UPLOAD, keys.session_id, keys.key_epoch,
                        pack_envelope({"backend": keys.backend, "width": keys.width},
                                      [keys.blobs.get("context", b"")]))]
    for name in KEY_ARTIFACTS:
        msgs += key_upload_messages(keys.session_id, keys.key_epoch, name,
                                    keys.blobs.get(name, b""))
    return msgs


def rotate_message(keys: SessionKeys) -> WireMessage:
    return WireMessage(MsgKind.ROTATE, keys.session_id, keys.key_epoch,
                       pack_envelope({"names": list(KEY_ARTIFACTS)},
                                     [keys.blobs.get(n, b"") for n in KEY_ARTIFACTS]))


def lane_columns(rule_id: str, raw: np.ndarray) -> tuple[tuple, list[np.ndarray]]:
    """Split ``(B, n)`` windows or ``(B, r, c)`` matrices into per-position lane vectors."""
    raw = np.asarray(raw, dtype=np.int64)
    if rule_id == "R3":
        if raw.ndim != 3:
            raise ValueError("R3 data must be (B, r, c)")
        _, r, c = raw.shape
        return (r, c), [raw[:, i, j] for i in range(r) for j in range(c)]
    if raw.ndim != 2:
        raise ValueError(f"{rule_id} data must be (B, n)")
    return (raw.shape[1],), [raw[:, j] for j in range(raw.shape[1])]


def eval_request_message(backend: Backend, keys: SessionKeys, cfg: FixedPointConfig,
                         rule_id: str, raw: np.ndarray) -> WireMessage:
    shape, cols = lane_columns(rule_id, raw)
    blobs = tuple(backend.serialize(backend.encrypt(col, keys)) for col in cols)
    req = EvalRequest(rule_id, shape, int(np.asarray(raw).shape[0]), cfg, blobs)
    return WireMessage(MsgKind.EVAL_REQUEST, keys.session_id, keys.key_epoch, req.to_payload())


def decrypt_response(backend: Backend, keys: SessionKeys, msg: WireMessage) -> list[QCResult]:
    if msg.kind == MsgKind.ERROR:
        meta, _ = unpack_envelope(msg.payload)
        raise ServerError(meta["code"], meta["message"])
    if msg.kind != MsgKind.EVAL_RESPONSE:
        raise ServerError("protocol", f"expected EVAL_RESPONSE, got {msg.kind.name}")
    resp = EvalResponse.from_payload(msg.payload)
    values = [np.atleast_1d(backend.decrypt(backend.deserialize(b), keys)) for b in resp.blobs]
    if resp.rule_id == "R3":
        score, flags = values[0], values[1:]
        return [QCResult("R3", score_raw=int(score[k]), row_flags=tuple(int(f[k]) for f in flags))
                for k in range(score.shape[0])]
    return [QCResult(resp.rule_id, flag=int(v)) for v in values[0]]


class QCClient:
    """Connects, negotiates, uploads keys and runs evaluation requests."""

    def __init__(self, addr: str, backend: str = "reference", widths: Sequence[int] = (16, 32),
                 key_mode: str = "same", cadence: Optional[int] = None,
                 capture: Optional[BinaryIO] = None, backend_obj: Optional[Backend] = None,
                 timeout: float = 60.0):
        self.addr = addr
        self.backend = backend_obj or get_backend(backend)
        self.caps = Capabilities((self.backend.name,), tuple(widths), (key_mode,), cadence)
        self.capture = capture
        self.timeout = timeout
        self.ledger = TransferLedger()
        self.agreement: Optional[Agreement] = None
        self.keys: Optional[SessionKeys] = None
        self._chan: Optional[Channel] = None
        self._requests_in_epoch = 0

    def connect(self) -> "QCClient":
        try:
            sock = socket.create_connection(parse_addr(self.addr), timeout=self.timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot reach {self.addr}: {exc}") from exc
        self._chan = Channel(sock, self.ledger, outgoing=UP, capture=self.capture)
        self._chan.send(hello_message(self.caps))
        reply = self._recv()
        if reply.kind == MsgKind.ERROR:
            meta, _ = unpack_envelope(reply.payload)
            raise ServerError(meta["code"], meta["message"])
        meta, _ = unpack_envelope(reply.payload)
        self.agreement = Agreement.from_dict(meta["agreement"])
        self.keys = self.backend.keygen(self.agreement.codec.width)
        for m in setup_messages(self.keys):
            self._chan.send(m)
        return self

    def _recv(self) -> WireMessage:
        try:
            msg = self._chan.recv()
        except OSError as exc:
            raise ConnectionFailed(f"connection lost: {exc}") from exc
        if msg is None:
            raise ConnectionFailed("server closed the connection")
        return msg

    @property
    def codec(self) -> FixedPointConfig:
        return self.agreement.codec

    def rotate(self) -> SessionKeys:
        self.keys = self.backend.rotate_keys(self.keys)
        self._chan.send(rotate_message(self.keys))
        self._requests_in_epoch = 0
        return self.keys

    def evaluate(self, rule_id: str, raw, batch_size: Optional[int] = None) -> list[QCResult]:
        """Encrypt ``raw`` encoded values, evaluate remotely, decrypt verdicts."""
        raw = np.asarray(raw, dtype=np.int64)
        step = batch_size or raw.shape[0]
        out: list[QCResult] = []
        for start in range(0, raw.shape[0], step):
            a = self.agreement
            if a.key_mode == "diff" and self._requests_in_epoch >= a.cadence:
                self.rotate()
            self._chan.send(eval_request_message(self.backend, self.keys, self.codec, rule_id,
                                                 raw[start:start + step]))
            self._requests_in_epoch += 1
            out += decrypt_response(self.backend, self.keys, self._recv())
        return out

    def close(self) -> None:
        if self._chan is not None:
            self._chan.close()
            self._chan = None
        if self.keys is not None:
            self.backend.drop_session(self.keys.session_id)

    def __enter__(self):
        return self.connect()

    def __exit__(self, *exc):
        self.close()


def save_keys(path, keys: SessionKeys) -> Path:
    path = Path(path)
    path.write_text(keys_to_json(keys))
    return path


def load_keys(path, backend: Backend) -> SessionKeys:
    keys = keys_from_json(Path(path).read_text())
    backend.adopt_keys(keys)
    return keys
