"""QC evaluation server: holds the rule catalog, evaluates blindly.

One TCP connection is one session.  The server learns the client's
capabilities from HELLO, binds the session id carried by CONTEXT_UPLOAD,
collects KEY_UPLOAD chunks and then answers each EVAL_REQUEST with an
EVAL_RESPONSE (or an ERROR, after which the session carries on).
"""

from __future__ import annotations

import json
import logging
import os
import socketserver
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .. import rules
from ..codec import DEFAULT_CONFIG, FixedPointConfig
from ..errors import (
    ConfigMismatch,
    EmptyVector,
    ObliqcError,
    PlanOverflow,
    ProtocolError,
    ShapeMismatch,
    StaleKeyEpoch,
    UnknownRule,
    UnknownSession,
    WidthMismatch,
)
from ..oblivious import get_backend
from ..protocol import (
    DOWN,
    Agreement,
    Capabilities,
    Channel,
    EvalRequest,
    EvalResponse,
    MsgKind,
    TransferLedger,
    WireMessage,
    error_message,
    pack_envelope,
    session_handshake,
    unpack_envelope,
)

log = logging.getLogger("obliqc.server")


def parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def load_catalog(path) -> dict[str, rules.RuleSpec]:
    raw = json.loads(Path(path).read_text())
    entries = raw["rules"] if isinstance(raw, dict) else raw
    catalog = {}
    for e in entries:
        spec = rules.RuleSpec.from_dict(e)
        catalog[spec.rule_id] = spec
    if not catalog:
        raise ValueError(f"{path}: catalog has no rules")
    return catalog


@dataclass
class ServerConfig:
    addr: str = "127.0.0.1:7878"
    backend: str = "reference"
    catalog: Optional[str] = None
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    key_modes: tuple = ("same", "diff")
    widths: tuple = (16, 32)
    cadence: Optional[int] = None
    log_level: str = field(default_factory=lambda: os.environ.get("OBLIQC_LOG", "WARNING"))
    codec: FixedPointConfig = DEFAULT_CONFIG
    backend_options: dict = field(default_factory=dict)
    rule_specs: Optional[dict] = None

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")


_ERROR_CODES = (
    (StaleKeyEpoch, "stale_epoch"),
    (UnknownRule, "unknown_rule"),
    (PlanOverflow, "plan_overflow"),
    ((ShapeMismatch, EmptyVector, WidthMismatch), "shape_mismatch"),
    (ConfigMismatch, "config_mismatch"),
    (ProtocolError, "protocol"),
)


def error_code(exc: Exception) -> str:
    for cls, code in _ERROR_CODES:
        if isinstance(exc, cls):
            return code
    return "internal"


class _Session:
    def __init__(self):
        self.session_id = 0
        self.agreement: Optional[Agreement] = None
        self.epoch = 0
        self.requests_in_epoch = 0
        self.key_parts: dict = {}
        self.blobs: dict = {}
        self.ledger = TransferLedger()


class QCServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.catalog = config.rule_specs or load_catalog(config.catalog)
        self.backend = get_backend(config.backend, **config.backend_options)
        self.caps = Capabilities((self.backend.name,), tuple(config.widths),
                                 tuple(config.key_modes), config.cadence)
        self.pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
        self._sessions: dict[int, _Session] = {}
        self._lock = threading.Lock()
        server = self

        class Handler(socketserver.BaseRequestHandler):
            def handle(self):
                server._serve_connection(self.request)

        class TCP(socketserver.ThreadingTCPServer):
            allow_reuse_address = True
            daemon_threads = True

        self._tcp = TCP(parse_addr(config.addr), Handler)
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> str:
        host, port = self._tcp.server_address[:2]
        return f"{host}:{port}"

    def serve_forever(self) -> None:
        log.info("listening on %s (backend=%s, workers=%d)", self.address, self.backend.name,
                 self.config.workers)
        self._tcp.serve_forever(poll_interval=0.1)

    def start(self) -> "QCServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def shutdown(self) -> None:
        self._tcp.shutdown()
        self._tcp.server_close()
        if self.pool is not None:
            self.pool.shutdown(wait=False)
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.shutdown()

    @property
    def open_sessions(self) -> int:
        with self._lock:
            return len(self._sessions)

    def ledger_report(self, session_id: int) -> dict:
        with self._lock:
            s = self._sessions.get(session_id)
        if s is None:
            raise UnknownSession(f"no open session {session_id:#x}")
        return s.ledger.summary()

    # -- per-connection loop ----------------------------------------------

    def _serve_connection(self, sock) -> None:
        state = _Session()
        chan = Channel(sock, state.ledger, outgoing=DOWN)
        try:
            while True:
                try:
                    msg = chan.recv()
                except (ProtocolError, OSError) as exc:
                    log.info("dropping connection: %s", exc)
                    return
                if msg is None:
                    return
                reply = self._dispatch(state, msg)
                if reply is not None:
                    chan.send(reply)
                    if reply.kind == MsgKind.ERROR and state.agreement is None:
                        return
        except OSError as exc:
            log.info("connection error: %s", exc)
        finally:
            if state.session_id:
                with self._lock:
                    self._sessions.pop(state.session_id, None)
                self.backend.drop_session(state.session_id)
                log.info("session %x closed", state.session_id)
            chan.close()

    def _dispatch(self, state: _Session, msg: WireMessage) -> Optional[WireMessage]:
        try:
            if msg.kind == MsgKind.HELLO:
                return self._hello(state, msg)
            if state.agreement is None:
                raise ProtocolError("HELLO required first")
            if msg.kind == MsgKind.CONTEXT_UPLOAD:
                return self._context(state, msg)
            if msg.kind == MsgKind.KEY_UPLOAD:
                return self._key_upload(state, msg)
            if msg.kind == MsgKind.ROTATE:
                return self._rotate(state, msg)
            if msg.kind == MsgKind.EVAL_REQUEST:
                return self._eval(state, msg)
            raise ProtocolError(f"unexpected {msg.kind.name} from client")
        except (ObliqcError, KeyError, ValueError) as exc:
            code = error_code(exc)
            log.info("session %x: %s error", state.session_id, code)
            log.debug("session %x: %s", state.session_id, exc)
            return error_message(state.session_id, state.epoch, code, str(exc))

    def _hello(self, state, msg):
        meta, _ = unpack_envelope(msg.payload)
        client = Capabilities.from_dict(meta["caps"])
        agreement = session_handshake(client, self.caps, self.config.codec)
        state.agreement = agreement
        log.info("handshake: backend=%s width=%d key_mode=%s", agreement.backend,
                 agreement.codec.width, agreement.key_mode)
        return WireMessage(MsgKind.HELLO, 0, 0, pack_envelope({"agreement": agreement.to_dict()}))

    def _context(self, state, msg):
        meta, blobs = unpack_envelope(msg.payload)
        if state.session_id and state.session_id != msg.session_id:
            raise ProtocolError("session id changed within a connection")
        state.session_id = msg.session_id
        state.epoch = msg.key_epoch
        state.blobs = {"context": blobs[0] if blobs else b""}
        with self._lock:
            self._sessions[state.session_id] = state
        self._register(state)
        log.info("session %x opened", state.session_id)
        return None

    def _key_upload(self, state, msg):
        meta, blobs = unpack_envelope(msg.payload)
        parts = state.key_parts.setdefault(meta["name"], [])
        parts.append(blobs[0])
        if int(meta["index"]) + 1 == int(meta["count"]):
            blob = b"".join(state.key_parts.pop(meta["name"]))
            if len(blob) != int(meta["total"]):
                raise ProtocolError(f"key {meta['name']}: {len(blob)} of {meta['total']} bytes")
            state.blobs[meta["name"]] = blob
            self._register(state)
        return None

    def _register(self, state):
        self.backend.import_session(state.session_id, state.epoch,
                                    state.agreement.codec.width, dict(state.blobs))

    def _rotate(self, state, msg):
        meta, blobs = unpack_envelope(msg.payload)
        if msg.key_epoch <= state.epoch:
            raise StaleKeyEpoch(f"rotation to epoch {msg.key_epoch} from {state.epoch}")
        state.epoch = msg.key_epoch
        state.blobs.update(zip(meta["names"], blobs))
        state.requests_in_epoch = 0
        self._register(state)
        return None

    def _eval(self, state, msg):
        if msg.key_epoch != state.epoch:
            raise StaleKeyEpoch(f"request at epoch {msg.key_epoch}, session at {state.epoch}")
        agreement = state.agreement
        if agreement.key_mode == "diff" and state.requests_in_epoch >= agreement.cadence:
            raise StaleKeyEpoch(f"epoch {state.epoch} exhausted its {agreement.cadence} requests")
        req = EvalRequest.from_payload(msg.payload)
        if req.codec != agreement.codec:
            raise ConfigMismatch("request codec differs from the agreed configuration")
        try:
            spec = self.catalog[req.rule_id]
        except KeyError:
            raise UnknownRule(f"rule {req.rule_id!r} not in catalog") from None
        spec = spec.shaped(req.shape)
        rules.plan(spec, req.codec)
        handles = [self.backend.deserialize(b) for b in req.blobs]
        expected = 1
        for d in req.shape:
            expected *= d
        if len(handles) != expected:
            raise ShapeMismatch(f"{len(handles)} ciphertexts for shape {req.shape}")
        if any(h.session_id != state.session_id or h.lanes != req.batch_count for h in handles):
            raise ShapeMismatch("ciphertext session or lane count does not match request")
        if req.rule_id == "R3":
            r, c = req.shape
            inputs = [handles[i * c:(i + 1) * c] for i in range(r)]
        else:
            inputs = handles
        verdict = rules.evaluate(spec, inputs, req.codec, self.config.workers, self.pool)
        state.requests_in_epoch += 1
        if req.rule_id == "R3":
            out = [verdict.score, *verdict.row_flags]
        else:
            out = [verdict.flag]
        blobs = tuple(self.backend.serialize(h) for h in out)
        return WireMessage(MsgKind.EVAL_RESPONSE, state.session_id, state.epoch,
                           EvalResponse(req.rule_id, blobs).to_payload())


def server_run(config: ServerConfig, ready=None) -> int:
    """Run until SIGINT/SIGTERM; returns the process exit status."""
    import signal

    srv = QCServer(config)
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    signal.signal(signal.SIGTERM, on_signal)
    signal.signal(signal.SIGINT, on_signal)
    srv.start()
    if ready is not None:
        ready(srv.address)
    while not stop.wait(0.2):
        pass
    srv.shutdown()
    return 0
