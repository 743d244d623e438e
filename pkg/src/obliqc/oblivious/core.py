"""Handles, session keys and the gate-set contract every backend implements.

A handle is an opaque reference to a backend-resident integer value.  A
vector handle carries several independent SIMD lanes; every gate acts
lane-wise, so one gate on a ``vector(B)`` handle evaluates ``B`` independent
instances of the same circuit.
"""

from __future__ import annotations

import itertools
import secrets
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np

from ..codec import EncodedValue, signed_max, signed_min
from ..errors import (
    Overflow,
    SessionMismatch,
    ShapeMismatch,
    StaleKeyEpoch,
    WidthExceeded,
    WidthMismatch,
)

KINDS = ("reference-plaintext", "circuit-trace", "masked-double", "external-fhe")

_ids = itertools.count(1)


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    kind: str
    security_bits: int
    supports_batching: bool
    max_width: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "external-fhe" and self.security_bits < 128:
            raise ValueError("external FHE backends must provide at least 128-bit security")

    @property
    def encrypting(self) -> bool:
        """True when ciphertext blobs on the wire carry no plaintext bytes."""
        return self.kind in ("masked-double", "external-fhe")


@dataclass(frozen=True)
class SessionKeys:
    session_id: int
    key_epoch: int
    width: int
    backend: str
    serialized_sizes: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict, repr=False)
    secret: bytes = field(default=b"", repr=False)

    @property
    def upload_blobs(self) -> dict:
        """Artifacts the server needs: everything except the secret key."""
        return {k: v for k, v in self.blobs.items() if k != "secret_key"}


@dataclass(frozen=True)
class GateRecord:
    kind: str
    arity: int
    width: int
    lanes: int


class CircuitTrace(tuple):
    """Ordered gate records; value-independent for an oblivious program."""

    def to_bytes(self) -> bytes:
        return b"".join(
            struct.pack("<12sBHI", r.kind.encode(), r.arity, r.width, r.lanes) for r in self
        )

    def gates(self, kind: Optional[str] = None) -> int:
        if kind is None:
            return len(self)
        return sum(1 for r in self if r.kind == kind)


def _lanes_of(length: Optional[int]) -> int:
    return 1 if length is None else length


@dataclass(frozen=True, eq=False)
class ObliviousHandle:
    id: int
    width: int
    length: Optional[int]
    session_id: int
    epoch: int
    backend: "Backend" = field(repr=False, compare=False)
    data: Any = field(repr=False, compare=False)

    @property
    def shape(self):
        return "scalar" if self.length is None else ("vector", self.length)

    @property
    def lanes(self) -> int:
        return _lanes_of(self.length)

    def __add__(self, other):
        if isinstance(other, ObliviousHandle):
            return self.backend.add(self, other)
        return self.backend.add_plain(self, int(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ObliviousHandle):
            return self.backend.sub(self, other)
        return self.backend.add_plain(self, -int(other))

    def __neg__(self):
        return self.backend.neg(self)

    def __mul__(self, other):
        if isinstance(other, ObliviousHandle):
            return self.backend.mul(self, other)
        return self.backend.mul_plain(self, int(other))

    __rmul__ = __mul__

    def __xor__(self, other):
        return self.backend.xor(self, other)

    def __and__(self, other):
        return self.backend.and_(self, other)

    def __or__(self, other):
        return self.backend.or_(self, other)

    def __rshift__(self, k: int):
        return self.backend.sar(self, int(k))

    def gt(self, other) -> "ObliviousBit":
        if isinstance(other, ObliviousHandle):
            return self.backend.compare_gt_ct(self, other)
        return self.backend.compare_gt(self, int(other))

    def lt(self, threshold: int) -> "ObliviousBit":
        return self.backend.compare_lt(self, int(threshold))

    def cast(self, width: int) -> "ObliviousHandle":
        return self.backend.cast(self, width)


@dataclass(frozen=True, eq=False)
class ObliviousBit:
    id: int
    length: Optional[int]
    session_id: int
    epoch: int
    backend: "Backend" = field(repr=False, compare=False)
    data: Any = field(repr=False, compare=False)

    width = 1

    @property
    def shape(self):
        return "scalar" if self.length is None else ("vector", self.length)

    @property
    def lanes(self) -> int:
        return _lanes_of(self.length)

    def __and__(self, other):
        return self.backend.bit_and(self, other)

    def __or__(self, other):
        return self.backend.bit_or(self, other)

    def __xor__(self, other):
        return self.backend.bit_xor(self, other)

    def __invert__(self):
        return self.backend.bit_not(self)

    def mask(self, width: int) -> ObliviousHandle:
        """Sign-extended ``-b``: all ones when the bit is set, zero otherwise."""
        return self.backend.bit_mask(self, width)


Handle = Union[ObliviousHandle, ObliviousBit]

_BLOB = struct.Struct("<BBHIQI")  # is_bit, reserved, width, lanes (0 = scalar), session, epoch


class Backend:
    """Gate-set contract plus the bookkeeping shared by all in-process backends.

    Subclasses provide value storage through ``_encrypt_array`` /
    ``_decrypt_array`` and the byte form through ``_pack`` / ``_unpack``.
    Arithmetic runs on int64 lanes holding sign-extended values of the
    declared width; with ``check_overflow`` a result outside that width raises
    :class:`Overflow`, otherwise it wraps like two's-complement hardware.
    """

    descriptor: BackendDescriptor

    def __init__(self, check_overflow: bool = True, gate_cost_us: float = 0.0,
                 lane_cost_us: float = 0.0):
        self.check_overflow = check_overflow
        self.gate_cost_us = gate_cost_us
        self.lane_cost_us = lane_cost_us
        self._sessions: dict[int, dict] = {}
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.descriptor.name

    # -- sessions ---------------------------------------------------------

    def keygen(self, width: int = 16) -> SessionKeys:
        if width > self.descriptor.max_width:
            raise WidthExceeded(f"width {width} > backend max {self.descriptor.max_width}")
        sid = secrets.randbits(64)
        secret = self._fresh_secret()
        blobs = self._key_blobs(sid, 0, width, secret)
        with self._lock:
            self._sessions[sid] = {"epoch": 0, "secret": secret, "width": width}
        return SessionKeys(sid, 0, width, self.name,
                           {k: len(v) for k, v in blobs.items()}, blobs, secret)

    def rotate_keys(self, s: SessionKeys) -> SessionKeys:
        with self._lock:
            state = self._session(s.session_id)
            state["epoch"] = max(state["epoch"], s.key_epoch) + 1
            state["secret"] = self._fresh_secret()
            epoch, secret = state["epoch"], state["secret"]
        blobs = self._key_blobs(s.session_id, epoch, s.width, secret)
        return SessionKeys(s.session_id, epoch, s.width, self.name,
                           {k: len(v) for k, v in blobs.items()}, blobs, secret)

    def import_session(self, session_id: int, epoch: int, width: int, blobs: dict) -> None:
        """Server side: register a session from the client's uploaded artifacts."""
        with self._lock:
            self._sessions[session_id] = {
                "epoch": epoch, "width": width, "secret": self._secret_from_upload(blobs)}

    def adopt_keys(self, s: SessionKeys) -> None:
        """Client side: re-register a session from keys loaded off disk."""
        with self._lock:
            self._sessions[s.session_id] = {
                "epoch": s.key_epoch, "width": s.width, "secret": s.secret}

    def drop_session(self, session_id: int) -> None:
        with self._lock:
            self._sessions.pop(session_id, None)

    def current_epoch(self, session_id: int) -> int:
        return self._session(session_id)["epoch"]

    def _session(self, session_id: int) -> dict:
        try:
            return self._sessions[session_id]
        except KeyError:
            raise SessionMismatch(f"unknown session {session_id:#x}") from None

    def _check_keys(self, s: SessionKeys) -> dict:
        state = self._session(s.session_id)
        if s.key_epoch != state["epoch"]:
            raise StaleKeyEpoch(f"keys at epoch {s.key_epoch}, session at {state['epoch']}")
        return state

    def _fresh_secret(self) -> bytes:
        return b""

    def _key_blobs(self, sid: int, epoch: int, width: int, secret: bytes) -> dict:
        return {"context": b"", "public_key": b"", "eval_key": b""}

    def _secret_from_upload(self, blobs: dict) -> bytes:
        return b""

    # -- encryption -------------------------------------------------------

    def encrypt(self, v, s: SessionKeys, width: Optional[int] = None) -> ObliviousHandle:
        width = s.width if width is None else width
        if width > self.descriptor.max_width:
            raise WidthExceeded(f"width {width} > backend max {self.descriptor.max_width}")
        state = self._check_keys(s)
        if isinstance(v, EncodedValue):
            arr, length = np.array([v.raw], dtype=np.int64), None
        elif isinstance(v, (int, np.integer)):
            arr, length = np.array([int(v)], dtype=np.int64), None
        else:
            arr = np.array([e.raw if isinstance(e, EncodedValue) else e for e in v],
                           dtype=np.int64).reshape(-1)
            length = arr.shape[0]
            if length == 0:
                raise ShapeMismatch("cannot encrypt an empty vector")
        if arr.size and (arr.max() > signed_max(width) or arr.min() < signed_min(width)):
            raise WidthExceeded(f"plaintext does not fit signed {width} bits")
        return ObliviousHandle(next(_ids), width, length, s.session_id, state["epoch"], self,
                               self._encrypt_array(arr, state))

    def decrypt(self, h: Handle, s: SessionKeys):
        if h.session_id != s.session_id:
            raise SessionMismatch("handle belongs to another session")
        state = self._check_keys(s)
        if h.epoch != state["epoch"]:
            raise StaleKeyEpoch(f"handle from epoch {h.epoch}, session at {state['epoch']}")
        arr = self._decrypt_array(h, state)
        if h.length is None:
            return int(arr[0])
        return arr.copy()

    def _encrypt_array(self, arr: np.ndarray, state: dict):
        return arr

    def _decrypt_array(self, h: Handle, state: dict) -> np.ndarray:
        return h.data

    # -- serialisation ----------------------------------------------------

    def serialize(self, h: Handle) -> bytes:
        is_bit = isinstance(h, ObliviousBit)
        head = _BLOB.pack(int(is_bit), 0, h.width, 0 if h.length is None else h.length,
                          h.session_id, h.epoch)
        return head + self._pack(h)

    def deserialize(self, blob: bytes) -> Handle:
        is_bit, _, width, lanes, sid, epoch = _BLOB.unpack_from(blob)
        state = self._session(sid)
        length = None if lanes == 0 else lanes
        data = self._unpack(blob[_BLOB.size:], _lanes_of(length), state)
        if is_bit:
            return ObliviousBit(next(_ids), length, sid, epoch, self, data)
        return ObliviousHandle(next(_ids), width, length, sid, epoch, self, data)

    def nbytes(self, h: Handle) -> int:
        return len(self.serialize(h))

    def _pack(self, h: Handle) -> bytes:
        return np.asarray(h.data, dtype="<i8").tobytes()

    def _unpack(self, body: bytes, lanes: int, state: dict):
        arr = np.frombuffer(body, dtype="<i8", count=lanes).astype(np.int64)
        return arr

    # -- gate plumbing ----------------------------------------------------

    def _emit(self, kind: str, arity: int, width: int, lanes: int) -> None:
        cost = self.gate_cost_us + self.lane_cost_us * lanes
        if cost > 0:
            time.sleep(cost * 1e-6)

    def _check(self, *hs: Handle, same_width: bool = True):
        first = hs[0]
        state = self._session(first.session_id)
        for h in hs:
            if h.backend is not self:
                raise SessionMismatch("handle belongs to another backend")
            if h.session_id != first.session_id:
                raise SessionMismatch("operands from different sessions")
            if h.epoch != state["epoch"]:
                raise StaleKeyEpoch(f"handle from epoch {h.epoch}, session at {state['epoch']}")
            if same_width and h.width != first.width:
                raise WidthMismatch(f"widths {first.width} and {h.width}")
            if h.length != first.length:
                raise ShapeMismatch(f"shapes {first.shape} and {h.shape}")
        return state

    def _fit(self, r: np.ndarray, width: int, wrapped: Optional[np.ndarray] = None) -> np.ndarray:
        hi, lo = signed_max(width), signed_min(width)
        if self.check_overflow:
            if (wrapped is not None and wrapped.any()) or r.max() > hi or r.min() < lo:
                raise Overflow(f"result leaves signed {width}-bit range")
            return r
        if width == 64:
            return r
        mask = (1 << width) - 1
        return ((r - lo) & mask) + lo

    def _int(self, a: ObliviousHandle, data: np.ndarray, kind: str, arity: int,
             width: Optional[int] = None) -> ObliviousHandle:
        width = a.width if width is None else width
        self._emit(kind, arity, width, a.lanes)
        return ObliviousHandle(next(_ids), width, a.length, a.session_id, a.epoch, self, data)

    def _bit(self, a: Handle, data: np.ndarray, kind: str, arity: int) -> ObliviousBit:
        self._emit(kind, arity, 1, a.lanes)
        return ObliviousBit(next(_ids), a.length, a.session_id, a.epoch, self, data)

    # -- integer gates ----------------------------------------------------

    def add(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        x, y = a.data, b.data
        with np.errstate(over="ignore"):
            r = x + y
        wrapped = ((x ^ r) & (y ^ r)) < 0
        return self._int(a, self._fit(r, a.width, wrapped), "add", 2)

    def sub(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        x, y = a.data, b.data
        with np.errstate(over="ignore"):
            r = x - y
        wrapped = ((x ^ y) & (x ^ r)) < 0
        return self._int(a, self._fit(r, a.width, wrapped), "sub", 2)

    def neg(self, a: ObliviousHandle) -> ObliviousHandle:
        self._check(a)
        x = a.data
        with np.errstate(over="ignore"):
            r = -x
        wrapped = x == np.iinfo(np.int64).min
        return self._int(a, self._fit(r, a.width, wrapped), "neg", 1)

    def add_plain(self, a: ObliviousHandle, k: int) -> ObliviousHandle:
        self._check(a)
        if not signed_min(64) <= k <= signed_max(64):
            raise Overflow("plaintext operand exceeds 64 bits")
        x, y = a.data, np.int64(k)
        with np.errstate(over="ignore"):
            r = x + y
        wrapped = ((x ^ r) & (y ^ r)) < 0
        return self._int(a, self._fit(r, a.width, wrapped), "add_plain", 1)

    def _checked_mul(self, x: np.ndarray, y: np.ndarray):
        with np.errstate(over="ignore"):
            r = x * y
        safe = np.where(x == 0, 1, x)
        # exact: a wrapped product differs from the true one by a multiple of 2**64
        wrapped = (x != 0) & ((r // safe != y) | ((x == -1) & (y == np.iinfo(np.int64).min)))
        return r, wrapped

    def mul(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        r, wrapped = self._checked_mul(a.data, b.data)
        return self._int(a, self._fit(r, a.width, wrapped), "mul", 2)

    def mul_plain(self, a: ObliviousHandle, k: int) -> ObliviousHandle:
        self._check(a)
        if not signed_min(64) <= k <= signed_max(64):
            raise Overflow("plaintext operand exceeds 64 bits")
        r, wrapped = self._checked_mul(a.data, np.full_like(a.data, k))
        return self._int(a, self._fit(r, a.width, wrapped), "mul_plain", 1)

    def sar(self, a: ObliviousHandle, k: int) -> ObliviousHandle:
        self._check(a)
        if not 0 <= k < a.width:
            raise ValueError(f"shift {k} outside [0, {a.width})")
        return self._int(a, a.data >> np.int64(k), "sar", 1)

    def xor(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        return self._int(a, a.data ^ b.data, "xor", 2)

    def and_(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        return self._int(a, a.data & b.data, "and", 2)

    def or_(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousHandle:
        self._check(a, b)
        return self._int(a, a.data | b.data, "or", 2)

    def cast(self, a: ObliviousHandle, width: int) -> ObliviousHandle:
        self._check(a)
        if width > self.descriptor.max_width:
            raise WidthExceeded(f"width {width} > backend max {self.descriptor.max_width}")
        return self._int(a, self._fit(a.data, width), "cast", 1, width)

    # -- comparisons ------------------------------------------------------

    def compare_gt(self, a: ObliviousHandle, t: int) -> ObliviousBit:
        self._check(a)
        # thresholds may lie outside the register range; the answer is then constant
        t = min(max(int(t), signed_min(64)), signed_max(64))
        return self._bit(a, (a.data > np.int64(t)).astype(np.int64), "gt", 1)

    def compare_lt(self, a: ObliviousHandle, t: int) -> ObliviousBit:
        self._check(a)
        t = min(max(int(t), signed_min(64)), signed_max(64))
        return self._bit(a, (a.data < np.int64(t)).astype(np.int64), "lt", 1)

    def compare_gt_ct(self, a: ObliviousHandle, b: ObliviousHandle) -> ObliviousBit:
        self._check(a, b)
        return self._bit(a, (a.data > b.data).astype(np.int64), "gt_ct", 2)

    # -- bit gates --------------------------------------------------------

    def bit_and(self, a: ObliviousBit, b: ObliviousBit) -> ObliviousBit:
        self._check(a, b)
        return self._bit(a, a.data & b.data, "bit_and", 2)

    def bit_or(self, a: ObliviousBit, b: ObliviousBit) -> ObliviousBit:
        self._check(a, b)
        return self._bit(a, a.data | b.data, "bit_or", 2)

    def bit_xor(self, a: ObliviousBit, b: ObliviousBit) -> ObliviousBit:
        self._check(a, b)
        return self._bit(a, a.data ^ b.data, "bit_xor", 2)

    def bit_not(self, a: ObliviousBit) -> ObliviousBit:
        self._check(a)
        return self._bit(a, a.data ^ 1, "bit_not", 1)

    def bit_mask(self, b: ObliviousBit, width: int) -> ObliviousHandle:
        self._check(b)
        self._emit("bit_mask", 1, width, b.lanes)
        return ObliviousHandle(next(_ids), width, b.length, b.session_id, b.epoch, self, -b.data)


def select(b: ObliviousBit, a: ObliviousHandle, c: ObliviousHandle) -> ObliviousHandle:
    """Branchless multiplexer: ``a`` where ``b`` is set, else ``c``."""
    if a.width != c.width:
        raise WidthMismatch(f"widths {a.width} and {c.width}")
    m = b.mask(a.width)
    return c ^ (m & (a ^ c))


def encrypt_lanes(backend: Backend, s: SessionKeys, columns: Sequence, width: Optional[int] = None):
    """Encrypt each column of raw values as one vector handle (lane = instance)."""
    return [backend.encrypt(np.asarray(col, dtype=np.int64), s, width) for col in columns]
