import hashlib
import os
import struct

import numpy as np

from .core import BackendDescriptor
from .reference import ReferenceBackend


class MaskedBackend(ReferenceBackend):
    """Wire-opaque test double standing in for an encrypting backend.

    Serialised ciphertexts are the int64 lanes XORed with a SHAKE-256
    keystream derived from the session secret and a per-blob nonce, so no
    plaintext byte pattern reaches the wire.  The uploaded evaluation key *is*
    that secret, which is what lets the server compute: this gives zero real
    confidentiality and exists only to exercise leak scans and size accounting.
    """

    descriptor = BackendDescriptor("masked", "masked-double", 0, True, 64)

    def _fresh_secret(self) -> bytes:
        return os.urandom(32)

    def _key_blobs(self, sid, epoch, width, secret):
        context = struct.pack("<QIH", sid, epoch, width)
        return {"context": context, "public_key": b"", "eval_key": secret}

    def _secret_from_upload(self, blobs):
        return blobs.get("eval_key", b"")

    @staticmethod
    def _pad(secret: bytes, nonce: bytes, n: int) -> np.ndarray:
        return np.frombuffer(hashlib.shake_256(secret + nonce).digest(n), dtype=np.uint8)

    def _pack(self, h):
        state = self._session(h.session_id)
        body = np.asarray(h.data, dtype="<i8").tobytes()
        nonce = os.urandom(16)
        pad = self._pad(state["secret"], nonce, len(body))
        return nonce + (np.frombuffer(body, dtype=np.uint8) ^ pad).tobytes()

    def _unpack(self, body, lanes, state):
        nonce, payload = body[:16], body[16:16 + 8 * lanes]
        pad = self._pad(state["secret"], nonce, len(payload))
        plain = (np.frombuffer(payload, dtype=np.uint8) ^ pad).tobytes()
        return np.frombuffer(plain, dtype="<i8").astype(np.int64)
