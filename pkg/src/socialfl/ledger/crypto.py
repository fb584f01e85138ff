"""Hashing and the simulator's signature scheme.

The simulator is its own PKI: every principal's secret lives in a
:class:`KeyRegistry`, signatures are HMAC-SHA256 tags, and verification
looks the secret up in the registry.
"""

from __future__ import annotations

import hashlib
import hmac
import struct
from typing import Iterable, Mapping

DIGEST_SIZE = 32
ZERO_DIGEST = bytes(DIGEST_SIZE)


def H(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


# Pointer value meaning "no off-chain object"; H of the empty string.
NULL_DIGEST = H(b"")


def check_digest(d: bytes) -> bytes:
    if not isinstance(d, (bytes, bytearray)) or len(d) != DIGEST_SIZE:
        raise ValueError("digest must be exactly 32 bytes")
    return bytes(d)


class UnknownKeyError(KeyError):
    pass


class KeyRegistry:
    def __init__(self, secrets: Mapping[str, bytes] | None = None):
        self._secrets: dict[str, bytes] = dict(secrets or {})

    @classmethod
    def generate(cls, principals: Iterable[str], seed: int) -> "KeyRegistry":
        return cls({p: H(b"socialfl/key", struct.pack("<Q", seed), p.encode()) for p in principals})

    def register(self, principal: str, secret: bytes) -> None:
        self._secrets[principal] = secret

    def secret(self, principal: str) -> bytes:
        try:
            return self._secrets[principal]
        except KeyError:
            raise UnknownKeyError(principal) from None

    def __contains__(self, principal: str) -> bool:
        return principal in self._secrets

    def principals(self) -> list[str]:
        return sorted(self._secrets)

    def sign(self, principal: str, message: bytes) -> bytes:
        return sign(self.secret(principal), message)

    def verify(self, principal: str, message: bytes, signature: bytes) -> bool:
        if principal not in self._secrets:
            return False
        return hmac.compare_digest(self.sign(principal, message), signature)


def sign(secret: bytes, message: bytes) -> bytes:
    return hmac.new(secret, message, hashlib.sha256).digest()
