"""trTx / saTx / gaTx and the provenance-record transaction."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import ClassVar, Mapping, Union

from socialfl.ledger.codec import DecodeError, Reader, Writer
from socialfl.ledger.crypto import NULL_DIGEST, KeyRegistry, UnknownKeyError, check_digest, sign
from socialfl.ledger.store import CorruptEntryError, NotFoundError, OffchainStore


class Reason(str, Enum):
    BAD_LINKAGE = "bad-linkage"
    BAD_ROOT = "bad-root"
    BAD_SIGNATURE = "bad-signature"
    DANGLING_POINTER = "dangling-pointer"
    INCONSISTENT = "inconsistent"
    MALFORMED = "malformed"


class LedgerError(Exception):
    pass


class IncompleteMultisigError(LedgerError):
    pass


class InvalidTransactionError(LedgerError):
    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason


class _Tx:
    KIND: ClassVar[str]
    TAG: ClassVar[int]

    def body(self) -> bytes:
        w = Writer().u8(self.TAG)
        self._write_body(w)
        return w.getvalue()

    def to_bytes(self) -> bytes:
        w = Writer().u8(self.TAG)
        self._write_body(w)
        sigs = self.signatures_list()
        w.u32(len(sigs))
        for s in sigs:
            w.blob(s)
        return w.getvalue()

    def signers(self) -> list[tuple[str, bytes]]:
        raise NotImplementedError

    def pointers(self) -> list[bytes]:
        raise NotImplementedError

    def signatures_list(self) -> list[bytes]:
        return [s for _, s in self.signers()]

    def required_signers(self) -> list[str]:
        return [p for p, _ in self.signers()]


@dataclass(frozen=True)
class TrTx(_Tx):
    task_id: str
    timestamp: float
    requester: str
    task_reward: float
    initial_model_ptr: bytes
    expected_performance: float
    signature: bytes = b""

    KIND: ClassVar[str] = "trTx"
    TAG: ClassVar[int] = 1

    def _write_body(self, w: Writer) -> None:
        w.str(self.task_id).f64(self.timestamp).str(self.requester).f64(self.task_reward)
        w.fixed(self.initial_model_ptr).f64(self.expected_performance)

    @classmethod
    def _read(cls, r: Reader):
        return dict(
            task_id=r.str(), timestamp=r.f64(), requester=r.str(), task_reward=r.f64(),
            initial_model_ptr=r.fixed(), expected_performance=r.f64(),
        )

    def signers(self):
        return [(self.requester, self.signature)]

    def pointers(self):
        return [self.initial_model_ptr]

    def check_fields(self):
        if not 0.0 < self.expected_performance <= 1.0:
            raise InvalidTransactionError(Reason.MALFORMED, "expected_performance outside (0, 1]")


@dataclass(frozen=True)
class SaTx(_Tx):
    task_id: str
    round: int
    members: tuple[str, ...]
    aggregate_ptr: bytes
    contributions: tuple[float, ...]
    signatures: tuple[bytes, ...] = ()

    KIND: ClassVar[str] = "saTx"
    TAG: ClassVar[int] = 2

    def _write_body(self, w: Writer) -> None:
        w.str(self.task_id).u64(self.round).u32(len(self.members))
        for m in self.members:
            w.str(m)
        w.fixed(self.aggregate_ptr).u32(len(self.contributions))
        for c in self.contributions:
            w.f64(c)

    @classmethod
    def _read(cls, r: Reader):
        task_id, rnd = r.str(), r.u64()
        members = tuple(r.str() for _ in range(r.u32()))
        ptr = r.fixed()
        contributions = tuple(r.f64() for _ in range(r.u32()))
        return dict(task_id=task_id, round=rnd, members=members, aggregate_ptr=ptr, contributions=contributions)

    def signers(self):
        sigs = list(self.signatures) + [b""] * (len(self.members) - len(self.signatures))
        return list(zip(self.members, sigs))

    def signatures_list(self):
        return list(self.signatures)

    def pointers(self):
        return [self.aggregate_ptr]

    def check_fields(self):
        if not self.members or len(set(self.members)) != len(self.members):
            raise InvalidTransactionError(Reason.MALFORMED, "member list empty or repeated")
        if len(self.contributions) != len(self.members):
            raise InvalidTransactionError(Reason.MALFORMED, "one contribution per member required")
        if not all(c > 0 and math.isfinite(c) for c in self.contributions):
            raise InvalidTransactionError(Reason.MALFORMED, "contributions must be positive")
        if len(self.signatures) != len(self.members):
            raise InvalidTransactionError(Reason.BAD_SIGNATURE, "incomplete multi-signature")


@dataclass(frozen=True)
class GaTx(_Tx):
    task_id: str
    round: int
    global_ptr: bytes
    aggregator: str
    signature: bytes = b""

    KIND: ClassVar[str] = "gaTx"
    TAG: ClassVar[int] = 3

    def _write_body(self, w: Writer) -> None:
        w.str(self.task_id).u64(self.round).fixed(self.global_ptr).str(self.aggregator)

    @classmethod
    def _read(cls, r: Reader):
        return dict(task_id=r.str(), round=r.u64(), global_ptr=r.fixed(), aggregator=r.str())

    def signers(self):
        return [(self.aggregator, self.signature)]

    def pointers(self):
        return [self.global_ptr]

    def check_fields(self):
        pass


VERDICT_CODES = {"not-owned": 0, "owned": 1, "refused": 2}


@dataclass(frozen=True)
class ProvenanceTx(_Tx):
    """On-chain result of an ownership verification run in the TEE."""

    task_id: str
    model_digest: bytes
    verdict: str
    record_ptr: bytes
    verifier: str
    signature: bytes = b""

    KIND: ClassVar[str] = "provTx"
    TAG: ClassVar[int] = 4

    def _write_body(self, w: Writer) -> None:
        w.str(self.task_id).fixed(self.model_digest).u8(VERDICT_CODES[self.verdict])
        w.fixed(self.record_ptr).str(self.verifier)

    @classmethod
    def _read(cls, r: Reader):
        task_id, model = r.str(), r.fixed()
        code = r.u8()
        names = {v: k for k, v in VERDICT_CODES.items()}
        if code not in names:
            raise DecodeError(f"unknown verdict code {code}")
        return dict(task_id=task_id, model_digest=model, verdict=names[code], record_ptr=r.fixed(), verifier=r.str())

    def signers(self):
        return [(self.verifier, self.signature)]

    def pointers(self):
        return [self.record_ptr]

    def check_fields(self):
        if self.verdict not in VERDICT_CODES:
            raise InvalidTransactionError(Reason.MALFORMED, f"unknown verdict {self.verdict!r}")


Transaction = Union[TrTx, SaTx, GaTx, ProvenanceTx]
TX_TYPES = {cls.KIND: cls for cls in (TrTx, SaTx, GaTx, ProvenanceTx)}
_BY_TAG = {cls.TAG: cls for cls in TX_TYPES.values()}


def decode_transaction(data: bytes) -> Transaction:
    r = Reader(data)
    tag = r.u8()
    if tag not in _BY_TAG:
        raise DecodeError(f"unknown transaction tag {tag}")
    cls = _BY_TAG[tag]
    kwargs = cls._read(r)
    sigs = [r.blob() for _ in range(r.u32())]
    r.done()
    if cls is SaTx:
        kwargs["signatures"] = tuple(sigs)
    else:
        if len(sigs) != 1:
            raise DecodeError(f"{cls.KIND} carries exactly one signature")
        kwargs["signature"] = sigs[0]
    return cls(**kwargs)


def _secret(keys, principal: str) -> bytes:
    if isinstance(keys, KeyRegistry):
        return keys.secret(principal)
    try:
        return keys[principal]
    except KeyError:
        raise UnknownKeyError(principal) from None


def build_transaction(kind: str, payload: Mapping, keys: KeyRegistry | Mapping[str, bytes]) -> Transaction:
    """Build and sign a transaction of ``kind`` (trTx, saTx, gaTx, provTx).

    ``keys`` holds the signing secrets available to the builder.  An saTx
    needs every listed member's key.
    """
    if kind not in TX_TYPES:
        raise ValueError(f"unknown transaction kind {kind!r}")
    cls = TX_TYPES[kind]
    names = {f.name for f in fields(cls)} - {"signature", "signatures"}
    missing = names - set(payload)
    if missing:
        raise ValueError(f"{kind} payload missing fields: {sorted(missing)}")
    unknown = set(payload) - names
    if unknown:
        raise ValueError(f"{kind} payload has unknown fields: {sorted(unknown)}")
    data = dict(payload)
    if cls is SaTx:
        data["members"] = tuple(data["members"])
        data["contributions"] = tuple(float(c) for c in data["contributions"])
    for ptr in ("initial_model_ptr", "aggregate_ptr", "global_ptr", "record_ptr", "model_digest"):
        if ptr in data:
            data[ptr] = check_digest(data[ptr])
    tx = cls(**data)
    msg = tx.body()
    if cls is SaTx:
        have = [m for m in tx.members if (m in keys)]
        if len(have) != len(tx.members):
            lacking = [m for m in tx.members if m not in have]
            raise IncompleteMultisigError(f"no signing key for members {lacking}")
        return replace(tx, signatures=tuple(sign(_secret(keys, m), msg) for m in tx.members))
    (signer, _), = tx.signers()
    return replace(tx, signature=sign(_secret(keys, signer), msg))


def validate_transaction(tx: Transaction, registry: KeyRegistry, store: OffchainStore | None = None) -> None:
    """Raise :class:`InvalidTransactionError` on the first failing check."""
    tx.check_fields()
    msg = tx.body()
    for principal, sig in tx.signers():
        if not registry.verify(principal, msg, sig):
            raise InvalidTransactionError(Reason.BAD_SIGNATURE, f"{tx.KIND} signer {principal}")
    if store is not None:
        for ptr in tx.pointers():
            check_pointer(store, ptr)


def check_pointer(store: OffchainStore, ptr: bytes) -> None:
    if ptr == NULL_DIGEST:
        return
    try:
        store.get(ptr)
    except (NotFoundError, CorruptEntryError) as exc:
        raise InvalidTransactionError(Reason.DANGLING_POINTER, ptr.hex()) from exc
