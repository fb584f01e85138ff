"""Model-aggregation (MA) blocks, consensus votes and chain validation.

Block ``h`` carries the CVScript and reputation-table pointers produced by
consensus at height ``h - 1``; together with ``prev_hash`` they certify the
parent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from socialfl.ledger.codec import DecodeError, Reader, Writer
from socialfl.ledger.crypto import H, NULL_DIGEST, ZERO_DIGEST, KeyRegistry
from socialfl.ledger.merkle import merkle_root
from socialfl.ledger.store import CorruptEntryError, NotFoundError, OffchainStore
from socialfl.ledger.transactions import (
    GaTx,
    InvalidTransactionError,
    Reason,
    Transaction,
    check_pointer,
    decode_transaction,
    validate_transaction,
)

# Decision value meaning "no candidate finalized; append an empty block".
EMPTY_BLOCK = H(b"socialfl/empty-block")


class InvalidBlockError(Exception):
    def __init__(self, reason: Reason, detail: str = ""):
        super().__init__(f"{reason.value}: {detail}" if detail else reason.value)
        self.reason = reason


def election_seed(prev_hash: bytes, height: int) -> bytes:
    return H(prev_hash, Writer().u64(height).getvalue())


@dataclass(frozen=True)
class MABlockHeader:
    height: int
    prev_hash: bytes
    task_id: str
    global_result_ptr: bytes
    seed: bytes
    cvscript_ptr: bytes
    reputation_ptr: bytes
    tx_merkle_root: bytes

    def to_bytes(self) -> bytes:
        w = Writer().u64(self.height).fixed(self.prev_hash).str(self.task_id)
        w.fixed(self.global_result_ptr).fixed(self.seed).fixed(self.cvscript_ptr)
        w.fixed(self.reputation_ptr).fixed(self.tx_merkle_root)
        return w.getvalue()

    @classmethod
    def read(cls, r: Reader) -> "MABlockHeader":
        return cls(r.u64(), r.fixed(), r.str(), r.fixed(), r.fixed(), r.fixed(), r.fixed(), r.fixed())

    @property
    def hash(self) -> bytes:
        return H(self.to_bytes())


@dataclass(frozen=True)
class MABlock:
    header: MABlockHeader
    txs: tuple = ()

    @property
    def hash(self) -> bytes:
        return self.header.hash

    @property
    def height(self) -> int:
        return self.header.height

    def to_bytes(self) -> bytes:
        w = Writer().blob(self.header.to_bytes()).u32(len(self.txs))
        for tx in self.txs:
            w.blob(tx.to_bytes())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MABlock":
        r = Reader(data)
        hr = Reader(r.blob())
        header = MABlockHeader.read(hr)
        hr.done()
        txs = tuple(decode_transaction(r.blob()) for _ in range(r.u32()))
        r.done()
        return cls(header, txs)


def tx_root(txs: Iterable[Transaction]) -> bytes:
    return merkle_root([tx.to_bytes() for tx in txs])


def genesis_block(task_id: str) -> MABlock:
    header = MABlockHeader(
        height=0,
        prev_hash=ZERO_DIGEST,
        task_id=task_id,
        global_result_ptr=NULL_DIGEST,
        seed=election_seed(ZERO_DIGEST, 0),
        cvscript_ptr=NULL_DIGEST,
        reputation_ptr=NULL_DIGEST,
        tx_merkle_root=NULL_DIGEST,
    )
    return MABlock(header, ())


def global_pointer(txs: Sequence[Transaction]) -> bytes:
    ga = [tx for tx in txs if isinstance(tx, GaTx)]
    return ga[-1].global_ptr if ga else NULL_DIGEST


def build_block(
    height: int,
    parent: MABlock,
    txs: Sequence[Transaction],
    cvscript_ptr: bytes = NULL_DIGEST,
    global_ptr: bytes | None = None,
    reputation_ptr: bytes = NULL_DIGEST,
    registry: KeyRegistry | None = None,
) -> MABlock:
    """Assemble a block on ``parent``.  With ``registry`` every transaction
    is signature-checked first and the first bad one is reported by index."""
    txs = tuple(txs)
    if registry is not None:
        for i, tx in enumerate(txs):
            try:
                validate_transaction(tx, registry)
            except InvalidTransactionError as exc:
                raise InvalidBlockError(exc.reason, f"transaction {i}: {exc}") from exc
    if global_ptr is None:
        global_ptr = global_pointer(txs)
    header = MABlockHeader(
        height=height,
        prev_hash=parent.hash,
        task_id=parent.header.task_id,
        global_result_ptr=global_ptr,
        seed=election_seed(parent.hash, height),
        cvscript_ptr=cvscript_ptr,
        reputation_ptr=reputation_ptr,
        tx_merkle_root=tx_root(txs),
    )
    return MABlock(header, txs)


# -- votes and CVScripts ----------------------------------------------------


@dataclass(frozen=True)
class Vote:
    validator: str
    height: int
    stage: int
    value: bytes
    signature: bytes = b""

    def body(self) -> bytes:
        return Writer().str(self.validator).u64(self.height).u32(self.stage).fixed(self.value).getvalue()

    def to_bytes(self) -> bytes:
        return Writer().blob(self.body()).blob(self.signature).getvalue()

    @classmethod
    def read(cls, r: Reader) -> "Vote":
        body = Reader(r.blob())
        vote = cls(body.str(), body.u64(), body.u32(), body.fixed(), r.blob())
        body.done()
        return vote

    def signed(self, registry: KeyRegistry) -> "Vote":
        return Vote(self.validator, self.height, self.stage, self.value, registry.sign(self.validator, self.body()))

    def verify(self, registry: KeyRegistry) -> bool:
        return registry.verify(self.validator, self.body(), self.signature)


@dataclass(frozen=True)
class CVScript:
    height: int
    votes: tuple[Vote, ...]
    finalized: bytes

    def to_bytes(self) -> bytes:
        w = Writer().u64(self.height).fixed(self.finalized).u32(len(self.votes))
        for v in self.votes:
            w.blob(v.to_bytes())
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "CVScript":
        r = Reader(data)
        height, finalized = r.u64(), r.fixed()
        votes = []
        for _ in range(r.u32()):
            vr = Reader(r.blob())
            votes.append(Vote.read(vr))
            vr.done()
        r.done()
        return cls(height, tuple(votes), finalized)


# -- validation -------------------------------------------------------------


def _fail(reason: Reason, detail: str = ""):
    raise InvalidBlockError(reason, detail)


def validate_block(block: MABlock, chain_tip: MABlock, store: OffchainStore, key_registry: KeyRegistry) -> None:
    """Raise :class:`InvalidBlockError` naming the first failing check.

    Order: linkage (height, parent hash, seed, task, parent certificate),
    merkle root, signatures, header/body consistency, off-chain pointers.
    """
    hd = block.header
    if hd.height != chain_tip.height + 1:
        _fail(Reason.BAD_LINKAGE, f"height {hd.height} does not follow {chain_tip.height}")
    if hd.prev_hash != chain_tip.hash:
        _fail(Reason.BAD_LINKAGE, "prev_hash does not match the chain tip")
    if hd.seed != election_seed(hd.prev_hash, hd.height):
        _fail(Reason.BAD_LINKAGE, "election seed mismatch")
    if hd.task_id != chain_tip.header.task_id:
        _fail(Reason.BAD_LINKAGE, "task id changed")
    _check_certificate(block, chain_tip, store, key_registry)

    if tx_root(block.txs) != hd.tx_merkle_root:
        _fail(Reason.BAD_ROOT)

    for i, tx in enumerate(block.txs):
        try:
            validate_transaction(tx, key_registry)
        except InvalidTransactionError as exc:
            _fail(exc.reason, f"transaction {i}: {exc}")

    if hd.global_result_ptr != global_pointer(block.txs):
        _fail(Reason.INCONSISTENT, "global result pointer does not match the gaTx")
    for i, tx in enumerate(block.txs):
        if tx.task_id != hd.task_id:
            _fail(Reason.INCONSISTENT, f"transaction {i} belongs to another task")

    pointers = [hd.global_result_ptr, hd.cvscript_ptr, hd.reputation_ptr]
    pointers += [p for tx in block.txs for p in tx.pointers()]
    for ptr in pointers:
        try:
            check_pointer(store, ptr)
        except InvalidTransactionError as exc:
            _fail(Reason.DANGLING_POINTER, ptr.hex())


def _check_certificate(block: MABlock, parent: MABlock, store: OffchainStore, registry: KeyRegistry) -> None:
    """The CVScript referenced by ``block`` must finalize ``parent``."""
    ptr = block.header.cvscript_ptr
    if parent.height == 0:
        if ptr != NULL_DIGEST:
            _fail(Reason.BAD_LINKAGE, "first block cannot carry a certificate")
        return
    try:
        cv = CVScript.from_bytes(store.get(ptr))
    except (NotFoundError, CorruptEntryError):
        _fail(Reason.DANGLING_POINTER, f"cvscript {ptr.hex()}")
    except DecodeError as exc:
        _fail(Reason.MALFORMED, f"cvscript: {exc}")
    if cv.height != parent.height:
        _fail(Reason.BAD_LINKAGE, "certificate is for another height")
    certified = cv.finalized == parent.hash or (cv.finalized == EMPTY_BLOCK and not parent.txs)
    if not certified:
        _fail(Reason.BAD_LINKAGE, "certificate does not finalize the parent")
    for v in cv.votes:
        if v.height != cv.height or not v.verify(registry):
            _fail(Reason.BAD_SIGNATURE, f"certificate vote by {v.validator}")


def validate_chain(blocks: Sequence[MABlock], store: OffchainStore, key_registry: KeyRegistry) -> None:
    if not blocks:
        raise InvalidBlockError(Reason.MALFORMED, "empty chain")
    g = blocks[0].header
    if g.height != 0 or g.prev_hash != ZERO_DIGEST or blocks[0].txs or g != genesis_block(g.task_id).header:
        _fail(Reason.BAD_LINKAGE, "bad genesis block")
    for parent, block in zip(blocks, blocks[1:]):
        validate_block(block, parent, store, key_registry)


def validate_chain_bytes(raw_blocks: Sequence[bytes], store: OffchainStore, key_registry: KeyRegistry) -> None:
    """Decode then validate; undecodable bytes count as a malformed block."""
    blocks = []
    for i, raw in enumerate(raw_blocks):
        try:
            blocks.append(MABlock.from_bytes(raw))
        except (DecodeError, ValueError, KeyError) as exc:
            raise InvalidBlockError(Reason.MALFORMED, f"block {i}: {exc}") from exc
    validate_chain(blocks, store, key_registry)


def export_records(blocks: Sequence[MABlock]) -> list[dict]:
    return [
        {
            "height": b.height,
            "block_hash": b.hash.hex(),
            "prev_hash": b.header.prev_hash.hex(),
            "tx_count": len(b.txs),
            "tx_kinds": [tx.KIND for tx in b.txs],
        }
        for b in blocks
    ]


def export_chain(blocks: Sequence[MABlock], path: str | Path) -> None:
    lines = [json.dumps(rec, sort_keys=True) for rec in export_records(blocks)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_chain_export(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
