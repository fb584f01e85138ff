"""Blockchain ledger: MA blocks, transactions, off-chain store, hashchains."""

from socialfl.ledger.block import (
    EMPTY_BLOCK,
    CVScript,
    InvalidBlockError,
    MABlock,
    MABlockHeader,
    Vote,
    build_block,
    election_seed,
    export_chain,
    export_records,
    genesis_block,
    global_pointer,
    read_chain_export,
    tx_root,
    validate_block,
    validate_chain,
    validate_chain_bytes,
)
from socialfl.ledger.codec import DecodeError, Reader, Writer
from socialfl.ledger.crypto import H, NULL_DIGEST, ZERO_DIGEST, KeyRegistry, UnknownKeyError
from socialfl.ledger.hashchain import (
    ExhaustedError,
    HashchainState,
    hashchain_commit,
    hashchain_new,
    hashchain_settle,
)
from socialfl.ledger.merkle import merkle_root
from socialfl.ledger.store import CorruptEntryError, NotFoundError, OffchainStore
from socialfl.ledger.transactions import (
    GaTx,
    IncompleteMultisigError,
    InvalidTransactionError,
    ProvenanceTx,
    Reason,
    SaTx,
    Transaction,
    TrTx,
    build_transaction,
    decode_transaction,
    validate_transaction,
)

# Function-style aliases: ``offchain_put(store, data)``, ``offchain_get(store, digest)``.
offchain_put = OffchainStore.put
offchain_get = OffchainStore.get
