"""Hashchain payment commitments.

``h_0 = H(seed)``, ``h_i = H(h_{i-1})``; the anchor ``h_{n-1}`` goes on
chain and the k-th off-chain commitment is ``h_{n-1-k}``.  A commitment
settles when hashing it k times reproduces the anchor.
"""

from __future__ import annotations

from dataclasses import dataclass

from socialfl.ledger.crypto import H


class ExhaustedError(RuntimeError):
    pass


def hashchain_new(seed: bytes, n: int) -> tuple[list[bytes], bytes]:
    if n < 1:
        raise ValueError("hashchain length must be >= 1")
    chain = [H(seed)]
    for _ in range(n - 1):
        chain.append(H(chain[-1]))
    return chain, chain[-1]


@dataclass
class HashchainState:
    chain: list[bytes]
    revealed_index: int = 0

    @classmethod
    def new(cls, seed: bytes, n: int) -> "HashchainState":
        return cls(hashchain_new(seed, n)[0])

    @property
    def anchor(self) -> bytes:
        return self.chain[-1]

    @property
    def n(self) -> int:
        return len(self.chain)


def hashchain_commit(state: HashchainState) -> bytes:
    """Reveal the next commitment; raises once all ``n - 1`` are spent."""
    k = state.revealed_index + 1
    if k > state.n - 1:
        raise ExhaustedError(f"all {state.n - 1} commitments already revealed")
    state.revealed_index = k
    return state.chain[state.n - 1 - k]


def hashchain_settle(anchor: bytes, commit: bytes, k: int) -> bool:
    if k < 0:
        return False
    h = commit
    for _ in range(k):
        h = H(h)
    return h == anchor
