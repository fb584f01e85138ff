"""Binary Merkle tree over transaction bytes.

Odd levels duplicate their last node; the empty list hashes to ``H(b"")``.
"""

from __future__ import annotations

from typing import Sequence

from socialfl.ledger.crypto import H, NULL_DIGEST


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return NULL_DIGEST
    level = [H(leaf) for leaf in leaves]
    while len(level) > 1:
        if len(level) % 2:
            level.append(level[-1])
        level = [H(level[i], level[i + 1]) for i in range(0, len(level), 2)]
    return level[0]
